/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

#include "ei/compress.hpp"

#include <zlib.h>

#include <istream>
#include <ostream>
#include <sstream>

#include "ei/error.hpp"

namespace ei {

std::uint32_t crc32(std::string_view data, std::uint32_t seed) {
    uLong crc = seed;
    // zlib takes uInt lengths; feed in chunks for >4 GiB buffers
    const char* p = data.data();
    std::size_t left = data.size();
    while (left > 0) {
        auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
        crc = ::crc32(crc, reinterpret_cast<const Bytef*>(p), chunk);
        p += chunk;
        left -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::string deflate_bytes(std::string_view data, int level) {
    uLongf bound = compressBound(static_cast<uLong>(data.size()));
    std::string out(bound, '\0');
    int rc = compress2(reinterpret_cast<Bytef*>(out.data()), &bound, reinterpret_cast<const Bytef*>(data.data()),
                       static_cast<uLong>(data.size()), level);
    if (rc != Z_OK) fail(ErrorCode::Io, "compress2 failed: " + std::to_string(rc));
    out.resize(bound);
    return out;
}

std::string inflate_bytes(std::string_view data, std::size_t expected_size) {
    std::string out(expected_size, '\0');
    uLongf len = static_cast<uLongf>(expected_size);
    int rc = uncompress(reinterpret_cast<Bytef*>(out.data()), &len, reinterpret_cast<const Bytef*>(data.data()),
                        static_cast<uLong>(data.size()));
    if (rc != Z_OK || len != expected_size)
        fail(ErrorCode::CorruptData, "inflate failed (rc=" + std::to_string(rc) + ", got " + std::to_string(len) +
                                         " of " + std::to_string(expected_size) + " bytes)");
    return out;
}

namespace {
constexpr std::size_t kChunk = 1 << 16;
constexpr int kGzipWindow = 15 + 16;
}  // namespace

struct GzipWriter::State {
    z_stream zs{};
    std::string buf = std::string(kChunk, '\0');
};

GzipWriter::GzipWriter(std::ostream& sink, int level) : state_(std::make_unique<State>()), sink_(sink) {
    if (deflateInit2(&state_->zs, level, Z_DEFLATED, kGzipWindow, 8, Z_DEFAULT_STRATEGY) != Z_OK)
        fail(ErrorCode::SinkFailure, "deflateInit2 failed");
}

GzipWriter::~GzipWriter() { deflateEnd(&state_->zs); }

void GzipWriter::pump(int flush) {
    auto& zs = state_->zs;
    do {
        zs.next_out = reinterpret_cast<Bytef*>(state_->buf.data());
        zs.avail_out = static_cast<uInt>(state_->buf.size());
        int rc = deflate(&zs, flush);
        if (rc == Z_STREAM_ERROR) fail(ErrorCode::SinkFailure, "deflate stream error");
        std::size_t have = state_->buf.size() - zs.avail_out;
        if (have > 0) {
            sink_.write(state_->buf.data(), static_cast<std::streamsize>(have));
            if (!sink_) fail(ErrorCode::SinkFailure, "sink rejected write");
            written_ += have;
        }
    } while (zs.avail_out == 0);
}

void GzipWriter::write(std::string_view data) {
    if (finished_) fail(ErrorCode::SinkFailure, "write after finish");
    auto& zs = state_->zs;
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
    zs.avail_in = static_cast<uInt>(data.size());
    pump(Z_NO_FLUSH);
}

std::uint64_t GzipWriter::finish() {
    if (!finished_) {
        state_->zs.avail_in = 0;
        pump(Z_FINISH);
        sink_.flush();
        finished_ = true;
    }
    return written_;
}

struct GzipReader::State {
    z_stream zs{};
    std::string in = std::string(kChunk, '\0');
    bool stream_end = false;
};

GzipReader::GzipReader(std::istream& source) : state_(std::make_unique<State>()), source_(source) {
    if (inflateInit2(&state_->zs, kGzipWindow) != Z_OK) fail(ErrorCode::DecompressFailure, "inflateInit2 failed");
}

GzipReader::~GzipReader() { inflateEnd(&state_->zs); }

std::size_t GzipReader::read(char* out, std::size_t n) {
    auto& zs = state_->zs;
    zs.next_out = reinterpret_cast<Bytef*>(out);
    zs.avail_out = static_cast<uInt>(n);
    while (zs.avail_out > 0 && !state_->stream_end) {
        if (zs.avail_in == 0) {
            if (eof_) break;
            source_.read(state_->in.data(), static_cast<std::streamsize>(state_->in.size()));
            auto got = source_.gcount();
            if (got <= 0) {
                eof_ = true;
                truncated_ = true;
                break;
            }
            zs.next_in = reinterpret_cast<Bytef*>(state_->in.data());
            zs.avail_in = static_cast<uInt>(got);
        }
        int rc = inflate(&zs, Z_NO_FLUSH);
        if (rc == Z_STREAM_END) {
            state_->stream_end = true;
        } else if (rc != Z_OK && rc != Z_BUF_ERROR) {
            fail(ErrorCode::DecompressFailure, zs.msg ? zs.msg : "inflate error");
        }
    }
    return n - zs.avail_out;
}

std::string gzip_bytes(std::string_view data, int level) {
    std::ostringstream os;
    GzipWriter w(os, level);
    w.write(data);
    w.finish();
    return std::move(os).str();
}

std::string gunzip_bytes(std::string_view data) {
    std::istringstream is{std::string(data)};
    GzipReader r(is);
    std::string out;
    char buf[1 << 15];
    for (;;) {
        auto got = r.read(buf, sizeof buf);
        out.append(buf, got);
        if (got < sizeof buf) break;
    }
    if (r.truncated()) fail(ErrorCode::DecompressFailure, "gzip stream ended before its trailer");
    return out;
}

}  // namespace ei

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

#include "ei/seqfile.hpp"

#include <algorithm>
#include <cstring>
#include <queue>
#include <random>

#include "ei/bytes.hpp"
#include "ei/compress.hpp"
#include "ei/error.hpp"

namespace ei::seq {

namespace {

constexpr char kMagic[4] = {'E', 'I', 'S', 'Q'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint32_t kEnd = 0xFFFFFFFFu;
constexpr std::size_t kFlushAt = 1 << 20;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

bool read_u32(std::istream& in, std::uint32_t& v) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
    v = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
    return true;
}

}  // namespace

Writer::Writer(std::filesystem::path path, const std::string& dataset)
    : path_(std::move(path)), tmp_(path_.string() + ".tmp") {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    out_.open(tmp_, std::ios::binary | std::ios::trunc);
    if (!out_) fail(ErrorCode::Io, "cannot create " + tmp_.string());
    std::string head(kMagic, 4);
    ByteWriter w(head);
    w.u16le(kVersion);
    w.str16(dataset);
    out_.write(head.data(), static_cast<std::streamsize>(head.size()));
    buf_.reserve(kFlushAt + 4096);
}

Writer::~Writer() {
    if (!finished_) {
        out_.close();
        std::error_code ec;
        std::filesystem::remove(tmp_, ec);
    }
}

void Writer::add(std::string_view key, std::string_view value) {
    auto start = buf_.size();
    put_u32(buf_, static_cast<std::uint32_t>(key.size()));
    buf_.append(key);
    put_u32(buf_, static_cast<std::uint32_t>(value.size()));
    buf_.append(value);
    crc_ = crc32(std::string_view(buf_).substr(start), crc_);
    ++rows_;
    if (buf_.size() >= kFlushAt) {
        out_.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        buf_.clear();
    }
}

std::uint64_t Writer::finish() {
    put_u32(buf_, kEnd);
    ByteWriter w(buf_);
    w.u64le(rows_);
    w.u32le(crc_);
    out_.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    buf_.clear();
    out_.close();
    if (!out_) fail(ErrorCode::Io, "write failed: " + tmp_.string());
    std::filesystem::rename(tmp_, path_);
    finished_ = true;
    return rows_;
}

Reader::Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) fail(ErrorCode::NotFound, "cannot open " + path.string());
    char magic[4];
    unsigned char vlen[4];
    if (!in_.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        fail(ErrorCode::CorruptData, path.string() + " is not a sequential dataset file");
    if (!in_.read(reinterpret_cast<char*>(vlen), 4)) fail(ErrorCode::CorruptData, path.string() + ": short header");
    auto version = std::uint16_t(vlen[0] | vlen[1] << 8);
    if (version != kVersion) fail(ErrorCode::CorruptData, path.string() + ": unsupported version");
    auto nlen = std::size_t(vlen[2] | vlen[3] << 8);
    dataset_.resize(nlen);
    if (!in_.read(dataset_.data(), static_cast<std::streamsize>(nlen)))
        fail(ErrorCode::CorruptData, path.string() + ": short header");
}

bool Reader::next(Row& row) {
    if (done_) return false;
    std::uint32_t klen = 0, vlen = 0;
    if (!read_u32(in_, klen)) fail(ErrorCode::CorruptData, path_.string() + ": truncated (no footer)");
    if (klen == kEnd) {
        std::string foot(12, '\0');
        if (!in_.read(foot.data(), 12)) fail(ErrorCode::CorruptData, path_.string() + ": truncated footer");
        ByteReader r(foot);
        auto n = r.u64le();
        auto crc = r.u32le();
        if (n != rows_ || crc != crc_)
            fail(ErrorCode::ChecksumMismatch, path_.string() + ": footer does not match content");
        done_ = true;
        return false;
    }
    row.key.resize(klen);
    if (!in_.read(row.key.data(), klen) || !read_u32(in_, vlen))
        fail(ErrorCode::CorruptData, path_.string() + ": truncated row");
    row.value.resize(vlen);
    if (!in_.read(row.value.data(), vlen)) fail(ErrorCode::CorruptData, path_.string() + ": truncated row");
    char len[4];
    for (auto [n, bytes] : {std::pair<std::uint32_t, const std::string*>{klen, &row.key}, {vlen, &row.value}}) {
        for (int i = 0; i < 4; ++i) len[i] = static_cast<char>((n >> (8 * i)) & 0xFF);
        crc_ = crc32(std::string_view(len, 4), crc_);
        crc_ = crc32(*bytes, crc_);
    }
    ++rows_;
    return true;
}

std::optional<Row> Reader::next() {
    Row row;
    if (!next(row)) return std::nullopt;
    return row;
}

ExternalSorter::ExternalSorter(std::size_t memory_budget, std::filesystem::path tmp_dir)
    : budget_(memory_budget), tmp_dir_(std::move(tmp_dir)) {}

ExternalSorter::~ExternalSorter() {
    std::error_code ec;
    for (const auto& r : runs_) std::filesystem::remove(r, ec);
}

void ExternalSorter::add(std::string key, std::string value) {
    buffered_bytes_ += key.size() + value.size() + sizeof(Row);
    buffer_.push_back({std::move(key), std::move(value)});
    if (buffered_bytes_ > budget_) spill();
}

void ExternalSorter::spill() {
    std::stable_sort(buffer_.begin(), buffer_.end(), [](const Row& a, const Row& b) { return a.key < b.key; });
    std::filesystem::create_directories(tmp_dir_);
    std::random_device rd;
    auto path = tmp_dir_ / ("run-" + std::to_string(runs_.size()) + "-" + std::to_string(rd()) + ".seq");
    Writer w(path, "");
    for (const auto& r : buffer_) w.add(r.key, r.value);
    w.finish();
    runs_.push_back(path);
    buffer_.clear();
    buffered_bytes_ = 0;
}

std::uint64_t ExternalSorter::drain(Writer& out) {
    std::stable_sort(buffer_.begin(), buffer_.end(), [](const Row& a, const Row& b) { return a.key < b.key; });
    if (runs_.empty()) {
        for (const auto& r : buffer_) out.add(r.key, r.value);
        auto n = buffer_.size();
        buffer_.clear();
        return n;
    }
    // k-way merge; ties go to the earlier run so insertion order survives.
    std::vector<std::unique_ptr<Reader>> readers;
    std::vector<Row> heads(runs_.size() + 1);
    for (const auto& p : runs_) readers.push_back(std::make_unique<Reader>(p));
    std::size_t mem_pos = 0;
    auto advance = [&](std::size_t src) -> bool {
        if (src < readers.size()) return readers[src]->next(heads[src]);
        if (mem_pos >= buffer_.size()) return false;
        heads[src] = std::move(buffer_[mem_pos++]);
        return true;
    };
    auto cmp = [&](std::size_t a, std::size_t b) {
        if (heads[a].key != heads[b].key) return heads[a].key > heads[b].key;
        return a > b;
    };
    std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(cmp)> pq(cmp);
    for (std::size_t s = 0; s < heads.size(); ++s)
        if (advance(s)) pq.push(s);
    std::uint64_t n = 0;
    while (!pq.empty()) {
        auto s = pq.top();
        pq.pop();
        out.add(heads[s].key, heads[s].value);
        ++n;
        if (advance(s)) pq.push(s);
    }
    buffer_.clear();
    return n;
}

}  // namespace ei::seq

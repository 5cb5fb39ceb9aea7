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

#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>

namespace ei {

std::uint32_t crc32(std::string_view data, std::uint32_t seed = 0);

/// zlib-wrapped DEFLATE of a whole buffer (adler32-checked on the way back).
std::string deflate_bytes(std::string_view data, int level = 6);
/// Raises CorruptData if the stream is damaged or does not inflate to `expected_size` bytes.
std::string inflate_bytes(std::string_view data, std::size_t expected_size);

/// Streaming gzip (RFC 1952) compressor writing into an ostream.
class GzipWriter {
public:
    explicit GzipWriter(std::ostream& sink, int level = 6);
    ~GzipWriter();
    GzipWriter(const GzipWriter&) = delete;
    GzipWriter& operator=(const GzipWriter&) = delete;

    void write(std::string_view data);
    /// Flushes the trailer; returns compressed bytes written in total.
    std::uint64_t finish();
    std::uint64_t compressed_bytes() const { return written_; }

private:
    void pump(int flush);

    struct State;
    std::unique_ptr<State> state_;
    std::ostream& sink_;
    std::uint64_t written_ = 0;
    bool finished_ = false;
};

/// Streaming gzip decompressor reading from an istream.
class GzipReader {
public:
    explicit GzipReader(std::istream& source);
    ~GzipReader();
    GzipReader(const GzipReader&) = delete;
    GzipReader& operator=(const GzipReader&) = delete;

    /// Reads up to n bytes; returns fewer only at end of stream. A source that ends before
    /// the gzip trailer yields what was decoded and sets truncated().
    std::size_t read(char* out, std::size_t n);
    bool truncated() const { return truncated_; }

private:
    struct State;
    std::unique_ptr<State> state_;
    std::istream& source_;
    bool eof_ = false;
    bool truncated_ = false;
};

std::string gzip_bytes(std::string_view data, int level = 6);
std::string gunzip_bytes(std::string_view data);

}  // namespace ei

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

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "ei/error.hpp"

namespace ei {

// Byte buffers are std::string throughout; views are std::string_view.

class ByteWriter {
public:
    explicit ByteWriter(std::string& out) : out_(out) {}

    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u16le(std::uint16_t v) { put_le(v, 2); }
    void u32le(std::uint32_t v) { put_le(v, 4); }
    void u64le(std::uint64_t v) { put_le(v, 8); }
    void f32le(float v) { u32le(std::bit_cast<std::uint32_t>(v)); }
    void u32be(std::uint32_t v) { put_be(v, 4); }
    void u64be(std::uint64_t v) { put_be(v, 8); }
    void raw(std::string_view bytes) { out_.append(bytes); }

    /// 16-bit length prefix; longer strings are a FieldOverflow.
    void str16(std::string_view s) {
        if (s.size() > 0xFFFF) fail(ErrorCode::FieldOverflow, "string of " + std::to_string(s.size()) + " bytes");
        u16le(static_cast<std::uint16_t>(s.size()));
        raw(s);
    }
    void str32(std::string_view s) {
        u32le(static_cast<std::uint32_t>(s.size()));
        raw(s);
    }

    std::size_t size() const { return out_.size(); }

private:
    void put_le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void put_be(std::uint64_t v, int n) {
        for (int i = n - 1; i >= 0; --i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }

    std::string& out_;
};

/// Bounds-checked reader; running off the end raises `short_code`.
class ByteReader {
public:
    explicit ByteReader(std::string_view in, ErrorCode short_code = ErrorCode::CorruptData)
        : in_(in), short_code_(short_code) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint16_t u16le() { return static_cast<std::uint16_t>(get_le(2)); }
    std::uint32_t u32le() { return static_cast<std::uint32_t>(get_le(4)); }
    std::uint64_t u64le() { return get_le(8); }
    float f32le() { return std::bit_cast<float>(u32le()); }
    std::uint32_t u32be() { return static_cast<std::uint32_t>(get_be(4)); }
    std::uint64_t u64be() { return get_be(8); }
    std::string_view raw(std::size_t n) { return take(n); }
    std::string str16() { return std::string(take(u16le())); }
    std::string str32() { return std::string(take(u32le())); }

    std::size_t remaining() const { return in_.size() - pos_; }
    std::size_t position() const { return pos_; }
    bool done() const { return pos_ == in_.size(); }

private:
    std::string_view take(std::size_t n) {
        if (n > remaining())
            fail(short_code_, "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ", have " +
                                  std::to_string(remaining()));
        auto s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint64_t get_le(int n) {
        auto s = take(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(s[i])) << (8 * i);
        return v;
    }
    std::uint64_t get_be(int n) {
        auto s = take(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v = (v << 8) | static_cast<std::uint8_t>(s[i]);
        return v;
    }

    std::string_view in_;
    std::size_t pos_ = 0;
    ErrorCode short_code_;
};

}  // namespace ei

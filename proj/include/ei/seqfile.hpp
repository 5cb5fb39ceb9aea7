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
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

/// Sequential (key, value) file handed from consumers to the store importer.
///
/// Layout: "EISQ" u16 version, u16-prefixed dataset name, then rows as
/// u32 key_len, key, u32 val_len, val; closed by u32 0xFFFFFFFF, u64 row count and the
/// CRC-32 of all row bytes. Integers little-endian.
namespace ei::seq {

struct Row {
    std::string key;
    std::string value;
    bool operator==(const Row&) const = default;
};

class Writer {
public:
    /// Writes to `path` + ".tmp" and renames on finish.
    Writer(std::filesystem::path path, const std::string& dataset);
    ~Writer();
    Writer(const Writer&) = delete;
    Writer& operator=(const Writer&) = delete;

    void add(std::string_view key, std::string_view value);
    /// Returns the row count.
    std::uint64_t finish();

private:
    std::filesystem::path path_;
    std::filesystem::path tmp_;
    std::ofstream out_;
    std::string buf_;
    std::uint64_t rows_ = 0;
    std::uint32_t crc_ = 0;
    bool finished_ = false;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path);

    const std::string& dataset() const { return dataset_; }
    /// Raises ChecksumMismatch on a bad footer and CorruptData on a truncated file.
    std::optional<Row> next();
    bool next(Row& row);
    std::uint64_t rows_read() const { return rows_; }

private:
    std::filesystem::path path_;
    std::ifstream in_;
    std::string dataset_;
    std::uint64_t rows_ = 0;
    std::uint32_t crc_ = 0;
    bool done_ = false;
};

/// Key-sorted output through an in-memory buffer that spills sorted runs to disk once
/// `memory_budget` bytes are exceeded. Equal keys keep their insertion order.
class ExternalSorter {
public:
    ExternalSorter(std::size_t memory_budget, std::filesystem::path tmp_dir);
    ~ExternalSorter();

    void add(std::string key, std::string value);
    /// Streams all rows in key order to `out` and returns their count.
    std::uint64_t drain(Writer& out);
    std::size_t spilled_runs() const { return runs_.size(); }

private:
    void spill();

    std::size_t budget_;
    std::filesystem::path tmp_dir_;
    std::vector<Row> buffer_;
    std::size_t buffered_bytes_ = 0;
    std::vector<std::filesystem::path> runs_;
};

}  // namespace ei::seq

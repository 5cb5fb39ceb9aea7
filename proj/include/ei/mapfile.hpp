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
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

/// Sorted key/value file pair: a data file of records or compressed blocks and a sparse
/// index file holding every K-th key with the offset of its record or block.
namespace ei::mapfile {

enum class Mode : std::uint8_t { Record = 0, Block = 1 };
enum class Codec : std::uint8_t { None = 0, Deflate = 1 };
std::string_view to_string(Mode m);
std::string_view to_string(Codec c);

struct Options {
    Mode mode = Mode::Block;
    Codec codec = Codec::Deflate;
    std::size_t block_size = 1u << 20;  // uncompressed bytes per block
    std::uint32_t index_interval = 128;
    bool allow_equal_keys = false;
    int level = 6;
};

struct Meta {
    Mode mode = Mode::Block;
    Codec codec = Codec::Deflate;
    std::uint32_t index_interval = 0;
    std::uint32_t block_size = 0;
    std::uint64_t n_rows = 0;
    std::uint64_t n_blocks = 0;
    std::uint64_t data_bytes = 0;
    std::uint64_t index_bytes = 0;
    std::uint32_t data_crc = 0;
    std::string first_key;
    std::string last_key;
};

struct Paths {
    std::filesystem::path data;
    std::filesystem::path index;
    /// <base>.data / <base>.index
    static Paths for_base(const std::filesystem::path& base);
};

class Writer {
public:
    /// Writes to temporary names; finish() renames both files into place.
    Writer(Paths paths, Options options = {});
    ~Writer();
    Writer(const Writer&) = delete;
    Writer& operator=(const Writer&) = delete;

    /// Raises UnsortedInput naming the offending row ordinal.
    void add(std::string_view key, std::string_view value);
    Meta finish();
    std::uint64_t rows() const { return rows_; }

private:
    void flush_block();
    void write_raw(std::string_view bytes);

    Paths paths_;
    Options opt_;
    int fd_ = -1;
    std::uint64_t offset_ = 0;
    std::uint32_t crc_ = 0;
    std::uint64_t rows_ = 0;
    std::uint64_t blocks_ = 0;
    std::string block_;
    std::string block_first_key_;
    std::string last_key_;
    std::string first_key_;
    std::vector<std::pair<std::string, std::uint64_t>> index_;
    std::string scratch_;
    bool finished_ = false;
};

using RowFn = std::function<bool(std::string_view key, std::string_view value)>;

struct Row {
    std::string key;
    std::string value;
    bool operator==(const Row&) const = default;
};

/// Thread-safe reader: positional reads plus a small shared cache of decoded blocks.
class Reader {
public:
    /// Raises NotFound, CorruptData (bad index or header), ChecksumMismatch (when verifying).
    static std::shared_ptr<Reader> open(const Paths& paths, bool verify_data = false);
    ~Reader();

    const Meta& meta() const { return meta_; }
    const std::vector<std::string>& index_keys() const { return keys_; }

    std::optional<std::string> get(std::string_view key) const;
    /// Keys must be ascending; result[i] answers keys[i]. Blocks are decoded once per batch.
    std::vector<std::optional<std::string>> get_many(const std::vector<std::string>& keys) const;
    /// All rows with lo <= key <= hi, in order.
    std::vector<Row> get_range(std::string_view lo, std::string_view hi) const;
    void scan_range(std::string_view lo, std::string_view hi, const RowFn& fn) const;
    void scan(const RowFn& fn) const;
    /// Splits the file into at most `parts` contiguous index-aligned pieces and scans each
    /// (possibly from different threads); part i covers rows strictly before part i+1.
    std::size_t partitions(std::size_t parts) const;
    void scan_partition(std::size_t part, std::size_t parts, const RowFn& fn) const;
    /// Recomputes the data CRC; raises ChecksumMismatch.
    void verify() const;

private:
    struct Block;

    Reader() = default;
    std::uint64_t start_offset(std::string_view key) const;
    std::shared_ptr<const Block> load_block(std::uint64_t offset) const;
    std::string read_at(std::uint64_t offset, std::size_t n) const;
    bool read_rows_from(std::uint64_t begin, std::uint64_t end, std::string_view lo, const RowFn& fn) const;
    std::pair<std::uint64_t, std::uint64_t> partition_bounds(std::size_t part, std::size_t parts) const;

    Paths paths_;
    int fd_ = -1;
    Meta meta_;
    std::uint64_t data_start_ = 8;
    std::vector<std::string> keys_;
    std::vector<std::uint64_t> offsets_;

    mutable std::mutex cache_mu_;
    mutable std::list<std::pair<std::uint64_t, std::shared_ptr<const Block>>> cache_;
    static constexpr std::size_t kCacheBlocks = 16;
};

/// Writes `rows` (already sorted) and returns the metadata.
Meta write_all(const Paths& paths, const std::vector<Row>& rows, const Options& options = {});

}  // namespace ei::mapfile

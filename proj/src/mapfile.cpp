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

#include "ei/mapfile.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include "ei/bytes.hpp"
#include "ei/compress.hpp"
#include "ei/error.hpp"

namespace ei::mapfile {

namespace {

constexpr char kDataMagic[4] = {'E', 'I', 'M', 'F'};
constexpr char kIndexMagic[4] = {'E', 'I', 'M', 'X'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint64_t kDataStart = 8;
constexpr std::size_t kWriteBuffer = 1 << 20;

std::string file_header(const char (&magic)[4], Mode m, Codec c) {
    std::string h(magic, 4);
    h.push_back(static_cast<char>(kVersion));
    h.push_back(static_cast<char>(m));
    h.push_back(static_cast<char>(c));
    h.push_back('\0');
    return h;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const char* p) {
    auto b = reinterpret_cast<const unsigned char*>(p);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

void write_fd(int fd, std::string_view bytes, const std::filesystem::path& path) {
    while (!bytes.empty()) {
        auto n = ::write(fd, bytes.data(), bytes.size());
        if (n < 0) {
            if (errno == EINTR) continue;
            fail(ErrorCode::Io, "write failed: " + path.string() + ": " + std::strerror(errno));
        }
        bytes.remove_prefix(static_cast<std::size_t>(n));
    }
}

std::filesystem::path tmp_of(const std::filesystem::path& p) { return p.string() + ".tmp"; }

struct BlockHeader {
    std::string first_key;
    std::uint32_t raw_len = 0;
    std::uint32_t stored_len = 0;
    std::uint64_t header_len = 0;
};

}  // namespace

std::string_view to_string(Mode m) { return m == Mode::Record ? "RECORD" : "BLOCK"; }
std::string_view to_string(Codec c) { return c == Codec::None ? "NONE" : "DEFLATE"; }

Paths Paths::for_base(const std::filesystem::path& base) {
    return {base.string() + ".data", base.string() + ".index"};
}

// ---- writer ----

Writer::Writer(Paths paths, Options options) : paths_(std::move(paths)), opt_(options) {
    if (opt_.index_interval == 0) fail(ErrorCode::InvalidArgument, "index interval must be positive");
    if (opt_.block_size == 0) fail(ErrorCode::InvalidArgument, "block size must be positive");
    if (paths_.data.has_parent_path()) std::filesystem::create_directories(paths_.data.parent_path());
    fd_ = ::open(tmp_of(paths_.data).c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd_ < 0) fail(ErrorCode::Io, "cannot create " + paths_.data.string() + ": " + std::strerror(errno));
    scratch_.reserve(kWriteBuffer + 4096);
    write_raw(file_header(kDataMagic, opt_.mode, opt_.codec));
}

Writer::~Writer() {
    if (fd_ >= 0) ::close(fd_);
    if (!finished_) {
        std::error_code ec;
        std::filesystem::remove(tmp_of(paths_.data), ec);
        std::filesystem::remove(tmp_of(paths_.index), ec);
    }
}

void Writer::write_raw(std::string_view bytes) {
    crc_ = crc32(bytes, crc_);
    offset_ += bytes.size();
    scratch_.append(bytes);
    if (scratch_.size() >= kWriteBuffer) {
        write_fd(fd_, scratch_, paths_.data);
        scratch_.clear();
    }
}

void Writer::add(std::string_view key, std::string_view value) {
    if (finished_) fail(ErrorCode::InvalidArgument, "writer already finished");
    if (rows_ > 0 && (key < last_key_ || (!opt_.allow_equal_keys && key == last_key_)))
        fail(ErrorCode::UnsortedInput, paths_.data.filename().string() + ": unsorted input at row " +
                                           std::to_string(rows_) + " (key not above its predecessor)");
    if (rows_ == 0) first_key_ = key;

    if (opt_.mode == Mode::Record) {
        if (rows_ % opt_.index_interval == 0) index_.emplace_back(std::string(key), offset_);
        std::string rec;
        put_u32(rec, static_cast<std::uint32_t>(key.size()));
        rec.append(key);
        if (opt_.codec == Codec::Deflate) {
            auto packed = deflate_bytes(value, opt_.level);
            put_u32(rec, static_cast<std::uint32_t>(packed.size()));
            put_u32(rec, static_cast<std::uint32_t>(value.size()));
            rec.append(packed);
        } else {
            put_u32(rec, static_cast<std::uint32_t>(value.size()));
            put_u32(rec, static_cast<std::uint32_t>(value.size()));
            rec.append(value);
        }
        write_raw(rec);
    } else {
        if (block_.empty()) block_first_key_ = key;
        // the pending block lands at the current offset
        if (rows_ % opt_.index_interval == 0) index_.emplace_back(std::string(key), offset_);
        put_u32(block_, static_cast<std::uint32_t>(key.size()));
        block_.append(key);
        put_u32(block_, static_cast<std::uint32_t>(value.size()));
        block_.append(value);
        if (block_.size() >= opt_.block_size) flush_block();
    }
    last_key_ = key;
    ++rows_;
}

void Writer::flush_block() {
    if (block_.empty()) return;
    std::string head;
    put_u32(head, static_cast<std::uint32_t>(block_first_key_.size()));
    head.append(block_first_key_);
    put_u32(head, static_cast<std::uint32_t>(block_.size()));
    if (opt_.codec == Codec::Deflate) {
        auto packed = deflate_bytes(block_, opt_.level);
        put_u32(head, static_cast<std::uint32_t>(packed.size()));
        write_raw(head);
        write_raw(packed);
    } else {
        put_u32(head, static_cast<std::uint32_t>(block_.size()));
        write_raw(head);
        write_raw(block_);
    }
    block_.clear();
    ++blocks_;
}

Meta Writer::finish() {
    if (finished_) fail(ErrorCode::InvalidArgument, "writer already finished");
    if (opt_.mode == Mode::Block) flush_block();
    write_fd(fd_, scratch_, paths_.data);
    scratch_.clear();
    if (::fsync(fd_) != 0 || ::close(fd_) != 0) {
        fd_ = -1;
        fail(ErrorCode::Io, "cannot flush " + paths_.data.string());
    }
    fd_ = -1;

    Meta m;
    m.mode = opt_.mode;
    m.codec = opt_.codec;
    m.index_interval = opt_.index_interval;
    m.block_size = static_cast<std::uint32_t>(opt_.block_size);
    m.n_rows = rows_;
    m.n_blocks = opt_.mode == Mode::Block ? blocks_ : 0;
    m.data_bytes = offset_;
    m.data_crc = crc_;
    m.first_key = first_key_;
    m.last_key = last_key_;

    std::string idx = file_header(kIndexMagic, opt_.mode, opt_.codec);
    ByteWriter w(idx);
    w.u32le(m.index_interval);
    w.u32le(m.block_size);
    w.u64le(m.n_rows);
    w.u64le(m.n_blocks);
    w.u64le(m.data_bytes);
    w.u32le(m.data_crc);
    w.str32(m.first_key);
    w.str32(m.last_key);
    w.u64le(index_.size());
    for (const auto& [k, off] : index_) {
        w.str32(k);
        w.u64le(off);
    }
    w.u32le(crc32(idx));
    m.index_bytes = idx.size();

    int ifd = ::open(tmp_of(paths_.index).c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (ifd < 0) fail(ErrorCode::Io, "cannot create " + paths_.index.string());
    try {
        write_fd(ifd, idx, paths_.index);
    } catch (...) {
        ::close(ifd);
        throw;
    }
    ::fsync(ifd);
    ::close(ifd);
    std::filesystem::rename(tmp_of(paths_.data), paths_.data);
    std::filesystem::rename(tmp_of(paths_.index), paths_.index);
    finished_ = true;
    return m;
}

Meta write_all(const Paths& paths, const std::vector<Row>& rows, const Options& options) {
    Writer w(paths, options);
    for (const auto& r : rows) w.add(r.key, r.value);
    return w.finish();
}

// ---- reader ----

struct Reader::Block {
    std::string raw;
    std::vector<std::string_view> keys;
    std::vector<std::string_view> values;
    std::uint64_t next = 0;  // offset of the following block
};

Reader::~Reader() {
    if (fd_ >= 0) ::close(fd_);
}

std::string Reader::read_at(std::uint64_t offset, std::size_t n) const {
    std::string out(n, '\0');
    std::size_t got = 0;
    while (got < n) {
        auto r = ::pread(fd_, out.data() + got, n - got, static_cast<off_t>(offset + got));
        if (r < 0) {
            if (errno == EINTR) continue;
            fail(ErrorCode::Io, "read failed: " + paths_.data.string());
        }
        if (r == 0) break;
        got += static_cast<std::size_t>(r);
    }
    out.resize(got);
    return out;
}

std::shared_ptr<Reader> Reader::open(const Paths& paths, bool verify_data) {
    std::shared_ptr<Reader> rd(new Reader());
    rd->paths_ = paths;

    std::string idx;
    {
        int ifd = ::open(paths.index.c_str(), O_RDONLY | O_CLOEXEC);
        if (ifd < 0) fail(ErrorCode::NotFound, "missing index " + paths.index.string());
        char buf[1 << 16];
        for (;;) {
            auto n = ::read(ifd, buf, sizeof buf);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) break;
            idx.append(buf, static_cast<std::size_t>(n));
        }
        ::close(ifd);
    }
    auto bad = [&](const std::string& why) { fail(ErrorCode::CorruptData, paths.index.string() + ": " + why); };
    if (idx.size() < 12 || std::memcmp(idx.data(), kIndexMagic, 4) != 0) bad("not an index file");
    if (get_u32(idx.data() + idx.size() - 4) != crc32(std::string_view(idx).substr(0, idx.size() - 4)))
        bad("index checksum mismatch");
    if (static_cast<std::uint8_t>(idx[4]) != kVersion) bad("unsupported version");
    auto& m = rd->meta_;
    auto mode = static_cast<std::uint8_t>(idx[5]);
    auto codec = static_cast<std::uint8_t>(idx[6]);
    if (mode > 1 || codec > 1) bad("unknown mode or codec");
    m.mode = static_cast<Mode>(mode);
    m.codec = static_cast<Codec>(codec);
    ByteReader r(std::string_view(idx).substr(8, idx.size() - 12));
    m.index_interval = r.u32le();
    m.block_size = r.u32le();
    m.n_rows = r.u64le();
    m.n_blocks = r.u64le();
    m.data_bytes = r.u64le();
    m.data_crc = r.u32le();
    m.first_key = r.str32();
    m.last_key = r.str32();
    auto n = r.u64le();
    if (n > r.remaining() / 12) bad("index entry count out of range");
    rd->keys_.reserve(n);
    rd->offsets_.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        rd->keys_.push_back(r.str32());
        rd->offsets_.push_back(r.u64le());
        if (rd->offsets_.back() < kDataStart || rd->offsets_.back() >= m.data_bytes) bad("offset out of range");
    }
    if (!r.done()) bad("trailing bytes");
    m.index_bytes = idx.size();

    rd->fd_ = ::open(paths.data.c_str(), O_RDONLY | O_CLOEXEC);
    if (rd->fd_ < 0) fail(ErrorCode::NotFound, "missing data file " + paths.data.string());
    auto size = static_cast<std::uint64_t>(::lseek(rd->fd_, 0, SEEK_END));
    if (size != m.data_bytes)
        fail(ErrorCode::CorruptData, paths.data.string() + ": size " + std::to_string(size) + " differs from index (" +
                                         std::to_string(m.data_bytes) + ")");
    auto head = rd->read_at(0, kDataStart);
    if (head != file_header(kDataMagic, m.mode, m.codec))
        fail(ErrorCode::CorruptData, paths.data.string() + ": header does not match index");
    if (verify_data) rd->verify();
    return rd;
}

void Reader::verify() const {
    std::uint32_t crc = 0;
    constexpr std::size_t chunk = 1 << 20;
    for (std::uint64_t off = 0; off < meta_.data_bytes; off += chunk) {
        auto n = static_cast<std::size_t>(std::min<std::uint64_t>(chunk, meta_.data_bytes - off));
        auto part = read_at(off, n);
        if (part.size() != n) fail(ErrorCode::CorruptData, paths_.data.string() + ": short read");
        crc = crc32(part, crc);
    }
    if (crc != meta_.data_crc) fail(ErrorCode::ChecksumMismatch, paths_.data.string() + ": data checksum mismatch");
}

std::uint64_t Reader::start_offset(std::string_view key) const {
    auto it = std::lower_bound(keys_.begin(), keys_.end(), key,
                               [](const std::string& a, std::string_view b) { return std::string_view(a) < b; });
    if (it == keys_.begin()) return kDataStart;
    return offsets_[static_cast<std::size_t>(it - keys_.begin()) - 1];
}

namespace {

BlockHeader read_block_header(const std::function<std::string(std::uint64_t, std::size_t)>& read,
                              std::uint64_t offset, const std::filesystem::path& path) {
    auto head = read(offset, 64);
    if (head.size() < 4) fail(ErrorCode::CorruptData, path.string() + ": truncated block header");
    auto klen = get_u32(head.data());
    if (head.size() < 12 + std::size_t(klen)) head = read(offset, 12 + std::size_t(klen));
    if (head.size() < 12 + std::size_t(klen)) fail(ErrorCode::CorruptData, path.string() + ": truncated block header");
    BlockHeader h;
    h.first_key.assign(head.data() + 4, klen);
    h.raw_len = get_u32(head.data() + 4 + klen);
    h.stored_len = get_u32(head.data() + 8 + klen);
    h.header_len = 12 + klen;
    return h;
}

}  // namespace

std::shared_ptr<const Reader::Block> Reader::load_block(std::uint64_t offset) const {
    {
        std::lock_guard lk(cache_mu_);
        for (auto it = cache_.begin(); it != cache_.end(); ++it) {
            if (it->first == offset) {
                cache_.splice(cache_.begin(), cache_, it);
                return cache_.front().second;
            }
        }
    }
    auto rd = [this](std::uint64_t o, std::size_t n) { return read_at(o, n); };
    auto h = read_block_header(rd, offset, paths_.data);
    auto stored = read_at(offset + h.header_len, h.stored_len);
    if (stored.size() != h.stored_len) fail(ErrorCode::CorruptData, paths_.data.string() + ": truncated block");
    auto b = std::make_shared<Block>();
    try {
        b->raw = meta_.codec == Codec::Deflate ? inflate_bytes(stored, h.raw_len) : std::move(stored);
    } catch (const Error& e) {
        fail(ErrorCode::CorruptData, paths_.data.string() + ": block at " + std::to_string(offset) + ": " + e.what());
    }
    if (b->raw.size() != h.raw_len) fail(ErrorCode::CorruptData, paths_.data.string() + ": block length mismatch");
    b->next = offset + h.header_len + h.stored_len;
    std::string_view raw(b->raw);
    std::size_t p = 0;
    while (p < raw.size()) {
        if (raw.size() - p < 4) fail(ErrorCode::CorruptData, paths_.data.string() + ": malformed block");
        auto kl = get_u32(raw.data() + p);
        if (raw.size() - p - 4 < std::size_t(kl) + 4) fail(ErrorCode::CorruptData, paths_.data.string() + ": malformed block");
        auto key = raw.substr(p + 4, kl);
        auto vl = get_u32(raw.data() + p + 4 + kl);
        if (raw.size() - p - 8 - kl < vl) fail(ErrorCode::CorruptData, paths_.data.string() + ": malformed block");
        b->keys.push_back(key);
        b->values.push_back(raw.substr(p + 8 + kl, vl));
        p += 8 + std::size_t(kl) + vl;
    }
    if (b->keys.empty() || b->keys.front() != h.first_key)
        fail(ErrorCode::CorruptData, paths_.data.string() + ": block first key mismatch");
    std::lock_guard lk(cache_mu_);
    cache_.emplace_front(offset, b);
    if (cache_.size() > kCacheBlocks) cache_.pop_back();
    return b;
}

bool Reader::read_rows_from(std::uint64_t begin, std::uint64_t end, std::string_view lo, const RowFn& fn) const {
    if (meta_.n_rows == 0) return true;
    end = std::min(end, meta_.data_bytes);
    if (meta_.mode == Mode::Block) {
        auto rd = [this](std::uint64_t o, std::size_t n) { return read_at(o, n); };
        std::uint64_t off = begin;
        bool seeking = !lo.empty();
        while (off < end) {
            if (seeking) {
                // skip whole blocks whose successor still starts below `lo`
                auto h = read_block_header(rd, off, paths_.data);
                auto nxt = off + h.header_len + h.stored_len;
                if (nxt < end) {
                    auto nh = read_block_header(rd, nxt, paths_.data);
                    if (nh.first_key < lo) {
                        off = nxt;
                        continue;
                    }
                }
            }
            auto b = load_block(off);
            std::size_t i = 0;
            if (seeking) {
                i = static_cast<std::size_t>(std::lower_bound(b->keys.begin(), b->keys.end(), lo) - b->keys.begin());
                seeking = false;
            }
            for (; i < b->keys.size(); ++i)
                if (!fn(b->keys[i], b->values[i])) return false;
            off = b->next;
        }
        return true;
    }

    // record mode: buffered sequential reads
    std::size_t chunk = lo.empty() ? (1u << 20) : (32u << 10);
    std::string buf;
    std::uint64_t buf_off = begin;
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (buf.size() - pos >= n) return;
        buf.erase(0, pos);
        buf_off += pos;
        pos = 0;
        while (buf.size() < n) {
            auto more = read_at(buf_off + buf.size(), std::max(chunk, n - buf.size()));
            if (more.empty()) fail(ErrorCode::CorruptData, paths_.data.string() + ": truncated record");
            buf += more;
            chunk = std::min<std::size_t>(chunk * 2, 1u << 20);
        }
    };
    std::string value;
    while (buf_off + pos < end) {
        need(4);
        auto kl = get_u32(buf.data() + pos);
        need(12 + std::size_t(kl));
        std::string key(buf.data() + pos + 4, kl);
        auto stored = get_u32(buf.data() + pos + 4 + kl);
        auto raw = get_u32(buf.data() + pos + 8 + kl);
        std::size_t total = 12 + std::size_t(kl) + stored;
        if (!lo.empty() && std::string_view(key) < lo) {
            need(total);
            pos += total;
            continue;
        }
        need(total);
        std::string_view payload(buf.data() + pos + 12 + kl, stored);
        if (meta_.codec == Codec::Deflate) {
            try {
                value = inflate_bytes(payload, raw);
            } catch (const Error& e) {
                fail(ErrorCode::CorruptData, paths_.data.string() + ": record value: " + e.what());
            }
        } else {
            value.assign(payload);
        }
        pos += total;
        if (!fn(key, value)) return false;
    }
    return true;
}

std::optional<std::string> Reader::get(std::string_view key) const {
    std::optional<std::string> out;
    if (meta_.n_rows == 0 || key < std::string_view(meta_.first_key) || key > std::string_view(meta_.last_key))
        return out;
    read_rows_from(start_offset(key), meta_.data_bytes, key, [&](std::string_view k, std::string_view v) {
        if (k == key) out = std::string(v);
        return false;
    });
    return out;
}

std::vector<std::optional<std::string>> Reader::get_many(const std::vector<std::string>& keys) const {
    std::vector<std::optional<std::string>> out;
    out.reserve(keys.size());
    for (const auto& k : keys) out.push_back(get(k));
    return out;
}

void Reader::scan_range(std::string_view lo, std::string_view hi, const RowFn& fn) const {
    if (meta_.n_rows == 0 || hi < lo) return;
    read_rows_from(start_offset(lo), meta_.data_bytes, lo, [&](std::string_view k, std::string_view v) {
        if (k > hi) return false;
        return fn(k, v);
    });
}

std::vector<Row> Reader::get_range(std::string_view lo, std::string_view hi) const {
    std::vector<Row> out;
    scan_range(lo, hi, [&](std::string_view k, std::string_view v) {
        out.push_back({std::string(k), std::string(v)});
        return true;
    });
    return out;
}

void Reader::scan(const RowFn& fn) const { read_rows_from(kDataStart, meta_.data_bytes, {}, fn); }

namespace {

std::vector<std::uint64_t> distinct_offsets(const std::vector<std::uint64_t>& offsets) {
    std::vector<std::uint64_t> u;
    for (auto o : offsets)
        if (u.empty() || u.back() != o) u.push_back(o);
    return u;
}

}  // namespace

std::size_t Reader::partitions(std::size_t parts) const {
    auto n = distinct_offsets(offsets_).size();
    return std::max<std::size_t>(1, std::min(parts, n));
}

std::pair<std::uint64_t, std::uint64_t> Reader::partition_bounds(std::size_t part, std::size_t parts) const {
    auto u = distinct_offsets(offsets_);
    if (u.empty() || parts <= 1) return {kDataStart, meta_.data_bytes};
    auto n = u.size();
    auto bi = part * n / parts;
    auto ei = (part + 1) * n / parts;
    std::uint64_t b = part == 0 ? kDataStart : u[bi];
    std::uint64_t e = part + 1 >= parts ? meta_.data_bytes : u[ei];
    return {b, e};
}

void Reader::scan_partition(std::size_t part, std::size_t parts, const RowFn& fn) const {
    parts = partitions(parts);
    if (part >= parts) return;
    auto [b, e] = partition_bounds(part, parts);
    read_rows_from(b, e, {}, fn);
}

}  // namespace ei::mapfile

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

#include "ei/core.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "ei/bytes.hpp"
#include "ei/compress.hpp"
#include "ei/error.hpp"

namespace ei {

namespace {

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

constexpr char kHexUpper[] = "0123456789ABCDEF";
constexpr char kHexLower[] = "0123456789abcdef";

bool is_dash_position(std::size_t i) { return i == 8 || i == 13 || i == 18 || i == 23; }

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

template <typename T>
std::optional<T> parse_uint(std::string_view s) {
    if (s.empty()) return std::nullopt;
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
    return v;
}

}  // namespace

// --- Guid ---

Guid Guid::from_text(std::string_view text) {
    if (text.size() != kTextSize)
        fail(ErrorCode::MalformedGuid, "expected 36 characters, got " + std::to_string(text.size()));
    std::array<std::uint8_t, 16> bytes{};
    std::size_t nibble = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (is_dash_position(i)) {
            if (text[i] != '-') fail(ErrorCode::MalformedGuid, "expected '-' at position " + std::to_string(i));
            continue;
        }
        int v = hex_value(text[i]);
        if (v < 0) fail(ErrorCode::MalformedGuid, "non-hex character at position " + std::to_string(i));
        bytes[nibble / 2] = static_cast<std::uint8_t>(bytes[nibble / 2] | (nibble % 2 == 0 ? v << 4 : v));
        ++nibble;
    }
    return Guid(bytes);
}

Guid Guid::from_raw(std::string_view raw) {
    if (raw.size() != 16) fail(ErrorCode::MalformedGuid, "raw GUID must be 16 bytes, got " + std::to_string(raw.size()));
    std::array<std::uint8_t, 16> bytes{};
    std::memcpy(bytes.data(), raw.data(), 16);
    return Guid(bytes);
}

std::string Guid::to_text() const {
    std::string out;
    out.reserve(kTextSize);
    for (std::size_t i = 0; i < 16; ++i) {
        if (i == 4 || i == 6 || i == 8 || i == 10) out.push_back('-');
        out.push_back(kHexUpper[bytes_[i] >> 4]);
        out.push_back(kHexUpper[bytes_[i] & 0xF]);
    }
    return out;
}

bool Guid::is_nil() const {
    for (auto b : bytes_)
        if (b != 0) return false;
    return true;
}

// --- EventKey ---

std::string encode_event_key(const EventKey& key) {
    std::string out;
    out.reserve(kEventKeySize);
    ByteWriter w(out);
    w.u32be(key.run);
    w.u64be(key.event);
    return out;
}

EventKey decode_event_key(std::string_view bytes) {
    if (bytes.size() < kEventKeySize)
        fail(ErrorCode::CorruptData, "event key needs 12 bytes, got " + std::to_string(bytes.size()));
    ByteReader r(bytes.substr(0, kEventKeySize));
    EventKey k;
    k.run = r.u32be();
    k.event = r.u64be();
    return k;
}

// --- DatasetName ---

namespace {

bool valid_field(std::string_view f) {
    if (f.empty()) return false;
    for (char c : f)
        if (c == '.' || std::isspace(static_cast<unsigned char>(c))) return false;
    return true;
}

bool valid_format(std::string_view f) {
    return f == "RAW" || f == "AOD" || f == "EVNT" || f.starts_with("DAOD");
}

}  // namespace

DatasetName DatasetName::parse(std::string_view name) {
    auto fields = split(name, '.');
    if (fields.size() != 6)
        fail(ErrorCode::MalformedName, "expected 6 dot-separated fields in '" + std::string(name) + "', got " +
                                           std::to_string(fields.size()));
    for (std::size_t i = 0; i < fields.size(); ++i)
        if (!valid_field(fields[i]))
            fail(ErrorCode::MalformedName, "field " + std::to_string(i + 1) + " of '" + std::string(name) + "' is empty or invalid");
    auto run = parse_uint<std::uint32_t>(fields[1]);
    // zero-padded to 8 digits so that formatting reproduces the input exactly
    bool canonical = fields[1].size() == 8 || (fields[1].size() > 8 && fields[1][0] != '0');
    if (!run || !canonical)
        fail(ErrorCode::MalformedName, "run field '" + std::string(fields[1]) + "' is not a zero-padded 8-digit number");
    if (!valid_format(fields[4]))
        fail(ErrorCode::MalformedName, "data format '" + std::string(fields[4]) + "' is not RAW, AOD, DAOD* or EVNT");
    DatasetName d;
    d.project = fields[0];
    d.run_id = *run;
    d.stream = fields[2];
    d.prod_step = fields[3];
    d.data_format = fields[4];
    d.ami_tag = fields[5];
    return d;
}

std::string DatasetName::str() const {
    char run[16];
    std::snprintf(run, sizeof run, "%08u", run_id);
    return project + "." + run + "." + stream + "." + prod_step + "." + data_format + "." + ami_tag;
}

std::string DatasetName::container() const {
    char run[16];
    std::snprintf(run, sizeof run, "%08u", run_id);
    return project + "." + run;
}

std::uint32_t dataset_id_of(const DatasetName& name) { return crc32(name.str()); }

// --- TriggerMask ---

void TriggerMask::set(std::size_t bit) {
    auto w = bit / 64;
    if (w >= words_.size()) words_.resize(w + 1, 0);
    words_[w] |= std::uint64_t{1} << (bit % 64);
}

bool TriggerMask::any() const {
    for (auto w : words_)
        if (w != 0) return true;
    return false;
}

std::string TriggerMask::to_hex() const {
    std::string out;
    for (std::size_t i = 0; i < words_.size(); ++i) {
        if (i) out.push_back(':');
        auto w = words_[i];
        if (w == 0) {
            out.push_back('0');
            continue;
        }
        char buf[16];
        int n = 0;
        while (w) {
            buf[n++] = kHexLower[w & 0xF];
            w >>= 4;
        }
        while (n) out.push_back(buf[--n]);
    }
    return out;
}

TriggerMask TriggerMask::from_hex(std::string_view text) {
    std::vector<std::uint64_t> words;
    if (text.empty()) return TriggerMask{};
    for (auto part : split(text, ':')) {
        if (part.empty() || part.size() > 16) fail(ErrorCode::CorruptData, "bad mask word '" + std::string(part) + "'");
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v, 16);
        if (ec != std::errc{} || p != part.data() + part.size())
            fail(ErrorCode::CorruptData, "bad mask word '" + std::string(part) + "'");
        words.push_back(v);
    }
    return TriggerMask(std::move(words));
}

std::string_view to_string(TriggerLevel level) {
    switch (level) {
        case TriggerLevel::L1: return "L1";
        case TriggerLevel::L2: return "L2";
        case TriggerLevel::HLT: return "HLT";
    }
    return "?";
}

std::optional<TriggerLevel> trigger_level_from_string(std::string_view s) {
    if (s == "L1") return TriggerLevel::L1;
    if (s == "L2") return TriggerLevel::L2;
    if (s == "HLT") return TriggerLevel::HLT;
    return std::nullopt;
}

// --- EventRecord ---

void EventRecord::validate() const {
    if (locations.empty()) fail(ErrorCode::InvalidArgument, "event record has no GUID references");
    if (locations.size() > kMaxGuidRefs)
        fail(ErrorCode::FieldOverflow, "event record has " + std::to_string(locations.size()) + " GUID references (max 3)");
    if (locations[0].type != RefType::Indexed)
        fail(ErrorCode::InvalidArgument, "first GUID reference must be the indexed file");
    std::set<RefType> seen;
    for (const auto& ref : locations)
        if (!seen.insert(ref.type).second) fail(ErrorCode::InvalidArgument, "repeated GUID reference type");
    if (!is_simulated && lbn == 0) fail(ErrorCode::InvalidArgument, "real-data event with LBN 0");
}

// --- Registry ---

std::string_view to_string(DatasetStatus s) {
    switch (s) {
        case DatasetStatus::Valid: return "VALID";
        case DatasetStatus::Bad: return "BAD";
        case DatasetStatus::Obsolete: return "OBSOLETE";
    }
    return "?";
}

DatasetStatus dataset_status_from_string(std::string_view s) {
    if (s == "VALID") return DatasetStatus::Valid;
    if (s == "BAD") return DatasetStatus::Bad;
    if (s == "OBSOLETE") return DatasetStatus::Obsolete;
    fail(ErrorCode::InvalidArgument, "unknown dataset status '" + std::string(s) + "'");
}

std::uint64_t RegistryEntry::expected_total() const {
    std::uint64_t n = 0;
    for (const auto& f : files) n += f.expected_events;
    return n;
}

const RegistryFile* RegistryEntry::find_file(const Guid& guid) const {
    for (const auto& f : files)
        if (f.guid == guid) return &f;
    return nullptr;
}

bool is_indexable(const RegistryEntry& entry) { return entry.status == DatasetStatus::Valid; }

Registry Registry::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open registry " + path.string());
    return parse(in);
}

Registry Registry::parse(std::istream& in) {
    Registry reg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto fields = split(line, '\t');
        if (fields.size() < 3) fail(ErrorCode::CorruptInput, "registry line " + std::to_string(lineno) + ": too few fields");
        RegistryEntry e;
        e.dataset = DatasetName::parse(fields[0]);
        e.status = dataset_status_from_string(fields[1]);
        auto created = parse_uint<std::uint64_t>(fields[2]);
        if (!created) fail(ErrorCode::CorruptInput, "registry line " + std::to_string(lineno) + ": bad created-ms");
        e.created_ms = *created;
        std::set<Guid> guids;
        for (std::size_t i = 3; i < fields.size(); ++i) {
            auto colon = fields[i].rfind(':');
            if (colon == std::string_view::npos)
                fail(ErrorCode::CorruptInput, "registry line " + std::to_string(lineno) + ": expected guid:count");
            auto count = parse_uint<std::uint64_t>(fields[i].substr(colon + 1));
            if (!count) fail(ErrorCode::CorruptInput, "registry line " + std::to_string(lineno) + ": bad event count");
            RegistryFile f{Guid::from_text(fields[i].substr(0, colon)), *count};
            if (!guids.insert(f.guid).second)
                fail(ErrorCode::CorruptInput, "registry line " + std::to_string(lineno) + ": repeated GUID " + f.guid.to_text());
            e.files.push_back(f);
        }
        reg.add(std::move(e));
    }
    return reg;
}

void Registry::write(std::ostream& out) const {
    for (const auto& [name, e] : entries_) {
        out << name << '\t' << to_string(e.status) << '\t' << e.created_ms;
        for (const auto& f : e.files) out << '\t' << f.guid.to_text() << ':' << f.expected_events;
        out << '\n';
    }
}

void Registry::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write registry " + path.string());
    write(out);
}

const RegistryEntry& Registry::lookup(const DatasetName& dataset) const {
    auto* e = find(dataset);
    if (!e) fail(ErrorCode::UnknownDataset, dataset.str());
    return *e;
}

const RegistryEntry* Registry::find(const DatasetName& dataset) const {
    auto it = entries_.find(dataset.str());
    return it == entries_.end() ? nullptr : &it->second;
}

void Registry::add(RegistryEntry entry) {
    auto key = entry.dataset.str();
    entries_.insert_or_assign(std::move(key), std::move(entry));
}

std::vector<const RegistryEntry*> Registry::entries() const {
    std::vector<const RegistryEntry*> out;
    out.reserve(entries_.size());
    for (const auto& [_, e] : entries_) out.push_back(&e);
    return out;
}

}  // namespace ei

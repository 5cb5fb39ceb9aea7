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

#include "ei/mapstore.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>

#include "ei/consumer.hpp"
#include "ei/error.hpp"
#include "ei/seqfile.hpp"

namespace ei::mapstore {

using nlohmann::json;

namespace {

void write_atomic(const std::filesystem::path& file, const std::string& text) {
    std::filesystem::create_directories(file.parent_path());
    auto tmp = file;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << text;
        if (!out) fail(ErrorCode::Io, "cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, file);
}

void append_line(const std::filesystem::path& file, const std::string& line) {
    std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::app);
    out << line << '\n';
    if (!out) fail(ErrorCode::Io, "cannot append to " + file.string());
}

std::vector<json> read_json_lines(const std::filesystem::path& file) {
    std::vector<json> out;
    std::ifstream in(file);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(json::parse(line));
    return out;
}

void remove_pair(const mapfile::Paths& p) {
    std::error_code ec;
    std::filesystem::remove(p.data, ec);
    std::filesystem::remove(p.index, ec);
}

std::uint32_t id_suffix(std::string_view key) {
    auto s = key.substr(key.size() - 4);
    return std::uint32_t(static_cast<unsigned char>(s[0])) << 24 | std::uint32_t(static_cast<unsigned char>(s[1])) << 16 |
           std::uint32_t(static_cast<unsigned char>(s[2])) << 8 | std::uint32_t(static_cast<unsigned char>(s[3]));
}

}  // namespace

std::string_view to_string(EntryKind k) {
    switch (k) {
        case EntryKind::Events: return "EVENTS";
        case EntryKind::Derived: return "DERIVED";
        case EntryKind::Result: return "RESULT";
    }
    return "?";
}

std::string_view to_string(EntryStatus s) {
    switch (s) {
        case EntryStatus::Importing: return "IMPORTING";
        case EntryStatus::Valid: return "VALID";
        case EntryStatus::Obsolete: return "OBSOLETE";
        case EntryStatus::Deleted: return "DELETED";
    }
    return "?";
}

EntryKind entry_kind_from_string(std::string_view s) {
    for (auto k : {EntryKind::Events, EntryKind::Derived, EntryKind::Result})
        if (to_string(k) == s) return k;
    fail(ErrorCode::CorruptData, "unknown entry kind " + std::string(s));
}

EntryStatus entry_status_from_string(std::string_view s) {
    for (auto v : {EntryStatus::Importing, EntryStatus::Valid, EntryStatus::Obsolete, EntryStatus::Deleted})
        if (to_string(v) == s) return v;
    fail(ErrorCode::CorruptData, "unknown entry status " + std::string(s));
}

json to_json(const CatalogEntry& e) {
    json h = json::array();
    for (const auto& item : e.history) h.push_back({{"ms", item.ms}, {"action", item.action}});
    return {{"name", e.name},
            {"kind", to_string(e.kind)},
            {"status", to_string(e.status)},
            {"data_path", e.data_path},
            {"index_path", e.index_path},
            {"n_rows", e.n_rows},
            {"created_ms", e.created_ms},
            {"history", h},
            {"relations", e.relations},
            {"properties", e.properties}};
}

CatalogEntry entry_from_json(const json& j) {
    CatalogEntry e;
    e.name = j.at("name").get<std::string>();
    e.kind = entry_kind_from_string(j.at("kind").get<std::string>());
    e.status = entry_status_from_string(j.at("status").get<std::string>());
    e.data_path = j.at("data_path").get<std::string>();
    e.index_path = j.at("index_path").get<std::string>();
    e.n_rows = j.at("n_rows").get<std::uint64_t>();
    e.created_ms = j.at("created_ms").get<std::uint64_t>();
    for (const auto& h : j.at("history")) e.history.push_back({h.at("ms").get<std::uint64_t>(), h.at("action").get<std::string>()});
    e.relations = j.at("relations").get<std::vector<std::string>>();
    e.properties = j.at("properties").get<std::map<std::string, std::string>>();
    return e;
}

// ---- catalog ----

Catalog::Catalog(std::filesystem::path file) : file_(std::move(file)) {
    if (!std::filesystem::exists(file_)) return;
    std::ifstream in(file_);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCode::CorruptData, file_.string() + ": " + e.what());
    }
    for (const auto& j : doc.at("entries")) {
        auto e = entry_from_json(j);
        entries_.emplace(e.name, std::move(e));
    }
}

void Catalog::save() const {
    json arr = json::array();
    for (const auto& [_, e] : entries_) arr.push_back(to_json(e));
    write_atomic(file_, json{{"entries", arr}}.dump(1));
}

std::optional<CatalogEntry> Catalog::find(const std::string& name) const {
    std::lock_guard lk(mu_);
    auto it = entries_.find(name);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

std::vector<CatalogEntry> Catalog::entries() const {
    std::lock_guard lk(mu_);
    std::vector<CatalogEntry> out;
    for (const auto& [_, e] : entries_) out.push_back(e);
    return out;
}

std::vector<CatalogEntry> Catalog::with_status(EntryStatus status, std::optional<EntryKind> kind) const {
    std::lock_guard lk(mu_);
    std::vector<CatalogEntry> out;
    for (const auto& [_, e] : entries_)
        if (e.status == status && (!kind || e.kind == *kind)) out.push_back(e);
    return out;
}

void Catalog::put(const CatalogEntry& entry) {
    std::lock_guard lk(mu_);
    entries_[entry.name] = entry;
    save();
}

void Catalog::erase(const std::string& name) {
    std::lock_guard lk(mu_);
    entries_.erase(name);
    save();
}

void Catalog::set_status(const std::string& name, EntryStatus status, std::uint64_t ms, const std::string& action) {
    std::lock_guard lk(mu_);
    auto it = entries_.find(name);
    if (it == entries_.end()) fail(ErrorCode::UnknownEntry, "no catalog entry " + name);
    if (it->second.status == status)
        fail(ErrorCode::InvalidArgument, name + " is already " + std::string(to_string(status)));
    it->second.status = status;
    it->second.history.push_back({ms, action});
    save();
}

// ---- journal ----

Journal::Journal(std::filesystem::path file, ClockFn clock) : file_(std::move(file)), clock_(std::move(clock)) {
    for (const auto& j : read_json_lines(file_)) last_ms_ = std::max(last_ms_, j.value("ms", std::uint64_t{0}));
}

JournalEntry Journal::append(std::string operation, std::string target, json parameters, std::string outcome) {
    std::lock_guard lk(mu_);
    JournalEntry e{std::max(clock_(), last_ms_), std::move(operation), std::move(target), std::move(parameters),
                   std::move(outcome)};
    last_ms_ = e.ms;
    append_line(file_, json{{"ms", e.ms},
                            {"operation", e.operation},
                            {"target", e.target},
                            {"parameters", e.parameters},
                            {"outcome", e.outcome}}
                           .dump());
    return e;
}

std::vector<JournalEntry> Journal::read_all() const {
    std::lock_guard lk(mu_);
    std::vector<JournalEntry> out;
    for (const auto& j : read_json_lines(file_))
        out.push_back({j.at("ms").get<std::uint64_t>(), j.at("operation").get<std::string>(),
                       j.at("target").get<std::string>(), j.at("parameters"), j.at("outcome").get<std::string>()});
    return out;
}

// ---- lookup rows ----

std::string lookup_key(const EventKey& key, std::uint32_t dataset_id) {
    auto k = encode_event_key(key);
    for (int s = 24; s >= 0; s -= 8) k.push_back(static_cast<char>((dataset_id >> s) & 0xFF));
    return k;
}

std::string lookup_value(const DatasetName& dataset, const rows::RowView& row) {
    std::string v;
    v.reserve(160);
    for (auto part : {std::string_view(dataset.stream), std::string_view(dataset.data_format),
                      std::string_view(dataset.ami_tag)}) {
        v.append(part);
        v.push_back(',');
    }
    v.append(dataset.str());
    for (auto c : {rows::Guid0, rows::Guid1, rows::Guid2}) {
        v.push_back(',');
        v.append(row[c]);
    }
    return v;
}

LookupMatch parse_lookup_value(std::string_view value) {
    std::vector<std::string_view> f;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= value.size(); ++i) {
        if (i == value.size() || value[i] == ',') {
            f.push_back(value.substr(start, i - start));
            start = i + 1;
        }
    }
    if (f.size() != 7) fail(ErrorCode::CorruptData, "lookup value has " + std::to_string(f.size()) + " fields");
    LookupMatch m{std::string(f[3]), std::string(f[0]), std::string(f[1]), std::string(f[2]), {}};
    for (std::size_t i = 4; i < 7; ++i)
        if (!f[i].empty()) m.guid_refs.emplace_back(f[i]);
    return m;
}

// ---- lookup table ----

LookupTable::LookupTable(std::filesystem::path dir, mapfile::Options options, std::size_t compact_after)
    : dir_(std::move(dir)), options_(options), compact_after_(std::max<std::size_t>(compact_after, 1)) {
    std::filesystem::create_directories(dir_);
    load();
}

mapfile::Paths LookupTable::paths_of(const std::string& name) const { return mapfile::Paths::for_base(dir_ / name); }

void LookupTable::load() {
    auto file = dir_ / "manifest.json";
    if (!std::filesystem::exists(file)) return;
    std::ifstream in(file);
    auto doc = json::parse(in);
    next_ = doc.at("next").get<std::uint64_t>();
    for (const auto& s : doc.at("segments")) {
        Segment seg{s.at("name").get<std::string>(), s.at("datasets").get<std::vector<std::uint32_t>>(),
                    s.at("rows").get<std::uint64_t>(), nullptr};
        seg.reader = mapfile::Reader::open(paths_of(seg.name));
        segments_.push_back(std::move(seg));
    }
}

void LookupTable::save() const {
    json segs = json::array();
    for (const auto& s : segments_) segs.push_back({{"name", s.name}, {"datasets", s.datasets}, {"rows", s.rows}});
    write_atomic(dir_ / "manifest.json", json{{"next", next_}, {"segments", segs}}.dump(1));
}

std::string LookupTable::next_name() {
    std::lock_guard lk(mu_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "seg-%06llu", static_cast<unsigned long long>(next_++));
    return buf;
}

LookupTable::Builder::Builder(LookupTable& table, std::uint32_t dataset_id, std::string name)
    : table_(table),
      dataset_id_(dataset_id),
      name_(std::move(name)),
      writer_(std::make_unique<mapfile::Writer>(table.paths_of(name_), table.options_)) {}

void LookupTable::Builder::add(const EventKey& key, std::string_view value) {
    writer_->add(lookup_key(key, dataset_id_), value);
}

void LookupTable::Builder::commit() {
    auto meta = writer_->finish();
    writer_.reset();
    auto paths = table_.paths_of(name_);
    if (meta.n_rows == 0) {
        remove_pair(paths);
        return;
    }
    table_.publish({name_, {dataset_id_}, meta.n_rows, mapfile::Reader::open(paths)});
}

LookupTable::Builder LookupTable::builder(std::uint32_t dataset_id) { return Builder(*this, dataset_id, next_name()); }

void LookupTable::publish(Segment seg) {
    std::size_t count = 0;
    {
        std::lock_guard lk(mu_);
        segments_.push_back(std::move(seg));
        save();
        count = segments_.size();
    }
    if (count > compact_after_) compact();
}

std::vector<LookupTable::Segment> LookupTable::snapshot() const {
    std::lock_guard lk(mu_);
    return segments_;
}

std::size_t LookupTable::segments() const {
    std::lock_guard lk(mu_);
    return segments_.size();
}

std::uint64_t LookupTable::rows() const {
    std::lock_guard lk(mu_);
    std::uint64_t n = 0;
    for (const auto& s : segments_) n += s.rows;
    return n;
}

void LookupTable::purge(std::uint32_t dataset_id) {
    auto segs = snapshot();
    std::vector<Segment> keep;
    std::vector<std::string> dropped;
    for (auto& s : segs) {
        if (std::find(s.datasets.begin(), s.datasets.end(), dataset_id) == s.datasets.end()) {
            keep.push_back(std::move(s));
            continue;
        }
        dropped.push_back(s.name);
        if (s.datasets.size() == 1) continue;
        auto name = next_name();
        mapfile::Writer w(paths_of(name), options_);
        s.reader->scan([&](std::string_view k, std::string_view v) {
            if (id_suffix(k) != dataset_id) w.add(k, v);
            return true;
        });
        auto meta = w.finish();
        std::vector<std::uint32_t> ids;
        for (auto id : s.datasets)
            if (id != dataset_id) ids.push_back(id);
        keep.push_back({name, ids, meta.n_rows, mapfile::Reader::open(paths_of(name))});
    }
    if (dropped.empty()) return;
    {
        std::lock_guard lk(mu_);
        segments_ = std::move(keep);
        save();
    }
    for (const auto& n : dropped) remove_pair(paths_of(n));
}

namespace {

/// Pull-style cursor over a reader with unique keys, paging through scan_range.
class Pager {
public:
    explicit Pager(const mapfile::Reader& r) : r_(r) { refill({}); }
    bool valid() const { return pos_ < page_.size(); }
    const mapfile::Row& row() const { return page_[pos_]; }
    void next() {
        if (++pos_ < page_.size()) return;
        if (page_.empty()) return;
        auto lo = page_.back().key;
        lo.push_back('\0');
        refill(lo);
    }

private:
    void refill(const std::string& lo) {
        page_.clear();
        pos_ = 0;
        if (r_.meta().n_rows == 0) return;
        r_.scan_range(lo, r_.meta().last_key, [&](std::string_view k, std::string_view v) {
            page_.push_back({std::string(k), std::string(v)});
            return page_.size() < 4096;
        });
    }
    const mapfile::Reader& r_;
    std::vector<mapfile::Row> page_;
    std::size_t pos_ = 0;
};

}  // namespace

void LookupTable::compact() {
    auto segs = snapshot();
    if (segs.size() <= 1) return;
    auto name = next_name();
    mapfile::Writer w(paths_of(name), options_);
    std::vector<Pager> pagers;
    pagers.reserve(segs.size());
    for (const auto& s : segs) pagers.emplace_back(*s.reader);
    for (;;) {
        std::size_t best = pagers.size();
        for (std::size_t i = 0; i < pagers.size(); ++i)
            if (pagers[i].valid() && (best == pagers.size() || pagers[i].row().key < pagers[best].row().key)) best = i;
        if (best == pagers.size()) break;
        w.add(pagers[best].row().key, pagers[best].row().value);
        pagers[best].next();
    }
    auto meta = w.finish();
    std::vector<std::uint32_t> ids;
    for (const auto& s : segs) ids.insert(ids.end(), s.datasets.begin(), s.datasets.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    Segment merged{name, ids, meta.n_rows, mapfile::Reader::open(paths_of(name))};
    {
        std::lock_guard lk(mu_);
        // segments published meanwhile survive the swap
        std::vector<Segment> rest;
        for (auto& s : segments_) {
            bool old = std::any_of(segs.begin(), segs.end(), [&](const Segment& o) { return o.name == s.name; });
            if (!old) rest.push_back(std::move(s));
        }
        segments_.clear();
        segments_.push_back(std::move(merged));
        for (auto& s : rest) segments_.push_back(std::move(s));
        save();
    }
    for (const auto& s : segs) remove_pair(paths_of(s.name));
}

std::vector<LookupResult> LookupTable::lookup(const std::vector<EventKey>& keys) const {
    auto segs = snapshot();
    std::vector<LookupResult> out(keys.size());
    std::vector<std::size_t> order(keys.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
    for (auto i : order) {
        out[i].key = keys[i];
        auto lo = lookup_key(keys[i], 0);
        auto hi = lookup_key(keys[i], 0xFFFFFFFFu);
        for (const auto& s : segs)
            s.reader->scan_range(lo, hi, [&](std::string_view, std::string_view v) {
                out[i].matches.push_back(parse_lookup_value(v));
                return true;
            });
        std::sort(out[i].matches.begin(), out[i].matches.end(),
                  [](const LookupMatch& a, const LookupMatch& b) { return a.dataset < b.dataset; });
    }
    return out;
}

void LookupTable::scan(const mapfile::RowFn& fn) const {
    for (const auto& s : snapshot()) {
        bool go = true;
        s.reader->scan([&](std::string_view k, std::string_view v) { return go = fn(k, v); });
        if (!go) return;
    }
}

// ---- parallel scan ----

std::vector<mapfile::Row> parallel_scan(const mapfile::Reader& reader, const RowPredicate& pred, std::size_t threads) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    auto parts = reader.partitions(threads);
    std::vector<std::vector<mapfile::Row>> found(parts);
    std::vector<std::exception_ptr> errors(parts);
    auto work = [&](std::size_t p) {
        try {
            reader.scan_partition(p, parts, [&](std::string_view k, std::string_view v) {
                if (pred(k, v)) found[p].push_back({std::string(k), std::string(v)});
                return true;
            });
        } catch (...) {
            errors[p] = std::current_exception();
        }
    };
    if (parts == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t p = 0; p < parts; ++p) pool.emplace_back(work, p);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::vector<mapfile::Row> out;
    for (auto& f : found) std::move(f.begin(), f.end(), std::back_inserter(out));
    return out;
}

// ---- store ----

Store::Store(std::filesystem::path root, StoreOptions options)
    : root_(std::move(root)),
      options_(std::move(options)),
      catalog_(root_ / "_catalog" / "catalog.json"),
      journal_(root_ / "_journal" / "journal.jsonl", options_.clock),
      lookup_(root_ / "_lookup", options_.lookup, options_.compact_after) {
    std::filesystem::create_directories(root_ / "_notifications");
    std::filesystem::create_directories(root_ / "_catalog");
    std::filesystem::create_directories(root_ / "_journal");
}

std::string Store::rel(const std::filesystem::path& p) const {
    return p.lexically_relative(root_).generic_string();
}

mapfile::Paths Store::entry_paths(const CatalogEntry& e) const { return {root_ / e.data_path, root_ / e.index_path}; }

std::filesystem::path Store::table_base(const std::string& dataset, const std::string& suffix) const {
    return root_ / DatasetName::parse(dataset).container() / (dataset + suffix);
}

std::shared_ptr<mapfile::Reader> Store::open_entry(const CatalogEntry& e) const {
    auto paths = entry_paths(e);
    std::lock_guard lk(readers_mu_);
    auto it = readers_.find(e.data_path);
    if (it != readers_.end()) return it->second;
    auto r = mapfile::Reader::open(paths);
    readers_[e.data_path] = r;
    return r;
}

std::shared_ptr<mapfile::Reader> Store::open(const std::string& name) const {
    auto e = catalog_.find(name);
    if (!e || e->status != EntryStatus::Valid) fail(ErrorCode::UnknownEntry, "no valid table " + name);
    return open_entry(*e);
}

std::vector<std::string> Store::datasets() const {
    std::vector<std::string> out;
    for (const auto& e : catalog_.with_status(EntryStatus::Valid, EntryKind::Events)) out.push_back(e.name);
    return out;
}

std::vector<mapfile::Row> Store::duplicates(const std::string& dataset) const {
    auto e = catalog_.find(dataset + ".duplicates");
    std::vector<mapfile::Row> out;
    if (!e || e->status != EntryStatus::Valid) return out;
    open_entry(*e)->scan([&](std::string_view k, std::string_view v) {
        out.push_back({std::string(k), std::string(v)});
        return true;
    });
    return out;
}

void Store::notify(const json& record) { append_line(notifications_file(), record.dump()); }

std::vector<json> Store::notifications() const { return read_json_lines(notifications_file()); }

void Store::remove_files(const CatalogEntry& e) {
    {
        std::lock_guard lk(readers_mu_);
        readers_.erase(e.data_path);
    }
    remove_pair(entry_paths(e));
}

namespace {

std::uint64_t generation_of(const CatalogEntry& e) {
    auto it = e.properties.find("generation");
    return it == e.properties.end() ? 1 : std::stoull(it->second);
}

void rename_entry(Catalog& c, const std::string& from, const std::string& to, std::uint64_t ms, const std::string& why) {
    auto e = c.find(from);
    if (!e) return;
    c.erase(from);
    e->name = to;
    e->status = EntryStatus::Obsolete;
    e->history.push_back({ms, why});
    c.put(*e);
}

}  // namespace

ImportReport Store::import_dataset(const std::filesystem::path& seq_path, const ImportOptions& options) {
    std::lock_guard wlk(write_mu_);
    ImportReport rep;
    std::string staging_name;
    auto journal_fail = [&](const std::string& target, const std::string& why) {
        journal_.append("import", target, {{"source", seq_path.string()}, {"supersede", options.supersede}},
                        "failed: " + why);
    };

    std::unique_ptr<seq::Reader> in;
    try {
        in = std::make_unique<seq::Reader>(seq_path);
    } catch (const Error& e) {
        journal_fail(seq_path.filename().string(), e.what());
        throw;
    }
    rep.dataset = in->dataset();
    try {
        auto name = DatasetName::parse(rep.dataset);
        if (options.require_listed) {
            auto list = seq_path.parent_path() / "_validated.txt";
            bool listed = false;
            std::error_code ec;
            for (const auto& p : consumer::read_completion_list(list))
                if (std::filesystem::equivalent(p, seq_path, ec)) listed = true;
            if (!listed) fail(ErrorCode::InvalidArgument, seq_path.string() + " is not in the completion list");
        }
        auto existing = catalog_.find(rep.dataset);
        bool superseding = existing && existing->status == EntryStatus::Valid;
        if (superseding && !options.supersede)
            fail(ErrorCode::CatalogConflict, rep.dataset + " already has a VALID entry");

        std::uint64_t gen = 1;
        for (const auto& e : catalog_.entries())
            if (e.name == rep.dataset || e.name.rfind(rep.dataset + "#v", 0) == 0)
                gen = std::max(gen, generation_of(e) + 1);
        auto base = table_base(rep.dataset, gen == 1 ? "" : ".g" + std::to_string(gen));
        auto paths = mapfile::Paths::for_base(base);
        auto dataset_id = dataset_id_of(name);

        staging_name = superseding ? rep.dataset + "#importing" : rep.dataset;
        CatalogEntry entry;
        entry.name = staging_name;
        entry.kind = EntryKind::Events;
        entry.status = EntryStatus::Importing;
        entry.data_path = rel(paths.data);
        entry.index_path = rel(paths.index);
        entry.created_ms = now();
        entry.history.push_back({entry.created_ms, "import started from " + seq_path.filename().string()});
        entry.properties = {{"generation", std::to_string(gen)},
                            {"dataset_id", std::to_string(dataset_id)},
                            {"container", name.container()},
                            {"mode", std::string(mapfile::to_string(options_.events.mode))},
                            {"codec", std::string(mapfile::to_string(options_.events.codec))}};
        catalog_.put(entry);

        mapfile::Writer writer(paths, options_.events);
        std::vector<mapfile::Row> dups;
        auto lb = lookup_.builder(dataset_id);
        seq::Row row;
        std::string prev;
        while (in->next(row)) {
            ++rep.n_input;
            if (rep.n_input > 1 && row.key == prev) {
                rep.duplicate_keys.push_back(decode_event_key(row.key));
                dups.push_back({std::move(row.key), std::move(row.value)});
                continue;
            }
            if (rep.n_input > 1 && row.key < prev)
                fail(ErrorCode::UnsortedInput, seq_path.string() + ": unsorted input at row " +
                                                   std::to_string(rep.n_input - 1));
            writer.add(row.key, row.value);
            lb.add(decode_event_key(row.key), lookup_value(name, rows::RowView::parse(row.key, row.value)));
            prev = row.key;
        }
        rep.meta = writer.finish();
        rep.n_rows = rep.meta.n_rows;
        rep.n_duplicates = dups.size();

        // verification: re-read the written files end to end
        auto check = mapfile::Reader::open(paths, true);
        if (check->meta().n_rows != rep.n_rows || rep.n_rows + rep.n_duplicates != rep.n_input)
            fail(ErrorCode::ChecksumMismatch, rep.dataset + ": row count differs after write");
        if (superseding) lookup_.purge(dataset_id);
        lb.commit();

        auto ms = now();
        std::string dup_name = rep.dataset + ".duplicates";
        if (superseding) {
            auto old_gen = generation_of(*existing);
            auto old_name = rep.dataset + "#v" + std::to_string(old_gen);
            rename_entry(catalog_, rep.dataset, old_name, ms, "superseded");
            rename_entry(catalog_, dup_name, old_name + ".duplicates", ms, "superseded");
            catalog_.erase(staging_name);
        }
        entry.name = rep.dataset;
        entry.n_rows = rep.n_rows;
        entry.properties["n_duplicates"] = std::to_string(rep.n_duplicates);
        entry.properties["n_input"] = std::to_string(rep.n_input);
        entry.properties["data_bytes"] = std::to_string(rep.meta.data_bytes);
        entry.properties["index_bytes"] = std::to_string(rep.meta.index_bytes);
        entry.properties["data_crc"] = std::to_string(rep.meta.data_crc);
        if (superseding) entry.relations.push_back(rep.dataset + "#v" + std::to_string(generation_of(*existing)));
        entry.history.push_back({ms, "verified " + std::to_string(rep.n_rows) + " rows"});

        if (!dups.empty()) {
            auto dpaths = mapfile::Paths::for_base(base.string() + ".dups");
            auto dopt = options_.events;
            dopt.allow_equal_keys = true;
            auto dmeta = mapfile::write_all(dpaths, dups, dopt);
            register_table(dup_name, EntryKind::Derived, dpaths, dmeta, {rep.dataset});
            entry.relations.push_back(dup_name);
            json keys = json::array();
            for (const auto& k : rep.duplicate_keys) keys.push_back({k.run, k.event});
            notify({{"ms", ms},
                    {"type", "duplicates"},
                    {"dataset", rep.dataset},
                    {"n_duplicates", rep.n_duplicates},
                    {"keys", keys}});
        } else if (auto d = catalog_.find(dup_name); d && d->status == EntryStatus::Valid) {
            catalog_.set_status(dup_name, EntryStatus::Obsolete, ms, "superseded");
        }
        catalog_.put(entry);
        catalog_.set_status(rep.dataset, EntryStatus::Valid, ms, "import complete");
        rep.entry = *catalog_.find(rep.dataset);
        journal_.append("import", rep.dataset,
                        {{"source", seq_path.string()},
                         {"supersede", options.supersede},
                         {"generation", gen}},
                        "ok: " + std::to_string(rep.n_rows) + " rows, " + std::to_string(rep.n_duplicates) +
                            " duplicates");
        return rep;
    } catch (const Error& e) {
        if (!staging_name.empty()) {
            auto st = catalog_.find(staging_name);
            if (st && st->status == EntryStatus::Importing) {
                remove_files(*st);
                catalog_.erase(staging_name);
            }
        }
        journal_fail(rep.dataset, e.what());
        throw;
    }
}

CatalogEntry Store::register_table(const std::string& name, EntryKind kind, const mapfile::Paths& paths,
                                   const mapfile::Meta& meta, std::vector<std::string> relations,
                                   std::map<std::string, std::string> properties) {
    mapfile::Reader::open(paths, true);
    CatalogEntry e;
    e.name = name;
    e.kind = kind;
    e.status = EntryStatus::Valid;
    e.data_path = rel(paths.data);
    e.index_path = rel(paths.index);
    e.n_rows = meta.n_rows;
    e.created_ms = now();
    e.history.push_back({e.created_ms, "registered"});
    e.relations = std::move(relations);
    e.properties = std::move(properties);
    e.properties["data_bytes"] = std::to_string(meta.data_bytes);
    if (auto old = catalog_.find(name); old && old->data_path != e.data_path && old->status != EntryStatus::Deleted)
        remove_files(*old);
    {
        std::lock_guard lk(readers_mu_);
        readers_.erase(e.data_path);
    }
    catalog_.put(e);
    return e;
}

void Store::replace_files(const std::string& name, const mapfile::Paths& paths, const mapfile::Meta& meta,
                          const std::string& action) {
    auto e = catalog_.find(name);
    if (!e || e->status != EntryStatus::Valid) fail(ErrorCode::UnknownEntry, "no valid table " + name);
    mapfile::Reader::open(paths, true);
    auto old = *e;
    e->data_path = rel(paths.data);
    e->index_path = rel(paths.index);
    e->n_rows = meta.n_rows;
    e->properties["data_bytes"] = std::to_string(meta.data_bytes);
    e->properties["data_crc"] = std::to_string(meta.data_crc);
    e->history.push_back({now(), action});
    catalog_.put(*e);
    {
        std::lock_guard lk(readers_mu_);
        readers_.erase(old.data_path);
    }
    if (old.data_path != e->data_path) remove_pair(entry_paths(old));
}

std::vector<LookupResult> Store::event_lookup(const std::vector<EventKey>& keys, const LookupFilters& filters) {
    auto results = lookup_.lookup(keys);
    std::size_t found = 0;
    for (auto& r : results) {
        std::erase_if(r.matches, [&](const LookupMatch& m) {
            if (filters.stream && m.stream != *filters.stream) return true;
            if (filters.data_format && m.data_format != *filters.data_format) return true;
            if (filters.ami_tag && m.ami_tag != *filters.ami_tag) return true;
            auto e = catalog_.find(m.dataset);
            return !e || e->status != EntryStatus::Valid;
        });
        if (r.found()) ++found;
    }
    json params{{"events", keys.size()}};
    if (filters.stream) params["stream"] = *filters.stream;
    if (filters.data_format) params["data_format"] = *filters.data_format;
    if (filters.ami_tag) params["ami_tag"] = *filters.ami_tag;
    journal_.append("search", "lookup", params,
                    "found " + std::to_string(found) + "/" + std::to_string(keys.size()));
    return results;
}

std::vector<mapfile::Row> Store::scan(const std::string& name, const RowPredicate& pred, std::size_t threads) {
    std::vector<mapfile::Row> out;
    try {
        out = parallel_scan(*open(name), pred, threads);
    } catch (const Error& e) {
        journal_.append("search", name, {{"kind", "scan"}}, std::string("failed: ") + e.what());
        throw;
    }
    journal_.append("search", name, {{"kind", "scan"}}, "matched " + std::to_string(out.size()));
    return out;
}

void Store::delete_dataset(const std::string& name) {
    std::lock_guard wlk(write_mu_);
    auto e = catalog_.find(name);
    if (!e || e->status == EntryStatus::Deleted) {
        journal_.append("delete", name, json::object(), "failed: unknown entry");
        fail(ErrorCode::UnknownEntry, "no catalog entry " + name);
    }
    std::vector<CatalogEntry> victims{*e};
    for (const auto& other : catalog_.entries())
        if (other.kind != EntryKind::Events && other.status != EntryStatus::Deleted && other.name != name &&
            std::find(other.relations.begin(), other.relations.end(), name) != other.relations.end())
            victims.push_back(other);
    if (e->kind == EntryKind::Events && e->status == EntryStatus::Valid)
        lookup_.purge(static_cast<std::uint32_t>(std::stoul(e->properties.at("dataset_id"))));
    auto ms = now();
    for (const auto& v : victims) {
        remove_files(v);
        catalog_.set_status(v.name, EntryStatus::Deleted, ms, v.name == name ? "deleted" : "deleted with " + name);
    }
    journal_.append("delete", name, {{"cascade", victims.size() - 1}}, "ok");
}

}  // namespace ei::mapstore

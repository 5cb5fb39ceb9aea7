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

#include "ei/gateway.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "ei/consumer.hpp"
#include "ei/error.hpp"
#include "ei/predicate.hpp"
#include "ei/rows.hpp"
#include "ei/supervisor.hpp"
#include "ei/trigger.hpp"

namespace ei::gateway {

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& text, const std::string& what) {
    T v{};
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size())
        fail(ErrorCode::InvalidArgument, "bad " + what + " '" + text + "'");
    return v;
}

json key_json(const EventKey& k) { return {{"run", k.run}, {"event", k.event}}; }

bool printable(std::string_view s) {
    for (unsigned char c : s)
        if (c < 0x20 && c != '\t') return false;
    return true;
}

std::string hex(std::string_view s) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned char c : s) {
        out.push_back(digits[c >> 4]);
        out.push_back(digits[c & 15]);
    }
    return out;
}

json overlap_table_json(const trigger::OverlapTable& t) {
    json m = json::array();
    for (std::size_t i = 0; i < t.size(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < t.size(); ++j) row.push_back(t.at(i, j));
        m.push_back(std::move(row));
    }
    return {{"dataset", t.dataset}, {"events", t.events}, {"chains", t.chains}, {"matrix", std::move(m)}};
}

json duplicate_row_json(const eio::DuplicateRow& d) {
    return {{"run", d.run}, {"event", d.event}, {"occurrence", d.occurrence}, {"lbn", d.lbn}, {"guid_refs", d.guid_refs}};
}

json lbn_row_json(const eio::LbnCountRow& l) {
    return {{"lbn", l.lbn},
            {"n_events", l.n_events},
            {"n_unique_guids", l.n_unique_guids},
            {"min_event", l.min_event},
            {"max_event", l.max_event},
            {"guids", l.guids}};
}

}  // namespace

// ---- layout and config ----

Layout Layout::resolve(const std::optional<std::filesystem::path>& explicit_root, bool must_exist) {
    Layout l;
    if (explicit_root) {
        l.root = *explicit_root;
    } else if (const char* env = std::getenv("EI_STORE_ROOT"); env && *env) {
        l.root = env;
    } else {
        fail(ErrorCode::StoreUnreachable, "no store root: pass --store or set EI_STORE_ROOT");
    }
    if (must_exist && !std::filesystem::is_directory(l.root))
        fail(ErrorCode::StoreUnreachable, "store root " + l.root.string() + " does not exist");
    return l;
}

Config Config::load(const std::filesystem::path& path) {
    Config c;
    std::ifstream in(path);
    if (!in) return c;
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        if (trim(line).empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            fail(ErrorCode::InvalidArgument, path.string() + " line " + std::to_string(n) + ": expected key = value");
        auto key = trim(std::string_view(line).substr(0, eq));
        auto value = trim(std::string_view(line).substr(eq + 1));
        if (key == "broker") {
            c.broker = value;
        } else if (key == "http_host") {
            c.http_host = value;
        } else if (key == "http_port") {
            c.http_port = parse_number<std::uint16_t>(value, "http_port");
        } else if (key == "max_pick_events") {
            c.max_pick_events = parse_number<std::size_t>(value, "max_pick_events");
        } else if (key == "status_period_s") {
            c.status_period_s = parse_number<std::uint64_t>(value, "status_period_s");
        } else if (key == "run_allowlist") {
            c.run_allowlist = value;
        } else {
            fail(ErrorCode::InvalidArgument, path.string() + " line " + std::to_string(n) + ": unknown key '" + key + "'");
        }
    }
    return c;
}

// ---- lookups and scans ----

EventKey parse_event_key(std::string_view text) {
    auto t = trim(text);
    auto sep = t.find_first_of(": \t,");
    if (sep == std::string::npos) fail(ErrorCode::InvalidArgument, "expected run:event, got '" + t + "'");
    auto run = trim(std::string_view(t).substr(0, sep));
    auto event = trim(std::string_view(t).substr(sep + 1));
    return {parse_number<std::uint32_t>(run, "run number"), parse_number<std::uint64_t>(event, "event number")};
}

std::vector<EventKey> read_event_keys(std::istream& in) {
    std::vector<EventKey> keys;
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        if (!trim(line).empty()) keys.push_back(parse_event_key(line));
    }
    return keys;
}

json el_query(mapstore::Store& store, const std::vector<EventKey>& keys, const mapstore::LookupFilters& filters) {
    auto results = store.event_lookup(keys, filters);
    std::map<EventKey, const mapstore::LookupResult*> by_key;
    for (const auto& r : results) by_key[r.key] = &r;
    json out = json::array();
    std::uint64_t found = 0;
    for (const auto& k : keys) {
        json row = key_json(k);
        json matches = json::array();
        if (auto it = by_key.find(k); it != by_key.end())
            for (const auto& m : it->second->matches)
                matches.push_back({{"dataset", m.dataset},
                                   {"stream", m.stream},
                                   {"data_format", m.data_format},
                                   {"ami_tag", m.ami_tag},
                                   {"guid_refs", m.guid_refs}});
        row["found"] = !matches.empty();
        if (!matches.empty()) ++found;
        row["matches"] = std::move(matches);
        out.push_back(std::move(row));
    }
    json f = json::object();
    if (filters.stream) f["stream"] = *filters.stream;
    if (filters.data_format) f["data_format"] = *filters.data_format;
    if (filters.ami_tag) f["ami_tag"] = *filters.ami_tag;
    return {{"filters", f}, {"results", out}, {"found", found}, {"not_found", keys.size() - found}};
}

json ei_query(mapstore::Store& store, const ScanQuery& q) {
    auto pred = query::Predicate::parse(q.where);
    auto select = q.select.empty() ? std::vector<std::string>{"run", "event", "lbn", "bcid", "guid0"} : q.select;
    const auto& names = query::column_names();
    for (const auto& s : select)
        if (std::find(names.begin(), names.end(), s) == names.end())
            fail(ErrorCode::InvalidArgument, "unknown column '" + s + "' in select");
    auto reader = store.open(q.dataset);
    std::uint64_t count = 0;
    json rows = json::array();
    reader->scan([&](std::string_view k, std::string_view v) {
        auto row = rows::RowView::parse(k, v);
        if (!pred(row)) return true;
        ++count;
        if (!q.count_only) {
            json r = json::array();
            for (const auto& s : select) r.push_back(query::column_text(row, s));
            rows.push_back(std::move(r));
        }
        return !q.limit || count < *q.limit;
    });
    store.journal().append("search", q.dataset, {{"where", pred.str()}, {"count_only", q.count_only}},
                           std::to_string(count) + " rows");
    json out = {{"dataset", q.dataset}, {"where", pred.str()}, {"count", count}};
    if (!q.count_only) {
        out["columns"] = select;
        out["rows"] = std::move(rows);
    }
    return out;
}

// ---- catalog ----

template <class F>
auto user_value(F&& parse, const std::string& what, const std::string& text) {
    try {
        return parse(text);
    } catch (const Error&) {
        fail(ErrorCode::InvalidArgument, "unknown " + what + " '" + text + "'");
    }
}

json catalog_list(const mapstore::Store& store, const std::optional<std::string>& status,
                  const std::optional<std::string>& kind, const std::optional<std::string>& prefix) {
    std::optional<mapstore::EntryStatus> st;
    std::optional<mapstore::EntryKind> kd;
    if (status) st = user_value(mapstore::entry_status_from_string, "status", *status);
    if (kind) kd = user_value(mapstore::entry_kind_from_string, "kind", *kind);
    json out = json::array();
    for (const auto& e : store.catalog().entries()) {
        if (st && e.status != *st) continue;
        if (kd && e.kind != *kd) continue;
        if (prefix && e.name.rfind(*prefix, 0) != 0) continue;
        out.push_back({{"name", e.name},
                       {"kind", mapstore::to_string(e.kind)},
                       {"status", mapstore::to_string(e.status)},
                       {"rows", e.n_rows},
                       {"created_ms", e.created_ms}});
    }
    return {{"entries", out}, {"count", out.size()}};
}

json catalog_show(const mapstore::Store& store, const std::string& name) {
    auto e = store.catalog().find(name);
    if (!e) fail(ErrorCode::UnknownEntry, "no catalog entry " + name);
    return mapstore::to_json(*e);
}

json catalog_set_status(mapstore::Store& store, const std::string& name, const std::string& status) {
    auto st = user_value(mapstore::entry_status_from_string, "status", status);
    auto e = store.catalog().find(name);
    if (!e) {
        store.journal().append("catalog", name, {{"status", status}}, "failed: unknown entry");
        fail(ErrorCode::UnknownEntry, "no catalog entry " + name);
    }
    auto before = std::string(mapstore::to_string(e->status));
    store.catalog().set_status(name, st, store.now(), "status set to " + status + " by operator");
    auto j = store.journal().append("catalog", name, {{"from", before}, {"status", status}}, "ok");
    return {{"name", name}, {"from", before}, {"status", status}, {"ms", j.ms}};
}

json journal_tail(mapstore::Store& store, std::size_t n) {
    auto all = store.journal().read_all();
    json out = json::array();
    for (std::size_t i = all.size() > n ? all.size() - n : 0; i < all.size(); ++i)
        out.push_back({{"ms", all[i].ms},
                       {"operation", all[i].operation},
                       {"target", all[i].target},
                       {"parameters", all[i].parameters},
                       {"outcome", all[i].outcome}});
    return {{"journal", out}};
}

// ---- trigger ----

json ti_stats(mapstore::Store& store, const std::string& dataset) {
    std::map<std::string, std::uint64_t> stats;
    if (store.catalog().find(dataset + ".trigstats")) {
        stats = trigger::load_statistics(store, dataset);
    } else {
        stats = trigger::trigger_statistics(store, dataset);
    }
    return {{"dataset", dataset}, {"chains", stats}};
}

json ti_overlaps(mapstore::Store& store, const std::string& dataset) {
    if (store.catalog().find(dataset + ".trigoverlap"))
        return overlap_table_json(trigger::load_overlaps(store, dataset));
    return overlap_table_json(trigger::trigger_overlaps(store, dataset));
}

json ti_decode(mapstore::Store& store, const std::string& dataset, const std::filesystem::path& menus) {
    auto set = trigger::MenuSet::load(menus);
    auto r = trigger::decode_dataset(store, dataset, set);
    json smk = json::object();
    for (auto [k, v] : r.rows_per_smk) smk[std::to_string(k)] = v;
    return {{"dataset", r.dataset},
            {"rows", r.rows},
            {"rows_with_trigger", r.rows_with_trigger},
            {"unknown_bits", r.unknown_bits},
            {"rows_per_smk", smk}};
}

// ---- inspect ----

json inspect(const mapstore::Store& store, const std::string& table, std::size_t head) {
    auto e = store.catalog().find(table);
    if (!e) fail(ErrorCode::UnknownEntry, "no catalog entry " + table);
    auto reader = store.open_entry(*e);
    json rows = json::array();
    if (head > 0)
        reader->scan([&](std::string_view k, std::string_view v) {
            json key;
            if (e->kind == mapstore::EntryKind::Events && k.size() == 12) {
                auto ek = decode_event_key(k);
                key = std::to_string(ek.run) + ":" + std::to_string(ek.event);
            } else {
                key = printable(k) ? std::string(k) : "0x" + hex(k);
            }
            rows.push_back({{"key", key}, {"value", printable(v) ? std::string(v) : "0x" + hex(v)}});
            return rows.size() < head;
        });
    const auto& m = reader->meta();
    return {{"table", table},
            {"kind", mapstore::to_string(e->kind)},
            {"status", mapstore::to_string(e->status)},
            {"mode", mapfile::to_string(m.mode)},
            {"codec", mapfile::to_string(m.codec)},
            {"n_rows", m.n_rows},
            {"data_bytes", m.data_bytes},
            {"index_bytes", m.index_bytes},
            {"rows", rows}};
}

// ---- relational mirror ----

json datasets_json(const eio::Eio& eio, const eio::ReportFilters& filters) {
    json out = json::array();
    for (const auto& r : eio.dataset_report(filters)) out.push_back(eio::to_json(r));
    return {{"datasets", out}, {"count", out.size()}};
}

json dataset_report_json(const eio::Eio& eio, const std::string& dataset) {
    auto row = eio.dataset(dataset);
    if (!row) fail(ErrorCode::UnknownEntry, "dataset not imported: " + dataset);
    json dups = json::array();
    for (const auto& g : eio.duplicate_report(dataset)) {
        json keys = json::array();
        for (const auto& copies : g.keys) {
            json cs = json::array();
            for (const auto& c : copies) cs.push_back(duplicate_row_json(c));
            keys.push_back(std::move(cs));
        }
        dups.push_back({{"lbn", g.lbn}, {"keys", std::move(keys)}});
    }
    json lbns = json::array();
    for (const auto& l : eio.count_by_lbn(dataset)) lbns.push_back(lbn_row_json(l));
    json bcid = json::object();
    for (auto [b, n] : eio.count_by_bcid(dataset)) bcid[std::to_string(b)] = n;
    json missing = nullptr;
    try {
        missing = eio.missing_event_report(dataset).to_json();
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NoReference) throw;
    }
    return {{"dataset", eio::to_json(*row)},
            {"duplicates", std::move(dups)},
            {"lbn_counts", std::move(lbns)},
            {"bcid_counts", std::move(bcid)},
            {"missing", std::move(missing)}};
}

json overlaps_json(const eio::Eio& eio, std::uint32_t run, eio::OverlapAlgorithm alg, double threshold) {
    return eio.dataset_overlaps(run, alg, threshold).to_json();
}

// ---- supervisor ----

namespace {
std::unique_ptr<supervisor::Supervisor> supervisor_view(const Layout& layout) {
    Registry reg;
    if (std::filesystem::exists(layout.registry())) reg = Registry::load(layout.registry());
    return supervisor::Supervisor::from_journal(std::move(reg), layout.supervisor_journal());
}
}  // namespace

json supervisor_datasets(const Layout& layout) { return {{"datasets", supervisor_view(layout)->status_json()}}; }

json supervisor_dataset(const Layout& layout, const std::string& dataset) {
    return supervisor_view(layout)->status_json(DatasetName::parse(dataset));
}

// ---- picking ----

PickRequest PickRequest::from_json(const json& j) {
    if (!j.is_object() || !j.contains("events") || !j["events"].is_array())
        fail(ErrorCode::InvalidArgument, "pick request needs an 'events' array");
    PickRequest r;
    try {
        for (const auto& e : j["events"]) {
            if (e.is_array() && e.size() == 2) {
                r.events.push_back({e[0].get<std::uint32_t>(), e[1].get<std::uint64_t>()});
            } else if (e.is_object()) {
                r.events.push_back({e.at("run").get<std::uint32_t>(), e.at("event").get<std::uint64_t>()});
            } else if (e.is_string()) {
                r.events.push_back(parse_event_key(e.get<std::string>()));
            } else {
                fail(ErrorCode::InvalidArgument, "bad event entry " + e.dump());
            }
        }
        if (j.contains("stream")) r.filters.stream = j["stream"].get<std::string>();
        if (j.contains("data_format")) r.filters.data_format = j["data_format"].get<std::string>();
        if (j.contains("ami_tag")) r.filters.ami_tag = j["ami_tag"].get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string("bad pick request: ") + e.what());
    }
    return r;
}

json PickRequest::to_json() const {
    json ev = json::array();
    for (const auto& k : events) ev.push_back({k.run, k.event});
    json j = {{"events", ev}};
    if (filters.stream) j["stream"] = *filters.stream;
    if (filters.data_format) j["data_format"] = *filters.data_format;
    if (filters.ami_tag) j["ami_tag"] = *filters.ami_tag;
    return j;
}

std::string_view to_string(PickStatus s) {
    switch (s) {
        case PickStatus::Queued: return "QUEUED";
        case PickStatus::Running: return "RUNNING";
        case PickStatus::Done: return "DONE";
        case PickStatus::Partial: return "PARTIAL";
        case PickStatus::Failed: return "FAILED";
    }
    return "?";
}

namespace {
PickStatus pick_status_from_string(std::string_view s) {
    for (auto st : {PickStatus::Queued, PickStatus::Running, PickStatus::Done, PickStatus::Partial, PickStatus::Failed})
        if (to_string(st) == s) return st;
    fail(ErrorCode::CorruptData, "unknown pick status " + std::string(s));
}
}  // namespace

json PickManifest::to_json() const {
    json gs = json::array();
    std::size_t found = 0;
    for (const auto& g : groups) {
        json ev = json::array();
        for (const auto& e : g.events) ev.push_back({{"run", e.run}, {"event", e.event}, {"pointer", e.pointer}});
        found += g.events.size();
        gs.push_back({{"guid", g.guid.to_text()}, {"dataset", g.dataset}, {"events", std::move(ev)}});
    }
    json nf = json::array();
    for (const auto& k : not_found) nf.push_back(key_json(k));
    json j = {{"id", id},
              {"status", to_string(status)},
              {"submitted_ms", submitted_ms},
              {"finished_ms", finished_ms},
              {"n_found", found},
              {"n_files", groups.size()},
              {"groups", std::move(gs)},
              {"not_found", std::move(nf)}};
    if (error) j["error"] = *error;
    return j;
}

PickManifest PickManifest::from_json(const json& j) {
    PickManifest m;
    m.id = j.at("id").get<std::string>();
    m.status = pick_status_from_string(j.at("status").get<std::string>());
    m.submitted_ms = j.at("submitted_ms").get<std::uint64_t>();
    m.finished_ms = j.at("finished_ms").get<std::uint64_t>();
    for (const auto& g : j.at("groups")) {
        PickGroup pg;
        pg.guid = Guid::from_text(g.at("guid").get<std::string>());
        pg.dataset = g.at("dataset").get<std::string>();
        for (const auto& e : g.at("events"))
            pg.events.push_back({e.at("run").get<std::uint32_t>(), e.at("event").get<std::uint64_t>(),
                                 e.at("pointer").get<std::uint64_t>()});
        m.groups.push_back(std::move(pg));
    }
    for (const auto& k : j.at("not_found")) m.not_found.push_back({k.at("run").get<std::uint32_t>(), k.at("event").get<std::uint64_t>()});
    if (j.contains("error")) m.error = j["error"].get<std::string>();
    return m;
}

PickManifest build_manifest(mapstore::Store& store, const PickRequest& request) {
    std::vector<EventKey> keys;
    std::set<EventKey> seen;
    for (const auto& k : request.events)
        if (seen.insert(k).second) keys.push_back(k);

    struct Candidate {
        Guid guid;
        std::uint64_t pointer;
        const std::string* dataset;
    };
    std::map<EventKey, std::vector<Candidate>> candidates;
    auto results = store.event_lookup(keys, request.filters);
    std::map<Guid, std::uint64_t> popularity;
    for (const auto& r : results) {
        auto& cs = candidates[r.key];
        std::set<Guid> guids;
        for (const auto& m : r.matches) {
            if (m.guid_refs.empty()) continue;
            auto [guid, ptr] = rows::parse_guid_ref(m.guid_refs[0]);
            cs.push_back({guid, ptr, &m.dataset});
            guids.insert(guid);
        }
        for (const auto& g : guids) ++popularity[g];
    }

    PickManifest m;
    std::map<Guid, PickGroup> groups;
    for (const auto& k : keys) {
        auto it = candidates.find(k);
        if (it == candidates.end() || it->second.empty()) {
            m.not_found.push_back(k);
            continue;
        }
        const Candidate* best = nullptr;
        for (const auto& c : it->second)
            if (!best || popularity[c.guid] > popularity[best->guid] ||
                (popularity[c.guid] == popularity[best->guid] && *c.dataset < *best->dataset))
                best = &c;
        auto& g = groups[best->guid];
        g.guid = best->guid;
        g.dataset = *best->dataset;
        g.events.push_back({k.run, k.event, best->pointer});
    }
    for (auto& [_, g] : groups) m.groups.push_back(std::move(g));
    m.status = m.not_found.empty() ? PickStatus::Done : PickStatus::Partial;
    return m;
}

PickService::PickService(mapstore::Store& store, std::filesystem::path dir, std::size_t max_events, std::size_t workers,
                         ClockFn clock)
    : store_(store), dir_(std::move(dir)), max_events_(max_events), clock_(std::move(clock)) {
    std::filesystem::create_directories(dir_);
    for (std::size_t i = 0; i < std::max<std::size_t>(workers, 1); ++i) workers_.emplace_back([this] { work(); });
}

PickService::~PickService() {
    {
        std::lock_guard lk(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
}

std::string PickService::submit(PickRequest request) {
    if (request.events.size() > max_events_)
        fail(ErrorCode::TooManyEvents, std::to_string(request.events.size()) + " events requested, limit " +
                                           std::to_string(max_events_));
    static std::atomic<std::uint64_t> counter{0};
    std::random_device rd;
    char buf[32];
    std::snprintf(buf, sizeof buf, "pk%08x%06llx", rd(), static_cast<unsigned long long>(++counter & 0xFFFFFF));
    PickManifest m;
    m.id = buf;
    m.submitted_ms = clock_();
    persist(m);
    {
        std::lock_guard lk(mu_);
        jobs_[m.id] = m;
        queue_.emplace_back(m.id, std::move(request));
    }
    cv_.notify_all();
    return m.id;
}

std::optional<PickManifest> PickService::get(const std::string& id) const {
    {
        std::lock_guard lk(mu_);
        if (auto it = jobs_.find(id); it != jobs_.end()) return it->second;
    }
    if (id.find_first_of("/\\.") != std::string::npos) return std::nullopt;
    auto file = dir_ / (id + ".json");
    std::ifstream in(file);
    if (!in) return std::nullopt;
    try {
        return PickManifest::from_json(json::parse(in));
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::optional<PickManifest> PickService::wait(const std::string& id, std::chrono::milliseconds timeout) const {
    std::unique_lock lk(mu_);
    cv_.wait_for(lk, timeout, [&] {
        auto it = jobs_.find(id);
        return it == jobs_.end() || (it->second.status != PickStatus::Queued && it->second.status != PickStatus::Running);
    });
    lk.unlock();
    return get(id);
}

void PickService::persist(const PickManifest& m) const {
    auto file = dir_ / (m.id + ".json");
    auto tmp = file;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << m.to_json().dump();
    }
    std::filesystem::rename(tmp, file);
}

void PickService::work() {
    for (;;) {
        std::pair<std::string, PickRequest> job;
        {
            std::unique_lock lk(mu_);
            cv_.wait(lk, [&] { return stopping_ || !queue_.empty(); });
            if (queue_.empty()) return;
            job = std::move(queue_.front());
            queue_.pop_front();
            jobs_[job.first].status = PickStatus::Running;
        }
        cv_.notify_all();
        PickManifest result;
        try {
            result = build_manifest(store_, job.second);
        } catch (const std::exception& e) {
            result.status = PickStatus::Failed;
            result.error = e.what();
        }
        {
            std::lock_guard lk(mu_);
            auto& m = jobs_[job.first];
            result.id = m.id;
            result.submitted_ms = m.submitted_ms;
            result.finished_ms = clock_();
            m = result;
        }
        persist(result);
        cv_.notify_all();
    }
}

// ---- monitoring ----

std::string_view to_string(ModuleState s) {
    switch (s) {
        case ModuleState::Available: return "AVAILABLE";
        case ModuleState::Degraded: return "DEGRADED";
        case ModuleState::Unavailable: return "UNAVAILABLE";
        case ModuleState::NA: return "NA";
    }
    return "?";
}

json to_json(const MetricRecord& r) {
    return {{"module", r.module}, {"ts_ms", r.ts_ms}, {"kind", r.kind}, {"custom", r.custom}};
}

MetricRecord metric_from_json(const json& j) {
    MetricRecord r;
    r.module = j.at("module").get<std::string>();
    r.ts_ms = j.at("ts_ms").get<std::uint64_t>();
    r.kind = j.at("kind").get<std::string>();
    if (j.contains("custom")) r.custom = j["custom"];
    return r;
}

void append_metric(const std::filesystem::path& file, const MetricRecord& r) {
    std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::app);
    out << to_json(r).dump() << '\n';
}

std::vector<MetricRecord> read_metrics(const std::filesystem::path& file) {
    std::vector<MetricRecord> out;
    std::ifstream in(file);
    std::string line;
    while (std::getline(in, line)) {
        try {
            out.push_back(metric_from_json(json::parse(line)));
        } catch (const std::exception&) {
        }
    }
    return out;
}

std::vector<ModuleStatus> compute_status(const std::vector<MetricRecord>& window, std::uint64_t now,
                                         const StatusConfig& config) {
    const auto T = config.period_ms;
    std::vector<std::string> modules = config.modules;
    for (const auto& r : window)
        if (std::find(modules.begin(), modules.end(), r.module) == modules.end()) modules.push_back(r.module);

    std::vector<ModuleStatus> out;
    for (const auto& name : modules) {
        ModuleStatus s;
        s.module = name;
        bool any = false;
        std::optional<std::uint64_t> last_beat;
        std::uint64_t latest = 0;
        for (const auto& r : window) {
            if (r.module != name) continue;
            any = true;
            if (r.ts_ms >= latest) {
                latest = r.ts_ms;
                s.custom = r.custom;
            }
            bool recent = r.ts_ms <= now && now - r.ts_ms <= T;
            if (r.kind == "heartbeat") {
                if (!last_beat || r.ts_ms > *last_beat) last_beat = r.ts_ms;
            } else if (r.kind == "warning") {
                if (recent) ++s.warnings;
            } else if (r.kind == "critical" || r.kind == "error") {
                if (recent) ++s.criticals;
            }
        }
        if (!any) {
            s.state = ModuleState::NA;
        } else {
            if (last_beat) s.heartbeat_age_ms = now > *last_beat ? now - *last_beat : 0;
            if (s.criticals > 0 || !last_beat || *s.heartbeat_age_ms > 3 * T) {
                s.state = ModuleState::Unavailable;
            } else if (s.warnings > 0 || *s.heartbeat_age_ms > T) {
                s.state = ModuleState::Degraded;
            } else {
                s.state = ModuleState::Available;
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

json dashboard_record(const std::vector<ModuleStatus>& modules, std::uint64_t now) {
    auto rank = [](ModuleState s) {
        switch (s) {
            case ModuleState::Available: return 1;
            case ModuleState::Degraded: return 2;
            case ModuleState::Unavailable: return 3;
            default: return 0;
        }
    };
    ModuleState overall = ModuleState::NA;
    json ms = json::array();
    for (const auto& m : modules) {
        if (rank(m.state) > rank(overall)) overall = m.state;
        json j = {{"module", m.module},
                  {"status", to_string(m.state)},
                  {"warnings", m.warnings},
                  {"criticals", m.criticals},
                  {"custom", m.custom}};
        j["heartbeat_age_ms"] = m.heartbeat_age_ms ? json(*m.heartbeat_age_ms) : json(nullptr);
        ms.push_back(std::move(j));
    }
    return {{"producer_module", "ei-status"},
            {"timestamp", now},
            {"status", to_string(overall)},
            {"custom", {{"modules", std::move(ms)}}}};
}

std::optional<MetricRecord> pick_probe(mapstore::Store& store, std::uint64_t now) {
    auto valid = store.catalog().with_status(mapstore::EntryStatus::Valid, mapstore::EntryKind::Events);
    if (valid.empty()) return std::nullopt;
    MetricRecord r;
    r.module = "pick";
    r.ts_ms = now;
    try {
        std::vector<EventKey> keys;
        store.open_entry(valid.front())->scan([&](std::string_view k, std::string_view) {
            keys.push_back(decode_event_key(k));
            return keys.size() < 3;
        });
        PickRequest req;
        req.events = keys;
        auto m = build_manifest(store, req);
        r.kind = m.not_found.empty() ? "heartbeat" : "critical";
        r.custom = {{"probe_dataset", valid.front().name}, {"requested", keys.size()}, {"not_found", m.not_found.size()}};
    } catch (const std::exception& e) {
        r.kind = "critical";
        r.custom = {{"error", e.what()}};
    }
    return r;
}

std::vector<ImportedDataset> import_pending(const Layout& layout, mapstore::Store& store, eio::Eio& eio) {
    std::vector<ImportedDataset> done;
    auto incoming = layout.root / "incoming";
    if (!std::filesystem::is_directory(incoming)) return done;
    std::optional<Registry> registry;
    if (std::filesystem::exists(layout.registry())) registry = Registry::load(layout.registry());
    std::vector<std::filesystem::path> containers;
    for (const auto& d : std::filesystem::directory_iterator(incoming))
        if (d.is_directory()) containers.push_back(d.path());
    std::sort(containers.begin(), containers.end());
    for (const auto& dir : containers) {
        for (const auto& seq : consumer::read_completion_list(dir / "_validated.txt")) {
            auto name = seq.stem().string();
            auto entry = store.catalog().find(name);
            if (entry && entry->status == mapstore::EntryStatus::Valid) continue;
            auto rep = store.import_dataset(seq);
            eio::ImportOptions opts;
            if (registry)
                if (const auto* r = registry->find(DatasetName::parse(name))) opts.expected_upstream = r->expected_total();
            auto sum = eio.import_dataset(store, name, opts);
            done.push_back({name, rep.n_rows, rep.n_duplicates, sum.status});
        }
    }
    return done;
}

json status_document(const Layout& layout, mapstore::Store& store, const eio::Eio& eio, const StatusConfig& config,
                     std::uint64_t now, std::vector<MetricRecord> extra) {
    auto window = read_metrics(layout.metrics());
    for (auto& r : extra) window.push_back(std::move(r));
    try {
        auto valid = store.catalog().with_status(mapstore::EntryStatus::Valid, mapstore::EntryKind::Events);
        window.push_back({"mapstore", now, "heartbeat",
                          {{"valid_datasets", valid.size()}, {"lookup_rows", store.lookup_table().rows()}}});
        if (auto probe = pick_probe(store, now)) window.push_back(*probe);
    } catch (const std::exception& e) {
        window.push_back({"mapstore", now, "critical", {{"error", e.what()}}});
    }
    try {
        window.push_back({"eio", now, "heartbeat", {{"datasets", eio.datasets().size()}}});
    } catch (const std::exception& e) {
        window.push_back({"eio", now, "critical", {{"error", e.what()}}});
    }
    return dashboard_record(compute_status(window, now, config), now);
}

}  // namespace ei::gateway

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

#include "ei/analytics.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "ei/bytes.hpp"
#include "ei/compress.hpp"
#include "ei/consumer.hpp"
#include "ei/error.hpp"
#include "ei/rows.hpp"

namespace ei::eio {

using nlohmann::json;

namespace {

constexpr char kPartMagic[4] = {'E', 'I', 'O', 'P'};
constexpr std::uint16_t kPartVersion = 1;

void write_atomic(const std::filesystem::path& file, const std::string& bytes) {
    std::filesystem::create_directories(file.parent_path());
    auto tmp = file;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) fail(ErrorCode::Io, "cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, file);
}

std::string read_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) fail(ErrorCode::NotFound, "cannot open " + file.string());
    return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const std::filesystem::path& file, json fallback) {
    if (!std::filesystem::exists(file)) return fallback;
    try {
        return json::parse(read_file(file));
    } catch (const json::exception& e) {
        fail(ErrorCode::CorruptData, file.string() + ": " + e.what());
    }
}

void put_varint(std::string& out, std::uint64_t v) {
    while (v >= 0x80) {
        out.push_back(static_cast<char>((v & 0x7F) | 0x80));
        v >>= 7;
    }
    out.push_back(static_cast<char>(v));
}

std::uint64_t get_varint(ByteReader& r) {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
        auto b = r.u8();
        v |= std::uint64_t(b & 0x7F) << shift;
        if (!(b & 0x80)) return v;
    }
    fail(ErrorCode::CorruptData, "varint too long");
}

std::uint64_t zigzag(std::int64_t v) { return (static_cast<std::uint64_t>(v) << 1) ^ static_cast<std::uint64_t>(v >> 63); }
std::int64_t unzigzag(std::uint64_t v) { return static_cast<std::int64_t>(v >> 1) ^ -static_cast<std::int64_t>(v & 1); }

std::vector<std::string> guid_texts(const EventRow& e) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < 3; ++i)
        if (e.ref_flags & (1u << i)) out.push_back(e.guids[i].to_text());
    return out;
}

std::uint64_t common_count(const std::vector<EventRow>& a, const std::vector<EventRow>& b) {
    std::uint64_t n = 0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        auto ka = std::pair(a[i].run, a[i].event), kb = std::pair(b[j].run, b[j].event);
        if (ka < kb) {
            ++i;
        } else if (kb < ka) {
            ++j;
        } else {
            ++n;
            ++i;
            ++j;
        }
    }
    return n;
}

json overlap_row_json(const OverlapRow& o) { return {{"run", o.run}, {"a", o.a}, {"b", o.b}, {"common", o.common}}; }

}  // namespace

// ---- rows ----

json to_json(const DatasetRow& r) {
    return {{"dataset_id", r.dataset_id},
            {"name", r.name.str()},
            {"project", r.name.project},
            {"run", r.name.run_id},
            {"stream", r.name.stream},
            {"prod_step", r.name.prod_step},
            {"data_format", r.name.data_format},
            {"ami_tag", r.name.ami_tag},
            {"guid_types", r.guid_types},
            {"valid", r.valid},
            {"has_duplicates", r.has_duplicates},
            {"created_ms", r.created_ms},
            {"imported_ms", r.imported_ms},
            {"stored_events", r.stored_events},
            {"expected_upstream", r.expected_upstream},
            {"mapstore_rows", r.mapstore_rows},
            {"unique_guids", r.unique_guids},
            {"total_duplicates", r.total_duplicates},
            {"unique_duplicates", r.unique_duplicates},
            {"rank", r.rank}};
}

DatasetRow dataset_row_from_json(const json& j) {
    DatasetRow r;
    r.dataset_id = j.at("dataset_id").get<std::uint32_t>();
    r.name = DatasetName::parse(j.at("name").get<std::string>());
    r.guid_types = j.at("guid_types").get<std::vector<std::string>>();
    r.valid = j.at("valid").get<bool>();
    r.has_duplicates = j.at("has_duplicates").get<bool>();
    r.created_ms = j.at("created_ms").get<std::uint64_t>();
    r.imported_ms = j.at("imported_ms").get<std::uint64_t>();
    r.stored_events = j.at("stored_events").get<std::uint64_t>();
    r.expected_upstream = j.at("expected_upstream").get<std::uint64_t>();
    r.mapstore_rows = j.at("mapstore_rows").get<std::uint64_t>();
    r.unique_guids = j.at("unique_guids").get<std::uint64_t>();
    r.total_duplicates = j.at("total_duplicates").get<std::uint64_t>();
    r.unique_duplicates = j.at("unique_duplicates").get<std::uint64_t>();
    r.rank = j.at("rank").get<std::uint32_t>();
    return r;
}

std::string encode_partition(std::uint32_t dataset_id, const std::vector<EventRow>& rows) {
    const auto n = rows.size();
    std::string raw;
    raw.reserve(n * 60);
    ByteWriter w(raw);
    for (const auto& e : rows) w.u32le(e.run);
    std::uint64_t prev = 0;
    for (const auto& e : rows) {
        put_varint(raw, zigzag(static_cast<std::int64_t>(e.event - prev)));
        prev = e.event;
    }
    for (const auto& e : rows) w.u32le(e.lbn);
    for (const auto& e : rows) w.u16le(e.bcid);
    for (const auto& e : rows) w.u8(e.ref_flags);
    for (std::size_t g = 0; g < 3; ++g)
        for (const auto& e : rows) w.raw(e.guids[g].raw());

    auto packed = deflate_bytes(raw, 9);
    std::string out(kPartMagic, 4);
    ByteWriter h(out);
    h.u16le(kPartVersion);
    h.u32le(dataset_id);
    h.u64le(n);
    h.u32le(static_cast<std::uint32_t>(raw.size()));
    h.u32le(crc32(raw));
    h.raw(packed);
    return out;
}

std::vector<EventRow> decode_partition(std::string_view bytes, std::uint32_t* dataset_id) {
    if (bytes.size() < 26 || bytes.substr(0, 4) != std::string_view(kPartMagic, 4))
        fail(ErrorCode::CorruptData, "not an Events partition");
    ByteReader h(bytes.substr(4));
    if (h.u16le() != kPartVersion) fail(ErrorCode::CorruptData, "unsupported partition version");
    auto id = h.u32le();
    auto n = h.u64le();
    auto raw_len = h.u32le();
    auto crc = h.u32le();
    auto payload = bytes.substr(26);
    if (raw_len > payload.size() * 1032 + 64 || n * 60 > raw_len)
        fail(ErrorCode::CorruptData, "partition header sizes are inconsistent");
    std::string raw;
    try {
        raw = inflate_bytes(payload, raw_len);
    } catch (const Error& e) {
        fail(ErrorCode::CorruptData, std::string("partition payload: ") + e.what());
    }
    if (raw.size() != raw_len || crc32(raw) != crc) fail(ErrorCode::ChecksumMismatch, "partition checksum mismatch");
    if (dataset_id) *dataset_id = id;
    ByteReader r(raw);
    std::vector<EventRow> rows(n);
    for (auto& e : rows) e.run = r.u32le();
    std::uint64_t prev = 0;
    for (auto& e : rows) prev = e.event = prev + static_cast<std::uint64_t>(unzigzag(get_varint(r)));
    for (auto& e : rows) e.lbn = r.u32le();
    for (auto& e : rows) e.bcid = r.u16le();
    for (auto& e : rows) e.ref_flags = r.u8();
    for (std::size_t g = 0; g < 3; ++g)
        for (auto& e : rows) e.guids[g] = Guid::from_raw(r.raw(16));
    if (!r.done()) fail(ErrorCode::CorruptData, "trailing partition bytes");
    return rows;
}

std::vector<std::string> guid_types_for(const std::string& f) {
    if (f.rfind("DAOD", 0) == 0) return {f, "AOD", "RAW"};
    if (f == "AOD") return {"AOD", "RAW"};
    return {f};
}

std::set<std::uint32_t> EioConfig::load_allowlist(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::NotFound, "cannot open run allowlist " + path.string());
    std::set<std::uint32_t> runs;
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ss(line);
        std::uint32_t run;
        while (ss >> run) runs.insert(run);
    }
    return runs;
}

std::string_view to_string(OverlapAlgorithm a) { return a == OverlapAlgorithm::AOverLeft ? "A_OVER_LEFT" : "A_OVER_MIN"; }

OverlapAlgorithm overlap_algorithm_from_string(std::string_view s) {
    if (s == "A_OVER_LEFT") return OverlapAlgorithm::AOverLeft;
    if (s == "A_OVER_MIN") return OverlapAlgorithm::AOverMin;
    fail(ErrorCode::InvalidArgument, "unknown overlap algorithm " + std::string(s));
}

const OverlapCell* OverlapReport::cell(std::uint32_t a, std::uint32_t b) const {
    for (const auto& c : cells)
        if (c.a == a && c.b == b) return &c;
    return nullptr;
}

json OverlapReport::to_json() const {
    json ds = json::array();
    for (const auto& d : datasets) ds.push_back({{"dataset_id", d.dataset_id}, {"name", d.name.str()}, {"events", d.stored_events}});
    json cs = json::array();
    for (const auto& c : cells)
        cs.push_back({{"a", c.a}, {"b", c.b}, {"common", c.common}, {"percent", c.percent}, {"above", c.above}});
    return {{"run", run}, {"algorithm", to_string(algorithm)}, {"threshold", threshold}, {"datasets", ds}, {"cells", cs}};
}

std::string OverlapReport::to_csv() const {
    std::map<std::uint32_t, std::string> names;
    for (const auto& d : datasets) names[d.dataset_id] = d.name.str();
    std::ostringstream out;
    out << "dataset_a,dataset_b,common,percent,above\n";
    for (const auto& c : cells) {
        char pct[32];
        std::snprintf(pct, sizeof pct, "%.1f", c.percent);
        out << names[c.a] << ',' << names[c.b] << ',' << c.common << ',' << pct << ',' << (c.above ? 1 : 0) << '\n';
    }
    return out.str();
}

json MissingReport::to_json() const {
    json rs = json::array();
    for (const auto& r : ranges) rs.push_back({{"first", r.first}, {"last", r.last}, {"lbns", r.lbns}});
    json ss = json::array();
    for (const auto& s : stages) ss.push_back({{"stage", s.stage}, {"expected", s.expected}, {"actual", s.actual}});
    return {{"dataset", dataset}, {"reference", reference}, {"missing", missing}, {"ranges", rs}, {"stages", ss}};
}

bool ReportFilters::matches(const DatasetRow& r) const {
    if (project && r.name.project != *project) return false;
    if (run && r.name.run_id != *run) return false;
    if (stream_prefix && r.name.stream.rfind(*stream_prefix, 0) != 0) return false;
    if (data_format && r.name.data_format != *data_format) return false;
    if (name_prefix && r.name.str().rfind(*name_prefix, 0) != 0) return false;
    return true;
}

// ---- tables ----

Eio::Eio(std::filesystem::path root, EioConfig config) : root_(std::move(root)), config_(std::move(config)) {
    for (auto d : {"datasets", "events", "duplicates", "overlaps", "lbncounts", "staging"})
        std::filesystem::create_directories(root_ / d);
}

std::filesystem::path Eio::partition_path(std::uint32_t id) const {
    return root_ / "events" / (std::to_string(id) + ".part");
}

std::map<std::uint32_t, DatasetRow> Eio::load_datasets() const {
    std::map<std::uint32_t, DatasetRow> rows;
    for (const auto& j : read_json(root_ / "datasets" / "datasets.json", json::array())) {
        auto r = dataset_row_from_json(j);
        rows.emplace(r.dataset_id, std::move(r));
    }
    return rows;
}

void Eio::save_datasets(const std::map<std::uint32_t, DatasetRow>& rows) const {
    json arr = json::array();
    for (const auto& [_, r] : rows) arr.push_back(to_json(r));
    write_atomic(root_ / "datasets" / "datasets.json", arr.dump(1));
}

void Eio::rerank(std::map<std::uint32_t, DatasetRow>& rows) const {
    std::map<std::tuple<std::uint32_t, std::string, std::string>, std::vector<DatasetRow*>> groups;
    for (auto& [_, r] : rows) groups[{r.name.run_id, r.name.stream, r.name.data_format}].push_back(&r);
    for (auto& [_, g] : groups) {
        std::sort(g.begin(), g.end(), [](const DatasetRow* a, const DatasetRow* b) {
            if (a->created_ms != b->created_ms) return a->created_ms > b->created_ms;
            return a->dataset_id < b->dataset_id;
        });
        for (std::size_t i = 0; i < g.size(); ++i) g[i]->rank = static_cast<std::uint32_t>(i + 1);
    }
}

std::vector<DatasetRow> Eio::datasets() const {
    std::lock_guard lk(mu_);
    std::vector<DatasetRow> out;
    for (auto& [_, r] : load_datasets()) out.push_back(r);
    return out;
}

std::optional<DatasetRow> Eio::dataset(std::uint32_t id) const {
    std::lock_guard lk(mu_);
    auto rows = load_datasets();
    auto it = rows.find(id);
    if (it == rows.end()) return std::nullopt;
    return it->second;
}

std::optional<DatasetRow> Eio::dataset(const std::string& name) const {
    std::lock_guard lk(mu_);
    for (auto& [_, r] : load_datasets())
        if (r.name.str() == name) return r;
    return std::nullopt;
}

DatasetRow Eio::require(const std::string& name) const {
    auto r = dataset(name);
    if (!r) fail(ErrorCode::UnknownEntry, "dataset not imported: " + name);
    return *r;
}

std::vector<EventRow> Eio::events(std::uint32_t id) const {
    auto p = partition_path(id);
    if (!std::filesystem::exists(p)) fail(ErrorCode::UnknownPartition, "no Events partition " + std::to_string(id));
    return decode_partition(read_file(p));
}

std::vector<DuplicateRow> Eio::duplicates(std::uint32_t id) const {
    std::vector<DuplicateRow> out;
    for (const auto& j : read_json(root_ / "duplicates" / (std::to_string(id) + ".json"), json::array()))
        out.push_back({j.at("dataset_id").get<std::uint32_t>(), j.at("run").get<std::uint32_t>(),
                       j.at("event").get<std::uint64_t>(), j.at("occurrence").get<std::uint32_t>(),
                       j.at("lbn").get<std::uint32_t>(), j.at("guid_refs").get<std::vector<std::string>>()});
    return out;
}

std::vector<OverlapRow> Eio::overlaps(std::uint32_t run) const {
    std::vector<OverlapRow> out;
    for (const auto& j : read_json(root_ / "overlaps" / (std::to_string(run) + ".json"), json::array()))
        out.push_back({j.at("run").get<std::uint32_t>(), j.at("a").get<std::uint32_t>(), j.at("b").get<std::uint32_t>(),
                       j.at("common").get<std::uint64_t>()});
    return out;
}

void Eio::write_overlaps(std::uint32_t run, const std::vector<OverlapRow>& rows) const {
    json arr = json::array();
    for (const auto& o : rows) arr.push_back(overlap_row_json(o));
    write_atomic(root_ / "overlaps" / (std::to_string(run) + ".json"), arr.dump());
}

std::vector<LbnCountRow> Eio::lbn_counts(std::uint32_t id) const {
    std::vector<LbnCountRow> out;
    for (const auto& j : read_json(root_ / "lbncounts" / (std::to_string(id) + ".json"), json::array()))
        out.push_back({j.at("dataset_id").get<std::uint32_t>(), j.at("lbn").get<std::uint32_t>(),
                       j.at("n_events").get<std::uint64_t>(), j.at("n_unique_guids").get<std::uint64_t>(),
                       j.at("min_event").get<std::uint64_t>(), j.at("max_event").get<std::uint64_t>(),
                       j.at("guids").get<std::map<std::string, std::uint64_t>>()});
    return out;
}

std::vector<LbnCountRow> Eio::lbn_counts_of(std::uint32_t id, const std::vector<EventRow>& events) {
    std::map<std::uint32_t, LbnCountRow> by;
    for (const auto& e : events) {
        auto [it, fresh] = by.try_emplace(e.lbn);
        auto& r = it->second;
        if (fresh) {
            r.dataset_id = id;
            r.lbn = e.lbn;
            r.min_event = r.max_event = e.event;
        }
        ++r.n_events;
        r.min_event = std::min(r.min_event, e.event);
        r.max_event = std::max(r.max_event, e.event);
        if (e.ref_flags & kRefPresent0) ++r.guids[e.guids[0].to_text()];
    }
    std::vector<LbnCountRow> out;
    for (auto& [_, r] : by) {
        r.n_unique_guids = r.guids.size();
        out.push_back(std::move(r));
    }
    return out;
}

// ---- import ----

ImportSummary Eio::import_dataset(const mapstore::Store& store, const std::string& dataset,
                                  const ImportOptions& options) {
    auto entry = store.catalog().find(dataset);
    if (!entry || entry->status != mapstore::EntryStatus::Valid || entry->kind != mapstore::EntryKind::Events)
        fail(ErrorCode::UnknownEntry, "no valid mapstore dataset " + dataset);
    auto name = DatasetName::parse(dataset);
    auto id = dataset_id_of(name);
    ImportSummary sum;
    sum.dataset_id = id;

    auto seq = consumer::output_path(store.root(), name);
    bool listed = false;
    for (const auto& p : consumer::read_completion_list(consumer::completion_list(store.root(), name)))
        if (p == seq) listed = true;
    if (!listed) fail(ErrorCode::InvalidArgument, dataset + " is not in the completion list");

    for (const auto& pat : config_.excluded_streams)
        if (::fnmatch(pat.c_str(), name.stream.c_str(), 0) == 0) {
            sum.status = ImportStatus::FilteredOut;
            sum.reason = "stream " + name.stream + " is excluded";
            return sum;
        }
    if (config_.run_allowlist && !config_.run_allowlist->count(name.run_id)) {
        sum.status = ImportStatus::FilteredOut;
        sum.reason = "run " + std::to_string(name.run_id) + " is not of physics interest";
        return sum;
    }

    // stage
    std::random_device rd;
    auto staging = root_ / "staging" / (std::to_string(id) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(staging);
    auto discard = [&](const std::string& why) {
        std::error_code ec;
        std::filesystem::remove_all(staging, ec);
        std::ofstream log(root_ / "import.log", std::ios::app);
        log << config_.clock() << '\t' << dataset << "\tdiscarded\t" << why << '\n';
        fail(ErrorCode::VerificationFailure, dataset + ": " + why);
    };

    std::vector<EventRow> source;
    std::vector<DuplicateRow> dups;
    std::string reason;
    try {
        store.open_entry(*entry)->scan([&](std::string_view k, std::string_view v) {
            auto row = rows::RowView::parse(k, v);
            EventRow e;
            e.run = row.key.run;
            e.event = row.key.event;
            e.lbn = static_cast<std::uint32_t>(std::stoul(std::string(row[rows::Lbn])));
            e.bcid = static_cast<std::uint16_t>(std::stoul(std::string(row[rows::Bcid])));
            for (std::size_t g = 0; g < 3; ++g) {
                auto f = row[static_cast<rows::Col>(rows::Guid0 + g)];
                if (f.empty()) continue;
                e.guids[g] = rows::parse_guid_ref(f).first;
                e.ref_flags |= static_cast<std::uint8_t>(1u << g);
            }
            source.push_back(e);
            return true;
        });
        std::map<std::pair<std::uint32_t, std::uint64_t>, std::uint32_t> seen;
        for (const auto& d : store.duplicates(dataset)) {
            auto row = rows::RowView::parse(d.key, d.value);
            DuplicateRow r;
            r.dataset_id = id;
            r.run = row.key.run;
            r.event = row.key.event;
            r.occurrence = ++seen[{r.run, r.event}];
            r.lbn = static_cast<std::uint32_t>(std::stoul(std::string(row[rows::Lbn])));
            for (auto c : {rows::Guid0, rows::Guid1, rows::Guid2})
                if (!row[c].empty()) r.guid_refs.push_back(rows::parse_guid_ref(row[c]).first.to_text());
            dups.push_back(std::move(r));
        }
    } catch (const std::exception& e) {
        discard(std::string("unreadable source rows: ") + e.what());
    }

    auto part = encode_partition(id, source);
    write_atomic(staging / "events.part", part);
    json djs = json::array();
    for (const auto& d : dups)
        djs.push_back({{"dataset_id", d.dataset_id},
                       {"run", d.run},
                       {"event", d.event},
                       {"occurrence", d.occurrence},
                       {"lbn", d.lbn},
                       {"guid_refs", d.guid_refs}});
    write_atomic(staging / "duplicates.json", djs.dump());
    auto lbns = lbn_counts_of(id, source);
    json ljs = json::array();
    for (const auto& l : lbns)
        ljs.push_back({{"dataset_id", l.dataset_id},
                       {"lbn", l.lbn},
                       {"n_events", l.n_events},
                       {"n_unique_guids", l.n_unique_guids},
                       {"min_event", l.min_event},
                       {"max_event", l.max_event},
                       {"guids", l.guids}});
    write_atomic(staging / "lbncounts.json", ljs.dump());

    // verify the staged copy
    std::vector<EventRow> staged;
    try {
        staged = decode_partition(read_file(staging / "events.part"));
    } catch (const Error& e) {
        discard(std::string("staged partition unreadable: ") + e.what());
    }
    if (staged != source) discard("staged partition differs from source");
    bool simulated = name.project.rfind("mc", 0) == 0;
    for (std::size_t i = 0; i < staged.size(); ++i) {
        const auto& e = staged[i];
        if (i > 0 && std::pair(staged[i - 1].run, staged[i - 1].event) >= std::pair(e.run, e.event))
            discard("event keys not strictly ascending at row " + std::to_string(i));
        if (!(e.ref_flags & kRefPresent0)) discard("event without an indexed GUID at row " + std::to_string(i));
        if (!simulated && e.run != name.run_id)
            discard("row " + std::to_string(i) + " belongs to run " + std::to_string(e.run));
        if (!simulated && e.lbn < 1) discard("row " + std::to_string(i) + " has LBN 0");
    }
    for (const auto& d : dups)
        if (!std::binary_search(staged.begin(), staged.end(), d, [](const auto& a, const auto& b) {
                return std::pair(a.run, a.event) < std::pair(b.run, b.event);
            }))
            discard("duplicate of an event missing from Events");
    if (entry->n_rows != staged.size()) discard("mapstore holds " + std::to_string(entry->n_rows) + " rows, staged " +
                                                std::to_string(staged.size()));

    std::lock_guard lk(mu_);
    // move into the destination partitions
    std::filesystem::rename(staging / "events.part", partition_path(id));
    std::filesystem::rename(staging / "duplicates.json", root_ / "duplicates" / (std::to_string(id) + ".json"));
    std::filesystem::rename(staging / "lbncounts.json", root_ / "lbncounts" / (std::to_string(id) + ".json"));
    std::filesystem::remove_all(staging);

    auto rows = load_datasets();
    std::vector<OverlapRow> ov;
    for (const auto& o : overlaps(name.run_id))
        if (o.a != id && o.b != id) ov.push_back(o);
    for (const auto& [other, r] : rows) {
        if (other == id || r.name.run_id != name.run_id) continue;
        auto c = common_count(staged, events(other));
        ov.push_back({name.run_id, std::min(id, other), std::max(id, other), c});
    }
    std::sort(ov.begin(), ov.end(), [](const OverlapRow& x, const OverlapRow& y) { return std::pair(x.a, x.b) < std::pair(y.a, y.b); });
    write_overlaps(name.run_id, ov);

    DatasetRow r;
    r.dataset_id = id;
    r.name = name;
    r.guid_types = guid_types_for(name.data_format);
    r.created_ms = options.created_ms.value_or(entry->created_ms);
    r.imported_ms = config_.clock();
    r.stored_events = staged.size();
    r.expected_upstream = options.expected_upstream;
    r.mapstore_rows = entry->n_rows;
    std::set<Guid> guids;
    for (const auto& e : staged) guids.insert(e.guids[0]);
    r.unique_guids = guids.size();
    r.total_duplicates = dups.size();
    std::set<std::pair<std::uint32_t, std::uint64_t>> dkeys;
    for (const auto& d : dups) dkeys.emplace(d.run, d.event);
    r.unique_duplicates = dkeys.size();
    r.has_duplicates = !dups.empty();
    rows[id] = r;
    rerank(rows);
    save_datasets(rows);

    sum.events = staged.size();
    sum.duplicates = dups.size();
    sum.partition_bytes = part.size();
    return sum;
}

void Eio::drop_partition(std::uint32_t id) {
    std::lock_guard lk(mu_);
    auto p = partition_path(id);
    if (!std::filesystem::exists(p)) fail(ErrorCode::UnknownPartition, "no Events partition " + std::to_string(id));
    std::filesystem::remove(p);
    std::error_code ec;
    std::filesystem::remove(root_ / "duplicates" / (std::to_string(id) + ".json"), ec);
    std::filesystem::remove(root_ / "lbncounts" / (std::to_string(id) + ".json"), ec);
    auto rows = load_datasets();
    auto it = rows.find(id);
    if (it != rows.end()) {
        auto run = it->second.name.run_id;
        std::vector<OverlapRow> ov;
        for (const auto& o : overlaps(run))
            if (o.a != id && o.b != id) ov.push_back(o);
        write_overlaps(run, ov);
        rows.erase(it);
        rerank(rows);
        save_datasets(rows);
    }
}

// ---- reports ----

std::vector<OverlapRow> Eio::recompute_overlaps(std::uint32_t run) const {
    std::vector<std::pair<std::uint32_t, std::vector<EventRow>>> sets;
    for (const auto& r : datasets())
        if (r.name.run_id == run) sets.emplace_back(r.dataset_id, events(r.dataset_id));
    std::vector<OverlapRow> out;
    for (std::size_t i = 0; i < sets.size(); ++i)
        for (std::size_t j = i + 1; j < sets.size(); ++j) {
            auto a = std::min(sets[i].first, sets[j].first), b = std::max(sets[i].first, sets[j].first);
            out.push_back({run, a, b, common_count(sets[i].second, sets[j].second)});
        }
    std::sort(out.begin(), out.end(), [](const OverlapRow& x, const OverlapRow& y) { return std::pair(x.a, x.b) < std::pair(y.a, y.b); });
    return out;
}

OverlapReport Eio::dataset_overlaps(std::uint32_t run, OverlapAlgorithm alg, double threshold_pct) const {
    OverlapReport rep;
    rep.run = run;
    rep.algorithm = alg;
    rep.threshold = threshold_pct;
    for (const auto& r : datasets())
        if (r.name.run_id == run) rep.datasets.push_back(r);
    std::sort(rep.datasets.begin(), rep.datasets.end(),
              [](const DatasetRow& a, const DatasetRow& b) { return a.name.str() < b.name.str(); });
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t> common;
    for (const auto& o : overlaps(run)) common[{o.a, o.b}] = o.common;
    for (const auto& a : rep.datasets)
        for (const auto& b : rep.datasets) {
            if (a.dataset_id == b.dataset_id) continue;
            OverlapCell c{a.dataset_id, b.dataset_id, 0, 0, false};
            auto it = common.find({std::min(c.a, c.b), std::max(c.a, c.b)});
            if (it != common.end()) c.common = it->second;
            double denom = alg == OverlapAlgorithm::AOverLeft ? double(a.stored_events)
                                                              : double(std::min(a.stored_events, b.stored_events));
            c.percent = denom > 0 ? 100.0 * double(c.common) / denom : 0.0;
            c.above = c.percent > threshold_pct;
            rep.cells.push_back(c);
        }
    return rep;
}

std::vector<DuplicateGroup> Eio::duplicate_report(const std::string& dataset) const {
    auto ds = require(dataset);
    auto extras = duplicates(ds.dataset_id);
    std::vector<DuplicateGroup> out;
    if (extras.empty()) return out;
    auto evs = events(ds.dataset_id);
    std::map<std::pair<std::uint32_t, std::uint64_t>, std::vector<DuplicateRow>> by_key;
    for (auto& d : extras) by_key[{d.run, d.event}].push_back(d);
    std::map<std::uint32_t, DuplicateGroup> groups;
    for (auto& [key, copies] : by_key) {
        auto it = std::lower_bound(evs.begin(), evs.end(), key,
                                   [](const EventRow& e, const auto& k) { return std::pair(e.run, e.event) < k; });
        if (it == evs.end() || std::pair(it->run, it->event) != key)
            fail(ErrorCode::CorruptData, "duplicate without its kept copy");
        DuplicateRow kept{ds.dataset_id, it->run, it->event, 0, it->lbn, guid_texts(*it)};
        std::sort(copies.begin(), copies.end(),
                  [](const DuplicateRow& a, const DuplicateRow& b) { return a.occurrence < b.occurrence; });
        copies.insert(copies.begin(), kept);
        auto& g = groups[kept.lbn];
        g.lbn = kept.lbn;
        g.keys.push_back(std::move(copies));
    }
    for (auto& [_, g] : groups) out.push_back(std::move(g));
    return out;
}

MissingReport Eio::missing_event_report(const std::string& dataset, const std::optional<std::string>& reference) const {
    auto ds = require(dataset);
    std::optional<DatasetRow> ref;
    if (reference) {
        ref = this->dataset(*reference);
        if (!ref || ref->dataset_id == ds.dataset_id || ref->name.run_id != ds.name.run_id ||
            ref->name.stream != ds.name.stream)
            fail(ErrorCode::NoReference, *reference + " is not a reference for " + dataset);
    } else {
        for (const auto& r : datasets())
            if (r.dataset_id != ds.dataset_id && r.name.run_id == ds.name.run_id && r.name.stream == ds.name.stream &&
                (!ref || r.stored_events > ref->stored_events))
                ref = r;
        if (!ref) fail(ErrorCode::NoReference, "no other dataset of run " + std::to_string(ds.name.run_id) + " stream " +
                                                   ds.name.stream);
    }
    MissingReport rep;
    rep.dataset = dataset;
    rep.reference = ref->name.str();
    auto have = events(ds.dataset_id);
    auto want = events(ref->dataset_id);
    std::size_t j = 0;
    for (const auto& e : want) {
        auto k = std::pair(e.run, e.event);
        while (j < have.size() && std::pair(have[j].run, have[j].event) < k) ++j;
        if (j < have.size() && std::pair(have[j].run, have[j].event) == k) continue;
        ++rep.missing;
        if (rep.ranges.empty() || rep.ranges.back().last + 1 != e.event) rep.ranges.push_back({e.event, e.event, {}});
        auto& r = rep.ranges.back();
        r.last = e.event;
        if (std::find(r.lbns.begin(), r.lbns.end(), e.lbn) == r.lbns.end()) r.lbns.push_back(e.lbn);
    }
    for (auto& r : rep.ranges) std::sort(r.lbns.begin(), r.lbns.end());
    rep.stages.push_back({"reference " + ref->name.prod_step + "." + ref->name.data_format, ref->stored_events,
                          ds.stored_events});
    rep.stages.push_back({"mapstore", ds.mapstore_rows, ds.stored_events});
    if (ds.expected_upstream > 0) rep.stages.push_back({"upstream files", ds.expected_upstream, ds.stored_events});
    return rep;
}

std::map<std::uint16_t, std::uint64_t> Eio::count_by_bcid(const std::string& dataset) const {
    std::map<std::uint16_t, std::uint64_t> h;
    for (const auto& e : events(require(dataset).dataset_id)) ++h[e.bcid];
    return h;
}

std::vector<LbnCountRow> Eio::count_by_lbn(const std::string& dataset) const {
    return lbn_counts(require(dataset).dataset_id);
}

std::vector<std::uint32_t> Eio::probable_lbns(const std::string& dataset, std::uint64_t event) const {
    std::vector<std::uint32_t> out;
    for (const auto& l : count_by_lbn(dataset))
        if (l.min_event <= event && event <= l.max_event) out.push_back(l.lbn);
    return out;
}

std::vector<DatasetRow> Eio::dataset_report(const ReportFilters& filters) const {
    std::vector<DatasetRow> out;
    for (const auto& r : datasets())
        if (filters.matches(r)) out.push_back(r);
    std::sort(out.begin(), out.end(), [](const DatasetRow& a, const DatasetRow& b) { return a.name.str() < b.name.str(); });
    return out;
}

}  // namespace ei::eio

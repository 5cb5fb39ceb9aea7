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

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ei/analytics.hpp"
#include "ei/clock.hpp"
#include "ei/mapstore.hpp"

namespace ei::gateway {

using nlohmann::json;

/// Where everything lives under one store root.
struct Layout {
    std::filesystem::path root;

    /// `explicit_root` when given, else $EI_STORE_ROOT. Raises StoreUnreachable when neither is set,
    /// or when `must_exist` and the directory is missing.
    static Layout resolve(const std::optional<std::filesystem::path>& explicit_root = {}, bool must_exist = false);

    std::filesystem::path eio() const { return root / "eio"; }
    std::filesystem::path objects() const { return root / "objects"; }
    std::filesystem::path fallback_objects() const { return root / "objects-fallback"; }
    std::filesystem::path broker() const { return root / "broker"; }
    std::filesystem::path registry() const { return root / "registry.tsv"; }
    std::filesystem::path task_status() const { return root / "tasks.tsv"; }
    std::filesystem::path menus() const { return root / "menus.tsv"; }
    std::filesystem::path supervisor_journal() const { return root / "_supervisor" / "journal.jsonl"; }
    std::filesystem::path supervisor_notifications() const { return root / "_supervisor" / "notifications.jsonl"; }
    std::filesystem::path metrics() const { return root / "_monitor" / "metrics.jsonl"; }
    std::filesystem::path picks() const { return root / "_pick"; }
    std::filesystem::path config() const { return root / "ei.conf"; }
};

/// `key = value` lines, '#' comments. Known keys: broker, http_host, http_port, max_pick_events,
/// status_period_s, run_allowlist.
struct Config {
    std::string broker = "127.0.0.1:61613";
    std::string http_host = "127.0.0.1";
    std::uint16_t http_port = 8080;
    std::size_t max_pick_events = 100000;
    std::uint64_t status_period_s = 120;
    std::optional<std::filesystem::path> run_allowlist;

    /// Missing file = defaults. Raises InvalidArgument on unknown keys or bad values.
    static Config load(const std::filesystem::path& path);
};

// ---- query core: CLI and REST both render these documents ----

/// "run:event" or "run event". Raises InvalidArgument.
EventKey parse_event_key(std::string_view text);
/// One key per line; blank lines and '#' comments skipped.
std::vector<EventKey> read_event_keys(std::istream& in);

json el_query(mapstore::Store& store, const std::vector<EventKey>& keys, const mapstore::LookupFilters& filters);

struct ScanQuery {
    std::string dataset;
    std::string where = "true";
    std::vector<std::string> select;  // empty = run, event, lbn, bcid, guid0
    bool count_only = false;
    std::optional<std::size_t> limit;
};
/// Raises PredicateError, UnknownEntry, InvalidArgument (unknown select column).
json ei_query(mapstore::Store& store, const ScanQuery& q);

json catalog_list(const mapstore::Store& store, const std::optional<std::string>& status = {},
                  const std::optional<std::string>& kind = {}, const std::optional<std::string>& prefix = {});
json catalog_show(const mapstore::Store& store, const std::string& name);
/// Changes an entry's status and journals it as a "catalog" operation.
json catalog_set_status(mapstore::Store& store, const std::string& name, const std::string& status);
json journal_tail(mapstore::Store& store, std::size_t n);

/// Persisted tables when present, otherwise computed (and persisted) from decoded rows.
json ti_stats(mapstore::Store& store, const std::string& dataset);
json ti_overlaps(mapstore::Store& store, const std::string& dataset);
json ti_decode(mapstore::Store& store, const std::string& dataset, const std::filesystem::path& menus);

/// First `head` rows of any catalogued MapFile, in key order.
json inspect(const mapstore::Store& store, const std::string& table, std::size_t head);

json datasets_json(const eio::Eio& eio, const eio::ReportFilters& filters);
json dataset_report_json(const eio::Eio& eio, const std::string& dataset);
json overlaps_json(const eio::Eio& eio, std::uint32_t run, eio::OverlapAlgorithm alg, double threshold);

/// Supervisor state as recorded in its journal, joined with the registry.
json supervisor_datasets(const Layout& layout);
json supervisor_dataset(const Layout& layout, const std::string& dataset);

// ---- event picking ----

struct PickRequest {
    std::vector<EventKey> events;
    mapstore::LookupFilters filters;

    /// {"events": [[run, event] | {"run":..,"event":..} | "run:event", ...], "stream"?, "data_format"?,
    /// "ami_tag"?}. Raises InvalidArgument.
    static PickRequest from_json(const json& j);
    json to_json() const;
};

enum class PickStatus { Queued, Running, Done, Partial, Failed };
std::string_view to_string(PickStatus s);

struct PickedEvent {
    std::uint32_t run = 0;
    std::uint64_t event = 0;
    std::uint64_t pointer = 0;
    bool operator==(const PickedEvent&) const = default;
};

struct PickGroup {
    Guid guid;
    std::string dataset;
    std::vector<PickedEvent> events;
    bool operator==(const PickGroup&) const = default;
};

struct PickManifest {
    std::string id;
    PickStatus status = PickStatus::Queued;
    std::vector<PickGroup> groups;  // ordered by GUID
    std::vector<EventKey> not_found;
    std::optional<std::string> error;
    std::uint64_t submitted_ms = 0, finished_ms = 0;

    json to_json() const;
    static PickManifest from_json(const json& j);
};

/// Resolves every requested event once. Among an event's matches the GUID shared with the most
/// other requested events wins, ties to the lowest dataset name, so few files need fetching.
PickManifest build_manifest(mapstore::Store& store, const PickRequest& request);

/// Asynchronous picking with a bounded worker pool; manifests persist as <dir>/<id>.json.
class PickService {
public:
    PickService(mapstore::Store& store, std::filesystem::path dir, std::size_t max_events = 100000,
                std::size_t workers = 2, ClockFn clock = system_clock_fn());
    ~PickService();
    PickService(const PickService&) = delete;
    PickService& operator=(const PickService&) = delete;

    /// Raises TooManyEvents.
    std::string submit(PickRequest request);
    /// Live jobs first, then persisted manifests.
    std::optional<PickManifest> get(const std::string& id) const;
    /// Blocks until the job leaves QUEUED/RUNNING or the timeout passes.
    std::optional<PickManifest> wait(const std::string& id, std::chrono::milliseconds timeout) const;

private:
    void work();
    void persist(const PickManifest& m) const;

    mapstore::Store& store_;
    std::filesystem::path dir_;
    std::size_t max_events_;
    ClockFn clock_;
    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::deque<std::pair<std::string, PickRequest>> queue_;
    std::map<std::string, PickManifest> jobs_;
    bool stopping_ = false;
    std::vector<std::thread> workers_;
};

// ---- monitoring ----

enum class ModuleState { Available, Degraded, Unavailable, NA };
std::string_view to_string(ModuleState s);

struct MetricRecord {
    std::string module;
    std::uint64_t ts_ms = 0;
    std::string kind;  // heartbeat | warning | critical
    json custom = json::object();
};
json to_json(const MetricRecord& r);
MetricRecord metric_from_json(const json& j);

void append_metric(const std::filesystem::path& file, const MetricRecord& r);
/// Torn or malformed lines are skipped.
std::vector<MetricRecord> read_metrics(const std::filesystem::path& file);

struct StatusConfig {
    std::uint64_t period_ms = 120'000;  // T
    std::vector<std::string> modules{"producer", "supervisor", "consumer", "mapstore", "eio", "gateway", "pick"};
};

struct ModuleStatus {
    std::string module;
    ModuleState state = ModuleState::NA;
    std::optional<std::uint64_t> heartbeat_age_ms;
    std::uint64_t warnings = 0;   // within the last T
    std::uint64_t criticals = 0;  // within the last T
    json custom = json::object();  // from the latest record
};

/// Per module: NA without records; UNAVAILABLE on a critical within T or heartbeat age > 3T
/// (or no heartbeat at all); DEGRADED on a warning within T or age in (T, 3T]; else AVAILABLE.
std::vector<ModuleStatus> compute_status(const std::vector<MetricRecord>& window, std::uint64_t now,
                                         const StatusConfig& config = {});
/// {"producer_module", "timestamp", "status", "custom": {"modules": [...]}}; the overall status is
/// the worst non-NA module state.
json dashboard_record(const std::vector<ModuleStatus>& modules, std::uint64_t now);

/// Takes the first three keys of a VALID events dataset and checks they resolve; nullopt when the
/// store holds no dataset to probe.
std::optional<MetricRecord> pick_probe(mapstore::Store& store, std::uint64_t now);

struct ImportedDataset {
    std::string dataset;
    std::uint64_t rows = 0;
    std::uint64_t duplicates = 0;
    eio::ImportStatus mirror = eio::ImportStatus::Imported;
};

/// Imports every listed sequential file under incoming/ whose dataset has no VALID entry yet,
/// first into the mapstore and then into the relational mirror (upstream counts from the registry).
std::vector<ImportedDataset> import_pending(const Layout& layout, mapstore::Store& store, eio::Eio& eio);

/// Dashboard record from the metrics file plus live checks of the mapstore, the relational
/// mirror and the pick probe.
json status_document(const Layout& layout, mapstore::Store& store, const eio::Eio& eio, const StatusConfig& config,
                     std::uint64_t now, std::vector<MetricRecord> extra = {});

}  // namespace ei::gateway

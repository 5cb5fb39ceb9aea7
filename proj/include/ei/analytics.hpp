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

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ei/core.hpp"
#include "ei/mapstore.hpp"

/// Compact relational mirror: per-table directories of DEFLATE-compressed row files, one
/// Events partition per dataset id.
namespace ei::eio {

struct DatasetRow {
    std::uint32_t dataset_id = 0;
    DatasetName name;
    std::vector<std::string> guid_types;  // one label per GUID reference column
    bool valid = true;
    bool has_duplicates = false;
    std::uint64_t created_ms = 0;
    std::uint64_t imported_ms = 0;
    std::uint64_t stored_events = 0;      // unique events in Events
    std::uint64_t expected_upstream = 0;  // 0 = unknown
    std::uint64_t mapstore_rows = 0;
    std::uint64_t unique_guids = 0;
    std::uint64_t total_duplicates = 0;   // extra copies
    std::uint64_t unique_duplicates = 0;  // distinct duplicated keys
    std::uint32_t rank = 0;               // 1 = newest within (run, stream, format)

    bool operator==(const DatasetRow&) const = default;
};

nlohmann::json to_json(const DatasetRow& r);
DatasetRow dataset_row_from_json(const nlohmann::json& j);

inline constexpr std::uint8_t kRefPresent0 = 1, kRefPresent1 = 2, kRefPresent2 = 4;

struct EventRow {
    std::uint32_t run = 0;
    std::uint64_t event = 0;
    std::uint32_t lbn = 0;
    std::uint16_t bcid = 0;
    std::uint8_t ref_flags = 0;  // bit i set when guid i is present; absent ones are zero-filled
    std::array<Guid, 3> guids{};

    bool operator==(const EventRow&) const = default;
};

struct DuplicateRow {
    std::uint32_t dataset_id = 0;
    std::uint32_t run = 0;
    std::uint64_t event = 0;
    std::uint32_t occurrence = 0;  // 0 is the copy kept in Events
    std::uint32_t lbn = 0;
    std::vector<std::string> guid_refs;

    bool operator==(const DuplicateRow&) const = default;
};

struct OverlapRow {
    std::uint32_t run = 0;
    std::uint32_t a = 0;
    std::uint32_t b = 0;  // a < b
    std::uint64_t common = 0;
    bool operator==(const OverlapRow&) const = default;
};

struct LbnCountRow {
    std::uint32_t dataset_id = 0;
    std::uint32_t lbn = 0;
    std::uint64_t n_events = 0;
    std::uint64_t n_unique_guids = 0;
    std::uint64_t min_event = 0;
    std::uint64_t max_event = 0;
    std::map<std::string, std::uint64_t> guids;  // GUID text -> events in this LBN
    bool operator==(const LbnCountRow&) const = default;
};

/// Serialized Events partition: columnar, event numbers delta-coded, DEFLATE, CRC-checked.
std::string encode_partition(std::uint32_t dataset_id, const std::vector<EventRow>& rows);
std::vector<EventRow> decode_partition(std::string_view bytes, std::uint32_t* dataset_id = nullptr);

/// Labels of the GUID reference columns for a data format, e.g. DAOD_X -> DAOD_X, AOD, RAW.
std::vector<std::string> guid_types_for(const std::string& data_format);

struct EioConfig {
    std::vector<std::string> excluded_streams{"calibration_*"};  // glob patterns
    std::optional<std::set<std::uint32_t>> run_allowlist;         // none = every run passes
    ClockFn clock = system_clock_fn();

    /// One run number per line ('#' comments allowed).
    static std::set<std::uint32_t> load_allowlist(const std::filesystem::path& path);
};

enum class ImportStatus { Imported, FilteredOut };

struct ImportOptions {
    std::optional<std::uint64_t> created_ms;  // defaults to the mapstore entry's creation time
    std::uint64_t expected_upstream = 0;
};

struct ImportSummary {
    ImportStatus status = ImportStatus::Imported;
    std::string reason;  // for FilteredOut
    std::uint32_t dataset_id = 0;
    std::uint64_t events = 0;
    std::uint64_t duplicates = 0;
    std::uint64_t partition_bytes = 0;
};

enum class OverlapAlgorithm { AOverLeft, AOverMin };
std::string_view to_string(OverlapAlgorithm a);
OverlapAlgorithm overlap_algorithm_from_string(std::string_view s);

struct OverlapCell {
    std::uint32_t a = 0, b = 0;
    std::uint64_t common = 0;
    double percent = 0;
    bool above = false;
};

struct OverlapReport {
    std::uint32_t run = 0;
    OverlapAlgorithm algorithm = OverlapAlgorithm::AOverMin;
    double threshold = 70;
    std::vector<DatasetRow> datasets;  // matrix order
    std::vector<OverlapCell> cells;    // every ordered pair a != b

    const OverlapCell* cell(std::uint32_t a, std::uint32_t b) const;
    nlohmann::json to_json() const;
    std::string to_csv() const;
};

struct DuplicateGroup {
    std::uint32_t lbn = 0;
    std::vector<std::vector<DuplicateRow>> keys;  // per duplicated key: every copy, occurrence order
};

struct MissingRange {
    std::uint64_t first = 0, last = 0;
    std::vector<std::uint32_t> lbns;
    bool operator==(const MissingRange&) const = default;
};

struct StageCount {
    std::string stage;
    std::uint64_t expected = 0, actual = 0;
};

struct MissingReport {
    std::string dataset;
    std::string reference;
    std::uint64_t missing = 0;
    std::vector<MissingRange> ranges;
    std::vector<StageCount> stages;
    nlohmann::json to_json() const;
};

struct ReportFilters {
    std::optional<std::string> project;
    std::optional<std::uint32_t> run;
    std::optional<std::string> stream_prefix;
    std::optional<std::string> data_format;
    std::optional<std::string> name_prefix;

    bool matches(const DatasetRow& r) const;
};

class Eio {
public:
    explicit Eio(std::filesystem::path root, EioConfig config = {});
    const std::filesystem::path& root() const { return root_; }

    /// Raises UnknownEntry, InvalidArgument (not in the completion list), VerificationFailure.
    ImportSummary import_dataset(const mapstore::Store& store, const std::string& dataset,
                                 const ImportOptions& options = {});
    /// Raises UnknownPartition.
    void drop_partition(std::uint32_t dataset_id);

    std::vector<DatasetRow> datasets() const;
    std::optional<DatasetRow> dataset(std::uint32_t id) const;
    std::optional<DatasetRow> dataset(const std::string& name) const;
    std::vector<EventRow> events(std::uint32_t dataset_id) const;
    std::vector<DuplicateRow> duplicates(std::uint32_t dataset_id) const;
    std::vector<OverlapRow> overlaps(std::uint32_t run) const;
    std::vector<LbnCountRow> lbn_counts(std::uint32_t dataset_id) const;
    std::filesystem::path partition_path(std::uint32_t dataset_id) const;

    // reports
    OverlapReport dataset_overlaps(std::uint32_t run, OverlapAlgorithm alg = OverlapAlgorithm::AOverMin,
                                   double threshold_pct = 70) const;
    std::vector<DuplicateGroup> duplicate_report(const std::string& dataset) const;
    /// Reference defaults to the largest other dataset of the same run and stream.
    MissingReport missing_event_report(const std::string& dataset, const std::optional<std::string>& reference = {}) const;
    std::map<std::uint16_t, std::uint64_t> count_by_bcid(const std::string& dataset) const;
    std::vector<LbnCountRow> count_by_lbn(const std::string& dataset) const;
    /// LBNs whose event range contains `event`.
    std::vector<std::uint32_t> probable_lbns(const std::string& dataset, std::uint64_t event) const;
    std::vector<DatasetRow> dataset_report(const ReportFilters& filters = {}) const;

    // on-demand recomputation of the materialized tables
    std::vector<OverlapRow> recompute_overlaps(std::uint32_t run) const;
    static std::vector<LbnCountRow> lbn_counts_of(std::uint32_t dataset_id, const std::vector<EventRow>& events);

private:
    DatasetRow require(const std::string& name) const;
    void save_datasets(const std::map<std::uint32_t, DatasetRow>& rows) const;
    std::map<std::uint32_t, DatasetRow> load_datasets() const;
    void rerank(std::map<std::uint32_t, DatasetRow>& rows) const;
    void write_overlaps(std::uint32_t run, const std::vector<OverlapRow>& rows) const;

    std::filesystem::path root_;
    EioConfig config_;
    mutable std::mutex mu_;
};

}  // namespace ei::eio

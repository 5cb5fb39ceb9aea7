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
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ei/clock.hpp"
#include "ei/core.hpp"
#include "ei/mapfile.hpp"
#include "ei/rows.hpp"

namespace ei::mapstore {

enum class EntryKind : std::uint8_t { Events, Derived, Result };
enum class EntryStatus : std::uint8_t { Importing, Valid, Obsolete, Deleted };
std::string_view to_string(EntryKind k);
std::string_view to_string(EntryStatus s);
EntryKind entry_kind_from_string(std::string_view s);
EntryStatus entry_status_from_string(std::string_view s);

struct HistoryItem {
    std::uint64_t ms = 0;
    std::string action;
    bool operator==(const HistoryItem&) const = default;
};

struct CatalogEntry {
    std::string name;
    EntryKind kind = EntryKind::Events;
    EntryStatus status = EntryStatus::Importing;
    std::string data_path;  // relative to the store root
    std::string index_path;
    std::uint64_t n_rows = 0;
    std::uint64_t created_ms = 0;
    std::vector<HistoryItem> history;
    std::vector<std::string> relations;
    std::map<std::string, std::string> properties;

    bool operator==(const CatalogEntry&) const = default;
};

nlohmann::json to_json(const CatalogEntry& e);
CatalogEntry entry_from_json(const nlohmann::json& j);

/// Name-ordered entry table persisted as one JSON snapshot, replaced atomically on change.
class Catalog {
public:
    explicit Catalog(std::filesystem::path file);

    std::optional<CatalogEntry> find(const std::string& name) const;
    std::vector<CatalogEntry> entries() const;
    std::vector<CatalogEntry> with_status(EntryStatus status, std::optional<EntryKind> kind = std::nullopt) const;
    void put(const CatalogEntry& entry);
    void erase(const std::string& name);
    /// Appends to history; the move must differ from the current status.
    void set_status(const std::string& name, EntryStatus status, std::uint64_t ms, const std::string& action);

private:
    void save() const;

    std::filesystem::path file_;
    mutable std::mutex mu_;
    std::map<std::string, CatalogEntry> entries_;
};

struct JournalEntry {
    std::uint64_t ms = 0;
    std::string operation;  // import | search | delete
    std::string target;
    nlohmann::json parameters = nlohmann::json::object();
    std::string outcome;
};

class Journal {
public:
    Journal(std::filesystem::path file, ClockFn clock);
    /// Stamps `ms` (never below the previous stamp) and appends one JSON line.
    JournalEntry append(std::string operation, std::string target, nlohmann::json parameters, std::string outcome);
    std::vector<JournalEntry> read_all() const;

private:
    std::filesystem::path file_;
    ClockFn clock_;
    mutable std::mutex mu_;
    std::uint64_t last_ms_ = 0;
};

// ---- event lookup table ----

struct LookupFilters {
    std::optional<std::string> stream;
    std::optional<std::string> data_format;
    std::optional<std::string> ami_tag;
};

struct LookupMatch {
    std::string dataset;
    std::string stream;
    std::string data_format;
    std::string ami_tag;
    std::vector<std::string> guid_refs;  // "GUID:ptr" for the indexed file, then upstream GUIDs

    bool operator==(const LookupMatch&) const = default;
};

struct LookupResult {
    EventKey key;
    std::vector<LookupMatch> matches;
    bool found() const { return !matches.empty(); }
};

/// run‖event‖dataset_id, all big-endian
std::string lookup_key(const EventKey& key, std::uint32_t dataset_id);
/// stream,data_format,ami_tag,dataset,guid0,guid1,guid2
std::string lookup_value(const DatasetName& dataset, const rows::RowView& row);
LookupMatch parse_lookup_value(std::string_view value);

/// Log-structured table of sorted MapFile segments; each import adds one segment and
/// segments are merged once there are more than `compact_after`.
class LookupTable {
public:
    LookupTable(std::filesystem::path dir, mapfile::Options options, std::size_t compact_after = 16);

    class Builder {
    public:
        void add(const EventKey& key, std::string_view value);
        /// Publishes the segment. Rows must arrive in key order.
        void commit();

    private:
        friend class LookupTable;
        Builder(LookupTable& table, std::uint32_t dataset_id, std::string name);
        LookupTable& table_;
        std::uint32_t dataset_id_;
        std::string name_;
        std::unique_ptr<mapfile::Writer> writer_;
    };
    Builder builder(std::uint32_t dataset_id);

    /// Rewrites every segment holding rows of `dataset_id` without them.
    void purge(std::uint32_t dataset_id);
    void compact();
    std::vector<LookupResult> lookup(const std::vector<EventKey>& keys) const;
    void scan(const mapfile::RowFn& fn) const;
    std::size_t segments() const;
    std::uint64_t rows() const;

private:
    struct Segment {
        std::string name;
        std::vector<std::uint32_t> datasets;
        std::uint64_t rows = 0;
        std::shared_ptr<mapfile::Reader> reader;
    };
    void load();
    void save() const;
    mapfile::Paths paths_of(const std::string& name) const;
    std::string next_name();
    void publish(Segment seg);
    std::vector<Segment> snapshot() const;

    std::filesystem::path dir_;
    mapfile::Options options_;
    std::size_t compact_after_;
    mutable std::mutex mu_;
    std::vector<Segment> segments_;
    std::uint64_t next_ = 1;
};

// ---- store ----

struct StoreOptions {
    mapfile::Options events{};
    mapfile::Options lookup{mapfile::Mode::Block, mapfile::Codec::Deflate, 64u << 10, 64};
    std::size_t compact_after = 16;
    ClockFn clock = system_clock_fn();
};

struct ImportOptions {
    bool supersede = false;
    bool require_listed = true;  // seq file must appear in the directory's completion list
};

struct ImportReport {
    std::string dataset;
    std::uint64_t n_input = 0;
    std::uint64_t n_rows = 0;
    std::uint64_t n_duplicates = 0;
    std::vector<EventKey> duplicate_keys;  // one per diverted copy, in key order
    mapfile::Meta meta;
    CatalogEntry entry;
};

using RowPredicate = std::function<bool(std::string_view key, std::string_view value)>;

/// Rows satisfying `pred`, in key order, scanned over index-aligned partitions in parallel.
std::vector<mapfile::Row> parallel_scan(const mapfile::Reader& reader, const RowPredicate& pred,
                                        std::size_t threads = 0);

class Store {
public:
    explicit Store(std::filesystem::path root, StoreOptions options = {});

    const std::filesystem::path& root() const { return root_; }
    Catalog& catalog() { return catalog_; }
    const Catalog& catalog() const { return catalog_; }
    Journal& journal() { return journal_; }
    LookupTable& lookup_table() { return lookup_; }
    std::uint64_t now() const { return options_.clock(); }

    ImportReport import_dataset(const std::filesystem::path& seq_path, const ImportOptions& options = {});
    std::vector<LookupResult> event_lookup(const std::vector<EventKey>& keys, const LookupFilters& filters = {});
    void delete_dataset(const std::string& name);

    /// VALID entries only; raises UnknownEntry otherwise.
    std::shared_ptr<mapfile::Reader> open(const std::string& name) const;
    std::shared_ptr<mapfile::Reader> open_entry(const CatalogEntry& entry) const;
    std::vector<std::string> datasets() const;
    /// Duplicate copies diverted at import (empty when none).
    std::vector<mapfile::Row> duplicates(const std::string& dataset) const;
    std::vector<mapfile::Row> scan(const std::string& name, const RowPredicate& pred, std::size_t threads = 0);

    mapfile::Paths entry_paths(const CatalogEntry& e) const;
    /// Base path for a new table file under the dataset's container directory.
    std::filesystem::path table_base(const std::string& dataset, const std::string& suffix) const;
    /// Registers a finished DERIVED or RESULT table (replacing any entry of that name).
    CatalogEntry register_table(const std::string& name, EntryKind kind, const mapfile::Paths& paths,
                                const mapfile::Meta& meta, std::vector<std::string> relations,
                                std::map<std::string, std::string> properties = {});
    /// Swaps a VALID entry's files for a rewritten copy and removes the old files.
    void replace_files(const std::string& name, const mapfile::Paths& paths, const mapfile::Meta& meta,
                       const std::string& action);

    std::filesystem::path notifications_file() const { return root_ / "_notifications" / "notifications.jsonl"; }
    std::vector<nlohmann::json> notifications() const;

private:
    void notify(const nlohmann::json& record);
    std::string rel(const std::filesystem::path& p) const;
    void remove_files(const CatalogEntry& e);

    std::filesystem::path root_;
    StoreOptions options_;
    Catalog catalog_;
    Journal journal_;
    LookupTable lookup_;
    std::mutex write_mu_;
    mutable std::mutex readers_mu_;
    mutable std::map<std::string, std::shared_ptr<mapfile::Reader>> readers_;
};

}  // namespace ei::mapstore

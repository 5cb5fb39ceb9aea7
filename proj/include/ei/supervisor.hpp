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
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ei/broker.hpp"
#include "ei/core.hpp"
#include "ei/messages.hpp"
#include "ei/object_store.hpp"

namespace ei::supervisor {

enum class Phase : std::uint8_t { Indexing, Validating, Validated, Consumed, RetryQueue, Failed, Obsolete };
std::string_view to_string(Phase p);
Phase phase_from_string(std::string_view s);
bool legal_transition(Phase from, Phase to);

struct FileSeen {
    std::uint64_t nevents = 0;
    std::uint64_t nunique = 0;
    std::uint64_t task_id = 0;
    std::uint64_t job_id = 0;
    transport::ObjectUri object;
    bool operator==(const FileSeen&) const = default;
};

struct DatasetState {
    DatasetName dataset;
    Phase phase = Phase::Indexing;
    std::vector<transport::JobReport> reports;
    std::map<Guid, FileSeen> per_file_seen;
    std::optional<transport::ObjectUri> validation_uri;
    std::uint32_t retry_count = 0;
    std::uint32_t attempts = 0;  // validation objects emitted so far
    std::uint64_t last_transition_ms = 0;
    std::uint64_t next_retry_ms = 0;
    std::vector<std::string> last_failures;

    bool operator==(const DatasetState&) const = default;
};

nlohmann::json to_json(const DatasetState& s);
DatasetState state_from_json(const nlohmann::json& j);

struct ValidationObject {
    DatasetName dataset;
    struct Entry {
        transport::ObjectUri uri;
        std::vector<Guid> valid_guids;
        bool operator==(const Entry&) const = default;
    };
    std::vector<Entry> objects;
    std::uint64_t expected_events = 0;
    std::uint64_t created_ms = 0;

    std::string serialize() const;
    static ValidationObject parse(std::string_view text);
    bool operator==(const ValidationObject&) const = default;
};

struct Failure {
    enum class Kind { FileUnprocessed, CountMismatch, JobMissing };
    Kind kind;
    Guid guid;
    std::uint64_t task_id = 0;
    std::uint64_t job_id = 0;
    std::string text() const;
};

struct ValidationResult {
    std::vector<Failure> failures;
    bool ok() const { return failures.empty(); }
};

/// External task bookkeeping (stand-in for the production system's task states).
/// Line format: task_id TAB dataset TAB state TAB comma-separated job ids.
struct TaskStatus {
    enum class State { Running, Done, Aborted, Obsolete };
    std::uint64_t task_id = 0;
    DatasetName dataset;
    State state = State::Running;
    std::set<std::uint64_t> expected_jobs;
};
std::vector<TaskStatus> load_task_status(const std::filesystem::path& path);

/// Checks (a) every registry file seen, (b) counts equal registry counts, (c) every expected
/// job of a live task reported.
ValidationResult validate_dataset(const DatasetState& state, const RegistryEntry& entry,
                                  const std::vector<TaskStatus>& tasks = {});

/// Partition of the validated files by the object that carries them.
ValidationObject build_validation_object(const DatasetState& state, const RegistryEntry& entry, std::uint64_t now);

struct SupervisorConfig {
    std::string bucket = "ei";
    std::string notice_queue = "ei.validation";
    std::uint32_t max_retries = 10;
    std::chrono::minutes backoff_cap{60};
    std::chrono::milliseconds ack_timeout{std::chrono::hours(6)};
    std::optional<std::filesystem::path> journal;        // append-only state log, replayed at start
    std::optional<std::filesystem::path> notifications;  // duplicate/failure/discrepancy records
    std::optional<std::filesystem::path> task_status;    // re-read on every sweep
};

/// Single-writer state machine. Every public mutator is serialized by an internal mutex.
class Supervisor {
public:
    Supervisor(Registry registry, SupervisorConfig config, transport::ObjectStoreSet* stores,
               transport::Channel* channel);

    /// Read-only copy of the state recorded in a journal; it never writes to the journal.
    static std::unique_ptr<Supervisor> from_journal(Registry registry, const std::filesystem::path& journal);

    /// Malformed bodies and unknown datasets are quarantined, never thrown.
    void handle_raw(std::string_view body, std::uint64_t now);
    void handle(const transport::ControlMessage& msg, std::uint64_t now);

    /// Re-validates every retry-queue dataset past its backoff, times out unacknowledged
    /// validations, and validates datasets whose tasks are all done.
    std::vector<DatasetName> retry_sweep(std::uint64_t now);

    std::optional<DatasetState> state(const DatasetName& dataset) const;
    std::vector<DatasetState> states() const;
    nlohmann::json status_json() const;
    nlohmann::json status_json(const DatasetName& dataset) const;

    struct Transition {
        std::uint64_t ms;
        std::string dataset;
        Phase from;
        Phase to;
        std::string reason;
    };
    std::vector<Transition> transitions() const;
    std::vector<std::string> quarantine() const;
    std::vector<nlohmann::json> notifications() const;

private:
    DatasetState& state_for(const RegistryEntry& entry);
    void on_report(const transport::ControlMessage& msg, const transport::JobReport& r, std::uint64_t now);
    void on_ack(const transport::ConsumptionAck& a, std::uint64_t now);
    void on_duplicates(const transport::DuplicateAlert& a, std::uint64_t now);
    void try_validate(DatasetState& s, const RegistryEntry& entry, std::uint64_t now);
    void emit_validation(DatasetState& s, const RegistryEntry& entry, std::uint64_t now);
    void to_retry(DatasetState& s, std::uint64_t now, const std::string& reason);
    void move(DatasetState& s, Phase to, std::uint64_t now, const std::string& reason);
    void persist(const DatasetState& s);
    void persist_msg(std::uint64_t msg_id);
    void notify(nlohmann::json record);
    void quarantine_msg(std::string text);
    void replay();
    void refresh_tasks();

    mutable std::mutex mu_;
    Registry registry_;
    SupervisorConfig config_;
    transport::ObjectStoreSet* stores_;
    transport::Channel* channel_;
    std::map<std::string, DatasetState> states_;
    std::set<std::uint64_t> seen_msgs_;
    std::vector<TaskStatus> tasks_;
    std::vector<Transition> transitions_;
    std::vector<std::string> quarantine_;
    std::vector<nlohmann::json> notifications_;
    std::ofstream journal_;
};

/// Pulls messages from `sub`, hands them to the supervisor, acks after handling and sweeps
/// every `sweep_every`. Returns when `stop` becomes true.
void run_loop(Supervisor& sup, transport::Subscription& sub, const std::atomic<bool>& stop,
              std::chrono::milliseconds sweep_every = std::chrono::seconds(5));

}  // namespace ei::supervisor

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
#include <string>
#include <vector>

#include "ei/broker.hpp"
#include "ei/clock.hpp"
#include "ei/event_file.hpp"
#include "ei/messages.hpp"
#include "ei/object_store.hpp"
#include "ei/spb.hpp"

namespace ei::producer {

struct JobConfig {
    std::uint64_t task_id = 0;
    std::uint64_t job_id = 0;
    DatasetName dataset;
    std::vector<std::filesystem::path> input_paths;
    std::string bucket = "ei";
    std::string broker_queue = "ei.reports";
    std::string source = "grid";

    /// key = value lines; `input` may repeat. Raises InvalidArgument.
    static JobConfig load(const std::filesystem::path& path);
};

std::string object_key(const DatasetName& dataset, std::uint64_t task_id, std::uint64_t job_id);

/// Per-file result of indexing.
struct FileSummary {
    Guid guid;
    std::uint64_t nevents = 0;
    std::uint64_t nunique = 0;
    std::vector<EventKey> duplicate_keys;  // one entry per extra occurrence, in file order
};

using FrameSink = std::function<void(const spb::Frame&)>;
using EventSource = std::function<std::optional<EventRecord>()>;

/// Emits BEGIN_GUID, a TRIGGER_MENU before the first event and on every smk change, the
/// EI_EVENT frames in input order, and END_GUID.
FileSummary index_file(const InputHeader& header, const EventSource& events, const FrameSink& sink,
                       const ClockFn& clock = system_clock_fn());
FileSummary index_file(const InputHeader& header, const std::vector<EventRecord>& events, const FrameSink& sink,
                       const ClockFn& clock = system_clock_fn());

struct ProducerEnv {
    transport::ObjectStoreSet* stores = nullptr;
    transport::Channel* channel = nullptr;
    ClockFn clock = system_clock_fn();
    SleepFn sleep = thread_sleep_fn();
    int report_attempts = 5;
    std::chrono::milliseconds first_backoff{1000};
    int compression_level = 6;
};

struct JobOutcome {
    transport::ObjectUri object_uri;
    transport::JobReport report;
    std::vector<transport::DuplicateAlert> duplicate_alerts;
    std::vector<FileSummary> files;
    std::uint64_t n_events = 0;
    std::uint64_t uncompressed_bytes = 0;
    std::uint64_t stored_bytes = 0;
};

/// Builds the SPB object in memory, stores it (primary then fallback) and reports it.
/// Raises AllStoresUnavailable (nothing reported) or BrokerUnreachable (object kept).
JobOutcome run_producer_job(const JobConfig& config, ProducerEnv& env);

}  // namespace ei::producer

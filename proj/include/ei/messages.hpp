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
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ei/core.hpp"
#include "ei/object_store.hpp"

/// Control messages exchanged over the broker. Bulk index data never travels here.
namespace ei::transport {

inline constexpr std::size_t kMaxControlMessageBytes = 64 * 1024;

enum class ControlType : std::uint8_t { JobReport = 1, ValidationNotice = 2, ConsumptionAck = 3, DuplicateAlert = 4 };
std::string_view to_string(ControlType t);

struct FileReport {
    Guid guid;
    std::uint64_t nevents = 0;
    std::uint64_t nunique = 0;

    bool operator==(const FileReport&) const = default;
};

struct JobReport {
    std::uint64_t task_id = 0;
    std::uint64_t job_id = 0;
    std::string dataset;
    ObjectUri object_uri;
    std::vector<FileReport> files;
    std::uint64_t started_ms = 0;
    std::uint64_t ended_ms = 0;
    std::string source = "grid";

    bool operator==(const JobReport&) const = default;
};

struct ValidationNotice {
    std::string dataset;
    ObjectUri validation_uri;

    bool operator==(const ValidationNotice&) const = default;
};

struct ConsumptionAck {
    std::string dataset;
    std::uint64_t consumed_events = 0;
    std::string target_path;
    std::string status = "ok";  // "ok" | "error"
    std::optional<std::string> error;

    bool ok() const { return status == "ok"; }
    bool operator==(const ConsumptionAck&) const = default;
};

struct DuplicateAlert {
    std::string dataset;
    std::uint64_t job_id = 0;
    std::vector<EventKey> duplicate_keys;

    bool operator==(const DuplicateAlert&) const = default;
};

using ControlBody = std::variant<JobReport, ValidationNotice, ConsumptionAck, DuplicateAlert>;

struct ControlMessage {
    std::uint64_t msg_id = 0;
    std::uint64_t sent_ms = 0;
    ControlBody body;

    ControlType type() const { return static_cast<ControlType>(body.index() + 1); }

    /// One JSON document. Raises FieldOverflow above 64 KiB.
    std::string serialize() const;
    /// Raises CorruptInput for anything that is not a well-formed control message.
    static ControlMessage parse(std::string_view text);

    bool operator==(const ControlMessage&) const = default;
};

/// Deterministic id for a producer's report so that resends are recognisable.
/// JSON form of a job report body, as embedded in JOB_REPORT messages.
nlohmann::json to_json(const JobReport& report);
JobReport job_report_from_json(const nlohmann::json& j);

std::uint64_t report_message_id(std::uint64_t task_id, std::uint64_t job_id, ControlType type);

}  // namespace ei::transport

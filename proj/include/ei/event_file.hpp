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
#include <fstream>
#include <map>
#include <optional>
#include <string>

#include "ei/core.hpp"
#include "ei/spb.hpp"

namespace ei::producer {

/// First line of an input event file.
struct InputHeader {
    Guid guid;
    DatasetName dataset;
    std::string proc_version;
    std::string stream;
    std::string project;
    std::uint32_t smk = 0;
    std::uint64_t n_events = 0;
    std::map<std::uint32_t, spb::TriggerMenuMsg> menus;  // keyed by smk

    bool operator==(const InputHeader&) const = default;
};

std::string header_line(const InputHeader& header);
InputHeader parse_header_line(std::string_view line);

/// One event per line. `file_guid` and `ordinal` fill locations[0]; dataset_id is left to the caller.
std::string event_line(const EventRecord& record);
EventRecord parse_event_line(std::string_view line, const Guid& file_guid, std::uint64_t ordinal);

/// Line-oriented reader. Events come back in file order with internal pointers 0, 1, 2...
class EventFileReader {
public:
    explicit EventFileReader(const std::filesystem::path& path);

    const InputHeader& header() const { return header_; }
    /// Empty once the file is exhausted and the event count matched the header.
    /// Raises CorruptInput on a bad line or a count mismatch, after the last good record.
    std::optional<EventRecord> next();
    std::uint64_t events_read() const { return ordinal_; }

private:
    std::filesystem::path path_;
    std::ifstream in_;
    InputHeader header_;
    std::uint32_t dataset_id_ = 0;
    std::uint64_t ordinal_ = 0;
    std::uint64_t line_no_ = 1;
};

class EventFileWriter {
public:
    EventFileWriter(const std::filesystem::path& path, const InputHeader& header);
    void write(const EventRecord& record);
    /// Raises InvalidArgument if the written count differs from header.n_events.
    void finish();

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::uint64_t expected_ = 0;
    std::uint64_t written_ = 0;
};

}  // namespace ei::producer

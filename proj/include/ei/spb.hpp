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
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ei/core.hpp"

namespace ei {
class GzipWriter;
class GzipReader;
}  // namespace ei

/// Producer output format: gzip( magic ‖ frame* ), each frame prefixed by two little-endian
/// 32-bit words: (type << 16 | version) and payload length.
namespace ei::spb {

inline constexpr std::uint32_t kMagic = 0x6e56c8c7;
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kFramePrefixSize = 8;

enum class MsgType : std::uint16_t {
    Header = 1,
    Trailer = 2,
    BeginGuid = 3,
    EndGuid = 4,
    TriggerMenu = 5,
    EiEvent = 6,
};

std::string_view to_string(MsgType t);

struct Frame {
    MsgType type = MsgType::Header;
    std::uint16_t version = kVersion;
    std::string payload;

    bool operator==(const Frame&) const = default;
};

// Payload schemas. All primitives little-endian, strings u16 length + bytes.

struct HeaderMsg {
    std::uint64_t task_id = 0;
    std::uint64_t job_id = 0;
    std::string dataset;
    std::uint64_t start_ms = 0;

    Frame frame() const;
    static HeaderMsg decode(std::string_view payload);
    bool operator==(const HeaderMsg&) const = default;
};

struct TrailerMsg {
    std::uint32_t n_files = 0;
    std::uint64_t n_events = 0;
    std::uint64_t end_ms = 0;

    Frame frame() const;
    static TrailerMsg decode(std::string_view payload);
    bool operator==(const TrailerMsg&) const = default;
};

struct BeginGuidMsg {
    Guid guid;
    std::uint64_t start_ms = 0;
    std::string proc_version;
    std::string stream;
    std::string project;

    Frame frame() const;
    static BeginGuidMsg decode(std::string_view payload);
    bool operator==(const BeginGuidMsg&) const = default;
};

struct EndGuidMsg {
    std::uint64_t n_events = 0;
    std::uint64_t end_ms = 0;

    Frame frame() const;
    static EndGuidMsg decode(std::string_view payload);
    bool operator==(const EndGuidMsg&) const = default;
};

using MenuLevel = std::vector<std::pair<std::uint32_t, std::string>>;  // (counter, chain name)

struct TriggerMenuMsg {
    std::uint32_t smk = 0;
    std::array<MenuLevel, 3> levels;  // L1, L2, HLT

    Frame frame() const;
    static TriggerMenuMsg decode(std::string_view payload);
    bool operator==(const TriggerMenuMsg&) const = default;
};

/// Raises FieldOverflow for strings over 65535 bytes or more than 3 GUID references.
std::string encode_event(const EventRecord& record);
void encode_event(const EventRecord& record, std::string& out);
EventRecord decode_event(std::string_view payload);
Frame event_frame(const EventRecord& record);

/// Incremental checker for HEADER (BEGIN_GUID (TRIGGER_MENU|EI_EVENT)* END_GUID)* TRAILER,
/// with a TRIGGER_MENU required before the first EI_EVENT of every group.
class StructureValidator {
public:
    /// Raises StructureViolation.
    void accept(MsgType type);
    /// Raises StructureViolation unless the stream is closed by a TRAILER.
    void finish() const;

private:
    enum class State { Start, Top, InGroup, Done };
    State state_ = State::Start;
    bool menu_seen_ = false;
    std::size_t index_ = 0;
};

void validate_structure(std::span<const Frame> frames);

/// Streams frames into a gzip container; structure is checked as frames arrive.
class StreamWriter {
public:
    explicit StreamWriter(std::ostream& sink, int level = 6);
    ~StreamWriter();
    StreamWriter(const StreamWriter&) = delete;
    StreamWriter& operator=(const StreamWriter&) = delete;

    void write(const Frame& frame);
    void write(MsgType type, std::string_view payload, std::uint16_t version = kVersion);
    /// Requires a TRAILER to have been written. Returns compressed bytes written.
    std::uint64_t finish();

    std::uint64_t uncompressed_bytes() const { return uncompressed_; }

private:
    std::unique_ptr<GzipWriter> gz_;
    StructureValidator validator_;
    std::string prefix_;
    std::uint64_t uncompressed_ = 0;
};

std::uint64_t write_stream(std::ostream& sink, std::span<const Frame> frames);
std::string write_stream_bytes(std::span<const Frame> frames);

/// Lazy frame reader. The magic is checked on construction.
class StreamReader {
public:
    explicit StreamReader(std::istream& source);
    ~StreamReader();
    StreamReader(const StreamReader&) = delete;
    StreamReader& operator=(const StreamReader&) = delete;

    /// Next frame, or nullopt at a clean end of stream.
    std::optional<Frame> next();
    std::uint64_t uncompressed_bytes() const { return uncompressed_; }

private:
    std::size_t fill(char* out, std::size_t n);

    std::unique_ptr<GzipReader> gz_;
    std::uint64_t uncompressed_ = 0;
};

std::vector<Frame> read_stream(std::istream& source);
std::vector<Frame> read_stream_bytes(std::string_view bytes);

/// Size of the uncompressed representation (magic + prefixes + payloads).
std::uint64_t uncompressed_size(std::span<const Frame> frames);

}  // namespace ei::spb

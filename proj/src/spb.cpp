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

#include "ei/spb.hpp"

#include <istream>
#include <ostream>
#include <sstream>

#include "ei/bytes.hpp"
#include "ei/compress.hpp"
#include "ei/error.hpp"

namespace ei::spb {

std::string_view to_string(MsgType t) {
    switch (t) {
        case MsgType::Header: return "HEADER";
        case MsgType::Trailer: return "TRAILER";
        case MsgType::BeginGuid: return "BEGIN_GUID";
        case MsgType::EndGuid: return "END_GUID";
        case MsgType::TriggerMenu: return "TRIGGER_MENU";
        case MsgType::EiEvent: return "EI_EVENT";
    }
    return "?";
}

namespace {

Frame make(MsgType type, std::string payload) { return Frame{type, kVersion, std::move(payload)}; }

void expect_consumed(const ByteReader& r, MsgType type) {
    if (!r.done())
        fail(ErrorCode::CorruptData, std::string(to_string(type)) + " payload has " + std::to_string(r.remaining()) +
                                         " trailing bytes");
}

void put_mask(ByteWriter& w, const TriggerMask& m) {
    w.u32le(static_cast<std::uint32_t>(m.word_count()));
    for (auto word : m.words()) w.u64le(word);
}

TriggerMask get_mask(ByteReader& r) {
    auto n = r.u32le();
    if (n > r.remaining() / 8) fail(ErrorCode::CorruptData, "mask word count exceeds payload");
    std::vector<std::uint64_t> words(n);
    for (auto& word : words) word = r.u64le();
    return TriggerMask(std::move(words));
}

}  // namespace

Frame HeaderMsg::frame() const {
    std::string p;
    ByteWriter w(p);
    w.u64le(task_id);
    w.u64le(job_id);
    w.str16(dataset);
    w.u64le(start_ms);
    return make(MsgType::Header, std::move(p));
}

HeaderMsg HeaderMsg::decode(std::string_view payload) {
    ByteReader r(payload);
    HeaderMsg m;
    m.task_id = r.u64le();
    m.job_id = r.u64le();
    m.dataset = r.str16();
    m.start_ms = r.u64le();
    expect_consumed(r, MsgType::Header);
    return m;
}

Frame TrailerMsg::frame() const {
    std::string p;
    ByteWriter w(p);
    w.u32le(n_files);
    w.u64le(n_events);
    w.u64le(end_ms);
    return make(MsgType::Trailer, std::move(p));
}

TrailerMsg TrailerMsg::decode(std::string_view payload) {
    ByteReader r(payload);
    TrailerMsg m;
    m.n_files = r.u32le();
    m.n_events = r.u64le();
    m.end_ms = r.u64le();
    expect_consumed(r, MsgType::Trailer);
    return m;
}

Frame BeginGuidMsg::frame() const {
    std::string p;
    ByteWriter w(p);
    w.raw(guid.raw());
    w.u64le(start_ms);
    w.str16(proc_version);
    w.str16(stream);
    w.str16(project);
    return make(MsgType::BeginGuid, std::move(p));
}

BeginGuidMsg BeginGuidMsg::decode(std::string_view payload) {
    ByteReader r(payload);
    BeginGuidMsg m;
    m.guid = Guid::from_raw(r.raw(16));
    m.start_ms = r.u64le();
    m.proc_version = r.str16();
    m.stream = r.str16();
    m.project = r.str16();
    expect_consumed(r, MsgType::BeginGuid);
    return m;
}

Frame EndGuidMsg::frame() const {
    std::string p;
    ByteWriter w(p);
    w.u64le(n_events);
    w.u64le(end_ms);
    return make(MsgType::EndGuid, std::move(p));
}

EndGuidMsg EndGuidMsg::decode(std::string_view payload) {
    ByteReader r(payload);
    EndGuidMsg m;
    m.n_events = r.u64le();
    m.end_ms = r.u64le();
    expect_consumed(r, MsgType::EndGuid);
    return m;
}

Frame TriggerMenuMsg::frame() const {
    std::string p;
    ByteWriter w(p);
    w.u32le(smk);
    for (const auto& level : levels) {
        w.u32le(static_cast<std::uint32_t>(level.size()));
        for (const auto& [counter, name] : level) {
            w.u32le(counter);
            w.str16(name);
        }
    }
    return make(MsgType::TriggerMenu, std::move(p));
}

TriggerMenuMsg TriggerMenuMsg::decode(std::string_view payload) {
    ByteReader r(payload);
    TriggerMenuMsg m;
    m.smk = r.u32le();
    for (auto& level : m.levels) {
        auto n = r.u32le();
        if (n > r.remaining() / 6) fail(ErrorCode::CorruptData, "menu entry count exceeds payload");
        level.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            auto counter = r.u32le();
            level.emplace_back(counter, r.str16());
        }
    }
    expect_consumed(r, MsgType::TriggerMenu);
    return m;
}

void encode_event(const EventRecord& rec, std::string& out) {
    if (rec.locations.size() > kMaxGuidRefs)
        fail(ErrorCode::FieldOverflow, std::to_string(rec.locations.size()) + " GUID references (max 3)");
    ByteWriter w(out);
    w.u32le(rec.key.run);
    w.u64le(rec.key.event);
    w.u32le(rec.dataset_id);
    w.u32le(rec.lbn);
    w.u16le(rec.bcid);
    w.u64le(rec.timestamp_ms);
    w.u8(rec.is_simulated ? 1 : 0);
    w.f32le(rec.event_weight);
    w.u32le(rec.sim_process_id);
    w.str16(rec.lhc_conditions);
    w.u32le(rec.trigger.smk);
    w.u32le(rec.trigger.l1_psk);
    w.u32le(rec.trigger.hlt_psk);
    for (const auto& m : rec.trigger.masks) put_mask(w, m);
    w.u32le(static_cast<std::uint32_t>(rec.trigger.decoded_chains.size()));
    for (const auto& c : rec.trigger.decoded_chains) w.str16(c);
    w.u32le(static_cast<std::uint32_t>(rec.locations.size()));
    for (const auto& ref : rec.locations) {
        w.u8(static_cast<std::uint8_t>(ref.type));
        w.raw(ref.guid.raw());
        w.u64le(ref.internal_pointer);
    }
}

std::string encode_event(const EventRecord& rec) {
    std::string out;
    encode_event(rec, out);
    return out;
}

EventRecord decode_event(std::string_view payload) {
    ByteReader r(payload);
    EventRecord rec;
    rec.key.run = r.u32le();
    rec.key.event = r.u64le();
    rec.dataset_id = r.u32le();
    rec.lbn = r.u32le();
    rec.bcid = r.u16le();
    rec.timestamp_ms = r.u64le();
    rec.is_simulated = r.u8() != 0;
    rec.event_weight = r.f32le();
    rec.sim_process_id = r.u32le();
    rec.lhc_conditions = r.str16();
    rec.trigger.smk = r.u32le();
    rec.trigger.l1_psk = r.u32le();
    rec.trigger.hlt_psk = r.u32le();
    for (auto& m : rec.trigger.masks) m = get_mask(r);
    auto n_chains = r.u32le();
    if (n_chains > r.remaining() / 2) fail(ErrorCode::CorruptData, "chain count exceeds payload");
    rec.trigger.decoded_chains.reserve(n_chains);
    for (std::uint32_t i = 0; i < n_chains; ++i) rec.trigger.decoded_chains.push_back(r.str16());
    auto n_refs = r.u32le();
    if (n_refs > kMaxGuidRefs) fail(ErrorCode::FieldOverflow, std::to_string(n_refs) + " GUID references (max 3)");
    rec.locations.resize(n_refs);
    for (auto& ref : rec.locations) {
        auto t = r.u8();
        if (t > 2) fail(ErrorCode::CorruptData, "bad GUID reference type " + std::to_string(t));
        ref.type = static_cast<RefType>(t);
        ref.guid = Guid::from_raw(r.raw(16));
        ref.internal_pointer = r.u64le();
    }
    expect_consumed(r, MsgType::EiEvent);
    return rec;
}

Frame event_frame(const EventRecord& record) { return make(MsgType::EiEvent, encode_event(record)); }

// --- structure ---

void StructureValidator::accept(MsgType type) {
    auto violation = [&](const std::string& what) {
        fail(ErrorCode::StructureViolation,
             "frame " + std::to_string(index_) + " (" + std::string(to_string(type)) + "): " + what);
    };
    switch (state_) {
        case State::Start:
            if (type != MsgType::Header) violation("stream must begin with HEADER");
            state_ = State::Top;
            break;
        case State::Top:
            if (type == MsgType::BeginGuid) {
                state_ = State::InGroup;
                menu_seen_ = false;
            } else if (type == MsgType::Trailer) {
                state_ = State::Done;
            } else {
                violation("only BEGIN_GUID or TRAILER may follow a completed group");
            }
            break;
        case State::InGroup:
            if (type == MsgType::TriggerMenu) {
                menu_seen_ = true;
            } else if (type == MsgType::EiEvent) {
                if (!menu_seen_) violation("EI_EVENT before any TRIGGER_MENU in its group");
            } else if (type == MsgType::EndGuid) {
                state_ = State::Top;
            } else {
                violation("unterminated BEGIN_GUID group");
            }
            break;
        case State::Done:
            violation("frame after TRAILER");
    }
    ++index_;
}

void StructureValidator::finish() const {
    if (state_ != State::Done) fail(ErrorCode::StructureViolation, "stream not closed by TRAILER");
}

void validate_structure(std::span<const Frame> frames) {
    StructureValidator v;
    for (const auto& f : frames) v.accept(f.type);
    v.finish();
}

// --- writer ---

StreamWriter::StreamWriter(std::ostream& sink, int level) : gz_(std::make_unique<GzipWriter>(sink, level)) {
    std::string magic;
    ByteWriter(magic).u32le(kMagic);
    gz_->write(magic);
    uncompressed_ = magic.size();
}

StreamWriter::~StreamWriter() = default;

void StreamWriter::write(MsgType type, std::string_view payload, std::uint16_t version) {
    auto t = static_cast<std::uint16_t>(type);
    if (t < 1 || t > 6) fail(ErrorCode::StructureViolation, "unknown message type " + std::to_string(t));
    if (payload.size() > 0xFFFFFFFFull) fail(ErrorCode::FieldOverflow, "payload over 4 GiB");
    validator_.accept(type);
    prefix_.clear();
    ByteWriter w(prefix_);
    w.u32le((static_cast<std::uint32_t>(t) << 16) | version);
    w.u32le(static_cast<std::uint32_t>(payload.size()));
    gz_->write(prefix_);
    gz_->write(payload);
    uncompressed_ += prefix_.size() + payload.size();
}

void StreamWriter::write(const Frame& frame) { write(frame.type, frame.payload, frame.version); }

std::uint64_t StreamWriter::finish() {
    validator_.finish();
    return gz_->finish();
}

std::uint64_t write_stream(std::ostream& sink, std::span<const Frame> frames) {
    StreamWriter w(sink);
    for (const auto& f : frames) w.write(f);
    return w.finish();
}

std::string write_stream_bytes(std::span<const Frame> frames) {
    std::ostringstream os;
    write_stream(os, frames);
    return std::move(os).str();
}

// --- reader ---

StreamReader::StreamReader(std::istream& source) : gz_(std::make_unique<GzipReader>(source)) {
    char magic[4];
    if (fill(magic, 4) != 4) fail(ErrorCode::BadMagic, "stream shorter than its magic number");
    ByteReader r(std::string_view(magic, 4));
    auto value = r.u32le();
    if (value != kMagic) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "0x%08x", value);
        fail(ErrorCode::BadMagic, std::string("found ") + buf);
    }
}

StreamReader::~StreamReader() = default;

std::size_t StreamReader::fill(char* out, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
        auto k = gz_->read(out + got, n - got);
        if (k == 0) break;
        got += k;
    }
    uncompressed_ += got;
    return got;
}

std::optional<Frame> StreamReader::next() {
    char prefix[kFramePrefixSize];
    auto got = fill(prefix, kFramePrefixSize);
    if (got == 0) {
        if (gz_->truncated()) fail(ErrorCode::TruncatedFrame, "compressed stream cut before its end");
        return std::nullopt;
    }
    if (got < kFramePrefixSize) fail(ErrorCode::TruncatedFrame, "frame prefix cut after " + std::to_string(got) + " bytes");
    ByteReader r(std::string_view(prefix, kFramePrefixSize));
    auto word1 = r.u32le();
    auto length = r.u32le();
    auto type = static_cast<std::uint16_t>(word1 >> 16);
    auto version = static_cast<std::uint16_t>(word1 & 0xFFFF);
    if (type < 1 || type > 6) fail(ErrorCode::UnknownType, "message type " + std::to_string(type));
    if (version != kVersion) fail(ErrorCode::UnsupportedVersion, "message version " + std::to_string(version));
    Frame f;
    f.type = static_cast<MsgType>(type);
    f.version = version;
    // grow in bounded steps so a corrupt length cannot force a huge allocation up front
    constexpr std::size_t kStep = 1 << 20;
    while (f.payload.size() < length) {
        auto want = std::min<std::size_t>(kStep, length - f.payload.size());
        auto old = f.payload.size();
        f.payload.resize(old + want);
        auto k = fill(f.payload.data() + old, want);
        if (k < want)
            fail(ErrorCode::TruncatedFrame, std::string(to_string(f.type)) + " payload cut at " +
                                                std::to_string(old + k) + " of " + std::to_string(length) + " bytes");
    }
    return f;
}

std::vector<Frame> read_stream(std::istream& source) {
    StreamReader reader(source);
    std::vector<Frame> frames;
    while (auto f = reader.next()) frames.push_back(std::move(*f));
    return frames;
}

std::vector<Frame> read_stream_bytes(std::string_view bytes) {
    std::istringstream is{std::string(bytes)};
    return read_stream(is);
}

std::uint64_t uncompressed_size(std::span<const Frame> frames) {
    std::uint64_t n = 4;
    for (const auto& f : frames) n += kFramePrefixSize + f.payload.size();
    return n;
}

}  // namespace ei::spb

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

#include "ei/event_file.hpp"

#include <json.hpp>

#include "ei/error.hpp"

namespace ei::producer {

using nlohmann::json;

namespace {

json menu_to_json(const spb::TriggerMenuMsg& menu) {
    json levels = json::object();
    for (auto level : kTriggerLevels) {
        json items = json::array();
        for (const auto& [counter, name] : menu.levels[static_cast<std::size_t>(level)]) items.push_back({counter, name});
        levels[std::string(to_string(level))] = std::move(items);
    }
    return levels;
}

spb::TriggerMenuMsg menu_from_json(std::uint32_t smk, const json& j) {
    spb::TriggerMenuMsg menu;
    menu.smk = smk;
    for (auto level : kTriggerLevels) {
        auto it = j.find(std::string(to_string(level)));
        if (it == j.end()) continue;
        for (const auto& item : *it)
            menu.levels[static_cast<std::size_t>(level)].emplace_back(item.at(0).get<std::uint32_t>(),
                                                                       item.at(1).get<std::string>());
    }
    return menu;
}

const char* mask_field(TriggerLevel level) {
    switch (level) {
        case TriggerLevel::L1: return "l1";
        case TriggerLevel::L2: return "l2";
        case TriggerLevel::HLT: return "hlt";
    }
    return "";
}

}  // namespace

std::string header_line(const InputHeader& h) {
    json j{{"guid", h.guid.to_text()},
           {"dataset", h.dataset.str()},
           {"proc_version", h.proc_version},
           {"stream", h.stream},
           {"project", h.project},
           {"smk", h.smk},
           {"n_events", h.n_events}};
    if (!h.menus.empty()) {
        json menus = json::object();
        for (const auto& [smk, menu] : h.menus) menus[std::to_string(smk)] = menu_to_json(menu);
        j["menus"] = std::move(menus);
    }
    return j.dump();
}

InputHeader parse_header_line(std::string_view line) {
    try {
        auto j = json::parse(line);
        InputHeader h;
        h.guid = Guid::from_text(j.at("guid").get<std::string>());
        h.dataset = DatasetName::parse(j.at("dataset").get<std::string>());
        h.proc_version = j.value("proc_version", "");
        h.stream = j.value("stream", h.dataset.stream);
        h.project = j.value("project", h.dataset.project);
        h.smk = j.value("smk", 0u);
        h.n_events = j.at("n_events").get<std::uint64_t>();
        if (auto it = j.find("menus"); it != j.end()) {
            for (const auto& [key, value] : it->items()) {
                auto smk = static_cast<std::uint32_t>(std::stoul(key));
                h.menus.emplace(smk, menu_from_json(smk, value));
            }
        }
        return h;
    } catch (const Error& e) {
        fail(ErrorCode::CorruptInput, std::string("bad header: ") + e.what());
    } catch (const std::exception& e) {
        fail(ErrorCode::CorruptInput, std::string("bad header: ") + e.what());
    }
}

std::string event_line(const EventRecord& r) {
    json j{{"run", r.key.run},
           {"event", r.key.event},
           {"lbn", r.lbn},
           {"bcid", r.bcid},
           {"timestamp", r.timestamp_ms}};
    if (r.is_simulated) {
        j["is_sim"] = true;
        j["weight"] = r.event_weight;
        j["sim_process_id"] = r.sim_process_id;
    }
    if (!r.lhc_conditions.empty()) j["lhc"] = r.lhc_conditions;
    if (r.trigger.smk != 0) j["smk"] = r.trigger.smk;
    if (r.trigger.l1_psk != 0) j["l1_psk"] = r.trigger.l1_psk;
    if (r.trigger.hlt_psk != 0) j["hlt_psk"] = r.trigger.hlt_psk;
    for (auto level : kTriggerLevels)
        if (!r.trigger.mask(level).empty()) j[mask_field(level)] = r.trigger.mask(level).words();
    if (r.locations.size() > 1) {
        json up = json::array();
        for (std::size_t i = 1; i < r.locations.size(); ++i)
            up.push_back({{"guid", r.locations[i].guid.to_text()}, {"ptr", r.locations[i].internal_pointer}});
        j["upstream"] = std::move(up);
    }
    return j.dump();
}

EventRecord parse_event_line(std::string_view line, const Guid& file_guid, std::uint64_t ordinal) {
    try {
        auto j = json::parse(line);
        EventRecord r;
        r.key.run = j.at("run").get<std::uint32_t>();
        r.key.event = j.at("event").get<std::uint64_t>();
        r.lbn = j.value("lbn", 0u);
        r.bcid = j.value("bcid", std::uint16_t{0});
        r.timestamp_ms = j.value("timestamp", std::uint64_t{0});
        r.is_simulated = j.value("is_sim", false);
        r.event_weight = j.value("weight", 1.0f);
        r.sim_process_id = j.value("sim_process_id", 0u);
        r.lhc_conditions = j.value("lhc", "");
        r.trigger.smk = j.value("smk", 0u);
        r.trigger.l1_psk = j.value("l1_psk", 0u);
        r.trigger.hlt_psk = j.value("hlt_psk", 0u);
        for (auto level : kTriggerLevels)
            if (auto it = j.find(mask_field(level)); it != j.end())
                r.trigger.mask(level) = TriggerMask(it->get<std::vector<std::uint64_t>>());
        r.locations.push_back({RefType::Indexed, file_guid, ordinal});
        if (auto it = j.find("upstream"); it != j.end()) {
            if (it->size() > kMaxGuidRefs - 1) fail(ErrorCode::FieldOverflow, "more than two upstream files");
            for (const auto& u : *it)
                r.locations.push_back({static_cast<RefType>(r.locations.size()),
                                       Guid::from_text(u.at("guid").get<std::string>()),
                                       u.value("ptr", std::uint64_t{0})});
        }
        return r;
    } catch (const Error& e) {
        fail(ErrorCode::CorruptInput, e.what());
    } catch (const std::exception& e) {
        fail(ErrorCode::CorruptInput, e.what());
    }
}

EventFileReader::EventFileReader(const std::filesystem::path& path) : path_(path), in_(path) {
    if (!in_) fail(ErrorCode::Io, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in_, line)) fail(ErrorCode::CorruptInput, path.string() + ": missing header");
    header_ = parse_header_line(line);
    dataset_id_ = dataset_id_of(header_.dataset);
}

std::optional<EventRecord> EventFileReader::next() {
    std::string line;
    while (std::getline(in_, line)) {
        ++line_no_;
        if (line.empty()) continue;
        if (ordinal_ >= header_.n_events)
            fail(ErrorCode::CorruptInput,
                 path_.string() + ": more events than the header's " + std::to_string(header_.n_events));
        EventRecord r;
        try {
            r = parse_event_line(line, header_.guid, ordinal_);
        } catch (const Error& e) {
            fail(ErrorCode::CorruptInput, path_.string() + ":" + std::to_string(line_no_) + ": " + e.what());
        }
        r.dataset_id = dataset_id_;
        ++ordinal_;
        return r;
    }
    if (ordinal_ != header_.n_events)
        fail(ErrorCode::CorruptInput, path_.string() + ": header declares " + std::to_string(header_.n_events) +
                                          " events, file holds " + std::to_string(ordinal_));
    return std::nullopt;
}

EventFileWriter::EventFileWriter(const std::filesystem::path& path, const InputHeader& header)
    : path_(path), out_(path, std::ios::trunc), expected_(header.n_events) {
    if (!out_) fail(ErrorCode::Io, "cannot create " + path.string());
    out_ << header_line(header) << '\n';
}

void EventFileWriter::write(const EventRecord& record) {
    out_ << event_line(record) << '\n';
    ++written_;
}

void EventFileWriter::finish() {
    out_.flush();
    if (!out_) fail(ErrorCode::Io, "write failed: " + path_.string());
    out_.close();
    if (written_ != expected_)
        fail(ErrorCode::InvalidArgument,
             "wrote " + std::to_string(written_) + " events, header declares " + std::to_string(expected_));
}

}  // namespace ei::producer

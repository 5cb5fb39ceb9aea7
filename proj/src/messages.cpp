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

#include "ei/messages.hpp"

#include <json.hpp>

#include "ei/error.hpp"

namespace ei::transport {

using nlohmann::json;

std::string_view to_string(ControlType t) {
    switch (t) {
        case ControlType::JobReport: return "JOB_REPORT";
        case ControlType::ValidationNotice: return "VALIDATION_NOTICE";
        case ControlType::ConsumptionAck: return "CONSUMPTION_ACK";
        case ControlType::DuplicateAlert: return "DUPLICATE_ALERT";
    }
    return "?";
}

namespace {

json body_json(const JobReport& r) {
    json files = json::array();
    for (const auto& f : r.files) files.push_back({{"guid", f.guid.to_text()}, {"nevents", f.nevents}, {"nunique", f.nunique}});
    return {{"task_id", r.task_id},       {"job_id", r.job_id},         {"dataset", r.dataset},
            {"object_uri", r.object_uri.str()}, {"files", std::move(files)}, {"started_ms", r.started_ms},
            {"ended_ms", r.ended_ms},     {"source", r.source}};
}

json body_json(const ValidationNotice& n) { return {{"dataset", n.dataset}, {"validation_uri", n.validation_uri.str()}}; }

json body_json(const ConsumptionAck& a) {
    json j = {{"dataset", a.dataset},
              {"consumed_events", a.consumed_events},
              {"target_path", a.target_path},
              {"status", a.status}};
    if (a.error) j["error"] = *a.error;
    return j;
}

json body_json(const DuplicateAlert& d) {
    json keys = json::array();
    for (const auto& k : d.duplicate_keys) keys.push_back(json::array({k.run, k.event}));
    return {{"dataset", d.dataset}, {"job_id", d.job_id}, {"duplicate_keys", std::move(keys)}};
}

ControlBody parse_body(ControlType type, const json& b) {
    switch (type) {
        case ControlType::JobReport: {
            JobReport r;
            r.task_id = b.at("task_id").get<std::uint64_t>();
            r.job_id = b.at("job_id").get<std::uint64_t>();
            r.dataset = b.at("dataset").get<std::string>();
            r.object_uri = ObjectUri::parse(b.at("object_uri").get<std::string>());
            for (const auto& f : b.at("files"))
                r.files.push_back({Guid::from_text(f.at("guid").get<std::string>()), f.at("nevents").get<std::uint64_t>(),
                                   f.at("nunique").get<std::uint64_t>()});
            r.started_ms = b.at("started_ms").get<std::uint64_t>();
            r.ended_ms = b.at("ended_ms").get<std::uint64_t>();
            r.source = b.value("source", "grid");
            return r;
        }
        case ControlType::ValidationNotice:
            return ValidationNotice{b.at("dataset").get<std::string>(),
                                    ObjectUri::parse(b.at("validation_uri").get<std::string>())};
        case ControlType::ConsumptionAck: {
            ConsumptionAck a;
            a.dataset = b.at("dataset").get<std::string>();
            a.consumed_events = b.at("consumed_events").get<std::uint64_t>();
            a.target_path = b.at("target_path").get<std::string>();
            a.status = b.at("status").get<std::string>();
            if (b.contains("error")) a.error = b.at("error").get<std::string>();
            return a;
        }
        case ControlType::DuplicateAlert: {
            DuplicateAlert d;
            d.dataset = b.at("dataset").get<std::string>();
            d.job_id = b.at("job_id").get<std::uint64_t>();
            for (const auto& k : b.at("duplicate_keys"))
                d.duplicate_keys.push_back({k.at(0).get<std::uint32_t>(), k.at(1).get<std::uint64_t>()});
            return d;
        }
    }
    fail(ErrorCode::CorruptInput, "unknown control type");
}

}  // namespace

std::string ControlMessage::serialize() const {
    json j = {{"type", to_string(type())},
              {"msg_id", msg_id},
              {"sent_ms", sent_ms},
              {"body", std::visit([](const auto& b) { return body_json(b); }, body)}};
    auto text = j.dump();
    if (text.size() > kMaxControlMessageBytes)
        fail(ErrorCode::FieldOverflow, "control message of " + std::to_string(text.size()) + " bytes exceeds 64 KiB");
    return text;
}

ControlMessage ControlMessage::parse(std::string_view text) {
    try {
        auto j = json::parse(text);
        auto type_name = j.at("type").get<std::string>();
        std::optional<ControlType> type;
        for (auto t : {ControlType::JobReport, ControlType::ValidationNotice, ControlType::ConsumptionAck,
                       ControlType::DuplicateAlert})
            if (to_string(t) == type_name) type = t;
        if (!type) fail(ErrorCode::CorruptInput, "unknown control message type '" + type_name + "'");
        ControlMessage m;
        m.msg_id = j.at("msg_id").get<std::uint64_t>();
        m.sent_ms = j.at("sent_ms").get<std::uint64_t>();
        m.body = parse_body(*type, j.at("body"));
        return m;
    } catch (const json::exception& e) {
        fail(ErrorCode::CorruptInput, std::string("control message: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::CorruptInput) throw;
        fail(ErrorCode::CorruptInput, std::string("control message: ") + e.what());
    }
}

json to_json(const JobReport& report) { return body_json(report); }

JobReport job_report_from_json(const json& j) {
    try {
        return std::get<JobReport>(parse_body(ControlType::JobReport, j));
    } catch (const json::exception& e) {
        fail(ErrorCode::CorruptInput, std::string("job report: ") + e.what());
    }
}

std::uint64_t report_message_id(std::uint64_t task_id, std::uint64_t job_id, ControlType type) {
    return ((task_id & 0xFFFFFF) << 40) | ((job_id & 0xFFFFFFFF) << 8) | static_cast<std::uint64_t>(type);
}

}  // namespace ei::transport

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

#include "ei/supervisor.hpp"

#include <algorithm>
#include <sstream>

#include "ei/clock.hpp"
#include "ei/compress.hpp"
#include "ei/error.hpp"

namespace ei::supervisor {

using nlohmann::json;
using transport::ControlMessage;
using transport::ObjectUri;

std::string_view to_string(Phase p) {
    switch (p) {
        case Phase::Indexing: return "INDEXING";
        case Phase::Validating: return "VALIDATING";
        case Phase::Validated: return "VALIDATED";
        case Phase::Consumed: return "CONSUMED";
        case Phase::RetryQueue: return "RETRY_QUEUE";
        case Phase::Failed: return "FAILED";
        case Phase::Obsolete: return "OBSOLETE";
    }
    return "?";
}

Phase phase_from_string(std::string_view s) {
    for (auto p : {Phase::Indexing, Phase::Validating, Phase::Validated, Phase::Consumed, Phase::RetryQueue,
                   Phase::Failed, Phase::Obsolete})
        if (to_string(p) == s) return p;
    fail(ErrorCode::InvalidArgument, "unknown phase '" + std::string(s) + "'");
}

bool legal_transition(Phase from, Phase to) {
    if (to == Phase::Failed || to == Phase::Obsolete) return from != to;
    switch (from) {
        case Phase::Indexing: return to == Phase::Validating;
        case Phase::Validating: return to == Phase::Validated || to == Phase::RetryQueue;
        case Phase::RetryQueue: return to == Phase::Validating;
        case Phase::Validated: return to == Phase::Consumed || to == Phase::RetryQueue;
        default: return false;
    }
}

// --- serialization ---

json to_json(const DatasetState& s) {
    json files = json::array();
    for (const auto& [guid, f] : s.per_file_seen)
        files.push_back({{"guid", guid.to_text()},
                         {"nevents", f.nevents},
                         {"nunique", f.nunique},
                         {"task_id", f.task_id},
                         {"job_id", f.job_id},
                         {"object", f.object.str()}});
    json reports = json::array();
    for (const auto& r : s.reports) reports.push_back(transport::to_json(r));
    json j = {{"dataset", s.dataset.str()},
              {"phase", to_string(s.phase)},
              {"reports", std::move(reports)},
              {"files", std::move(files)},
              {"retry_count", s.retry_count},
              {"attempts", s.attempts},
              {"last_transition_ms", s.last_transition_ms},
              {"next_retry_ms", s.next_retry_ms},
              {"last_failures", s.last_failures}};
    if (s.validation_uri) j["validation_uri"] = s.validation_uri->str();
    return j;
}

DatasetState state_from_json(const json& j) {
    DatasetState s;
    s.dataset = DatasetName::parse(j.at("dataset").get<std::string>());
    s.phase = phase_from_string(j.at("phase").get<std::string>());
    for (const auto& r : j.at("reports")) s.reports.push_back(transport::job_report_from_json(r));
    for (const auto& f : j.at("files"))
        s.per_file_seen[Guid::from_text(f.at("guid").get<std::string>())] =
            FileSeen{f.at("nevents").get<std::uint64_t>(), f.at("nunique").get<std::uint64_t>(),
                     f.at("task_id").get<std::uint64_t>(), f.at("job_id").get<std::uint64_t>(),
                     ObjectUri::parse(f.at("object").get<std::string>())};
    s.retry_count = j.at("retry_count").get<std::uint32_t>();
    s.attempts = j.at("attempts").get<std::uint32_t>();
    s.last_transition_ms = j.at("last_transition_ms").get<std::uint64_t>();
    s.next_retry_ms = j.at("next_retry_ms").get<std::uint64_t>();
    s.last_failures = j.at("last_failures").get<std::vector<std::string>>();
    if (j.contains("validation_uri")) s.validation_uri = ObjectUri::parse(j.at("validation_uri").get<std::string>());
    return s;
}

std::string ValidationObject::serialize() const {
    json objs = json::array();
    for (const auto& o : objects) {
        json guids = json::array();
        for (const auto& g : o.valid_guids) guids.push_back(g.to_text());
        objs.push_back({{"uri", o.uri.str()}, {"valid_guids", std::move(guids)}});
    }
    return json{{"dataset", dataset.str()},
                {"objects", std::move(objs)},
                {"expected_events", expected_events},
                {"created_ms", created_ms}}
        .dump(1);
}

ValidationObject ValidationObject::parse(std::string_view text) {
    try {
        auto j = json::parse(text);
        ValidationObject v;
        v.dataset = DatasetName::parse(j.at("dataset").get<std::string>());
        for (const auto& o : j.at("objects")) {
            Entry e{ObjectUri::parse(o.at("uri").get<std::string>()), {}};
            for (const auto& g : o.at("valid_guids")) e.valid_guids.push_back(Guid::from_text(g.get<std::string>()));
            v.objects.push_back(std::move(e));
        }
        v.expected_events = j.at("expected_events").get<std::uint64_t>();
        v.created_ms = j.at("created_ms").get<std::uint64_t>();
        return v;
    } catch (const json::exception& e) {
        fail(ErrorCode::CorruptInput, std::string("validation object: ") + e.what());
    } catch (const Error& e) {
        fail(ErrorCode::CorruptInput, std::string("validation object: ") + e.what());
    }
}

std::string Failure::text() const {
    switch (kind) {
        case Kind::FileUnprocessed: return "file unprocessed: " + guid.to_text();
        case Kind::CountMismatch: return "count mismatch: " + guid.to_text();
        case Kind::JobMissing:
            return "job missing: task " + std::to_string(task_id) + " job " + std::to_string(job_id);
    }
    return {};
}

// --- task status ---

std::vector<TaskStatus> load_task_status(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) return {};
    std::vector<TaskStatus> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream row(line);
        std::string id, ds, state, jobs;
        std::getline(row, id, '\t');
        std::getline(row, ds, '\t');
        std::getline(row, state, '\t');
        std::getline(row, jobs, '\t');
        TaskStatus t;
        try {
            t.task_id = std::stoull(id);
            t.dataset = DatasetName::parse(ds);
        } catch (const std::exception&) {
            continue;  // unreadable rows are skipped; the file is advisory
        }
        if (state == "DONE") t.state = TaskStatus::State::Done;
        else if (state == "ABORTED") t.state = TaskStatus::State::Aborted;
        else if (state == "OBSOLETE") t.state = TaskStatus::State::Obsolete;
        std::istringstream js(jobs);
        std::string j;
        while (std::getline(js, j, ','))
            if (!j.empty()) t.expected_jobs.insert(std::stoull(j));
        out.push_back(std::move(t));
    }
    return out;
}

namespace {

bool task_dead(const std::vector<TaskStatus>& tasks, std::uint64_t task_id) {
    return std::any_of(tasks.begin(), tasks.end(), [&](const TaskStatus& t) {
        return t.task_id == task_id &&
               (t.state == TaskStatus::State::Obsolete || t.state == TaskStatus::State::Aborted);
    });
}

bool supersedes(const transport::JobReport& r, const FileSeen& prev) {
    return r.task_id > prev.task_id || (r.task_id == prev.task_id && r.job_id > prev.job_id);
}

std::uint64_t notice_message_id(const std::string& dataset, std::uint32_t attempt) {
    return (std::uint64_t(crc32(dataset)) << 32) | (std::uint64_t(attempt & 0xFFFFFF) << 8) |
           static_cast<std::uint64_t>(transport::ControlType::ValidationNotice);
}

}  // namespace

ValidationResult validate_dataset(const DatasetState& state, const RegistryEntry& entry,
                                  const std::vector<TaskStatus>& tasks) {
    ValidationResult res;
    for (const auto& f : entry.files) {
        auto it = state.per_file_seen.find(f.guid);
        if (it == state.per_file_seen.end()) {
            res.failures.push_back({Failure::Kind::FileUnprocessed, f.guid});
        } else if (it->second.nevents != f.expected_events) {
            res.failures.push_back({Failure::Kind::CountMismatch, f.guid, it->second.task_id, it->second.job_id});
        }
    }
    for (const auto& t : tasks) {
        if (t.dataset != entry.dataset || task_dead(tasks, t.task_id)) continue;
        for (auto job : t.expected_jobs) {
            bool reported = std::any_of(state.reports.begin(), state.reports.end(),
                                        [&](const auto& r) { return r.task_id == t.task_id && r.job_id == job; });
            if (!reported) res.failures.push_back({Failure::Kind::JobMissing, Guid{}, t.task_id, job});
        }
    }
    return res;
}

ValidationObject build_validation_object(const DatasetState& state, const RegistryEntry& entry, std::uint64_t now) {
    ValidationObject v;
    v.dataset = entry.dataset;
    v.expected_events = entry.expected_total();
    v.created_ms = now;
    std::map<std::pair<std::uint64_t, std::uint64_t>, std::size_t> slot;  // (task, job) -> objects index
    std::vector<std::pair<std::pair<std::uint64_t, std::uint64_t>, const FileSeen*>> order;
    for (const auto& f : entry.files) {
        auto it = state.per_file_seen.find(f.guid);
        if (it == state.per_file_seen.end()) continue;
        order.push_back({{it->second.task_id, it->second.job_id}, &it->second});
    }
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [job, seen] : order) {
        auto [pos, fresh] = slot.emplace(job, v.objects.size());
        if (fresh) v.objects.push_back({seen->object, {}});
    }
    for (const auto& f : entry.files) {
        auto it = state.per_file_seen.find(f.guid);
        if (it == state.per_file_seen.end()) continue;
        v.objects[slot.at({it->second.task_id, it->second.job_id})].valid_guids.push_back(f.guid);
    }
    return v;
}

// --- Supervisor ---

Supervisor::Supervisor(Registry registry, SupervisorConfig config, transport::ObjectStoreSet* stores,
                       transport::Channel* channel)
    : registry_(std::move(registry)), config_(std::move(config)), stores_(stores), channel_(channel) {
    if (config_.journal) {
        replay();
        journal_.open(*config_.journal, std::ios::app);
        if (!journal_) fail(ErrorCode::Io, "cannot open journal " + config_.journal->string());
    }
    refresh_tasks();
}

std::unique_ptr<Supervisor> Supervisor::from_journal(Registry registry, const std::filesystem::path& journal) {
    auto sup = std::make_unique<Supervisor>(std::move(registry), SupervisorConfig{}, nullptr, nullptr);
    if (std::filesystem::exists(journal)) {
        sup->config_.journal = journal;
        sup->replay();
        sup->config_.journal.reset();
    }
    return sup;
}

void Supervisor::replay() {
    std::ifstream in(*config_.journal);
    std::string line;
    while (std::getline(in, line)) {
        json j;
        try {
            j = json::parse(line);
            if (j.at("kind") == "msg") {
                seen_msgs_.insert(j.at("id").get<std::uint64_t>());
            } else if (j.at("kind") == "state") {
                auto s = state_from_json(j.at("state"));
                states_[s.dataset.str()] = std::move(s);
            }
        } catch (const std::exception&) {
            break;  // torn tail from a crash mid-append
        }
    }
}

void Supervisor::refresh_tasks() {
    if (!config_.task_status) return;
    tasks_ = load_task_status(*config_.task_status);
}

DatasetState& Supervisor::state_for(const RegistryEntry& entry) {
    auto [it, fresh] = states_.try_emplace(entry.dataset.str());
    if (fresh) it->second.dataset = entry.dataset;
    return it->second;
}

void Supervisor::persist(const DatasetState& s) {
    if (!journal_.is_open()) return;
    journal_ << json{{"kind", "state"}, {"state", to_json(s)}}.dump() << '\n';
    journal_.flush();
}

void Supervisor::persist_msg(std::uint64_t msg_id) {
    if (!journal_.is_open()) return;
    journal_ << json{{"kind", "msg"}, {"id", msg_id}}.dump() << '\n';
    journal_.flush();
}

void Supervisor::notify(json record) {
    if (config_.notifications) {
        std::ofstream out(*config_.notifications, std::ios::app);
        out << record.dump() << '\n';
    }
    notifications_.push_back(std::move(record));
}

void Supervisor::quarantine_msg(std::string text) { quarantine_.push_back(std::move(text)); }

void Supervisor::move(DatasetState& s, Phase to, std::uint64_t now, const std::string& reason) {
    if (!legal_transition(s.phase, to))
        fail(ErrorCode::InvalidArgument, "illegal transition " + std::string(to_string(s.phase)) + " -> " +
                                             std::string(to_string(to)) + " for " + s.dataset.str());
    transitions_.push_back({now, s.dataset.str(), s.phase, to, reason});
    s.phase = to;
    s.last_transition_ms = now;
}

void Supervisor::to_retry(DatasetState& s, std::uint64_t now, const std::string& reason) {
    ++s.retry_count;
    if (s.retry_count > config_.max_retries) {
        move(s, Phase::Failed, now, reason + "; retries exhausted");
        notify({{"ms", now}, {"kind", "failed"}, {"dataset", s.dataset.str()}, {"detail", reason},
                {"failures", s.last_failures}});
        return;
    }
    auto exp = std::min<std::uint32_t>(s.retry_count - 1, 20);
    auto wait = std::min<std::chrono::minutes>(std::chrono::minutes(1u << exp), config_.backoff_cap);
    s.next_retry_ms = now + static_cast<std::uint64_t>(std::chrono::milliseconds(wait).count());
    move(s, Phase::RetryQueue, now, reason);
}

void Supervisor::emit_validation(DatasetState& s, const RegistryEntry& entry, std::uint64_t now) {
    auto v = build_validation_object(s, entry, now);
    auto attempt = s.attempts + 1;
    try {
        transport::PutReceipt receipt;
        for (;; ++attempt) {
            try {
                receipt = stores_->put_with_fallback(
                    config_.bucket, "validation/" + s.dataset.str() + "/" + std::to_string(attempt) + ".json",
                    v.serialize());
                break;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::KeyExists) throw;
            }
        }
        s.attempts = attempt;
        ControlMessage notice{notice_message_id(s.dataset.str(), attempt), now,
                              transport::ValidationNotice{s.dataset.str(), receipt.uri}};
        channel_->send(config_.notice_queue, notice.serialize());
        s.validation_uri = receipt.uri;
        s.last_failures.clear();
        move(s, Phase::Validated, now, "validation object " + receipt.uri.str());
    } catch (const Error& e) {
        s.attempts = attempt;
        s.last_failures = {std::string("emit failed: ") + e.what()};
        to_retry(s, now, s.last_failures.front());
    }
}

void Supervisor::try_validate(DatasetState& s, const RegistryEntry& entry, std::uint64_t now) {
    move(s, Phase::Validating, now, "validate");
    auto res = validate_dataset(s, entry, tasks_);
    if (res.ok()) {
        emit_validation(s, entry, now);
        return;
    }
    s.last_failures.clear();
    for (const auto& f : res.failures) s.last_failures.push_back(f.text());
    to_retry(s, now, std::to_string(res.failures.size()) + " check(s) failed: " + s.last_failures.front());
}

void Supervisor::on_report(const ControlMessage&, const transport::JobReport& r, std::uint64_t now) {
    DatasetName name;
    try {
        name = DatasetName::parse(r.dataset);
    } catch (const Error& e) {
        quarantine_msg(std::string("report with bad dataset: ") + e.what());
        return;
    }
    const auto* entry = registry_.find(name);
    if (entry == nullptr) {
        quarantine_msg("report for unknown dataset " + r.dataset);
        return;
    }
    auto& s = state_for(*entry);
    if (!is_indexable(*entry)) {
        if (s.phase != Phase::Obsolete) move(s, Phase::Obsolete, now, "registry status " + std::string(to_string(entry->status)));
        persist(s);
        return;
    }
    if (task_dead(tasks_, r.task_id)) {
        quarantine_msg("report from obsolete task " + std::to_string(r.task_id));
        return;
    }
    if (s.phase == Phase::Consumed || s.phase == Phase::Failed || s.phase == Phase::Obsolete) {
        quarantine_msg("report for " + r.dataset + " in terminal phase " + std::string(to_string(s.phase)));
        return;
    }
    bool changed = false;
    for (const auto& f : r.files) {
        if (entry->find_file(f.guid) == nullptr) {
            quarantine_msg("report names file " + f.guid.to_text() + " outside " + r.dataset);
            continue;
        }
        FileSeen seen{f.nevents, f.nunique, r.task_id, r.job_id, r.object_uri};
        auto [it, fresh] = s.per_file_seen.try_emplace(f.guid, seen);
        if (fresh) {
            changed = true;
        } else if (supersedes(r, it->second)) {
            changed = changed || it->second != seen;
            it->second = seen;
        }
    }
    s.reports.push_back(r);
    if (s.phase == Phase::Indexing && s.per_file_seen.size() == entry->files.size()) {
        try_validate(s, *entry, now);
    } else if (s.phase == Phase::Validated && changed) {
        to_retry(s, now, "file superseded after validation");
    }
    persist(s);
}

void Supervisor::on_ack(const transport::ConsumptionAck& a, std::uint64_t now) {
    auto it = states_.find(a.dataset);
    const RegistryEntry* entry = nullptr;
    try {
        entry = registry_.find(DatasetName::parse(a.dataset));
    } catch (const Error&) {
    }
    if (it == states_.end() || entry == nullptr) {
        quarantine_msg("ack for unknown dataset " + a.dataset);
        return;
    }
    auto& s = it->second;
    auto expected = entry->expected_total();
    if (s.phase != Phase::Validated) {
        if (!(s.phase == Phase::Consumed && a.ok() && a.consumed_events == expected))
            quarantine_msg("ack for " + a.dataset + " in phase " + std::string(to_string(s.phase)));
        return;
    }
    if (!a.ok()) {
        s.last_failures = {"consumer error: " + a.error.value_or(a.status)};
        to_retry(s, now, s.last_failures.front());
    } else if (a.consumed_events == expected) {
        move(s, Phase::Consumed, now, "consumer wrote " + std::to_string(a.consumed_events) + " events");
    } else {
        notify({{"ms", now}, {"kind", "discrepancy"}, {"dataset", a.dataset}, {"expected", expected},
                {"consumed", a.consumed_events}});
        s.last_failures = {"consumed " + std::to_string(a.consumed_events) + " of " + std::to_string(expected)};
        to_retry(s, now, s.last_failures.front());
    }
    persist(s);
}

void Supervisor::on_duplicates(const transport::DuplicateAlert& a, std::uint64_t now) {
    json keys = json::array();
    for (std::size_t i = 0; i < a.duplicate_keys.size() && i < 100; ++i)
        keys.push_back({a.duplicate_keys[i].run, a.duplicate_keys[i].event});
    notify({{"ms", now}, {"kind", "duplicates"}, {"dataset", a.dataset}, {"job_id", a.job_id},
            {"n_keys", a.duplicate_keys.size()}, {"keys", std::move(keys)}});
}

void Supervisor::handle(const ControlMessage& msg, std::uint64_t now) {
    std::lock_guard lock(mu_);
    if (seen_msgs_.contains(msg.msg_id)) return;
    std::visit(
        [&](const auto& body) {
            using T = std::decay_t<decltype(body)>;
            if constexpr (std::is_same_v<T, transport::JobReport>) on_report(msg, body, now);
            else if constexpr (std::is_same_v<T, transport::ConsumptionAck>) on_ack(body, now);
            else if constexpr (std::is_same_v<T, transport::DuplicateAlert>) on_duplicates(body, now);
            else quarantine_msg("unexpected " + std::string(transport::to_string(msg.type())));
        },
        msg.body);
    seen_msgs_.insert(msg.msg_id);
    persist_msg(msg.msg_id);
}

void Supervisor::handle_raw(std::string_view body, std::uint64_t now) {
    ControlMessage msg;
    try {
        msg = ControlMessage::parse(body);
    } catch (const Error& e) {
        std::lock_guard lock(mu_);
        quarantine_msg(std::string("malformed message: ") + e.what());
        return;
    }
    handle(msg, now);
}

std::vector<DatasetName> Supervisor::retry_sweep(std::uint64_t now) {
    std::lock_guard lock(mu_);
    refresh_tasks();
    std::vector<DatasetName> revalidated;
    for (auto& [name, s] : states_) {
        const auto* entry = registry_.find(s.dataset);
        if (entry == nullptr) continue;
        bool touched = false;
        if (!tasks_.empty()) {
            for (auto it = s.per_file_seen.begin(); it != s.per_file_seen.end();) {
                if (task_dead(tasks_, it->second.task_id)) {
                    it = s.per_file_seen.erase(it);
                    touched = true;
                } else {
                    ++it;
                }
            }
        }
        if (s.phase == Phase::RetryQueue && now >= s.next_retry_ms) {
            try_validate(s, *entry, now);
            revalidated.push_back(s.dataset);
            touched = true;
        } else if (s.phase == Phase::Validated && now >= s.last_transition_ms + std::uint64_t(config_.ack_timeout.count())) {
            s.last_failures = {"no consumer acknowledgement"};
            to_retry(s, now, "consumer ack timeout");
            touched = true;
        } else if (s.phase == Phase::Indexing) {
            bool any = false, all_done = true;
            for (const auto& t : tasks_) {
                if (t.dataset != s.dataset || task_dead(tasks_, t.task_id)) continue;
                any = true;
                all_done = all_done && t.state == TaskStatus::State::Done;
            }
            if (any && all_done) {
                try_validate(s, *entry, now);
                revalidated.push_back(s.dataset);
                touched = true;
            }
        }
        if (touched) persist(s);
    }
    return revalidated;
}

std::optional<DatasetState> Supervisor::state(const DatasetName& dataset) const {
    std::lock_guard lock(mu_);
    auto it = states_.find(dataset.str());
    if (it == states_.end()) return std::nullopt;
    return it->second;
}

std::vector<DatasetState> Supervisor::states() const {
    std::lock_guard lock(mu_);
    std::vector<DatasetState> out;
    for (const auto& [n, s] : states_) out.push_back(s);
    return out;
}

namespace {

json summary(const DatasetState& s, const RegistryEntry* entry) {
    std::uint64_t seen_events = 0;
    for (const auto& [g, f] : s.per_file_seen) seen_events += f.nevents;
    json j = {{"dataset", s.dataset.str()},
              {"phase", to_string(s.phase)},
              {"files_seen", s.per_file_seen.size()},
              {"files_expected", entry ? entry->files.size() : 0},
              {"events_seen", seen_events},
              {"events_expected", entry ? entry->expected_total() : 0},
              {"retry_count", s.retry_count},
              {"last_transition_ms", s.last_transition_ms},
              {"last_failures", s.last_failures}};
    if (s.validation_uri) j["validation_uri"] = s.validation_uri->str();
    return j;
}

}  // namespace

json Supervisor::status_json() const {
    std::lock_guard lock(mu_);
    json out = json::array();
    for (const auto& entry : registry_.entries()) {
        auto it = states_.find(entry->dataset.str());
        if (it != states_.end()) {
            out.push_back(summary(it->second, entry));
        } else {
            DatasetState idle;
            idle.dataset = entry->dataset;
            out.push_back(summary(idle, entry));
        }
    }
    return out;
}

json Supervisor::status_json(const DatasetName& dataset) const {
    std::lock_guard lock(mu_);
    const auto* entry = registry_.find(dataset);
    if (entry == nullptr) fail(ErrorCode::UnknownDataset, dataset.str());
    DatasetState idle;
    idle.dataset = dataset;
    auto it = states_.find(dataset.str());
    const auto& s = it != states_.end() ? it->second : idle;
    auto j = summary(s, entry);
    json files = json::array();
    for (const auto& f : entry->files) {
        json row = {{"guid", f.guid.to_text()}, {"expected_events", f.expected_events}};
        if (auto seen = s.per_file_seen.find(f.guid); seen != s.per_file_seen.end()) {
            row["nevents"] = seen->second.nevents;
            row["nunique"] = seen->second.nunique;
            row["task_id"] = seen->second.task_id;
            row["job_id"] = seen->second.job_id;
            row["object"] = seen->second.object.str();
        }
        files.push_back(std::move(row));
    }
    j["files"] = std::move(files);
    return j;
}

std::vector<Supervisor::Transition> Supervisor::transitions() const {
    std::lock_guard lock(mu_);
    return transitions_;
}

std::vector<std::string> Supervisor::quarantine() const {
    std::lock_guard lock(mu_);
    return quarantine_;
}

std::vector<json> Supervisor::notifications() const {
    std::lock_guard lock(mu_);
    return notifications_;
}

void run_loop(Supervisor& sup, transport::Subscription& sub, const std::atomic<bool>& stop,
              std::chrono::milliseconds sweep_every) {
    auto last_sweep = wall_ms();
    while (!stop) {
        if (auto d = sub.receive(std::chrono::milliseconds(200))) {
            sup.handle_raw(d->body, wall_ms());
            sub.ack(d->id);
        }
        auto now = wall_ms();
        if (now - last_sweep >= static_cast<std::uint64_t>(sweep_every.count())) {
            sup.retry_sweep(now);
            last_sweep = now;
        }
    }
}

}  // namespace ei::supervisor

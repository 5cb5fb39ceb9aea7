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

#include "ei/producer.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include "ei/error.hpp"

namespace ei::producer {

namespace {

struct KeyHash {
    std::size_t operator()(const EventKey& k) const noexcept {
        return std::hash<std::uint64_t>{}(k.event * 0x9E3779B97F4A7C15ull ^ k.run);
    }
};

std::string trim(std::string s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::uint64_t alert_message_id(std::uint64_t task, std::uint64_t job, std::size_t chunk) {
    auto base = transport::report_message_id(task, job, transport::ControlType::DuplicateAlert);
    if (chunk == 0) return base;
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a over (base, chunk)
    for (auto v : {base, static_cast<std::uint64_t>(chunk)})
        for (int i = 0; i < 8; ++i) h = (h ^ ((v >> (8 * i)) & 0xFF)) * 1099511628211ull;
    return h | (1ull << 63);
}

constexpr std::size_t kAlertChunk = 2000;

}  // namespace

JobConfig JobConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::InvalidArgument, "cannot read job config " + path.string());
    JobConfig c;
    bool have_dataset = false;
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) fail(ErrorCode::InvalidArgument, "bad config line: " + line);
        auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        try {
            if (key == "task_id") c.task_id = std::stoull(value);
            else if (key == "job_id") c.job_id = std::stoull(value);
            else if (key == "dataset") c.dataset = DatasetName::parse(value), have_dataset = true;
            else if (key == "input") c.input_paths.emplace_back(value);
            else if (key == "bucket") c.bucket = value;
            else if (key == "broker_queue") c.broker_queue = value;
            else if (key == "source") c.source = value;
        } catch (const std::logic_error&) {
            fail(ErrorCode::InvalidArgument, "bad value for " + key + ": " + value);
        }
    }
    if (!have_dataset) fail(ErrorCode::InvalidArgument, "job config lacks dataset");
    if (c.input_paths.empty()) fail(ErrorCode::InvalidArgument, "job config lists no input");
    return c;
}

std::string object_key(const DatasetName& dataset, std::uint64_t task_id, std::uint64_t job_id) {
    return "ei/" + dataset.str() + "/" + std::to_string(task_id) + "." + std::to_string(job_id) + ".spb";
}

FileSummary index_file(const InputHeader& header, const EventSource& events, const FrameSink& sink,
                       const ClockFn& clock) {
    FileSummary s;
    s.guid = header.guid;
    sink(spb::BeginGuidMsg{header.guid, clock(), header.proc_version, header.stream, header.project}.frame());

    std::unordered_set<EventKey, KeyHash> seen;
    std::optional<std::uint32_t> current_smk;
    std::string payload;
    while (auto rec = events()) {
        auto smk = rec->trigger.smk != 0 ? rec->trigger.smk : header.smk;
        if (!current_smk || *current_smk != smk) {
            auto it = header.menus.find(smk);
            spb::TriggerMenuMsg menu = it != header.menus.end() ? it->second : spb::TriggerMenuMsg{};
            menu.smk = smk;
            sink(menu.frame());
            current_smk = smk;
        }
        payload.clear();
        spb::encode_event(*rec, payload);
        sink(spb::Frame{spb::MsgType::EiEvent, spb::kVersion, payload});
        ++s.nevents;
        if (!seen.insert(rec->key).second) s.duplicate_keys.push_back(rec->key);
    }
    if (!current_smk) {
        auto it = header.menus.find(header.smk);
        sink(it != header.menus.end() ? it->second.frame() : spb::TriggerMenuMsg{header.smk, {}}.frame());
    }
    s.nunique = seen.size();
    sink(spb::EndGuidMsg{s.nevents, clock()}.frame());
    return s;
}

FileSummary index_file(const InputHeader& header, const std::vector<EventRecord>& events, const FrameSink& sink,
                       const ClockFn& clock) {
    std::size_t i = 0;
    return index_file(
        header, [&]() -> std::optional<EventRecord> { return i < events.size() ? std::optional(events[i++]) : std::nullopt; },
        sink, clock);
}

JobOutcome run_producer_job(const JobConfig& config, ProducerEnv& env) {
    if (config.input_paths.empty()) fail(ErrorCode::InvalidArgument, "job has no input files");
    if (env.stores == nullptr || env.channel == nullptr) fail(ErrorCode::InvalidArgument, "producer env incomplete");

    JobOutcome out;
    std::ostringstream buffer;
    spb::StreamWriter writer(buffer, env.compression_level);
    auto started = env.clock();
    writer.write(spb::HeaderMsg{config.task_id, config.job_id, config.dataset.str(), started}.frame());
    auto sink = [&](const spb::Frame& f) { writer.write(f); };
    for (const auto& path : config.input_paths) {
        EventFileReader reader(path);
        if (reader.header().dataset != config.dataset)
            fail(ErrorCode::InvalidArgument,
                 path.string() + " belongs to " + reader.header().dataset.str() + ", not " + config.dataset.str());
        auto summary = index_file(reader.header(), [&] { return reader.next(); }, sink, env.clock);
        out.n_events += summary.nevents;
        out.files.push_back(std::move(summary));
    }
    auto ended = env.clock();
    writer.write(spb::TrailerMsg{static_cast<std::uint32_t>(out.files.size()), out.n_events, ended}.frame());
    out.stored_bytes = writer.finish();
    out.uncompressed_bytes = writer.uncompressed_bytes();

    auto receipt =
        env.stores->put_with_fallback(config.bucket, object_key(config.dataset, config.task_id, config.job_id),
                                      buffer.view());
    out.object_uri = receipt.uri;

    auto& rep = out.report;
    rep.task_id = config.task_id;
    rep.job_id = config.job_id;
    rep.dataset = config.dataset.str();
    rep.object_uri = receipt.uri;
    rep.started_ms = started;
    rep.ended_ms = ended;
    rep.source = config.source;
    std::vector<EventKey> dups;
    for (const auto& f : out.files) {
        rep.files.push_back({f.guid, f.nevents, f.nunique});
        dups.insert(dups.end(), f.duplicate_keys.begin(), f.duplicate_keys.end());
    }
    for (std::size_t i = 0; i < dups.size(); i += kAlertChunk) {
        auto end = std::min(dups.size(), i + kAlertChunk);
        out.duplicate_alerts.push_back({config.dataset.str(), config.job_id, {dups.begin() + i, dups.begin() + end}});
    }

    std::vector<transport::ControlMessage> messages;
    messages.push_back(
        {transport::report_message_id(config.task_id, config.job_id, transport::ControlType::JobReport), ended, rep});
    for (std::size_t c = 0; c < out.duplicate_alerts.size(); ++c)
        messages.push_back({alert_message_id(config.task_id, config.job_id, c), ended, out.duplicate_alerts[c]});

    for (const auto& msg : messages) {
        auto body = msg.serialize();
        auto backoff = env.first_backoff;
        for (int attempt = 1;; ++attempt) {
            try {
                env.channel->send(config.broker_queue, body);
                break;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::BrokerUnreachable) throw;
                if (attempt >= env.report_attempts)
                    fail(ErrorCode::BrokerUnreachable, "report for job " + std::to_string(config.job_id) +
                                                           " not delivered after " + std::to_string(attempt) +
                                                           " attempts; object kept at " + receipt.uri.str());
                env.sleep(backoff);
                backoff *= 2;
            }
        }
    }
    return out;
}

}  // namespace ei::producer

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

#include "ei/consumer.hpp"

#include <fstream>
#include <istream>
#include <streambuf>
#include <unordered_set>

#include "ei/clock.hpp"
#include "ei/error.hpp"
#include "ei/rows.hpp"
#include "ei/seqfile.hpp"
#include "ei/spb.hpp"
#include "ei/supervisor.hpp"

namespace ei::consumer {

namespace {

struct MemoryBuf : std::streambuf {
    explicit MemoryBuf(std::string_view bytes) {
        auto* p = const_cast<char*>(bytes.data());
        setg(p, p, p + bytes.size());
    }
};

struct GuidHash {
    std::size_t operator()(const Guid& g) const noexcept { return std::hash<std::string_view>{}(g.raw()); }
};

std::string fetch(const transport::ObjectStoreSet& stores, const transport::ObjectUri& uri) {
    try {
        return stores.get(uri);
    } catch (const Error& e) {
        fail(ErrorCode::FetchFailure, "cannot fetch " + uri.str() + ": " + e.what());
    }
}

struct ObjectStats {
    std::uint64_t rows = 0;
    std::uint64_t skipped = 0;
};

ObjectStats convert_object(const std::string& bytes, const transport::ObjectUri& uri,
                           const std::vector<Guid>& valid_list, seq::ExternalSorter& sorter) {
    std::unordered_set<Guid, GuidHash> valid(valid_list.begin(), valid_list.end());
    std::unordered_set<Guid, GuidHash> found;
    ObjectStats st;
    auto partial = [&](const std::string& why) { fail(ErrorCode::PartialObject, uri.str() + ": " + why); };
    try {
        MemoryBuf buf(bytes);
        std::istream in(&buf);
        spb::StreamReader reader(in);
        spb::StructureValidator validator;
        bool keep = false;
        std::uint64_t group_events = 0;
        std::string value;
        while (auto frame = reader.next()) {
            validator.accept(frame->type);
            switch (frame->type) {
                case spb::MsgType::BeginGuid: {
                    auto g = spb::BeginGuidMsg::decode(frame->payload).guid;
                    keep = valid.contains(g);
                    if (keep && !found.insert(g).second) partial("GUID " + g.to_text() + " appears twice");
                    group_events = 0;
                    break;
                }
                case spb::MsgType::EiEvent: {
                    ++group_events;
                    if (!keep) {
                        ++st.skipped;
                        break;
                    }
                    auto rec = spb::decode_event(frame->payload);
                    rows::encode_value(rec, value);
                    sorter.add(encode_event_key(rec.key), value);
                    ++st.rows;
                    break;
                }
                case spb::MsgType::EndGuid:
                    if (spb::EndGuidMsg::decode(frame->payload).n_events != group_events)
                        partial("END_GUID count differs from the group's events");
                    break;
                default: break;
            }
        }
        validator.finish();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::PartialObject) throw;
        partial(e.what());
    }
    for (const auto& g : valid_list)
        if (!found.contains(g)) partial("validated GUID " + g.to_text() + " missing");
    return st;
}

}  // namespace

std::filesystem::path output_path(const std::filesystem::path& store_root, const DatasetName& dataset) {
    return store_root / "incoming" / dataset.container() / (dataset.str() + ".seq");
}

std::filesystem::path completion_list(const std::filesystem::path& store_root, const DatasetName& dataset) {
    return store_root / "incoming" / dataset.container() / "_validated.txt";
}

std::vector<std::filesystem::path> read_completion_list(const std::filesystem::path& list) {
    std::vector<std::filesystem::path> out;
    std::ifstream in(list);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.emplace_back(line);
    return out;
}

void mark_completed(const std::filesystem::path& list, const std::filesystem::path& produced) {
    for (const auto& p : read_completion_list(list))
        if (p == produced) return;
    std::ofstream out(list, std::ios::app);
    out << produced.string() << '\n';
    if (!out) fail(ErrorCode::Io, "cannot append to " + list.string());
}

ConsumeOutcome consume_validation(const transport::ValidationNotice& notice, const transport::ObjectStoreSet& stores,
                                  const ConsumerConfig& config) {
    ConsumeOutcome out;
    out.ack.dataset = notice.dataset;
    out.ack.status = "ok";
    try {
        auto validation = supervisor::ValidationObject::parse(fetch(stores, notice.validation_uri));
        if (validation.dataset.str() != notice.dataset)
            fail(ErrorCode::CorruptInput, "validation object names " + validation.dataset.str());
        out.output = std::filesystem::absolute(output_path(config.store_root, validation.dataset));
        seq::ExternalSorter sorter(config.memory_budget, out.output.parent_path() / ".sort");
        for (const auto& obj : validation.objects) {
            auto bytes = fetch(stores, obj.uri);
            auto st = convert_object(bytes, obj.uri, obj.valid_guids, sorter);
            out.rows += st.rows;
            out.skipped_events += st.skipped;
            ++out.objects;
        }
        seq::Writer writer(out.output, validation.dataset.str());
        sorter.drain(writer);
        writer.finish();
        out.spilled_runs = sorter.spilled_runs();
        mark_completed(completion_list(config.store_root, validation.dataset), out.output);
        out.ack.consumed_events = out.rows;
        out.ack.target_path = out.output.string();
    } catch (const Error& e) {
        out.ack.status = "error";
        out.ack.error = std::string(to_string(e.code())) + ": " + e.what();
        out.ack.consumed_events = 0;
        out.rows = 0;
    }
    return out;
}

std::uint64_t ack_message_id(const transport::ConsumptionAck& ack, const transport::ObjectUri& validation_uri) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](std::string_view s) {
        for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
        h = (h ^ 0xFF) * 1099511628211ull;
    };
    mix(ack.dataset);
    mix(validation_uri.str());
    mix(ack.status);
    mix(std::to_string(ack.consumed_events));
    return h;
}

void run_loop(transport::Subscription& notices, transport::Channel& acks, const transport::ObjectStoreSet& stores,
              const ConsumerConfig& config, const std::atomic<bool>& stop) {
    while (!stop) {
        auto d = notices.receive(std::chrono::milliseconds(200));
        if (!d) continue;
        transport::ControlMessage msg;
        try {
            msg = transport::ControlMessage::parse(d->body);
        } catch (const Error&) {
            notices.ack(d->id);  // unparseable notices would loop forever
            continue;
        }
        const auto* notice = std::get_if<transport::ValidationNotice>(&msg.body);
        if (notice == nullptr) {
            notices.ack(d->id);
            continue;
        }
        auto outcome = consume_validation(*notice, stores, config);
        transport::ControlMessage reply{ack_message_id(outcome.ack, notice->validation_uri), wall_ms(), outcome.ack};
        try {
            acks.send(config.ack_queue, reply.serialize());
        } catch (const Error&) {
            continue;  // left unacked: the broker redelivers the notice
        }
        notices.ack(d->id);
    }
}

}  // namespace ei::consumer

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

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <thread>

#include "ei/consumer.hpp"
#include "ei/producer.hpp"
#include "ei/rows.hpp"
#include "ei/seqfile.hpp"
#include "ei/supervisor.hpp"
#include "ei/synth.hpp"
#include "fakes.hpp"
#include "test_support.hpp"

namespace ei::consumer {
namespace {

using testing::TempDir;
using transport::ObjectUri;

const DatasetName kDs = DatasetName::parse("data17_13TeV.00330079.physics_Main.merge.AOD.f843_m1824");

struct Pipeline {
    TempDir dir;
    std::shared_ptr<transport::LocalObjectStore> store =
        std::make_shared<transport::LocalObjectStore>(dir / "objects", transport::Backend::Local);
    transport::ObjectStoreSet stores;
    testing::RecordingChannel channel;
    ConsumerConfig config;

    Pipeline() {
        stores.attach(store);
        config.store_root = dir / "store";
    }

    /// One producer job per group of files; returns the object URIs.
    std::vector<ObjectUri> produce(const synth::SynthDataset& ds, const std::vector<std::vector<std::size_t>>& jobs) {
        auto paths = ds.write_inputs(dir / "in" / ds.spec.name.str());
        producer::ProducerEnv env;
        env.stores = &stores;
        env.channel = &channel;
        std::vector<ObjectUri> out;
        for (std::size_t j = 0; j < jobs.size(); ++j) {
            producer::JobConfig c;
            c.task_id = 1;
            c.job_id = j;
            c.dataset = ds.spec.name;
            for (auto f : jobs[j]) c.input_paths.push_back(paths[f]);
            out.push_back(producer::run_producer_job(c, env).object_uri);
        }
        return out;
    }

    transport::ValidationNotice validate(const supervisor::ValidationObject& v, const std::string& key = "v.json") {
        auto receipt = stores.put_with_fallback("ei", "validation/" + key, v.serialize());
        return {v.dataset.str(), receipt.uri};
    }
};

synth::SynthDataset six_files() {
    synth::DatasetSpec spec;
    spec.name = kDs;
    spec.n_files = 6;
    spec.events_per_file = 10;
    spec.seed = 11;
    return synth::generate(spec);
}

std::vector<seq::Row> read_all(const std::filesystem::path& p) {
    seq::Reader r(p);
    std::vector<seq::Row> rows;
    while (auto row = r.next()) rows.push_back(*row);
    return rows;
}

TEST(ConsumerTest, TwoObjectsSixValidFiles) {
    Pipeline p;
    auto ds = six_files();
    auto uris = p.produce(ds, {{0, 1, 2}, {3, 4, 5}});
    supervisor::ValidationObject v{kDs, {}, 60, 1};
    for (std::size_t j = 0; j < 2; ++j) {
        supervisor::ValidationObject::Entry e{uris[j], {}};
        for (std::size_t f = 0; f < 3; ++f) e.valid_guids.push_back(ds.files[3 * j + f].header.guid);
        v.objects.push_back(e);
    }
    auto out = consume_validation(p.validate(v), p.stores, p.config);
    ASSERT_TRUE(out.ack.ok()) << out.ack.error.value_or("");
    EXPECT_EQ(out.ack.consumed_events, 60u);
    EXPECT_EQ(out.rows, 60u);
    EXPECT_EQ(out.output, std::filesystem::absolute(p.config.store_root / "incoming" / "data17_13TeV.00330079" /
                                                    (kDs.str() + ".seq")));
    auto rows = read_all(out.output);
    ASSERT_EQ(rows.size(), 60u);
    EXPECT_TRUE(std::is_sorted(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.key < b.key; }));
    // rows are exactly the generator's events
    std::vector<EventRecord> expected = ds.unique_events();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto key = decode_event_key(rows[i].key);
        EXPECT_EQ(key, expected[i].key);
        EXPECT_EQ(rows[i].value, rows::encode_value(expected[i]));
    }
    auto listed = read_completion_list(completion_list(p.config.store_root, kDs));
    EXPECT_EQ(listed, std::vector<std::filesystem::path>{out.output});
}

TEST(ConsumerTest, NonValidatedGroupIsSkipped) {
    Pipeline p;
    auto ds = six_files();
    auto uris = p.produce(ds, {{0, 1, 2}});
    supervisor::ValidationObject v{kDs, {{uris[0], {ds.files[0].header.guid, ds.files[2].header.guid}}}, 20, 1};
    auto out = consume_validation(p.validate(v), p.stores, p.config);
    ASSERT_TRUE(out.ack.ok());
    EXPECT_EQ(out.ack.consumed_events, 20u);
    EXPECT_EQ(out.skipped_events, 10u);
    for (const auto& row : read_all(out.output))
        EXPECT_NE(rows::RowView::parse(row.key, row.value)[rows::Guid0].substr(0, 36),
                  ds.files[1].header.guid.to_text());
}

TEST(ConsumerTest, MissingObjectYieldsErrorAck) {
    Pipeline p;
    auto ds = six_files();
    supervisor::ValidationObject v{kDs, {{ObjectUri{transport::Backend::Local, "ei", "ei/none.spb"}, {ds.files[0].header.guid}}}, 10, 1};
    auto out = consume_validation(p.validate(v), p.stores, p.config);
    EXPECT_EQ(out.ack.status, "error");
    ASSERT_TRUE(out.ack.error);
    EXPECT_NE(out.ack.error->find("FetchFailure"), std::string::npos);
    EXPECT_EQ(out.ack.consumed_events, 0u);
    EXPECT_FALSE(std::filesystem::exists(output_path(p.config.store_root, kDs)));

    auto missing_validation = consume_validation({kDs.str(), {transport::Backend::Local, "ei", "validation/nope"}}, p.stores, p.config);
    EXPECT_EQ(missing_validation.ack.status, "error");
}

TEST(ConsumerTest, DamagedObjectIsNamed) {
    Pipeline p;
    auto ds = six_files();
    auto uris = p.produce(ds, {{0}});
    auto bytes = p.stores.get(uris[0]);
    auto cut = p.stores.put_with_fallback("ei", "ei/cut.spb", bytes.substr(0, bytes.size() / 2));
    supervisor::ValidationObject v{kDs, {{cut.uri, {ds.files[0].header.guid}}}, 10, 1};
    auto out = consume_validation(p.validate(v), p.stores, p.config);
    EXPECT_EQ(out.ack.status, "error");
    EXPECT_NE(out.ack.error->find("PartialObject"), std::string::npos);
    EXPECT_NE(out.ack.error->find("ei/cut.spb"), std::string::npos);

    // a validated GUID that the object does not carry
    supervisor::ValidationObject wrong{kDs, {{uris[0], {ds.files[3].header.guid}}}, 10, 1};
    auto out2 = consume_validation(p.validate(wrong, "w.json"), p.stores, p.config);
    EXPECT_EQ(out2.ack.status, "error");
    EXPECT_NE(out2.ack.error->find("missing"), std::string::npos);
}

TEST(ConsumerTest, RepeatedNoticeIsIdempotent) {
    Pipeline p;
    auto ds = six_files();
    auto uris = p.produce(ds, {{0, 1}});
    supervisor::ValidationObject v{kDs, {{uris[0], {ds.files[0].header.guid, ds.files[1].header.guid}}}, 20, 1};
    auto notice = p.validate(v);
    auto a = consume_validation(notice, p.stores, p.config);
    auto first = read_all(a.output);
    auto b = consume_validation(notice, p.stores, p.config);
    EXPECT_EQ(read_all(b.output), first);
    EXPECT_EQ(read_completion_list(completion_list(p.config.store_root, kDs)).size(), 1u);
    EXPECT_EQ(ack_message_id(a.ack, notice.validation_uri), ack_message_id(b.ack, notice.validation_uri));
}

TEST(ConsumerTest, DuplicatesKeptInInputOrderAndSpillingAgrees) {
    Pipeline p;
    synth::DatasetSpec spec;
    spec.name = kDs;
    spec.n_files = 2;
    spec.events_per_file = 4000;
    spec.duplicate_rate = 0.01;
    spec.cross_file_duplicate_rate = 0.01;
    auto ds = synth::generate(spec);
    auto uris = p.produce(ds, {{0}, {1}});
    supervisor::ValidationObject v{kDs, {{uris[0], {ds.files[0].header.guid}}, {uris[1], {ds.files[1].header.guid}}},
                                   ds.total_events(), 1};
    auto notice = p.validate(v);
    auto big = consume_validation(notice, p.stores, p.config);
    auto in_memory = read_all(big.output);
    p.config.memory_budget = 100'000;
    auto small = consume_validation(notice, p.stores, p.config);
    EXPECT_GT(small.spilled_runs, 2u);
    EXPECT_EQ(read_all(small.output), in_memory);
    EXPECT_EQ(small.ack.consumed_events, ds.total_events());
    // the first copy of each key is the one the generator considers original
    std::map<std::string, std::string> first;
    for (const auto& r : in_memory) first.emplace(r.key, r.value);
    for (const auto& e : ds.unique_events()) EXPECT_EQ(first.at(encode_event_key(e.key)), rows::encode_value(e));
}

TEST(ConsumerTest, LoopAcksThroughBroker) {
    Pipeline p;
    auto ds = six_files();
    auto uris = p.produce(ds, {{0}});
    supervisor::ValidationObject v{kDs, {{uris[0], {ds.files[0].header.guid}}}, 10, 1};
    auto notice = p.validate(v);
    auto broker = std::make_shared<transport::Broker>(p.dir / "broker");
    broker->send("ei.validation", transport::ControlMessage{1, 1, notice}.serialize());
    broker->send("ei.validation", "garbage");
    std::atomic<bool> stop{false};
    auto sub = broker->subscribe("ei.validation");
    std::thread t([&] { run_loop(*sub, *broker, p.stores, p.config, stop); });
    auto acks = broker->subscribe("ei.reports");
    auto d = acks->receive(std::chrono::seconds(5));
    for (int i = 0; i < 200 && broker->depth("ei.validation") > 0; ++i)
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    stop = true;
    t.join();
    ASSERT_TRUE(d);
    auto msg = transport::ControlMessage::parse(d->body);
    const auto& a = std::get<transport::ConsumptionAck>(msg.body);
    EXPECT_TRUE(a.ok());
    EXPECT_EQ(a.consumed_events, 10u);
    EXPECT_EQ(broker->depth("ei.validation"), 0u);
}

}  // namespace
}  // namespace ei::consumer

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

#include <fstream>
#include <random>

#include "ei/compress.hpp"
#include "ei/supervisor.hpp"
#include "fakes.hpp"
#include "test_support.hpp"

namespace ei::supervisor {
namespace {

using testing::code_of;
using testing::RecordingChannel;
using testing::TempDir;
using transport::ControlMessage;
using transport::JobReport;

const DatasetName kDs = DatasetName::parse("data17_13TeV.00330079.physics_Main.merge.AOD.f843_m1824");
constexpr std::uint64_t kMinute = 60'000;

struct Fixture {
    TempDir dir;
    std::shared_ptr<transport::LocalObjectStore> store =
        std::make_shared<transport::LocalObjectStore>(dir / "objects", transport::Backend::Local);
    transport::ObjectStoreSet stores;
    RecordingChannel channel;
    Registry registry;
    std::vector<Guid> guids;
    std::mt19937_64 rng{5};

    explicit Fixture(std::size_t n_files = 4, std::uint64_t per_file = 10) {
        stores.attach(store);
        RegistryEntry e;
        e.dataset = kDs;
        for (std::size_t i = 0; i < n_files; ++i) {
            guids.push_back(testing::random_guid(rng));
            e.files.push_back({guids.back(), per_file});
        }
        registry.add(e);
    }

    SupervisorConfig config() const {
        SupervisorConfig c;
        c.journal = dir / "journal.jsonl";
        c.notifications = dir / "notifications.jsonl";
        return c;
    }

    Supervisor make() { return Supervisor(registry, config(), &stores, &channel); }
};

ControlMessage report(std::uint64_t task, std::uint64_t job, const std::vector<std::pair<Guid, std::uint64_t>>& files,
                      const DatasetName& ds = kDs) {
    JobReport r;
    r.task_id = task;
    r.job_id = job;
    r.dataset = ds.str();
    r.object_uri = {transport::Backend::Local, "ei", "ei/" + ds.str() + "/" + std::to_string(task) + "." + std::to_string(job) + ".spb"};
    for (const auto& [g, n] : files) r.files.push_back({g, n, n});
    return {transport::report_message_id(task, job, transport::ControlType::JobReport), 0, r};
}

ControlMessage ack(std::uint64_t id, std::uint64_t consumed, bool ok = true) {
    transport::ConsumptionAck a{kDs.str(), consumed, "/store/x.seq", ok ? "ok" : "error",
                                ok ? std::nullopt : std::optional<std::string>("fetch failed")};
    return {id, 0, a};
}

Phase phase_of(const Supervisor& s) { return s.state(kDs)->phase; }

std::uint32_t state_hash(const Supervisor& s) { return crc32(to_json(*s.state(kDs)).dump()); }

TEST(SupervisorTest, TransitionTable) {
    EXPECT_TRUE(legal_transition(Phase::Indexing, Phase::Validating));
    EXPECT_TRUE(legal_transition(Phase::Validating, Phase::Validated));
    EXPECT_TRUE(legal_transition(Phase::Validating, Phase::RetryQueue));
    EXPECT_TRUE(legal_transition(Phase::RetryQueue, Phase::Validating));
    EXPECT_TRUE(legal_transition(Phase::Validated, Phase::Consumed));
    EXPECT_TRUE(legal_transition(Phase::Consumed, Phase::Obsolete));
    EXPECT_TRUE(legal_transition(Phase::Indexing, Phase::Failed));
    EXPECT_FALSE(legal_transition(Phase::Indexing, Phase::Validated));
    EXPECT_FALSE(legal_transition(Phase::Indexing, Phase::Consumed));
    EXPECT_FALSE(legal_transition(Phase::RetryQueue, Phase::Consumed));
    EXPECT_FALSE(legal_transition(Phase::Consumed, Phase::Validating));
    EXPECT_FALSE(legal_transition(Phase::Failed, Phase::Failed));
}

TEST(SupervisorTest, PartialReportsStayIndexing) {
    Fixture f;
    auto sup = f.make();
    sup.handle(report(5, 1, {{f.guids[0], 10}, {f.guids[1], 10}}), 1);
    EXPECT_EQ(phase_of(sup), Phase::Indexing);
    EXPECT_EQ(sup.state(kDs)->per_file_seen.size(), 2u);
    EXPECT_TRUE(f.channel.sent.empty());
}

TEST(SupervisorTest, RedeliveredReportIsIgnored) {
    Fixture f;
    auto sup = f.make();
    auto msg = report(5, 1, {{f.guids[0], 10}});
    sup.handle(msg, 1);
    auto before = state_hash(sup);
    sup.handle(msg, 2);
    sup.handle_raw(msg.serialize(), 3);
    EXPECT_EQ(state_hash(sup), before);
    EXPECT_EQ(sup.state(kDs)->reports.size(), 1u);
}

TEST(SupervisorTest, NewerTaskSupersedes) {
    Fixture f;
    auto sup = f.make();
    sup.handle(report(5, 1, {{f.guids[0], 7}}), 1);
    sup.handle(report(7, 1, {{f.guids[0], 10}}), 2);
    auto seen = sup.state(kDs)->per_file_seen.at(f.guids[0]);
    EXPECT_EQ(seen.task_id, 7u);
    EXPECT_EQ(seen.nevents, 10u);
    sup.handle(report(6, 3, {{f.guids[0], 1}}), 3);  // older task arriving late
    EXPECT_EQ(sup.state(kDs)->per_file_seen.at(f.guids[0]).task_id, 7u);
}

TEST(SupervisorTest, ValidationChecks) {
    Fixture f;
    const auto& entry = f.registry.lookup(kDs);
    DatasetState s;
    s.dataset = kDs;
    for (std::size_t i = 0; i < 4; ++i) s.per_file_seen[f.guids[i]] = {10, 10, 5, 1, {}};
    EXPECT_TRUE(validate_dataset(s, entry).ok());

    s.per_file_seen[f.guids[2]].nevents = 7;
    auto res = validate_dataset(s, entry);
    ASSERT_EQ(res.failures.size(), 1u);
    EXPECT_EQ(res.failures[0].kind, Failure::Kind::CountMismatch);
    EXPECT_EQ(res.failures[0].guid, f.guids[2]);
    EXPECT_EQ(res.failures[0].text(), "count mismatch: " + f.guids[2].to_text());

    s.per_file_seen[f.guids[2]].nevents = 10;
    s.per_file_seen.erase(f.guids[3]);
    res = validate_dataset(s, entry);
    ASSERT_EQ(res.failures.size(), 1u);
    EXPECT_EQ(res.failures[0].kind, Failure::Kind::FileUnprocessed);
    EXPECT_EQ(res.failures[0].guid, f.guids[3]);
}

TEST(SupervisorTest, MissingJobOfLiveTask) {
    Fixture f(2);
    const auto& entry = f.registry.lookup(kDs);
    DatasetState s;
    s.dataset = kDs;
    s.per_file_seen[f.guids[0]] = {10, 10, 5, 1, {}};
    s.per_file_seen[f.guids[1]] = {10, 10, 5, 1, {}};
    s.reports.push_back(std::get<JobReport>(report(5, 1, {}).body));
    TaskStatus t;
    t.task_id = 5;
    t.dataset = kDs;
    t.state = TaskStatus::State::Done;
    t.expected_jobs = {1, 2};
    auto res = validate_dataset(s, entry, {t});
    ASSERT_EQ(res.failures.size(), 1u);
    EXPECT_EQ(res.failures[0].kind, Failure::Kind::JobMissing);
    EXPECT_EQ(res.failures[0].job_id, 2u);
    t.state = TaskStatus::State::Obsolete;
    EXPECT_TRUE(validate_dataset(s, entry, {t}).ok());
}

TEST(SupervisorTest, ValidationObjectPartitionsFilesByJob) {
    Fixture f(6);
    auto sup = f.make();
    for (std::uint64_t job = 0; job < 3; ++job)
        sup.handle(report(5, job, {{f.guids[2 * job], 10}, {f.guids[2 * job + 1], 10}}), 10 + job);
    ASSERT_EQ(phase_of(sup), Phase::Validated);
    auto notices = f.channel.messages("ei.validation");
    ASSERT_EQ(notices.size(), 1u);
    const auto& notice = std::get<transport::ValidationNotice>(notices[0].body);
    EXPECT_EQ(notice.dataset, kDs.str());
    EXPECT_EQ(*sup.state(kDs)->validation_uri, notice.validation_uri);
    auto v = ValidationObject::parse(f.stores.get(notice.validation_uri));
    EXPECT_EQ(v.expected_events, 60u);
    ASSERT_EQ(v.objects.size(), 3u);
    std::set<Guid> all;
    for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_EQ(v.objects[j].uri.key, "ei/" + kDs.str() + "/5." + std::to_string(j) + ".spb");
        EXPECT_EQ(v.objects[j].valid_guids, (std::vector<Guid>{f.guids[2 * j], f.guids[2 * j + 1]}));
        all.insert(v.objects[j].valid_guids.begin(), v.objects[j].valid_guids.end());
    }
    EXPECT_EQ(all.size(), 6u);
    EXPECT_EQ(ValidationObject::parse(v.serialize()), v);
}

TEST(SupervisorTest, StoreDownAtEmitRetriesLater) {
    Fixture f(1);
    auto sup = f.make();
    f.store->set_available(false);
    sup.handle(report(5, 1, {{f.guids[0], 10}}), 0);
    EXPECT_EQ(phase_of(sup), Phase::RetryQueue);
    EXPECT_TRUE(sup.retry_sweep(kMinute / 2).empty());  // still backing off
    f.store->set_available(true);
    auto redone = sup.retry_sweep(kMinute);
    ASSERT_EQ(redone.size(), 1u);
    EXPECT_EQ(phase_of(sup), Phase::Validated);
}

TEST(SupervisorTest, BrokerDownAtEmitRetriesWithFreshObject) {
    Fixture f(1);
    auto sup = f.make();
    f.channel.failures_left = 1;
    sup.handle(report(5, 1, {{f.guids[0], 10}}), 0);
    EXPECT_EQ(phase_of(sup), Phase::RetryQueue);
    sup.retry_sweep(kMinute);
    EXPECT_EQ(phase_of(sup), Phase::Validated);
    EXPECT_EQ(sup.state(kDs)->validation_uri->key, "validation/" + kDs.str() + "/2.json");
}

TEST(SupervisorTest, ConsumptionAckOutcomes) {
    {
        Fixture f(1);
        auto sup = f.make();
        sup.handle(report(5, 1, {{f.guids[0], 10}}), 0);
        sup.handle(ack(900, 10), 1);
        EXPECT_EQ(phase_of(sup), Phase::Consumed);
        sup.handle(ack(901, 10), 2);  // late duplicate ack: harmless
        EXPECT_EQ(phase_of(sup), Phase::Consumed);
        EXPECT_TRUE(sup.quarantine().empty());
    }
    {
        Fixture f(4);
        auto sup = f.make();
        sup.handle(report(5, 1, {{f.guids[0], 10}, {f.guids[1], 10}, {f.guids[2], 10}, {f.guids[3], 10}}), 0);
        sup.handle(ack(900, 30), 1);
        EXPECT_EQ(phase_of(sup), Phase::RetryQueue);
        auto notes = sup.notifications();
        ASSERT_EQ(notes.size(), 1u);
        EXPECT_EQ(notes[0]["kind"], "discrepancy");
        EXPECT_EQ(notes[0]["expected"], 40);
        EXPECT_EQ(notes[0]["consumed"], 30);
        std::ifstream log(f.dir / "notifications.jsonl");
        std::string line;
        EXPECT_TRUE(std::getline(log, line));
    }
    {
        Fixture f(1);
        auto sup = f.make();
        sup.handle(report(5, 1, {{f.guids[0], 10}}), 0);
        sup.handle(ack(900, 0, false), 1);
        EXPECT_EQ(phase_of(sup), Phase::RetryQueue);
        sup.retry_sweep(kMinute + 1);
        EXPECT_EQ(phase_of(sup), Phase::Validated);
        EXPECT_EQ(f.channel.messages("ei.validation").size(), 2u);  // notice re-sent
        sup.handle(ack(902, 10), 2 * kMinute);
        EXPECT_EQ(phase_of(sup), Phase::Consumed);
    }
}

TEST(SupervisorTest, LateReportValidatesOnNextSweep) {
    Fixture f(2);
    auto sup = f.make();
    sup.handle(report(5, 1, {{f.guids[0], 10}, {f.guids[1], 8}}), 0);
    EXPECT_EQ(phase_of(sup), Phase::RetryQueue);
    EXPECT_EQ(sup.state(kDs)->last_failures, std::vector<std::string>{"count mismatch: " + f.guids[1].to_text()});
    sup.handle(report(6, 1, {{f.guids[1], 10}}), 10);
    EXPECT_EQ(phase_of(sup), Phase::RetryQueue);
    sup.retry_sweep(kMinute);
    EXPECT_EQ(phase_of(sup), Phase::Validated);
}

TEST(SupervisorTest, PersistentFailureEndsFailedAfterMaxRetries) {
    Fixture f(1);
    auto sup = f.make();
    sup.handle(report(5, 1, {{f.guids[0], 9}}), 0);
    std::uint64_t now = 0;
    std::vector<std::uint64_t> waits;
    int sweeps = 0;
    while (phase_of(sup) == Phase::RetryQueue) {
        auto next = sup.state(kDs)->next_retry_ms;
        waits.push_back((next - now) / kMinute);
        now = next;
        sup.retry_sweep(now);
        ++sweeps;
    }
    EXPECT_EQ(phase_of(sup), Phase::Failed);
    EXPECT_EQ(sweeps, 10);
    EXPECT_EQ(waits, (std::vector<std::uint64_t>{1, 2, 4, 8, 16, 32, 60, 60, 60, 60}));
    auto notes = sup.notifications();
    ASSERT_FALSE(notes.empty());
    EXPECT_EQ(notes.back()["kind"], "failed");
}

TEST(SupervisorTest, EmptySweep) {
    Fixture f;
    auto sup = f.make();
    EXPECT_TRUE(sup.retry_sweep(1'000'000).empty());
}

TEST(SupervisorTest, AckTimeoutRequeues) {
    Fixture f(1);
    auto cfg = f.config();
    cfg.ack_timeout = std::chrono::minutes(30);
    Supervisor sup(f.registry, cfg, &f.stores, &f.channel);
    sup.handle(report(5, 1, {{f.guids[0], 10}}), 0);
    sup.retry_sweep(29 * kMinute);
    EXPECT_EQ(phase_of(sup), Phase::Validated);
    sup.retry_sweep(30 * kMinute);
    EXPECT_EQ(phase_of(sup), Phase::RetryQueue);
}

TEST(SupervisorTest, QuarantineNeverThrows) {
    Fixture f;
    auto sup = f.make();
    EXPECT_NO_THROW(sup.handle_raw("garbage", 0));
    EXPECT_NO_THROW(sup.handle(report(1, 1, {{f.guids[0], 10}}, DatasetName::parse("data17_13TeV.00999999.physics_Main.merge.AOD.f1_m1")), 0));
    EXPECT_NO_THROW(sup.handle(ack(77, 10), 0));
    EXPECT_EQ(sup.quarantine().size(), 3u);
    EXPECT_FALSE(sup.state(kDs));
}

TEST(SupervisorTest, BadRegistryStatusGoesObsolete) {
    Fixture f(1);
    auto entry = f.registry.lookup(kDs);
    entry.status = DatasetStatus::Bad;
    f.registry.add(entry);
    auto sup = f.make();
    sup.handle(report(5, 1, {{f.guids[0], 10}}), 0);
    EXPECT_EQ(phase_of(sup), Phase::Obsolete);
    EXPECT_TRUE(f.channel.sent.empty());
}

TEST(SupervisorTest, DuplicateAlertNotifies) {
    Fixture f;
    auto sup = f.make();
    sup.handle({42, 0, transport::DuplicateAlert{kDs.str(), 3, {{330079, 1}, {330079, 2}}}}, 5);
    auto notes = sup.notifications();
    ASSERT_EQ(notes.size(), 1u);
    EXPECT_EQ(notes[0]["kind"], "duplicates");
    EXPECT_EQ(notes[0]["n_keys"], 2);
}

TEST(SupervisorTest, JournalReplayRestoresState) {
    Fixture f(2);
    {
        auto sup = f.make();
        sup.handle(report(5, 1, {{f.guids[0], 10}}), 1);
        sup.handle(report(5, 2, {{f.guids[1], 10}}), 2);
        EXPECT_EQ(phase_of(sup), Phase::Validated);
    }
    auto sup = f.make();
    ASSERT_TRUE(sup.state(kDs));
    EXPECT_EQ(phase_of(sup), Phase::Validated);
    sup.handle(report(5, 2, {{f.guids[1], 10}}), 3);  // redelivery after restart stays deduplicated
    EXPECT_EQ(sup.state(kDs)->reports.size(), 2u);
    sup.handle(ack(500, 20), 4);
    EXPECT_EQ(phase_of(sup), Phase::Consumed);
}

TEST(SupervisorTest, TaskStatusDrivesValidationAndObsolescence) {
    Fixture f(2);
    auto cfg = f.config();
    cfg.task_status = f.dir / "tasks.tsv";
    {
        std::ofstream out(*cfg.task_status);
        out << "5\t" << kDs.str() << "\tRUNNING\t1,2\n";
    }
    Supervisor sup(f.registry, cfg, &f.stores, &f.channel);
    sup.handle(report(5, 1, {{f.guids[0], 10}}), 0);
    sup.retry_sweep(1);
    EXPECT_EQ(phase_of(sup), Phase::Indexing);
    {
        std::ofstream out(*cfg.task_status);
        out << "5\t" << kDs.str() << "\tDONE\t1,2\n";
    }
    sup.retry_sweep(2);
    EXPECT_EQ(phase_of(sup), Phase::RetryQueue);
    auto failures = sup.state(kDs)->last_failures;
    EXPECT_NE(std::find(failures.begin(), failures.end(), "job missing: task 5 job 2"), failures.end());
    EXPECT_NE(std::find(failures.begin(), failures.end(), "file unprocessed: " + f.guids[1].to_text()), failures.end());
    {
        std::ofstream out(*cfg.task_status);
        out << "5\t" << kDs.str() << "\tOBSOLETE\t1,2\n6\t" << kDs.str() << "\tDONE\t1\n";
    }
    sup.handle(report(6, 1, {{f.guids[0], 10}, {f.guids[1], 10}}), 3);
    sup.retry_sweep(10 * kMinute);
    EXPECT_EQ(phase_of(sup), Phase::Validated);
    auto st = sup.state(kDs);
    ASSERT_TRUE(st);
    for (const auto& [g, seen] : st->per_file_seen) EXPECT_EQ(seen.task_id, 6u);
}

TEST(SupervisorTest, StatusDocuments) {
    Fixture f(2);
    auto sup = f.make();
    sup.handle(report(5, 1, {{f.guids[0], 10}}), 0);
    auto all = sup.status_json();
    ASSERT_EQ(all.size(), 1u);
    EXPECT_EQ(all[0]["phase"], "INDEXING");
    EXPECT_EQ(all[0]["files_seen"], 1);
    EXPECT_EQ(all[0]["files_expected"], 2);
    auto one = sup.status_json(kDs);
    ASSERT_EQ(one["files"].size(), 2u);
    EXPECT_EQ(one["files"][0]["nevents"], 10);
    EXPECT_FALSE(one["files"][1].contains("nevents"));
    EXPECT_EQ(code_of([&] { sup.status_json(DatasetName::parse("a.00000001.b.c.AOD.d")); }), ErrorCode::UnknownDataset);
}

TEST(SupervisorTest, StateJsonRoundTrip) {
    Fixture f(2);
    auto sup = f.make();
    sup.handle(report(5, 1, {{f.guids[0], 10}, {f.guids[1], 10}}), 7);
    auto s = *sup.state(kDs);
    EXPECT_EQ(state_from_json(to_json(s)), s);
}

}  // namespace
}  // namespace ei::supervisor

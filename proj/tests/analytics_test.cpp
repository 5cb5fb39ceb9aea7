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
#include <map>
#include <random>
#include <set>
#include <unordered_set>

#include "ei/analytics.hpp"
#include "store_support.hpp"
#include "test_support.hpp"

namespace ei::eio {
namespace {

using testing::code_of;
using testing::TempDir;

DatasetName name_of(const std::string& s) { return DatasetName::parse(s); }

const DatasetName kAod = name_of("data17_13TeV.00330079.physics_Main.merge.AOD.f843_m1824");

synth::DatasetSpec spec_for(const DatasetName& n, std::size_t events, std::size_t files = 2, std::uint64_t seed = 5) {
    synth::DatasetSpec s;
    s.name = n;
    s.seed = seed;
    s.n_files = files;
    s.events_per_file = events / files;
    s.with_trigger = false;
    return s;
}

synth::DatasetSpec numbered(const DatasetName& n, std::vector<std::uint64_t> events, std::uint64_t seed = 5) {
    auto s = spec_for(n, events.size(), 1, seed);
    s.event_numbers = std::move(events);
    return s;
}

struct EioFixture : ::testing::Test {
    TempDir dir;
    std::filesystem::path root = dir / "store";
    mapstore::Store store{root, store_options()};
    Eio eio{dir / "eio"};

    static mapstore::StoreOptions store_options() {
        mapstore::StoreOptions o;
        o.events.block_size = 64u << 10;
        return o;
    }
    ImportSummary load(const synth::SynthDataset& ds, const ImportOptions& o = {}) { return load_into(eio, ds, o); }
    ImportSummary load_into(Eio& target, const synth::SynthDataset& ds, const ImportOptions& o = {}) {
        store.import_dataset(testing::write_consumer_output(ds, root));
        return target.import_dataset(store, ds.spec.name.str(), o);
    }
    synth::SynthDataset load_spec(const synth::DatasetSpec& s) {
        auto ds = synth::generate(s);
        load(ds);
        return ds;
    }
};

using EioImport = EioFixture;

TEST_F(EioImport, CleanDatasetStoresEveryUniqueEvent) {
    auto ds = load_spec(spec_for(kAod, 2000));
    auto id = ds.dataset_id();
    auto evs = eio.events(id);
    ASSERT_EQ(evs.size(), ds.unique_keys().size());
    EXPECT_TRUE(eio.duplicates(id).empty());
    auto unique = ds.unique_events();
    for (std::size_t i = 0; i < evs.size(); ++i) {
        EXPECT_EQ(evs[i].run, unique[i].key.run);
        EXPECT_EQ(evs[i].event, unique[i].key.event);
        EXPECT_EQ(evs[i].lbn, unique[i].lbn);
        EXPECT_EQ(evs[i].bcid, unique[i].bcid);
        EXPECT_EQ(evs[i].guids[0], unique[i].locations[0].guid);
        EXPECT_EQ(evs[i].guids[1], unique[i].locations[1].guid);
        EXPECT_EQ(evs[i].ref_flags, kRefPresent0 | kRefPresent1);
        EXPECT_TRUE(evs[i].guids[2].is_nil());
    }
    auto row = eio.dataset(id);
    ASSERT_TRUE(row);
    EXPECT_EQ(row->stored_events, 2000u);
    EXPECT_EQ(row->unique_guids, 2u);
    EXPECT_EQ(row->guid_types, (std::vector<std::string>{"AOD", "RAW"}));
    EXPECT_EQ(row->rank, 1u);
    EXPECT_FALSE(row->has_duplicates);
    // single dataset: report counts equal the mapstore catalog
    auto rep = eio.dataset_report();
    ASSERT_EQ(rep.size(), 1u);
    EXPECT_EQ(rep[0].mapstore_rows, store.catalog().find(kAod.str())->n_rows);
    EXPECT_EQ(rep[0].stored_events, rep[0].mapstore_rows);
}

TEST_F(EioImport, DuplicatesKeepOneCopyAndConserveCounts) {
    auto s = spec_for(kAod, 4000, 4);
    s.duplicate_rate = 0.01;
    s.cross_file_duplicate_rate = 0.01;
    auto ds = synth::generate(s);
    ASSERT_FALSE(ds.duplicates.empty());
    auto sum = load(ds);
    auto id = ds.dataset_id();
    EXPECT_EQ(sum.duplicates, ds.duplicates.size());
    EXPECT_EQ(eio.events(id).size(), ds.unique_keys().size());
    auto extras = eio.duplicates(id);
    std::multiset<std::pair<std::uint32_t, std::uint64_t>> got, want;
    for (const auto& d : extras) {
        got.emplace(d.run, d.event);
        EXPECT_GE(d.occurrence, 1u);
    }
    for (const auto& d : ds.duplicates) want.emplace(d.key.run, d.key.event);
    EXPECT_EQ(got, want);
    // conservation
    auto row = *eio.dataset(id);
    EXPECT_EQ(row.mapstore_rows, row.stored_events);
    EXPECT_EQ(row.stored_events + row.total_duplicates, ds.total_events());
    EXPECT_EQ(row.unique_duplicates, std::set(want.begin(), want.end()).size());
    EXPECT_TRUE(row.has_duplicates);
}

TEST_F(EioImport, CalibrationStreamsAndDisallowedRunsAreSkipped) {
    EioConfig cfg;
    cfg.run_allowlist = std::set<std::uint32_t>{330079};
    Eio filtered(dir / "filtered", cfg);
    auto calib = synth::generate(spec_for(name_of("data17_13TeV.00330079.calibration_LArCells.merge.RAW.f843"), 100));
    auto sum = load_into(filtered, calib);
    EXPECT_EQ(sum.status, ImportStatus::FilteredOut);
    EXPECT_FALSE(std::filesystem::exists(filtered.partition_path(calib.dataset_id())));

    auto other = synth::generate(spec_for(name_of("data17_13TeV.00330080.physics_Main.merge.AOD.f843_m1824"), 100));
    EXPECT_EQ(load_into(filtered, other).status, ImportStatus::FilteredOut);

    auto ok = synth::generate(spec_for(kAod, 100));
    EXPECT_EQ(load_into(filtered, ok).status, ImportStatus::Imported);
    EXPECT_EQ(filtered.datasets().size(), 1u);
}

TEST(EioConfigFile, AllowlistIgnoresComments) {
    TempDir dir;
    std::ofstream(dir / "runs.txt") << "# good runs\n330079\n330080 # late\n\n";
    EXPECT_EQ(EioConfig::load_allowlist(dir / "runs.txt"), (std::set<std::uint32_t>{330079, 330080}));
}

TEST_F(EioImport, RequiresValidListedDataset) {
    EXPECT_EQ(code_of([&] { eio.import_dataset(store, kAod.str()); }), ErrorCode::UnknownEntry);
    auto ds = synth::generate(spec_for(kAod, 100));
    auto seq = testing::write_consumer_output(ds, root);
    store.import_dataset(seq);
    std::filesystem::remove(consumer::completion_list(root, kAod));
    EXPECT_EQ(code_of([&] { eio.import_dataset(store, kAod.str()); }), ErrorCode::InvalidArgument);
}

TEST_F(EioImport, ForeignRunRowsFailVerificationAndLeaveNoTrace) {
    auto ds = synth::generate(spec_for(kAod, 200));
    ds.files[1].events.back().key.run = 330080;
    ds.files[1].events.back().key.event = 1;
    load_spec(spec_for(name_of("data17_13TeV.00330079.physics_Main.merge.AOD.f843_m1825"), 50));
    store.import_dataset(testing::write_consumer_output(ds, root));
    EXPECT_EQ(code_of([&] { eio.import_dataset(store, kAod.str()); }), ErrorCode::VerificationFailure);
    EXPECT_FALSE(std::filesystem::exists(eio.partition_path(ds.dataset_id())));
    EXPECT_FALSE(eio.dataset(ds.dataset_id()));
    EXPECT_TRUE(std::filesystem::is_empty(eio.root() / "staging"));
    EXPECT_TRUE(eio.overlaps(330079).empty());
}

TEST_F(EioImport, DropPartitionRemovesOneDatasetAndItsOverlaps) {
    auto a = load_spec(spec_for(kAod, 1000));
    auto b = load_spec(numbered(name_of("data17_13TeV.00330079.physics_Main.deriv.DAOD_PHYS.f843_m1824_p3372"),
                                {1, 2, 3, 500, 5000}));
    ASSERT_EQ(eio.overlaps(330079).size(), 1u);
    EXPECT_EQ(eio.overlaps(330079)[0].common, 4u);
    auto before = eio.events(a.dataset_id());

    eio.drop_partition(b.dataset_id());
    EXPECT_FALSE(std::filesystem::exists(eio.partition_path(b.dataset_id())));
    EXPECT_TRUE(eio.overlaps(330079).empty());
    EXPECT_EQ(eio.events(a.dataset_id()), before);
    EXPECT_EQ(eio.datasets().size(), 1u);
    EXPECT_EQ(code_of([&] { eio.events(b.dataset_id()); }), ErrorCode::UnknownPartition);
    EXPECT_EQ(code_of([&] { eio.drop_partition(b.dataset_id()); }), ErrorCode::UnknownPartition);
    EXPECT_EQ(code_of([&] { eio.drop_partition(12345); }), ErrorCode::UnknownPartition);

    // re-import after losing a file: fresh rows, fresh aggregates
    eio.drop_partition(a.dataset_id());
    auto shrunk = a;
    shrunk.files.pop_back();
    store.import_dataset(testing::write_consumer_output(shrunk, root), {.supersede = true});
    eio.import_dataset(store, kAod.str());
    EXPECT_EQ(eio.events(a.dataset_id()).size(), 500u);
    EXPECT_EQ(eio.dataset(a.dataset_id())->stored_events, 500u);
    EXPECT_EQ(eio.dataset(a.dataset_id())->unique_guids, 1u);
}

TEST(EioPartition, GuidRawRoundTrip) {
    std::mt19937_64 rng(11);
    std::vector<EventRow> rows;
    std::vector<std::string> texts{"21EC2020-3AEA-4069-A2DD-08002B30309D"};
    for (int i = 1; i < 10000; ++i) texts.push_back(testing::random_guid(rng).to_text());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        EventRow e;
        e.run = 7;
        e.event = i * 3 + rng() % 3;
        e.lbn = static_cast<std::uint32_t>(i / 100 + 1);
        e.bcid = static_cast<std::uint16_t>(rng() % 3564 + 1);
        e.ref_flags = kRefPresent0 | (i % 2 ? kRefPresent2 : 0);
        e.guids[0] = Guid::from_text(texts[i]);
        if (i % 2) e.guids[2] = Guid::from_text(texts[(i * 7) % texts.size()]);
        rows.push_back(e);
    }
    std::uint32_t id = 0;
    auto back = decode_partition(encode_partition(99, rows), &id);
    EXPECT_EQ(id, 99u);
    ASSERT_EQ(back, rows);
    for (std::size_t i = 0; i < texts.size(); ++i) EXPECT_EQ(back[i].guids[0].to_text(), texts[i]);
    EXPECT_EQ(back[0].guids[0].raw(), std::string("\x21\xEC\x20\x20\x3A\xEA\x40\x69\xA2\xDD\x08\x00\x2B\x30\x30\x9D", 16));
}

TEST(EioPartition, DamageIsDetected) {
    std::vector<EventRow> rows(50);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].event = i;
    auto bytes = encode_partition(1, rows);
    std::mt19937_64 rng(3);
    for (int t = 0; t < 200; ++t) {
        auto bad = bytes;
        bad[rng() % bad.size()] ^= static_cast<char>(1 + rng() % 255);
        auto code = code_of([&] { decode_partition(bad); });
        if (!code) continue;  // dataset id bytes carry no checksum
        EXPECT_TRUE(*code == ErrorCode::CorruptData || *code == ErrorCode::ChecksumMismatch) << t;
    }
}

TEST_F(EioImport, EventsPartitionIsCompact) {
    auto s = spec_for(kAod, 20000, 4);
    s.upstream_refs = 2;
    auto ds = synth::generate(s);
    auto sum = load(ds);
    double per_event = double(sum.partition_bytes) / double(sum.events);
    RecordProperty("bytes_per_event", std::to_string(per_event));
    EXPECT_LE(per_event, 64.0);
    EXPECT_EQ(std::filesystem::file_size(eio.partition_path(ds.dataset_id())), sum.partition_bytes);
}

// ---- overlaps ----

using EioOverlaps = EioFixture;

const DatasetName kA = name_of("data17_13TeV.00330079.physics_Main.deriv.DAOD_A.f1_m1_p1");
const DatasetName kB = name_of("data17_13TeV.00330079.physics_Main.deriv.DAOD_B.f1_m1_p1");

TEST_F(EioOverlaps, ThreeEventSetsFallBelowThreshold) {
    auto a = load_spec(numbered(kA, {1, 2, 3}));
    auto b = load_spec(numbered(kB, {2, 3, 4}));
    auto rep = eio.dataset_overlaps(330079);
    EXPECT_EQ(rep.algorithm, OverlapAlgorithm::AOverMin);
    EXPECT_EQ(rep.threshold, 70);
    ASSERT_EQ(rep.cells.size(), 2u);
    auto* c = rep.cell(a.dataset_id(), b.dataset_id());
    ASSERT_TRUE(c);
    EXPECT_EQ(c->common, 2u);
    EXPECT_NEAR(c->percent, 66.7, 0.05);
    EXPECT_FALSE(c->above);
    EXPECT_NE(rep.to_csv().find(",2,66.7,0\n"), std::string::npos);
}

TEST_F(EioOverlaps, IdenticalDatasetsOverlapFully) {
    auto a = load_spec(numbered(kA, {5, 6, 7, 8}));
    auto b = load_spec(numbered(kB, {5, 6, 7, 8}, 9));
    for (auto alg : {OverlapAlgorithm::AOverLeft, OverlapAlgorithm::AOverMin}) {
        auto rep = eio.dataset_overlaps(330079, alg);
        EXPECT_EQ(rep.cell(a.dataset_id(), b.dataset_id())->percent, 100.0);
        EXPECT_EQ(rep.cell(b.dataset_id(), a.dataset_id())->percent, 100.0);
        EXPECT_TRUE(rep.cell(a.dataset_id(), b.dataset_id())->above);
    }
}

TEST_F(EioOverlaps, LeftAlgorithmIsAsymmetric) {
    auto a = load_spec(numbered(kA, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}));
    auto b = load_spec(numbered(kB, {1, 2, 3, 4}));
    auto left = eio.dataset_overlaps(330079, OverlapAlgorithm::AOverLeft);
    EXPECT_DOUBLE_EQ(left.cell(a.dataset_id(), b.dataset_id())->percent, 40.0);
    EXPECT_DOUBLE_EQ(left.cell(b.dataset_id(), a.dataset_id())->percent, 100.0);
    auto min = eio.dataset_overlaps(330079, OverlapAlgorithm::AOverMin);
    EXPECT_DOUBLE_EQ(min.cell(a.dataset_id(), b.dataset_id())->percent, 100.0);
    EXPECT_EQ(left.cell(a.dataset_id(), b.dataset_id())->common, left.cell(b.dataset_id(), a.dataset_id())->common);
    EXPECT_EQ(overlap_algorithm_from_string(to_string(OverlapAlgorithm::AOverLeft)), OverlapAlgorithm::AOverLeft);
    EXPECT_EQ(code_of([] { overlap_algorithm_from_string("A_OVER_MAX"); }), ErrorCode::InvalidArgument);
}

TEST_F(EioOverlaps, RandomDatasetsMatchSetIntersectionOracle) {
    std::mt19937_64 rng(77);
    std::vector<std::pair<std::uint32_t, std::unordered_set<std::uint64_t>>> sets;
    for (int d = 0; d < 5; ++d) {
        std::set<std::uint64_t> ev;
        while (ev.size() < 10000) ev.insert(1 + rng() % 30000);
        auto n = name_of("data17_13TeV.00330079.physics_Main.deriv.DAOD_R" + std::to_string(d) + ".f1_m1_p1");
        auto ds = load_spec(numbered(n, {ev.begin(), ev.end()}, 100 + d));
        sets.emplace_back(ds.dataset_id(), std::unordered_set<std::uint64_t>(ev.begin(), ev.end()));
    }
    auto rows = eio.overlaps(330079);
    ASSERT_EQ(rows.size(), 10u);
    for (const auto& [ia, sa] : sets)
        for (const auto& [ib, sb] : sets) {
            if (ia >= ib) continue;
            std::uint64_t n = 0;
            for (auto e : sa) n += sb.count(e);
            auto it = std::find_if(rows.begin(), rows.end(), [&](const OverlapRow& o) { return o.a == ia && o.b == ib; });
            ASSERT_NE(it, rows.end());
            EXPECT_EQ(it->common, n);
        }
    // materialized rows equal on-demand recomputation
    EXPECT_EQ(eio.recompute_overlaps(330079), rows);
    for (const auto& [id, _] : sets) EXPECT_EQ(eio.lbn_counts(id), Eio::lbn_counts_of(id, eio.events(id)));
}

// ---- duplicates ----

using EioDuplicates = EioFixture;

TEST_F(EioDuplicates, ConstructedCaseShowsBothGuids) {
    auto s = spec_for(kAod, 100, 2);
    s.events_per_lbn = 10;
    auto ds = synth::generate(s);
    auto copy = ds.files[1].events[10];  // event 61, LBN 7
    ASSERT_EQ(copy.lbn, 7u);
    copy.locations[0].guid = ds.files[0].header.guid;
    ds.files[0].events.push_back(copy);
    load(ds);
    auto rep = eio.duplicate_report(kAod.str());
    ASSERT_EQ(rep.size(), 1u);
    EXPECT_EQ(rep[0].lbn, 7u);
    ASSERT_EQ(rep[0].keys.size(), 1u);
    const auto& copies = rep[0].keys[0];
    ASSERT_EQ(copies.size(), 2u);
    EXPECT_EQ(copies[0].event, 61u);
    EXPECT_EQ(copies[0].occurrence, 0u);
    EXPECT_EQ(copies[1].occurrence, 1u);
    std::set<std::string> guids{copies[0].guid_refs.at(0), copies[1].guid_refs.at(0)};
    EXPECT_EQ(guids, (std::set<std::string>{ds.files[0].header.guid.to_text(), ds.files[1].header.guid.to_text()}));
    for (const auto& c : copies) EXPECT_EQ(c.lbn, 7u);
}

TEST_F(EioDuplicates, CleanDatasetGivesEmptyReport) {
    load_spec(spec_for(kAod, 300));
    EXPECT_TRUE(eio.duplicate_report(kAod.str()).empty());
    EXPECT_EQ(code_of([&] { eio.duplicate_report("data17_13TeV.00330079.physics_Main.merge.AOD.x1"); }),
              ErrorCode::UnknownEntry);
}

TEST_F(EioDuplicates, RandomInjectionMatchesLedger) {
    auto s = spec_for(kAod, 6000, 6, 31);
    s.events_per_lbn = 250;
    s.duplicate_rate = 0.005;
    s.cross_file_duplicate_rate = 0.005;
    auto ds = synth::generate(s);
    load(ds);
    std::map<std::pair<std::uint32_t, std::uint64_t>, std::vector<std::size_t>> ledger;  // key -> copy files
    for (const auto& d : ds.duplicates) ledger[{d.key.run, d.key.event}].push_back(d.copy_file);
    std::map<std::pair<std::uint32_t, std::uint64_t>, std::uint32_t> lbn_of;
    for (const auto& e : ds.unique_events()) lbn_of[{e.key.run, e.key.event}] = e.lbn;

    std::size_t keys = 0;
    for (const auto& g : eio.duplicate_report(kAod.str())) {
        for (const auto& copies : g.keys) {
            ++keys;
            auto k = std::pair(copies[0].run, copies[0].event);
            ASSERT_TRUE(ledger.count(k));
            EXPECT_EQ(copies.size(), ledger[k].size() + 1);
            EXPECT_EQ(g.lbn, lbn_of[k]);
            std::multiset<std::string> got, want;
            for (std::size_t i = 1; i < copies.size(); ++i) got.insert(copies[i].guid_refs.at(0));
            for (auto f : ledger[k]) want.insert(ds.files[f].header.guid.to_text());
            EXPECT_EQ(got, want);
        }
    }
    EXPECT_EQ(keys, ledger.size());
}

// ---- missing events ----

using EioMissing = EioFixture;

const DatasetName kRef = name_of("data17_13TeV.00330079.physics_Main.merge.AOD.f843_m1824");
const DatasetName kLossy = name_of("data17_13TeV.00330079.physics_Main.merge.AOD.f843_m1900");

TEST_F(EioMissing, ConstructedGapIsOneRangeInOneLbn) {
    auto rs = spec_for(kRef, 300, 2);
    rs.events_per_lbn = 50;
    load_spec(rs);
    std::vector<std::uint64_t> kept;
    for (std::uint64_t e = 1; e <= 300; ++e)
        if (e < 110 || e > 119) kept.push_back(e);
    load_spec(numbered(kLossy, kept));
    auto rep = eio.missing_event_report(kLossy.str(), kRef.str());
    EXPECT_EQ(rep.missing, 10u);
    ASSERT_EQ(rep.ranges.size(), 1u);
    EXPECT_EQ(rep.ranges[0], (MissingRange{110, 119, {3}}));
    ASSERT_GE(rep.stages.size(), 2u);
    EXPECT_EQ(rep.stages[0].expected, 300u);
    EXPECT_EQ(rep.stages[0].actual, 290u);
    // default reference is the largest sibling
    EXPECT_EQ(eio.missing_event_report(kLossy.str()).reference, kRef.str());
    EXPECT_TRUE(eio.missing_event_report(kRef.str(), kLossy.str()).ranges.empty());
}

TEST_F(EioMissing, IdenticalDatasetIsClean) {
    load_spec(spec_for(kRef, 200));
    load_spec(spec_for(kLossy, 200, 2, 8));
    auto rep = eio.missing_event_report(kLossy.str(), kRef.str());
    EXPECT_EQ(rep.missing, 0u);
    EXPECT_TRUE(rep.ranges.empty());
}

TEST_F(EioMissing, NoReferenceWithoutSibling) {
    load_spec(spec_for(kRef, 100));
    EXPECT_EQ(code_of([&] { eio.missing_event_report(kRef.str()); }), ErrorCode::NoReference);
    load_spec(spec_for(name_of("data17_13TeV.00330079.physics_Late.merge.AOD.f843_m1824"), 100));
    EXPECT_EQ(code_of([&] { eio.missing_event_report(kRef.str()); }), ErrorCode::NoReference);
    EXPECT_EQ(code_of([&] {
                  eio.missing_event_report(kRef.str(), "data17_13TeV.00330079.physics_Late.merge.AOD.f843_m1824");
              }),
              ErrorCode::NoReference);
}

TEST_F(EioMissing, RandomDeletionsMatchDifferenceOracle) {
    auto rs = spec_for(kRef, 5000, 2);
    rs.events_per_lbn = 400;
    auto ref = load_spec(rs);
    std::mt19937_64 rng(9);
    std::vector<std::uint64_t> kept;
    std::vector<std::uint64_t> gone;
    for (std::uint64_t e = 1; e <= 5000; ++e) {
        bool in_hole = (e / 37) % 11 == 3;
        if (in_hole || rng() % 50 == 0) {
            gone.push_back(e);
        } else {
            kept.push_back(e);
        }
    }
    load_spec(numbered(kLossy, kept));
    std::map<std::uint64_t, std::uint32_t> lbn;
    for (const auto& e : ref.unique_events()) lbn[e.key.event] = e.lbn;
    std::vector<MissingRange> want;
    for (auto e : gone) {
        if (want.empty() || want.back().last + 1 != e) want.push_back({e, e, {}});
        want.back().last = e;
        auto& l = want.back().lbns;
        if (std::find(l.begin(), l.end(), lbn[e]) == l.end()) l.push_back(lbn[e]);
    }
    auto rep = eio.missing_event_report(kLossy.str(), kRef.str());
    EXPECT_EQ(rep.missing, gone.size());
    EXPECT_EQ(rep.ranges, want);
}

// ---- counts ----

using EioCounts = EioFixture;

TEST_F(EioCounts, SingleBunchCrossing) {
    auto ds = synth::generate(spec_for(kAod, 400));
    for (auto& f : ds.files)
        for (auto& e : f.events) e.bcid = 100;
    load(ds);
    EXPECT_EQ(eio.count_by_bcid(kAod.str()), (std::map<std::uint16_t, std::uint64_t>{{100, 400}}));
}

TEST_F(EioCounts, UniformBunchCrossingsAreFlat) {
    load_spec(spec_for(kAod, 40000, 4));
    auto h = eio.count_by_bcid(kAod.str());
    // 3564 bins folded into 36 groups of 99 for a meaningful chi-square
    std::vector<double> groups(36, 0);
    std::uint64_t total = 0;
    for (auto [b, n] : h) {
        ASSERT_GE(b, 1);
        ASSERT_LE(b, 3564);
        groups[(b - 1) / 99] += double(n);
        total += n;
    }
    EXPECT_EQ(total, 40000u);
    double expect = 40000.0 / 36, chi2 = 0;
    for (auto g : groups) chi2 += (g - expect) * (g - expect) / expect;
    EXPECT_LT(chi2, 66.6);  // 35 dof, p = 0.001
}

TEST_F(EioCounts, LumiBlockSplitAcrossFiles) {
    auto s = spec_for(kAod, 100, 2);
    s.events_per_lbn = 30;  // LBN 2 spans events 31..60, file boundary after event 50
    auto ds = load_spec(s);
    auto lbns = eio.count_by_lbn(kAod.str());
    ASSERT_EQ(lbns.size(), 4u);
    const auto& l2 = lbns[1];
    EXPECT_EQ(l2.lbn, 2u);
    EXPECT_EQ(l2.n_events, 30u);
    EXPECT_EQ(l2.n_unique_guids, 2u);
    EXPECT_EQ(l2.min_event, 31u);
    EXPECT_EQ(l2.max_event, 60u);
    EXPECT_EQ(l2.guids.at(ds.files[0].header.guid.to_text()), 20u);
    EXPECT_EQ(l2.guids.at(ds.files[1].header.guid.to_text()), 10u);
    EXPECT_EQ(lbns[0].n_unique_guids, 1u);
    EXPECT_EQ(eio.probable_lbns(kAod.str(), 45), (std::vector<std::uint32_t>{2}));
}

// ---- dataset report ----

using EioReport = EioFixture;

TEST_F(EioReport, VersionsRankNewestFirst) {
    std::vector<std::string> tags{"f843_m1824", "f843_m1900", "f850_m1950"};
    std::vector<std::uint64_t> created{2'000, 3'000, 1'000};
    std::map<std::string, std::uint32_t> want{{tags[0], 2}, {tags[1], 1}, {tags[2], 3}};
    for (std::size_t i = 0; i < 3; ++i) {
        auto ds = synth::generate(spec_for(name_of("data17_13TeV.00330079.physics_Main.merge.AOD." + tags[i]), 50));
        load(ds, {.created_ms = created[i]});
    }
    auto other = synth::generate(spec_for(name_of("data17_13TeV.00330079.physics_Main.merge.RAW.f843"), 50));
    load(other, {.created_ms = 500});
    for (const auto& r : eio.dataset_report()) {
        if (r.name.data_format == "RAW") {
            EXPECT_EQ(r.rank, 1u);
            EXPECT_EQ(r.guid_types, (std::vector<std::string>{"RAW"}));
        } else {
            EXPECT_EQ(r.rank, want.at(r.name.ami_tag)) << r.name.str();
        }
    }
}

TEST_F(EioReport, FiltersMatchNaiveOracle) {
    std::vector<std::string> names{
        "data17_13TeV.00330079.physics_Main.merge.AOD.f1_m1",   "data17_13TeV.00330079.physics_Late.merge.AOD.f1_m1",
        "data17_13TeV.00330079.physics_Main.deriv.DAOD_X.f1_p1", "data17_13TeV.00330100.physics_Main.merge.AOD.f1_m1",
        "data16_13TeV.00300001.physics_Main.merge.AOD.f1_m1",   "data17_13TeV.00330100.express_express.merge.RAW.f1",
    };
    for (std::size_t i = 0; i < names.size(); ++i) load_spec(spec_for(name_of(names[i]), 20, 1, i + 1));
    std::vector<ReportFilters> filters(6);
    filters[1].stream_prefix = "physics_";
    filters[2].run = 330100;
    filters[3].project = "data17_13TeV";
    filters[3].data_format = "AOD";
    filters[4].name_prefix = "data17_13TeV.00330079.physics_Ma";
    filters[5].stream_prefix = "express";
    filters[5].run = 330079;
    for (const auto& f : filters) {
        std::vector<std::string> want, got;
        for (const auto& n : names) {
            auto dn = name_of(n);
            bool ok = (!f.project || dn.project == *f.project) && (!f.run || dn.run_id == *f.run) &&
                      (!f.stream_prefix || dn.stream.compare(0, f.stream_prefix->size(), *f.stream_prefix) == 0) &&
                      (!f.data_format || dn.data_format == *f.data_format) &&
                      (!f.name_prefix || n.compare(0, f.name_prefix->size(), *f.name_prefix) == 0);
            if (ok) want.push_back(n);
        }
        for (const auto& r : eio.dataset_report(f)) got.push_back(r.name.str());
        std::sort(want.begin(), want.end());
        EXPECT_EQ(got, want);
    }
}

TEST_F(EioReport, TablesSurviveReopen) {
    load_spec(spec_for(kAod, 500));
    auto rows = eio.datasets();
    Eio again(eio.root());
    EXPECT_EQ(again.datasets(), rows);
    EXPECT_EQ(to_json(rows[0]), to_json(dataset_row_from_json(to_json(rows[0]))));
}

}  // namespace
}  // namespace ei::eio

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
#include <httplib.h>

#include <algorithm>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <thread>

#include "ei/gateway.hpp"
#include "ei/predicate.hpp"
#include "ei/rest.hpp"
#include "ei/trigger.hpp"
#include "store_support.hpp"
#include "test_support.hpp"

namespace ei::gateway {
namespace {

using testing::code_of;
using testing::TempDir;

const DatasetName kAod = DatasetName::parse("data17_13TeV.00330079.physics_Main.merge.AOD.f843_m1824");
const DatasetName kDaod = DatasetName::parse("data17_13TeV.00330079.physics_Main.deriv.DAOD_PHYS.f843_m1824_p3372");

synth::DatasetSpec aod_spec(std::size_t events, std::size_t files, std::uint64_t seed = 3) {
    synth::DatasetSpec s;
    s.name = kAod;
    s.seed = seed;
    s.n_files = files;
    s.events_per_file = events / files;
    s.events_per_lbn = 400;
    return s;
}

/// Fills every record's decoded chain names from its own menu, as an indexing job would.
synth::SynthDataset decoded(synth::SynthDataset ds) {
    for (auto& f : ds.files)
        for (auto& e : f.events)
            if (e.trigger.smk) {
                auto menu = trigger::MenuTable::from_message(ds.menus.at(e.trigger.smk));
                e.trigger.decoded_chains = trigger::decode(e.trigger, menu).chains;
            }
    return ds;
}

struct StoreFixture : ::testing::Test {
    TempDir dir;
    std::filesystem::path root = dir / "store";
    mapstore::Store store{root};

    synth::SynthDataset load(const synth::SynthDataset& ds) {
        store.import_dataset(testing::write_consumer_output(ds, root));
        return ds;
    }
};

// ---------------------------------------------------------------- predicates

std::string canon(std::string_view text) { return query::Predicate::parse(text).str(); }

std::string predicate_error(std::string_view text) {
    try {
        query::Predicate::parse(text);
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::PredicateError) << text;
        return e.what();
    }
    ADD_FAILURE() << "accepted: " << text;
    return {};
}

TEST(Predicate, AndBindsTighterThanOr) {
    EXPECT_EQ(canon("lbn == 1 || lbn == 2 && bcid > 3"), "(lbn == 1 || (lbn == 2 && bcid > 3))");
    EXPECT_EQ(canon("(lbn == 1 || lbn == 2) && bcid > 3"), "((lbn == 1 || lbn == 2) && bcid > 3)");
    EXPECT_EQ(canon("!(lbn==5)&&true"), "(!(lbn == 5) && true)");
}

TEST(Predicate, NotAppliesBeforeComparison) {
    auto msg = predicate_error("!lbn == 5");
    EXPECT_NE(msg.find("'!' needs a condition at offset 1"), std::string::npos) << msg;
}

TEST(Predicate, ErrorsPointAtTheOffendingCharacter) {
    auto msg = predicate_error("lbn === 5");
    EXPECT_NE(msg.find("at offset 6\n  lbn === 5\n        ^"), std::string::npos) << msg;

    msg = predicate_error("lbn == 3 &&");
    EXPECT_NE(msg.find("unexpected end of expression at offset 11"), std::string::npos) << msg;
    msg = predicate_error("has(chains, 'HLT_e26'");
    EXPECT_NE(msg.find("expected ')'"), std::string::npos) << msg;
    msg = predicate_error("guid0 == 'unterminated");
    EXPECT_NE(msg.find("unterminated string at offset 9"), std::string::npos) << msg;
}

TEST(Predicate, UnknownColumnsAndTypeMismatchesAreRejected) {
    auto msg = predicate_error("lbn == 1 && colour == 2");
    EXPECT_NE(msg.find("unknown column 'colour' at offset 12"), std::string::npos) << msg;
    EXPECT_NE(predicate_error("lbn == 'five'").find("numeric vs text"), std::string::npos);
    EXPECT_NE(predicate_error("has(lbn, 'x')").find("text column"), std::string::npos);
    EXPECT_NE(predicate_error("lbn").find("expected a condition"), std::string::npos);
    EXPECT_NE(predicate_error("lbn == 1 && bcid").find("expected a condition"), std::string::npos);
    EXPECT_NE(predicate_error("(lbn == 1) == true").find("compares values"), std::string::npos);
    EXPECT_NE(predicate_error("lbn == 1e99999").find("malformed number"), std::string::npos);
}

TEST(Predicate, ColumnsAreReportedOnce) {
    auto p = query::Predicate::parse("lbn > 2 && (lbn < 9 || has(chains, 'X')) && run == 1");
    EXPECT_EQ(p.columns(), (std::vector<std::string>{"lbn", "chains", "run"}));
}

/// Random expression as text plus an evaluator written against the record itself.
struct Generated {
    std::string text;
    std::function<bool(const EventRecord&)> eval;
};

Generated generate(std::mt19937_64& rng, int depth, const std::vector<std::string>& chain_pool) {
    auto pick = [&](int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); };
    static const char* ops[] = {"==", "!=", "<", "<=", ">", ">="};
    auto cmp = [](int op, long double a, long double b) {
        switch (op) {
            case 0: return a == b;
            case 1: return a != b;
            case 2: return a < b;
            case 3: return a <= b;
            case 4: return a > b;
            default: return a >= b;
        }
    };
    int kind = depth <= 0 ? pick(3) : pick(7);
    switch (kind) {
        case 0: {
            int col = pick(4), op = pick(6);
            static const char* cols[] = {"lbn", "bcid", "event", "run"};
            long double v = col == 0 ? pick(12) : col == 1 ? pick(3564) : col == 2 ? pick(5000) : 330078 + pick(3);
            std::string lit = std::to_string(static_cast<long long>(v));
            std::function<long double(const EventRecord&)> get;
            if (col == 0) get = [](const EventRecord& e) { return static_cast<long double>(e.lbn); };
            if (col == 1) get = [](const EventRecord& e) { return static_cast<long double>(e.bcid); };
            if (col == 2) get = [](const EventRecord& e) { return static_cast<long double>(e.key.event); };
            if (col == 3) get = [](const EventRecord& e) { return static_cast<long double>(e.key.run); };
            bool flip = pick(2);
            std::string text = flip ? lit + " " + ops[op] + " " + cols[col] : std::string(cols[col]) + ops[op] + lit;
            return {text, [=](const EventRecord& e) { return flip ? cmp(op, v, get(e)) : cmp(op, get(e), v); }};
        }
        case 1: {
            auto name = chain_pool[static_cast<std::size_t>(pick(static_cast<int>(chain_pool.size())))];
            return {"has(chains,'" + name + "')", [=](const EventRecord& e) {
                        const auto& c = e.trigger.decoded_chains;
                        return std::find(c.begin(), c.end(), name) != c.end();
                    }};
        }
        case 2: {
            bool v = pick(2);
            return {v ? "true" : "false", [=](const EventRecord&) { return v; }};
        }
        case 3: {
            auto a = generate(rng, depth - 1, chain_pool);
            return {"!(" + a.text + ")", [=](const EventRecord& e) { return !a.eval(e); }};
        }
        case 4:
        case 5: {
            auto a = generate(rng, depth - 1, chain_pool);
            auto b = generate(rng, depth - 1, chain_pool);
            return {"(" + a.text + " && " + b.text + ")", [=](const EventRecord& e) { return a.eval(e) && b.eval(e); }};
        }
        default: {
            auto a = generate(rng, depth - 1, chain_pool);
            auto b = generate(rng, depth - 1, chain_pool);
            return {"((" + a.text + ")||(" + b.text + "))", [=](const EventRecord& e) { return a.eval(e) || b.eval(e); }};
        }
    }
}

TEST(Predicate, RandomExpressionsMatchRecordOracleAndPrintStably) {
    auto ds = decoded(synth::generate(aod_spec(2000, 2, 17)));
    auto events = ds.unique_events();
    ASSERT_FALSE(events[0].trigger.decoded_chains.empty());
    std::vector<std::string> chain_pool;
    for (const auto& [name, n] : ds.chain_counts)
        if (chain_pool.size() < 40) chain_pool.push_back(name);
    chain_pool.push_back("HLT_not_in_menu");
    std::vector<std::pair<std::string, std::string>> encoded;
    for (const auto& e : events) encoded.emplace_back(encode_event_key(e.key), rows::encode_value(e));

    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 300; ++trial) {
        auto g = generate(rng, 4, chain_pool);
        auto p = query::Predicate::parse(g.text);
        auto printed = p.str();
        ASSERT_EQ(query::Predicate::parse(printed).str(), printed) << g.text;
        auto again = query::Predicate::parse(printed);
        for (std::size_t i = 0; i < events.size(); i += 7) {
            auto row = rows::RowView::parse(encoded[i].first, encoded[i].second);
            bool want = g.eval(events[i]);
            ASSERT_EQ(p(row), want) << g.text << " on event " << events[i].key.event;
            ASSERT_EQ(again(row), want) << printed;
        }
    }
}

TEST(Predicate, LargeEventNumbersCompareExactly) {
    EventRecord e;
    e.key = {1, 18'446'744'073'709'551'614ull};
    e.dataset_id = 1;
    e.lbn = 1;
    e.locations.push_back({RefType::Indexed, Guid::from_text("2A57E448-0CC7-4D54-9644-2ADCBE8A5A6A"), 0});
    auto k = encode_event_key(e.key);
    auto v = rows::encode_value(e);
    auto row = rows::RowView::parse(k, v);
    EXPECT_TRUE(query::Predicate::parse("event == 18446744073709551614")(row));
    EXPECT_FALSE(query::Predicate::parse("event == 18446744073709551615")(row));
    EXPECT_TRUE(query::Predicate::parse("event > 18446744073709551613")(row));
    EXPECT_TRUE(query::Predicate::parse("guid0 == '2A57E448-0CC7-4D54-9644-2ADCBE8A5A6A:0'")(row));
}

// ---------------------------------------------------------------- scan queries

using ScanQueries = StoreFixture;

TEST_F(ScanQueries, CountsMatchFilterOracle) {
    auto ds = load(decoded(synth::generate(aod_spec(3000, 3))));
    auto events = ds.unique_events();
    auto count_if = [&](auto f) { return static_cast<std::uint64_t>(std::count_if(events.begin(), events.end(), f)); };

    ScanQuery q{kAod.str(), "lbn == 5", {}, true, {}};
    EXPECT_EQ(ei_query(store, q)["count"], count_if([](const EventRecord& e) { return e.lbn == 5; }));
    q.where = "true";
    EXPECT_EQ(ei_query(store, q)["count"], events.size());
    auto chain = ds.chain_counts.begin()->first;
    q.where = "has(chains, '" + chain + "') && bcid < 1000";
    EXPECT_EQ(ei_query(store, q)["count"], count_if([&](const EventRecord& e) {
                  const auto& c = e.trigger.decoded_chains;
                  return e.bcid < 1000 && std::find(c.begin(), c.end(), chain) != c.end();
              }));
    q.where = "has(chains, '" + chain + "')";
    EXPECT_EQ(ei_query(store, q)["count"], ds.chain_counts.at(chain));
}

TEST_F(ScanQueries, SelectAndLimitReturnLeadingRows) {
    auto ds = load(synth::generate(aod_spec(1000, 1)));
    auto events = ds.unique_events();
    ScanQuery q{kAod.str(), "lbn >= 2", {"run", "event", "bcid"}, false, 4};
    auto doc = ei_query(store, q);
    EXPECT_EQ(doc["where"], "lbn >= 2");
    EXPECT_EQ(doc["columns"], json({"run", "event", "bcid"}));
    ASSERT_EQ(doc["rows"].size(), 4u);
    std::size_t i = 0;
    for (const auto& e : events) {
        if (e.lbn < 2) continue;
        if (i == 4) break;
        EXPECT_EQ(doc["rows"][i], json({std::to_string(e.key.run), std::to_string(e.key.event), std::to_string(e.bcid)}));
        ++i;
    }
    q.select = {"nope"};
    EXPECT_EQ(code_of([&] { ei_query(store, q); }), ErrorCode::InvalidArgument);
    q.select = {};
    q.dataset = "missing";
    EXPECT_EQ(code_of([&] { ei_query(store, q); }), ErrorCode::UnknownEntry);
}

// ---------------------------------------------------------------- event lookup

TEST(EventKeys, ParseForms) {
    EXPECT_EQ(parse_event_key("330079:436"), (EventKey{330079, 436}));
    EXPECT_EQ(parse_event_key(" 330079 436 "), (EventKey{330079, 436}));
    EXPECT_EQ(parse_event_key("330079,436"), (EventKey{330079, 436}));
    EXPECT_EQ(code_of([] { parse_event_key("330079"); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([] { parse_event_key("x:1"); }), ErrorCode::InvalidArgument);
    std::istringstream in("# header\n1:2\n\n3 4\n");
    EXPECT_EQ(read_event_keys(in), (std::vector<EventKey>{{1, 2}, {3, 4}}));
}

struct LookupFixture : StoreFixture {
    synth::SynthDataset parent, child;
    /// key -> dataset -> record, built straight from the generated data.
    std::map<EventKey, std::map<std::string, EventRecord>> oracle;

    void build(std::size_t events, std::size_t files) {
        parent = load(synth::generate(aod_spec(events, files)));
        child = load(synth::derive(parent, kDaod, 0.4, 11));
        for (const auto* ds : {&parent, &child})
            for (const auto& e : ds->unique_events()) oracle[e.key][ds->spec.name.str()] = e;
    }

    std::vector<EventKey> mixed_keys(std::size_t n, std::uint64_t seed) const {
        std::mt19937_64 rng(seed);
        auto present = parent.unique_keys();
        std::vector<EventKey> keys;
        for (std::size_t i = 0; i < n; ++i) {
            if (rng() % 5 == 0) {
                keys.push_back({330079 + static_cast<std::uint32_t>(rng() % 2), 10'000'000 + rng() % 1'000'000});
            } else {
                keys.push_back(present[rng() % present.size()]);
            }
        }
        return keys;
    }

    void expect_matches_oracle(const json& doc, const std::vector<EventKey>& keys, const mapstore::LookupFilters& f) {
        ASSERT_EQ(doc["results"].size(), keys.size());
        std::uint64_t found = 0;
        for (std::size_t i = 0; i < keys.size(); ++i) {
            const auto& r = doc["results"][i];
            ASSERT_EQ(r["run"], keys[i].run);
            ASSERT_EQ(r["event"], keys[i].event);
            std::map<std::string, EventRecord> want;
            if (auto it = oracle.find(keys[i]); it != oracle.end())
                for (const auto& [name, rec] : it->second) {
                    auto n = DatasetName::parse(name);
                    if (f.data_format && n.data_format != *f.data_format) continue;
                    if (f.stream && n.stream != *f.stream) continue;
                    want.emplace(name, rec);
                }
            ASSERT_EQ(r["found"].get<bool>(), !want.empty()) << keys[i].event;
            ASSERT_EQ(r["matches"].size(), want.size());
            found += !want.empty();
            for (const auto& m : r["matches"]) {
                auto it = want.find(m["dataset"].get<std::string>());
                ASSERT_NE(it, want.end());
                const auto& refs = m["guid_refs"];
                ASSERT_EQ(refs.size(), it->second.locations.size());
                for (std::size_t j = 0; j < refs.size(); ++j) {
                    auto [g, ptr] = rows::parse_guid_ref(refs[j].get<std::string>());
                    EXPECT_EQ(g, it->second.locations[j].guid);
                    if (j == 0) EXPECT_EQ(ptr, it->second.locations[0].internal_pointer);
                }
            }
        }
        EXPECT_EQ(doc["found"], found);
        EXPECT_EQ(doc["not_found"], keys.size() - found);
    }
};

TEST_F(LookupFixture, SingleEventsMatchOracle) {
    build(4000, 4);
    auto keys = mixed_keys(300, 5);
    for (const auto& k : keys) expect_matches_oracle(el_query(store, {k}, {}), {k}, {});
    mapstore::LookupFilters aod_only{.data_format = "AOD"};
    for (std::size_t i = 0; i < 50; ++i) expect_matches_oracle(el_query(store, {keys[i]}, aod_only), {keys[i]}, aod_only);
    mapstore::LookupFilters other{.stream = "physics_Other"};
    EXPECT_EQ(el_query(store, {keys[0]}, other)["found"], 0);
    EXPECT_EQ(el_query(store, {keys[0]}, aod_only)["filters"], json({{"data_format", "AOD"}}));
}

TEST_F(LookupFixture, FiftyThousandEventBatchMatchesOracle) {
    build(20000, 4);
    auto keys = mixed_keys(50000, 9);
    expect_matches_oracle(el_query(store, keys, {}), keys, {});
    mapstore::LookupFilters daod{.data_format = "DAOD_PHYS"};
    expect_matches_oracle(el_query(store, keys, daod), keys, daod);
}

// ---------------------------------------------------------------- picking

using Picking = StoreFixture;

TEST_F(Picking, ThreeEventsInTwoFilesMakeTwoGroups) {
    auto ds = load(synth::generate(aod_spec(200, 2)));
    const auto& f0 = ds.files[0].events;
    const auto& f1 = ds.files[1].events;
    PickRequest req;
    req.events = {f0[3].key, f1[7].key, f0[50].key, f0[3].key};
    auto m = build_manifest(store, req);
    EXPECT_EQ(m.status, PickStatus::Done);
    ASSERT_EQ(m.groups.size(), 2u);
    std::map<Guid, std::vector<PickedEvent>> want;
    want[f0[3].locations[0].guid] = {{f0[3].key.run, f0[3].key.event, f0[3].locations[0].internal_pointer},
                                     {f0[50].key.run, f0[50].key.event, f0[50].locations[0].internal_pointer}};
    want[f1[7].locations[0].guid] = {{f1[7].key.run, f1[7].key.event, f1[7].locations[0].internal_pointer}};
    for (const auto& g : m.groups) {
        EXPECT_EQ(g.dataset, kAod.str());
        EXPECT_EQ(g.events, want.at(g.guid));
    }
    EXPECT_LT(m.groups[0].guid, m.groups[1].guid);
    EXPECT_EQ(PickManifest::from_json(m.to_json()).to_json(), m.to_json());
}

TEST_F(Picking, UnknownEventsMakeThePickPartial) {
    auto ds = load(synth::generate(aod_spec(100, 1)));
    PickRequest req;
    req.events = {ds.unique_keys()[0], {1, 1}};
    auto m = build_manifest(store, req);
    EXPECT_EQ(m.status, PickStatus::Partial);
    EXPECT_EQ(m.not_found, (std::vector<EventKey>{{1, 1}}));
    ASSERT_EQ(m.groups.size(), 1u);
}

TEST_F(Picking, TenThousandEventsFollowPopularityOracle) {
    auto parent = load(synth::generate(aod_spec(20000, 8)));
    auto child = load(synth::derive(parent, kDaod, 0.5, 4, 3));
    // key -> candidate (guid, pointer, dataset) per dataset, from the generated data
    struct Cand {
        Guid guid;
        std::uint64_t ptr;
        std::string dataset;
    };
    std::map<EventKey, std::vector<Cand>> cands;
    for (const auto* ds : {&parent, &child})
        for (const auto& e : ds->unique_events())
            cands[e.key].push_back({e.locations[0].guid, e.locations[0].internal_pointer, ds->spec.name.str()});

    std::mt19937_64 rng(8);
    auto keys = parent.unique_keys();
    std::shuffle(keys.begin(), keys.end(), rng);
    keys.resize(10000);
    keys.push_back({7, 7});
    PickRequest req;
    req.events = keys;
    auto m = build_manifest(store, req);

    std::map<Guid, std::uint64_t> popularity;
    for (const auto& k : keys) {
        std::set<Guid> gs;
        for (const auto& c : cands[k]) gs.insert(c.guid);
        for (const auto& g : gs) ++popularity[g];
    }
    std::size_t picked = 0;
    std::set<EventKey> seen;
    for (const auto& g : m.groups)
        for (const auto& e : g.events) {
            ++picked;
            EventKey k{e.run, e.event};
            ASSERT_TRUE(seen.insert(k).second);
            const auto& cs = cands.at(k);
            auto chosen = std::find_if(cs.begin(), cs.end(), [&](const Cand& c) { return c.guid == g.guid; });
            ASSERT_NE(chosen, cs.end());
            EXPECT_EQ(chosen->ptr, e.pointer);
            EXPECT_EQ(chosen->dataset, g.dataset);
            for (const auto& c : cs) {
                ASSERT_LE(popularity[c.guid], popularity[g.guid]);
                if (popularity[c.guid] == popularity[g.guid]) ASSERT_LE(g.dataset, c.dataset);
            }
        }
    EXPECT_EQ(picked, 10000u);
    EXPECT_EQ(m.not_found, (std::vector<EventKey>{{7, 7}}));
    EXPECT_LE(m.groups.size(), parent.files.size() + child.files.size());
}

TEST_F(Picking, ServiceEnforcesLimitAndPersistsManifests) {
    auto ds = load(synth::generate(aod_spec(300, 1)));
    auto keys = ds.unique_keys();
    std::string id;
    {
        PickService svc(store, dir / "picks", 5);
        PickRequest big;
        big.events.assign(keys.begin(), keys.begin() + 6);
        EXPECT_EQ(code_of([&] { svc.submit(big); }), ErrorCode::TooManyEvents);
        PickRequest ok;
        ok.events.assign(keys.begin(), keys.begin() + 5);
        id = svc.submit(ok);
        auto done = svc.wait(id, std::chrono::seconds(10));
        ASSERT_TRUE(done);
        EXPECT_EQ(done->status, PickStatus::Done);
        EXPECT_EQ(done->groups.size(), 1u);
        EXPECT_EQ(done->groups[0].events.size(), 5u);
        EXPECT_FALSE(svc.get("pk-unknown"));
    }
    PickService reopened(store, dir / "picks", 5);
    auto again = reopened.get(id);
    ASSERT_TRUE(again);
    EXPECT_EQ(again->status, PickStatus::Done);
    EXPECT_EQ(again->groups[0].events.size(), 5u);
}

TEST(PickRequests, AcceptThreeEventForms) {
    auto r = PickRequest::from_json(json::parse(R"({"events":[[1,2],{"run":3,"event":4},"5:6"],"data_format":"AOD"})"));
    EXPECT_EQ(r.events, (std::vector<EventKey>{{1, 2}, {3, 4}, {5, 6}}));
    EXPECT_EQ(r.filters.data_format, "AOD");
    EXPECT_EQ(code_of([] { PickRequest::from_json(json::parse(R"({"events":[true]})")); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([] { PickRequest::from_json(json::parse(R"({"nothing":1})")); }), ErrorCode::InvalidArgument);
}

// ---------------------------------------------------------------- status

constexpr std::uint64_t T = 120'000;
constexpr std::uint64_t kNow = 10'000'000'000;

ModuleState state_of(const std::vector<MetricRecord>& window, const std::string& module = "producer") {
    for (const auto& s : compute_status(window, kNow))
        if (s.module == module) return s.state;
    ADD_FAILURE() << "no module " << module;
    return ModuleState::NA;
}

MetricRecord rec(std::uint64_t age, const std::string& kind = "heartbeat", const std::string& module = "producer") {
    return {module, kNow - age, kind, json::object()};
}

TEST(Status, EveryStateIsReachable) {
    EXPECT_EQ(state_of({}), ModuleState::NA);
    EXPECT_EQ(state_of({rec(1000)}), ModuleState::Available);
    EXPECT_EQ(state_of({rec(T)}), ModuleState::Available);
    EXPECT_EQ(state_of({rec(T + 1)}), ModuleState::Degraded);
    EXPECT_EQ(state_of({rec(3 * T)}), ModuleState::Degraded);
    EXPECT_EQ(state_of({rec(3 * T + 1)}), ModuleState::Unavailable);
    EXPECT_EQ(state_of({rec(10 * T)}), ModuleState::Unavailable);
    EXPECT_EQ(state_of({rec(1000), rec(5000, "warning")}), ModuleState::Degraded);
    EXPECT_EQ(state_of({rec(1000), rec(5000, "critical")}), ModuleState::Unavailable);
    EXPECT_EQ(state_of({rec(1000), rec(T + 1, "critical"), rec(T + 1, "warning")}), ModuleState::Available);
    EXPECT_EQ(state_of({rec(5000, "warning")}), ModuleState::Unavailable);
}

TEST(Status, OverallIsWorstReportingModule) {
    std::vector<MetricRecord> w{rec(1000), rec(1000, "heartbeat", "consumer"), rec(2 * T, "heartbeat", "supervisor")};
    auto modules = compute_status(w, kNow);
    auto doc = dashboard_record(modules, kNow);
    EXPECT_EQ(doc["producer_module"], "ei-status");
    EXPECT_EQ(doc["timestamp"], kNow);
    EXPECT_EQ(doc["status"], "DEGRADED");
    std::map<std::string, std::string> by;
    for (const auto& m : doc["custom"]["modules"]) by[m["module"]] = m["status"];
    EXPECT_EQ(by["gateway"], "NA");
    EXPECT_EQ(by["supervisor"], "DEGRADED");
    w.push_back(rec(10, "critical", "pick"));
    EXPECT_EQ(dashboard_record(compute_status(w, kNow), kNow)["status"], "UNAVAILABLE");
    EXPECT_EQ(dashboard_record(compute_status({}, kNow), kNow)["status"], "NA");
}

TEST(Status, MetricsFileRoundTrip) {
    TempDir dir;
    auto file = dir / "m" / "metrics.jsonl";
    EXPECT_TRUE(read_metrics(file).empty());
    append_metric(file, {"consumer", 5, "heartbeat", {{"imported", 2}}});
    append_metric(file, {"consumer", 6, "warning", json::object()});
    auto back = read_metrics(file);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].custom["imported"], 2);
    EXPECT_EQ(back[1].kind, "warning");
}

TEST_F(StoreFixture, StatusDocumentProbesStoreAndMirror) {
    load(synth::generate(aod_spec(200, 1)));
    eio::Eio mirror(root / "eio");
    Layout l{root};
    append_metric(l.metrics(), {"producer", wall_ms(), "heartbeat", json::object()});
    auto doc = status_document(l, store, mirror, {}, wall_ms());
    std::map<std::string, std::string> by;
    for (const auto& m : doc["custom"]["modules"]) by[m["module"]] = m["status"];
    EXPECT_EQ(by["producer"], "AVAILABLE");
    EXPECT_EQ(by["mapstore"], "AVAILABLE");
    EXPECT_EQ(by["eio"], "AVAILABLE");
    EXPECT_EQ(by["pick"], "AVAILABLE");
    EXPECT_EQ(by["supervisor"], "NA");
    EXPECT_EQ(doc["status"], "AVAILABLE");
}

// ---------------------------------------------------------------- catalog and trigger passthrough

TEST_F(StoreFixture, CatalogListFiltersByStatusAndKind) {
    auto parent = load(synth::generate(aod_spec(500, 1)));
    load(synth::derive(parent, kDaod, 0.5, 2));
    auto names = [](const json& doc) {
        std::set<std::string> out;
        for (const auto& e : doc["entries"]) out.insert(e["name"]);
        return out;
    };
    EXPECT_EQ(names(catalog_list(store, "VALID", "EVENTS")), (std::set<std::string>{kAod.str(), kDaod.str()}));
    auto changed = catalog_set_status(store, kDaod.str(), "OBSOLETE");
    EXPECT_EQ(changed["from"], "VALID");
    EXPECT_EQ(names(catalog_list(store, "VALID", "EVENTS")), (std::set<std::string>{kAod.str()}));
    EXPECT_EQ(names(catalog_list(store, "OBSOLETE")), (std::set<std::string>{kDaod.str()}));
    EXPECT_EQ(names(catalog_list(store, {}, {}, "data17_13TeV.00330079.physics_Main.deriv")),
              (std::set<std::string>{kDaod.str()}));
    EXPECT_EQ(code_of([&] { catalog_list(store, "SHINY"); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([&] { catalog_set_status(store, "nope", "VALID"); }), ErrorCode::UnknownEntry);
    auto tail = journal_tail(store, 1)["journal"];
    ASSERT_EQ(tail.size(), 1u);
    EXPECT_EQ(tail[0]["operation"], "catalog");
    EXPECT_EQ(catalog_show(store, kAod.str())["n_rows"], 500);
}

TEST_F(StoreFixture, InspectShowsLeadingRows) {
    auto ds = load(synth::generate(aod_spec(300, 1)));
    auto doc = inspect(store, kAod.str(), 3);
    ASSERT_EQ(doc["rows"].size(), 3u);
    auto keys = ds.unique_keys();
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(doc["rows"][i]["key"], std::to_string(keys[i].run) + ":" + std::to_string(keys[i].event));
        EXPECT_EQ(doc["rows"][i]["value"], rows::encode_value(ds.unique_events()[i]));
    }
    EXPECT_EQ(doc["n_rows"], 300);
    EXPECT_EQ(code_of([&] { inspect(store, "nope", 3); }), ErrorCode::UnknownEntry);
}

TEST_F(StoreFixture, TriggerViewsPassThroughLibraryResults) {
    auto ds = load(synth::generate(aod_spec(1500, 1)));
    trigger::MenuSet menus;
    for (const auto& [smk, msg] : ds.menus) menus.add(trigger::MenuTable::from_message(msg));
    auto menu_file = dir / "menus.tsv";
    {
        std::ofstream out(menu_file);
        menus.write(out);
    }
    EXPECT_EQ(code_of([&] { ti_stats(store, kAod.str()); }), ErrorCode::NotDecoded);
    auto dec = ti_decode(store, kAod.str(), menu_file);
    EXPECT_EQ(dec["rows"], 1500);
    EXPECT_EQ(dec["unknown_bits"], 0);

    auto stats = ti_stats(store, kAod.str())["chains"];
    std::map<std::string, std::uint64_t> want(ds.chain_counts.begin(), ds.chain_counts.end());
    for (auto it = want.begin(); it != want.end();) it = it->second == 0 ? want.erase(it) : std::next(it);
    EXPECT_EQ(stats.get<decltype(want)>(), want);
    auto direct = trigger::compute_overlaps(store, kAod.str());
    auto ov = ti_overlaps(store, kAod.str());
    EXPECT_EQ(ov["chains"].get<std::vector<std::string>>(), direct.chains);
    EXPECT_EQ(ov["events"], direct.events);
}

// ---------------------------------------------------------------- REST

struct RestFixture : LookupFixture {
    std::unique_ptr<eio::Eio> mirror;
    std::unique_ptr<PickService> picks;
    std::unique_ptr<RestServer> server;
    std::uint16_t port = 0;

    void serve() {
        mirror = std::make_unique<eio::Eio>(root / "eio");
        for (const auto& n : {kAod.str(), kDaod.str()}) mirror->import_dataset(store, n);
        picks = std::make_unique<PickService>(store, root / "_pick", 1000);
        ServiceContext ctx;
        ctx.layout = Layout{root};
        ctx.store = &store;
        ctx.eio = mirror.get();
        ctx.picks = picks.get();
        server = std::make_unique<RestServer>(ctx, 16);
        port = server->start("127.0.0.1", 0);
    }
    void TearDown() override {
        if (server) server->stop();
    }
    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(30, 0);
        return c;
    }
};

TEST_F(RestFixture, ParallelClientsMatchSerialQueries) {
    build(6000, 3);
    serve();
    auto keys = mixed_keys(32 * 40, 21);
    std::vector<std::string> want(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) want[i] = el_query(store, {keys[i]}, {}).dump();
    std::vector<std::string> got(keys.size());
    std::vector<int> codes(keys.size());
    std::vector<std::thread> threads;
    for (int t = 0; t < 32; ++t)
        threads.emplace_back([&, t] {
            auto c = client();
            for (std::size_t i = static_cast<std::size_t>(t); i < keys.size(); i += 32) {
                auto res = c.Get("/api/v1/el?run=" + std::to_string(keys[i].run) +
                                 "&event=" + std::to_string(keys[i].event));
                if (!res) continue;
                codes[i] = res->status;
                got[i] = json::parse(res->body).dump();
            }
        });
    for (auto& th : threads) th.join();
    for (std::size_t i = 0; i < keys.size(); ++i) {
        ASSERT_EQ(got[i], want[i]) << i;
        EXPECT_EQ(codes[i], json::parse(want[i])["found"] == 1 ? 200 : 404);
    }
}

TEST_F(RestFixture, ErrorsMapToHttpStatus) {
    build(600, 1);
    serve();
    auto c = client();
    auto check = [&](const std::string& path, int status, const std::string& code) {
        auto res = c.Get(path);
        ASSERT_TRUE(res) << path;
        EXPECT_EQ(res->status, status) << path;
        if (!code.empty()) EXPECT_EQ(json::parse(res->body)["error"], code) << path;
    };
    check("/api/v1/datasets/nope/report", 404, "UnknownEntry");
    check("/api/v1/ei/" + kAod.str() + "?where=lbn%3D%3D", 400, "PredicateError");
    check("/api/v1/ei/nope?count=1", 404, "UnknownEntry");
    check("/api/v1/el?run=1", 400, "InvalidArgument");
    check("/api/v1/el?run=1&event=1", 404, "");
    check("/api/v1/pick/pk00000000000000", 404, "");
    check("/api/v1/supervisor/datasets/nope", 400, "MalformedName");
    check("/api/v1/supervisor/datasets/data17_13TeV.00000001.physics_Main.merge.AOD.f1_m1", 404, "");
    check("/api/v1/overlaps/330079?alg=SIDEWAYS", 400, "InvalidArgument");
    check("/api/v1/trigger/" + kDaod.str() + "/stats", 404, "NoTriggerData");
    check("/api/v1/status", 200, "");

    std::string many = R"({"events":[)";
    for (int i = 0; i < 1001; ++i) many += (i ? "," : "") + std::string("\"1:") + std::to_string(i) + "\"";
    auto res = c.Post("/api/v1/pick", many + "]}", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
    EXPECT_EQ(json::parse(res->body)["error"], "TooManyEvents");
    res = c.Post("/api/v1/pick", "{not json", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
}

TEST_F(RestFixture, PickRoundTripOverHttp) {
    build(600, 2);
    serve();
    auto c = client();
    auto k = parent.unique_keys();
    json body = {{"events", {{k[0].run, k[0].event}, std::to_string(k[1].run) + ":" + std::to_string(k[1].event), "1:1"}}};
    auto res = c.Post("/api/v1/pick", body.dump(), "application/json");
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 202);
    auto id = json::parse(res->body)["id"].get<std::string>();
    json m;
    for (int i = 0; i < 200; ++i) {
        auto g = c.Get("/api/v1/pick/" + id);
        ASSERT_TRUE(g);
        m = json::parse(g->body);
        if (m["status"] != "QUEUED" && m["status"] != "RUNNING") break;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    EXPECT_EQ(m["status"], "PARTIAL");
    EXPECT_EQ(m["n_found"], 2);
    PickRequest req;
    req.events = {k[0], k[1], {1, 1}};
    auto direct = build_manifest(store, req).to_json();
    EXPECT_EQ(m["groups"], direct["groups"]);
    EXPECT_EQ(m["not_found"], direct["not_found"]);
}

#ifdef EI_CLI_PATH
json run_cli(const std::filesystem::path& root, const std::string& args, int* rc = nullptr) {
    std::string cmd = std::string(EI_CLI_PATH) + " --store '" + root.string() + "' --json " + args + " 2>/dev/null";
    FILE* p = popen(cmd.c_str(), "r");
    std::string out;
    char buf[4096];
    while (auto n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
    int status = pclose(p);
    if (rc) *rc = WEXITSTATUS(status);
    return out.empty() ? json() : json::parse(out);
}

TEST_F(RestFixture, CommandLineAndHttpServeIdenticalDocuments) {
    build(1200, 2);
    serve();
    auto c = client();
    auto http = [&](const std::string& path) {
        auto res = c.Get(path);
        EXPECT_TRUE(res) << path;
        return res ? json::parse(res->body) : json();
    };
    auto k = parent.unique_keys()[17];
    auto ks = std::to_string(k.run) + ":" + std::to_string(k.event);
    int rc = -1;
    EXPECT_EQ(run_cli(root, "el --run " + std::to_string(k.run) + " --event " + std::to_string(k.event), &rc),
              http("/api/v1/el?events=" + ks));
    EXPECT_EQ(rc, 0);
    run_cli(root, "el --run 1 --event 1", &rc);
    EXPECT_EQ(rc, 3);
    EXPECT_EQ(run_cli(root, "ei " + kAod.str() + " --where 'lbn == 2' --count"),
              http("/api/v1/ei/" + kAod.str() + "?where=lbn%20%3D%3D%202&count=1"));
    EXPECT_EQ(run_cli(root, "ei " + kAod.str() + " --select run,event,lbn --limit 5"),
              http("/api/v1/ei/" + kAod.str() + "?select=run,event,lbn&limit=5"));
    EXPECT_EQ(run_cli(root, "catalog datasets"), http("/api/v1/datasets"));
    EXPECT_EQ(run_cli(root, "catalog list --status VALID"), http("/api/v1/catalog?status=VALID"));
    EXPECT_EQ(run_cli(root, "catalog overlaps 330079"), http("/api/v1/overlaps/330079"));
    EXPECT_EQ(run_cli(root, "catalog report " + kDaod.str()), http("/api/v1/datasets/" + kDaod.str() + "/report"));
    run_cli(root, "ei nope --count", &rc);
    EXPECT_EQ(rc, 1);
}
#endif

}  // namespace
}  // namespace ei::gateway

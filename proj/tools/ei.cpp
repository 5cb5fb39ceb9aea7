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

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include "ei/analytics.hpp"
#include "ei/broker.hpp"
#include "ei/consumer.hpp"
#include "ei/error.hpp"
#include "ei/gateway.hpp"
#include "ei/object_store.hpp"
#include "ei/producer.hpp"
#include "ei/rest.hpp"
#include "ei/supervisor.hpp"
#include "ei/synth.hpp"
#include "ei/trigger.hpp"

using namespace ei;
using gateway::json;

namespace {

constexpr int kExitError = 1;
constexpr int kExitNotFound = 3;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct Globals {
    std::optional<std::string> store;
    bool as_json = false;
};

gateway::Layout layout_of(const Globals& g, bool must_exist = true) {
    std::optional<std::filesystem::path> p;
    if (g.store) p = *g.store;
    return gateway::Layout::resolve(p, must_exist);
}

gateway::Config config_of(const gateway::Layout& l) { return gateway::Config::load(l.config()); }

eio::EioConfig eio_config(const gateway::Layout& l) {
    eio::EioConfig c;
    auto cfg = config_of(l);
    if (cfg.run_allowlist) c.run_allowlist = eio::EioConfig::load_allowlist(*cfg.run_allowlist);
    return c;
}

eio::Eio open_eio(const gateway::Layout& l) { return eio::Eio(l.eio(), eio_config(l)); }

transport::ObjectStoreSet object_stores(const gateway::Layout& l) {
    transport::ObjectStoreSet set;
    set.attach(std::make_shared<transport::LocalObjectStore>(l.objects()));
    set.attach(std::make_shared<transport::LocalObjectStore>(l.fallback_objects(), transport::Backend::Fallback));
    return set;
}

void heartbeat(const gateway::Layout& l, const std::string& module, json custom = json::object(),
               const std::string& kind = "heartbeat") {
    gateway::append_metric(l.metrics(), {module, wall_ms(), kind, std::move(custom)});
}

void print(const Globals& g, const json& doc, const std::function<void()>& table) {
    if (g.as_json) {
        std::cout << doc.dump(2) << '\n';
    } else {
        table();
    }
}

std::string str(const json& j) { return j.is_string() ? j.get<std::string>() : j.dump(); }

void print_rows(const json& columns, const json& rows) {
    for (std::size_t i = 0; i < columns.size(); ++i) std::cout << (i ? "\t" : "") << str(columns[i]);
    std::cout << '\n';
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) std::cout << (i ? "\t" : "") << str(r[i]);
        std::cout << '\n';
    }
}

/// Blocks until SIGINT/SIGTERM or `seconds` elapse; `tick` runs every second, a heartbeat every 30 s.
void serve_until_stopped(const gateway::Layout& l, const std::string& module, double seconds,
                         const std::function<json()>& custom, const std::function<void()>& tick = {}) {
    auto start = std::chrono::steady_clock::now();
    auto next_beat = start;
    auto next_tick = start;
    while (!g_stop) {
        auto now = std::chrono::steady_clock::now();
        if (seconds > 0 && now - start >= std::chrono::duration<double>(seconds)) break;
        if (tick && now >= next_tick) {
            tick();
            next_tick = now + std::chrono::seconds(1);
        }
        if (now >= next_beat) {
            heartbeat(l, module, custom());
            next_beat = now + std::chrono::seconds(30);
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(200));
    }
    g_stop = true;
}

}  // namespace

int main(int argc, char** argv) {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);

    CLI::App app{"Event catalogue: indexing pipeline, store queries and analytics"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--store", g.store, "Store root (default $EI_STORE_ROOT)");
    app.add_flag("--json", g.as_json, "Print the structured document instead of a table");
    std::function<int()> action;

    // ---- catalog ----
    auto* cat = app.add_subcommand("catalog", "Search and modify catalog entries; mirror reports");
    cat->require_subcommand(1);
    std::optional<std::string> c_status, c_kind, c_prefix;
    auto* c_list = cat->add_subcommand("list", "List entries");
    c_list->add_option("--status", c_status, "IMPORTING|VALID|OBSOLETE|DELETED");
    c_list->add_option("--kind", c_kind, "EVENTS|DERIVED|RESULT");
    c_list->add_option("--prefix", c_prefix, "Name prefix");
    c_list->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            mapstore::Store store(l.root);
            auto doc = gateway::catalog_list(store, c_status, c_kind, c_prefix);
            print(g, doc, [&] {
                for (const auto& e : doc["entries"])
                    std::cout << str(e["status"]) << '\t' << str(e["kind"]) << '\t' << e["rows"] << '\t'
                              << str(e["name"]) << '\n';
            });
            return 0;
        };
    });
    std::string c_name, c_new_status;
    auto* c_show = cat->add_subcommand("show", "Show one entry");
    c_show->add_option("name", c_name)->required();
    c_show->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            mapstore::Store store(l.root);
            std::cout << gateway::catalog_show(store, c_name).dump(2) << '\n';
            return 0;
        };
    });
    auto* c_set = cat->add_subcommand("set-status", "Change an entry's status (journaled)");
    c_set->add_option("name", c_name)->required();
    c_set->add_option("status", c_new_status)->required();
    c_set->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            mapstore::Store store(l.root);
            auto doc = gateway::catalog_set_status(store, c_name, c_new_status);
            print(g, doc, [&] { std::cout << c_name << ": " << str(doc["from"]) << " -> " << c_new_status << '\n'; });
            return 0;
        };
    });
    std::size_t c_n = 20;
    auto* c_journal = cat->add_subcommand("journal", "Last journal records");
    c_journal->add_option("-n", c_n, "How many");
    c_journal->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            mapstore::Store store(l.root);
            auto doc = gateway::journal_tail(store, c_n);
            print(g, doc, [&] {
                for (const auto& e : doc["journal"])
                    std::cout << e["ms"] << '\t' << str(e["operation"]) << '\t' << str(e["target"]) << '\t'
                              << str(e["outcome"]) << '\n';
            });
            return 0;
        };
    });
    std::string c_seq;
    bool c_supersede = false;
    std::uint64_t c_expected = 0;
    auto* c_import = cat->add_subcommand("import", "Import a consumer output file into the store and the mirror");
    c_import->add_option("seq", c_seq)->required()->check(CLI::ExistingFile);
    c_import->add_flag("--supersede", c_supersede, "Replace the current VALID version");
    c_import->add_option("--expected", c_expected, "Upstream event count for the mirror report");
    c_import->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            mapstore::Store store(l.root);
            auto rep = store.import_dataset(c_seq, {.supersede = c_supersede});
            auto eio = open_eio(l);
            auto sum = eio.import_dataset(store, rep.dataset, {.expected_upstream = c_expected});
            json doc = {{"dataset", rep.dataset},
                        {"rows", rep.n_rows},
                        {"duplicates", rep.n_duplicates},
                        {"mirror", sum.status == eio::ImportStatus::Imported ? "imported" : "filtered out: " + sum.reason}};
            print(g, doc, [&] {
                std::cout << rep.dataset << ": " << rep.n_rows << " rows, " << rep.n_duplicates << " duplicates; mirror "
                          << str(doc["mirror"]) << '\n';
            });
            return 0;
        };
    });
    auto* c_pending = cat->add_subcommand("import-pending", "Import every listed consumer output not yet in the store");
    c_pending->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            mapstore::Store store(l.root);
            auto eio = open_eio(l);
            for (const auto& d : gateway::import_pending(l, store, eio))
                std::cout << d.dataset << '\t' << d.rows << " rows\t" << d.duplicates << " duplicates\n";
            return 0;
        };
    });
    auto* c_delete = cat->add_subcommand("delete", "Delete an entry and its derived tables");
    c_delete->add_option("name", c_name)->required();
    c_delete->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            mapstore::Store store(l.root);
            store.delete_dataset(c_name);
            std::cout << "deleted " << c_name << '\n';
            return 0;
        };
    });
    std::uint32_t c_id = 0;
    auto* c_drop = cat->add_subcommand("drop-partition", "Remove one dataset's rows from the mirror");
    c_drop->add_option("dataset_id", c_id)->required();
    c_drop->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            open_eio(l).drop_partition(c_id);
            std::cout << "dropped partition " << c_id << '\n';
            return 0;
        };
    });
    std::optional<std::uint32_t> c_run;
    std::optional<std::string> c_stream, c_format;
    auto* c_datasets = cat->add_subcommand("datasets", "Mirror dataset report");
    c_datasets->add_option("--run", c_run);
    c_datasets->add_option("--stream", c_stream, "Stream prefix");
    c_datasets->add_option("--format", c_format);
    c_datasets->add_option("--prefix", c_prefix, "Name prefix");
    c_datasets->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            eio::ReportFilters f;
            f.run = c_run;
            f.stream_prefix = c_stream;
            f.data_format = c_format;
            f.name_prefix = c_prefix;
            auto doc = gateway::datasets_json(open_eio(l), f);
            print(g, doc, [&] {
                std::cout << "rank\tstored\tmapstore\tupstream\tguids\tdup_total\tdup_keys\tname\n";
                for (const auto& d : doc["datasets"])
                    std::cout << d["rank"] << '\t' << d["stored_events"] << '\t' << d["mapstore_rows"] << '\t'
                              << d["expected_upstream"] << '\t' << d["unique_guids"] << '\t' << d["total_duplicates"]
                              << '\t' << d["unique_duplicates"] << '\t' << str(d["name"]) << '\n';
            });
            return 0;
        };
    });
    std::uint32_t c_overlap_run = 0;
    std::string c_alg = "A_OVER_MIN";
    double c_threshold = 70;
    bool c_csv = false;
    auto* c_overlaps = cat->add_subcommand("overlaps", "Dataset overlap matrix of a run");
    c_overlaps->add_option("run", c_overlap_run)->required();
    c_overlaps->add_option("--alg", c_alg, "A_OVER_MIN or A_OVER_LEFT");
    c_overlaps->add_option("--threshold", c_threshold, "Percent");
    c_overlaps->add_flag("--csv", c_csv);
    c_overlaps->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            auto rep = open_eio(l).dataset_overlaps(c_overlap_run, eio::overlap_algorithm_from_string(c_alg), c_threshold);
            if (c_csv) {
                std::cout << rep.to_csv();
            } else {
                print(g, rep.to_json(), [&] { std::cout << rep.to_csv(); });
            }
            return 0;
        };
    });
    std::optional<std::string> c_reference;
    auto* c_report = cat->add_subcommand("report", "Duplicate, LBN, BCID and missing-event report of one dataset");
    c_report->add_option("dataset", c_name)->required();
    c_report->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            std::cout << gateway::dataset_report_json(open_eio(l), c_name).dump(2) << '\n';
            return 0;
        };
    });
    auto* c_missing = cat->add_subcommand("missing", "Events present in a reference but not in the dataset");
    c_missing->add_option("dataset", c_name)->required();
    c_missing->add_option("--reference", c_reference);
    c_missing->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            auto rep = open_eio(l).missing_event_report(c_name, c_reference);
            print(g, rep.to_json(), [&] {
                std::cout << rep.missing << " events missing relative to " << rep.reference << '\n';
                for (const auto& r : rep.ranges) {
                    std::cout << "  " << r.first << "-" << r.last << "  LBN";
                    for (auto b : r.lbns) std::cout << ' ' << b;
                    std::cout << '\n';
                }
                for (const auto& s : rep.stages)
                    std::cout << "  " << s.stage << ": expected " << s.expected << ", have " << s.actual << '\n';
            });
            return 0;
        };
    });

    // ---- ei ----
    gateway::ScanQuery scan;
    std::string select_text;
    std::size_t limit = 0;
    auto* ei_cmd = app.add_subcommand("ei", "Scan a dataset with a predicate");
    ei_cmd->add_option("dataset", scan.dataset)->required();
    ei_cmd->add_option("--where", scan.where, "Predicate, e.g. \"lbn == 5 && has(chains, 'HLT_e26')\"");
    ei_cmd->add_option("--select", select_text, "Comma-separated columns");
    ei_cmd->add_flag("--count", scan.count_only, "Print only the number of matching rows");
    ei_cmd->add_option("--limit", limit, "Stop after this many rows");
    ei_cmd->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            mapstore::Store store(l.root);
            std::stringstream ss(select_text);
            for (std::string c; std::getline(ss, c, ',');)
                if (!c.empty()) scan.select.push_back(c);
            if (limit) scan.limit = limit;
            auto doc = gateway::ei_query(store, scan);
            print(g, doc, [&] {
                if (scan.count_only) {
                    std::cout << doc["count"] << '\n';
                } else {
                    print_rows(doc["columns"], doc["rows"]);
                }
            });
            return 0;
        };
    });

    // ---- el ----
    std::optional<std::uint32_t> el_run;
    std::optional<std::uint64_t> el_event;
    std::optional<std::string> el_input;
    mapstore::LookupFilters el_filters;
    auto add_filters = [](CLI::App* cmd, mapstore::LookupFilters& f) {
        cmd->add_option("--stream", f.stream);
        cmd->add_option("--format", f.data_format);
        cmd->add_option("--ami", f.ami_tag);
    };
    auto* el_cmd = app.add_subcommand("el", "Look up events by run and event number");
    el_cmd->add_option("--run", el_run);
    el_cmd->add_option("--event", el_event);
    el_cmd->add_option("--input", el_input, "File of run:event lines ('-' = stdin)");
    add_filters(el_cmd, el_filters);
    el_cmd->callback([&] {
        action = [&] {
            std::vector<EventKey> keys;
            if (el_input) {
                if (*el_input == "-") {
                    keys = gateway::read_event_keys(std::cin);
                } else {
                    std::ifstream in(*el_input);
                    if (!in) fail(ErrorCode::NotFound, "cannot open " + *el_input);
                    keys = gateway::read_event_keys(in);
                }
            }
            if (el_run || el_event) {
                if (!el_run || !el_event) fail(ErrorCode::InvalidArgument, "--run and --event go together");
                keys.push_back({*el_run, *el_event});
            }
            if (keys.empty()) fail(ErrorCode::InvalidArgument, "give --run/--event or --input");
            auto l = layout_of(g);
            mapstore::Store store(l.root);
            auto doc = gateway::el_query(store, keys, el_filters);
            print(g, doc, [&] {
                for (const auto& r : doc["results"]) {
                    auto id = std::to_string(r["run"].get<std::uint32_t>()) + ":" +
                              std::to_string(r["event"].get<std::uint64_t>());
                    if (!r["found"].get<bool>()) {
                        std::cout << id << "\tnot found\n";
                        continue;
                    }
                    for (const auto& m : r["matches"]) {
                        std::cout << id << '\t' << str(m["dataset"]);
                        for (const auto& ref : m["guid_refs"]) std::cout << '\t' << str(ref);
                        std::cout << '\n';
                    }
                }
            });
            return doc["not_found"].get<std::uint64_t>() > 0 ? kExitNotFound : 0;
        };
    });

    // ---- ti ----
    std::string ti_what, ti_dataset;
    std::optional<std::string> ti_menu;
    auto* ti_cmd = app.add_subcommand("ti", "Trigger information: decode, stats, overlaps");
    ti_cmd->add_option("what", ti_what, "stats | overlaps | decode")->required()->check(CLI::IsMember({"stats", "overlaps", "decode"}));
    ti_cmd->add_option("dataset", ti_dataset)->required();
    ti_cmd->add_option("--menu", ti_menu, "Menu file for decode (default <store>/menus.tsv)");
    ti_cmd->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            mapstore::Store store(l.root);
            if (ti_what == "decode") {
                auto doc = gateway::ti_decode(store, ti_dataset, ti_menu ? std::filesystem::path(*ti_menu) : l.menus());
                std::cout << doc.dump(2) << '\n';
            } else if (ti_what == "stats") {
                auto doc = gateway::ti_stats(store, ti_dataset);
                print(g, doc, [&] {
                    for (const auto& [name, n] : doc["chains"].items()) std::cout << n << '\t' << name << '\n';
                });
            } else {
                auto doc = gateway::ti_overlaps(store, ti_dataset);
                print(g, doc, [&] {
                    const auto& chains = doc["chains"];
                    for (std::size_t i = 0; i < chains.size(); ++i) {
                        std::cout << str(chains[i]);
                        for (const auto& v : doc["matrix"][i]) std::cout << '\t' << v;
                        std::cout << '\n';
                    }
                });
            }
            return 0;
        };
    });

    // ---- inspect ----
    std::string in_table;
    std::size_t in_head = 10;
    auto* in_cmd = app.add_subcommand("inspect", "Show the first rows of any catalogued table");
    in_cmd->add_option("table", in_table)->required();
    in_cmd->add_option("--head", in_head, "Rows to show");
    in_cmd->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            mapstore::Store store(l.root);
            auto doc = gateway::inspect(store, in_table, in_head);
            print(g, doc, [&] {
                std::cout << "# " << str(doc["table"]) << " " << str(doc["mode"]) << "/" << str(doc["codec"]) << ", "
                          << doc["n_rows"] << " rows\n";
                for (const auto& r : doc["rows"]) std::cout << str(r["key"]) << '\t' << str(r["value"]) << '\n';
            });
            return 0;
        };
    });

    // ---- pick ----
    std::optional<std::string> pk_input;
    std::vector<std::string> pk_events;
    mapstore::LookupFilters pk_filters;
    auto* pk_cmd = app.add_subcommand("pick", "Build an event-picking manifest grouped by file");
    pk_cmd->add_option("--input", pk_input, "File of run:event lines");
    pk_cmd->add_option("--event", pk_events, "run:event (repeatable)");
    add_filters(pk_cmd, pk_filters);
    pk_cmd->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            gateway::PickRequest req;
            req.filters = pk_filters;
            if (pk_input) {
                std::ifstream in(*pk_input);
                if (!in) fail(ErrorCode::NotFound, "cannot open " + *pk_input);
                req.events = gateway::read_event_keys(in);
            }
            for (const auto& e : pk_events) req.events.push_back(gateway::parse_event_key(e));
            auto cfg = config_of(l);
            if (req.events.size() > cfg.max_pick_events)
                fail(ErrorCode::TooManyEvents, std::to_string(req.events.size()) + " events requested, limit " +
                                                   std::to_string(cfg.max_pick_events));
            mapstore::Store store(l.root);
            auto m = gateway::build_manifest(store, req);
            m.id = "cli";
            print(g, m.to_json(), [&] {
                for (const auto& grp : m.groups) {
                    std::cout << grp.guid.to_text() << '\t' << grp.dataset << '\t' << grp.events.size() << " events\n";
                    for (const auto& e : grp.events)
                        std::cout << "  " << e.run << ':' << e.event << " @" << e.pointer << '\n';
                }
                for (const auto& k : m.not_found) std::cout << k.run << ':' << k.event << "\tnot found\n";
                std::cout << to_string(m.status) << '\n';
            });
            return m.not_found.empty() ? 0 : kExitNotFound;
        };
    });

    // ---- produce ----
    std::vector<std::string> pr_jobs;
    std::optional<std::string> pr_synth;
    std::size_t pr_events = 1000, pr_files = 2;
    std::uint64_t pr_seed = 1;
    double pr_dups = 0;
    auto* pr_cmd = app.add_subcommand("produce", "Run indexing jobs and report them to the broker");
    pr_cmd->add_option("--job", pr_jobs, "Job configuration file (repeatable)");
    pr_cmd->add_option("--synthetic", pr_synth, "Generate inputs for this dataset name, register it and index it");
    pr_cmd->add_option("--events", pr_events, "Synthetic events");
    pr_cmd->add_option("--files", pr_files, "Synthetic files");
    pr_cmd->add_option("--seed", pr_seed);
    pr_cmd->add_option("--duplicates", pr_dups, "Synthetic in-file duplicate rate");
    pr_cmd->callback([&] {
        action = [&] {
            auto l = layout_of(g, false);
            std::filesystem::create_directories(l.root);
            auto cfg = config_of(l);
            std::vector<producer::JobConfig> jobs;
            for (const auto& j : pr_jobs) jobs.push_back(producer::JobConfig::load(j));
            if (pr_synth) {
                synth::DatasetSpec spec;
                spec.name = DatasetName::parse(*pr_synth);
                spec.seed = pr_seed;
                spec.n_files = pr_files;
                spec.events_per_file = std::max<std::size_t>(1, pr_events / pr_files);
                spec.duplicate_rate = pr_dups;
                auto ds = synth::generate(spec);
                auto inputs = ds.write_inputs(l.root / "inputs" / spec.name.str());
                Registry reg;
                if (std::filesystem::exists(l.registry())) reg = Registry::load(l.registry());
                reg.add(ds.registry_entry());
                reg.save(l.registry());
                for (std::size_t i = 0; i < inputs.size(); ++i) {
                    producer::JobConfig jc;
                    jc.task_id = 1;
                    jc.job_id = i + 1;
                    jc.dataset = spec.name;
                    jc.input_paths = {inputs[i]};
                    jobs.push_back(jc);
                }
                auto menus = std::filesystem::exists(l.menus()) ? trigger::MenuSet::load(l.menus()) : trigger::MenuSet{};
                for (const auto& [smk, msg] : ds.menus)
                    if (!menus.find(smk)) menus.add(trigger::MenuTable::from_message(msg));
                std::ofstream out(l.menus());
                menus.write(out);
            }
            if (jobs.empty()) fail(ErrorCode::InvalidArgument, "nothing to run: give --job or --synthetic");
            auto stores = object_stores(l);
            auto channel = transport::BrokerClient::from_endpoint(cfg.broker);
            producer::ProducerEnv env;
            env.stores = &stores;
            env.channel = channel.get();
            int rc = 0;
            for (const auto& jc : jobs) {
                try {
                    auto out = producer::run_producer_job(jc, env);
                    std::cout << jc.dataset.str() << " job " << jc.job_id << ": " << out.n_events << " events -> "
                              << out.object_uri.str() << '\n';
                    heartbeat(l, "producer", {{"dataset", jc.dataset.str()}, {"job_id", jc.job_id}, {"events", out.n_events}});
                } catch (const Error& e) {
                    std::cerr << jc.dataset.str() << " job " << jc.job_id << ": " << e.what() << '\n';
                    heartbeat(l, "producer", {{"dataset", jc.dataset.str()}, {"error", e.what()}}, "critical");
                    rc = kExitError;
                }
            }
            return rc;
        };
    });

    // ---- supervisor ----
    double run_for = 0;
    double sweep_s = 5;
    auto* sv_cmd = app.add_subcommand("supervisor", "Run the validation supervisor against the broker");
    sv_cmd->add_option("--for", run_for, "Stop after this many seconds (default: until interrupted)");
    sv_cmd->add_option("--sweep", sweep_s, "Retry sweep period in seconds");
    sv_cmd->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            auto cfg = config_of(l);
            auto stores = object_stores(l);
            auto channel = transport::BrokerClient::from_endpoint(cfg.broker);
            supervisor::SupervisorConfig sc;
            std::filesystem::create_directories(l.supervisor_journal().parent_path());
            sc.journal = l.supervisor_journal();
            sc.notifications = l.supervisor_notifications();
            if (std::filesystem::exists(l.task_status())) sc.task_status = l.task_status();
            supervisor::Supervisor sup(Registry::load(l.registry()), sc, &stores, channel.get());
            auto sub = channel->subscribe(producer::JobConfig{}.broker_queue);
            std::thread loop([&] {
                supervisor::run_loop(sup, *sub, g_stop, std::chrono::milliseconds(static_cast<long>(sweep_s * 1000)));
            });
            serve_until_stopped(l, "supervisor", run_for, [&] {
                json phases = json::object();
                for (const auto& s : sup.states()) phases[std::string(supervisor::to_string(s.phase))] =
                                                       phases.value(std::string(supervisor::to_string(s.phase)), 0) + 1;
                return json{{"phases", phases}, {"quarantined", sup.quarantine().size()}};
            });
            loop.join();
            return 0;
        };
    });

    // ---- consumer ----
    bool cs_import = false;
    auto* cs_cmd = app.add_subcommand("consumer", "Consume validated datasets into sorted files");
    cs_cmd->add_option("--for", run_for, "Stop after this many seconds (default: until interrupted)");
    cs_cmd->add_flag("--import", cs_import, "Also import finished files into the store and the mirror");
    cs_cmd->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            auto cfg = config_of(l);
            auto stores = object_stores(l);
            auto channel = transport::BrokerClient::from_endpoint(cfg.broker);
            consumer::ConsumerConfig cc;
            cc.store_root = l.root;
            auto sub = channel->subscribe(supervisor::SupervisorConfig{}.notice_queue);
            std::thread loop([&] { consumer::run_loop(*sub, *channel, stores, cc, g_stop); });
            std::optional<mapstore::Store> store;
            std::unique_ptr<eio::Eio> mirror;
            if (cs_import) {
                store.emplace(l.root);
                mirror = std::make_unique<eio::Eio>(l.eio(), eio_config(l));
            }
            std::uint64_t imported = 0;
            auto import_tick = [&] {
                if (!store) return;
                try {
                    for (const auto& d : gateway::import_pending(l, *store, *mirror)) {
                        std::cout << "imported " << d.dataset << " (" << d.rows << " rows, " << d.duplicates
                                  << " duplicates)" << std::endl;
                        ++imported;
                    }
                } catch (const Error& e) {
                    heartbeat(l, "mapstore", {{"error", e.what()}}, "critical");
                }
            };
            serve_until_stopped(
                l, "consumer", run_for, [&] { return json{{"imported", imported}}; }, import_tick);
            import_tick();
            loop.join();
            return 0;
        };
    });

    // ---- serve ----
    std::optional<std::string> sv_host;
    std::optional<std::uint16_t> sv_port;
    auto* http_cmd = app.add_subcommand("serve", "Serve the REST API");
    http_cmd->add_option("--host", sv_host);
    http_cmd->add_option("--port", sv_port);
    http_cmd->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            auto cfg = config_of(l);
            mapstore::Store store(l.root);
            auto mirror = open_eio(l);
            gateway::PickService picks(store, l.picks(), cfg.max_pick_events);
            gateway::ServiceContext ctx;
            ctx.layout = l;
            ctx.store = &store;
            ctx.eio = &mirror;
            ctx.picks = &picks;
            ctx.status.period_ms = cfg.status_period_s * 1000;
            gateway::RestServer server(ctx);
            auto port = server.start(sv_host.value_or(cfg.http_host), sv_port.value_or(cfg.http_port));
            std::cout << "listening on " << sv_host.value_or(cfg.http_host) << ':' << port << std::endl;
            serve_until_stopped(l, "gateway", 0, [] { return json{{"endpoint", "rest"}}; });
            server.stop();
            return 0;
        };
    });

    // ---- broker ----
    auto* br_cmd = app.add_subcommand("broker", "Run the message broker");
    br_cmd->add_option("--host", sv_host);
    br_cmd->add_option("--port", sv_port);
    br_cmd->callback([&] {
        action = [&] {
            auto l = layout_of(g, false);
            auto cfg = config_of(l);
            std::uint16_t port = 61613;
            if (auto c = cfg.broker.rfind(':'); c != std::string::npos) port = static_cast<std::uint16_t>(std::stoul(cfg.broker.substr(c + 1)));
            auto broker = std::make_shared<transport::Broker>(l.broker());
            transport::BrokerServer server(broker, sv_host.value_or("127.0.0.1"), sv_port.value_or(port));
            std::cout << "broker on port " << server.port() << std::endl;
            serve_until_stopped(l, "broker", 0, [&] {
                json depth = json::object();
                for (const auto& q : broker->queues()) depth[q] = broker->depth(q);
                return json{{"depth", depth}};
            });
            server.stop();
            return 0;
        };
    });

    // ---- status ----
    auto* st_cmd = app.add_subcommand("status", "Module status dashboard record");
    st_cmd->callback([&] {
        action = [&] {
            auto l = layout_of(g);
            auto cfg = config_of(l);
            mapstore::Store store(l.root);
            auto mirror = open_eio(l);
            gateway::StatusConfig sc;
            sc.period_ms = cfg.status_period_s * 1000;
            auto doc = gateway::status_document(l, store, mirror, sc, wall_ms());
            print(g, doc, [&] {
                std::cout << "overall\t" << str(doc["status"]) << '\n';
                for (const auto& m : doc["custom"]["modules"]) std::cout << str(m["module"]) << '\t' << str(m["status"]) << '\n';
            });
            return 0;
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    try {
        return action ? action() : 0;
    } catch (const Error& e) {
        std::cerr << "ei: " << e.what() << '\n';
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "ei: " << e.what() << '\n';
        return kExitError;
    }
}

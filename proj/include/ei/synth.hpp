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

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ei/core.hpp"
#include "ei/event_file.hpp"
#include "ei/spb.hpp"

/// Deterministic synthetic datasets with a ledger of everything injected, used as test oracles.
namespace ei::synth {

struct TriggerProfile {
    std::array<std::size_t, 3> chains{96, 0, 192};  // menu size per level; L2 empty (merged into HLT)
    std::size_t patterns = 24;                      // distinct correlated firing patterns
    double pattern_density = 0.06;                  // fraction of chains fired by one pattern
    double noise = 0.05;                            // chance of one extra random bit per event
};

struct DatasetSpec {
    DatasetName name;
    std::uint64_t seed = 1;
    std::size_t n_files = 1;
    std::size_t events_per_file = 1000;
    std::vector<std::uint64_t> event_numbers;  // overrides consecutive numbering when non-empty
    std::uint64_t first_event = 1;
    std::uint64_t events_per_lbn = 500;
    bool simulated = false;
    bool with_trigger = true;
    bool smk_in_events = true;  // false leaves smk absent in every record
    std::uint32_t smk = 2100;
    std::optional<std::size_t> smk_switch_at;  // event index where smk becomes smk + 1
    std::size_t upstream_refs = 1;             // 0..2
    double duplicate_rate = 0.0;               // same-file repeats, as a fraction of events
    double cross_file_duplicate_rate = 0.0;    // repeats landing in a later file
    std::uint64_t created_ms = 1'500'000'000'000;
    std::string proc_version = "r9264";
    TriggerProfile trigger;
};

struct InjectedDuplicate {
    EventKey key;
    std::size_t original_file = 0;
    std::size_t copy_file = 0;
    bool operator==(const InjectedDuplicate&) const = default;
};

struct SynthFile {
    producer::InputHeader header;
    std::vector<EventRecord> events;
};

struct SynthDataset {
    DatasetSpec spec;
    std::vector<SynthFile> files;
    std::map<std::uint32_t, spb::TriggerMenuMsg> menus;
    std::vector<InjectedDuplicate> duplicates;
    std::map<std::string, std::uint64_t> chain_counts;  // over unique events

    std::uint32_t dataset_id() const { return dataset_id_of(spec.name); }
    std::uint64_t total_events() const;
    /// Distinct keys, ascending.
    std::vector<EventKey> unique_keys() const;
    /// First occurrence of each key, ascending by key.
    std::vector<EventRecord> unique_events() const;
    RegistryEntry registry_entry() const;
    /// One input file per SynthFile, named <guid>.events.jsonl.
    std::vector<std::filesystem::path> write_inputs(const std::filesystem::path& dir) const;
};

spb::TriggerMenuMsg make_menu(std::uint32_t smk, const std::array<std::size_t, 3>& chains);
std::string chain_name(TriggerLevel level, std::size_t counter);

SynthDataset generate(const DatasetSpec& spec);

/// Downstream dataset over a random subset of `parent`'s unique events (keep_fraction), with
/// provenance refs pointing back into the parent's files.
SynthDataset derive(const SynthDataset& parent, const DatasetName& name, double keep_fraction, std::uint64_t seed,
                    std::size_t n_files = 1, bool with_trigger = false);

}  // namespace ei::synth

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

#include "ei/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "ei/error.hpp"

namespace ei::synth {

namespace {

using Masks = std::array<TriggerMask, 3>;

Guid next_guid(std::mt19937_64& rng) {
    std::array<std::uint8_t, 16> b{};
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    b[6] = static_cast<std::uint8_t>((b[6] & 0x0F) | 0x40);  // version-4 shape
    b[8] = static_cast<std::uint8_t>((b[8] & 0x3F) | 0x80);
    return Guid(b);
}

TriggerMask blank_mask(std::size_t chains) { return TriggerMask(std::vector<std::uint64_t>((chains + 63) / 64, 0)); }

std::vector<Masks> make_patterns(const TriggerProfile& p, std::mt19937_64& rng) {
    std::vector<Masks> out(std::max<std::size_t>(p.patterns, 1));
    std::bernoulli_distribution fire(p.pattern_density);
    for (auto& masks : out) {
        for (auto level : kTriggerLevels) {
            auto n = p.chains[static_cast<std::size_t>(level)];
            auto& m = masks[static_cast<std::size_t>(level)];
            m = blank_mask(n);
            for (std::size_t c = 0; c < n; ++c)
                if (fire(rng)) m.set(c);
        }
    }
    return out;
}

void count_chains(const EventRecord& r, std::map<std::string, std::uint64_t>& counts) {
    for (auto level : kTriggerLevels)
        r.trigger.mask(level).for_each_set_bit([&](std::size_t bit) { ++counts[chain_name(level, bit)]; });
}

std::vector<std::size_t> split_sizes(std::size_t total, std::size_t parts) {
    parts = std::max<std::size_t>(parts, 1);
    std::vector<std::size_t> sizes(parts, total / parts);
    for (std::size_t i = 0; i < total % parts; ++i) ++sizes[i];
    return sizes;
}

void renumber(SynthFile& f) {
    for (std::size_t i = 0; i < f.events.size(); ++i) {
        f.events[i].locations[0].guid = f.header.guid;
        f.events[i].locations[0].internal_pointer = i;
    }
    f.header.n_events = f.events.size();
}

producer::InputHeader header_for(const DatasetSpec& spec, const Guid& guid,
                                 const std::map<std::uint32_t, spb::TriggerMenuMsg>& menus) {
    producer::InputHeader h;
    h.guid = guid;
    h.dataset = spec.name;
    h.proc_version = spec.proc_version;
    h.stream = spec.name.stream;
    h.project = spec.name.project;
    h.smk = spec.with_trigger ? spec.smk : 0;
    h.menus = menus;
    return h;
}

void inject_duplicates(SynthDataset& ds, std::mt19937_64& rng) {
    const auto& spec = ds.spec;
    std::set<EventKey> used;
    auto pick_source = [&](std::size_t file) -> std::optional<std::size_t> {
        auto& ev = ds.files[file].events;
        if (ev.empty()) return std::nullopt;
        for (int attempt = 0; attempt < 32; ++attempt) {
            auto pos = static_cast<std::size_t>(rng() % ev.size());
            if (used.insert(ev[pos].key).second) return pos;
        }
        return std::nullopt;
    };
    for (std::size_t f = 0; f < ds.files.size(); ++f) {
        auto n = static_cast<std::size_t>(std::llround(spec.duplicate_rate * double(ds.files[f].events.size())));
        for (std::size_t k = 0; k < n; ++k) {
            auto src = pick_source(f);
            if (!src) break;
            auto& ev = ds.files[f].events;
            auto copy = ev[*src];
            auto at = *src + 1 + static_cast<std::size_t>(rng() % (ev.size() - *src));
            ev.insert(ev.begin() + static_cast<std::ptrdiff_t>(at), copy);
            ds.duplicates.push_back({copy.key, f, f});
        }
    }
    if (ds.files.size() < 2) return;
    for (std::size_t f = 0; f + 1 < ds.files.size(); ++f) {
        auto n = static_cast<std::size_t>(
            std::llround(spec.cross_file_duplicate_rate * double(ds.files[f].events.size())));
        for (std::size_t k = 0; k < n; ++k) {
            auto src = pick_source(f);
            if (!src) break;
            auto g = f + 1 + static_cast<std::size_t>(rng() % (ds.files.size() - f - 1));
            auto copy = ds.files[f].events[*src];
            auto& dst = ds.files[g].events;
            auto at = static_cast<std::size_t>(rng() % (dst.size() + 1));
            dst.insert(dst.begin() + static_cast<std::ptrdiff_t>(at), copy);
            ds.duplicates.push_back({copy.key, f, g});
        }
    }
}

}  // namespace

std::string chain_name(TriggerLevel level, std::size_t counter) {
    switch (level) {
        case TriggerLevel::L1: return "L1_item_" + std::to_string(counter);
        case TriggerLevel::L2: return "L2_chain_" + std::to_string(counter);
        case TriggerLevel::HLT: return "HLT_chain_" + std::to_string(counter);
    }
    return {};
}

spb::TriggerMenuMsg make_menu(std::uint32_t smk, const std::array<std::size_t, 3>& chains) {
    spb::TriggerMenuMsg menu;
    menu.smk = smk;
    for (auto level : kTriggerLevels) {
        auto i = static_cast<std::size_t>(level);
        for (std::size_t c = 0; c < chains[i]; ++c)
            menu.levels[i].emplace_back(static_cast<std::uint32_t>(c), chain_name(level, c));
    }
    return menu;
}

std::uint64_t SynthDataset::total_events() const {
    std::uint64_t n = 0;
    for (const auto& f : files) n += f.events.size();
    return n;
}

std::vector<EventRecord> SynthDataset::unique_events() const {
    std::map<EventKey, const EventRecord*> first;
    for (const auto& f : files)
        for (const auto& e : f.events) first.emplace(e.key, &e);
    std::vector<EventRecord> out;
    out.reserve(first.size());
    for (const auto& [key, rec] : first) out.push_back(*rec);
    return out;
}

std::vector<EventKey> SynthDataset::unique_keys() const {
    std::set<EventKey> keys;
    for (const auto& f : files)
        for (const auto& e : f.events) keys.insert(e.key);
    return {keys.begin(), keys.end()};
}

RegistryEntry SynthDataset::registry_entry() const {
    RegistryEntry e;
    e.dataset = spec.name;
    e.created_ms = spec.created_ms;
    for (const auto& f : files) e.files.push_back({f.header.guid, f.events.size()});
    return e;
}

std::vector<std::filesystem::path> SynthDataset::write_inputs(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> paths;
    for (const auto& f : files) {
        auto path = dir / (f.header.guid.to_text() + ".events.jsonl");
        producer::EventFileWriter w(path, f.header);
        for (const auto& e : f.events) w.write(e);
        w.finish();
        paths.push_back(path);
    }
    return paths;
}

SynthDataset generate(const DatasetSpec& spec) {
    if (spec.upstream_refs > kMaxGuidRefs - 1) fail(ErrorCode::InvalidArgument, "at most two upstream refs");
    std::mt19937_64 rng(spec.seed);
    SynthDataset ds;
    ds.spec = spec;
    if (spec.with_trigger) {
        ds.menus.emplace(spec.smk, make_menu(spec.smk, spec.trigger.chains));
        if (spec.smk_switch_at) ds.menus.emplace(spec.smk + 1, make_menu(spec.smk + 1, spec.trigger.chains));
    }
    auto patterns = make_patterns(spec.trigger, rng);
    std::vector<double> weights(patterns.size());
    for (std::size_t k = 0; k < weights.size(); ++k) weights[k] = 1.0 / double(k + 1);
    std::discrete_distribution<std::size_t> pick_pattern(weights.begin(), weights.end());
    std::bernoulli_distribution noisy(spec.trigger.noise);
    std::uniform_int_distribution<int> bcid(1, 3564);
    std::uniform_real_distribution<float> weight(0.1f, 2.0f);

    std::size_t total = spec.event_numbers.empty() ? spec.n_files * spec.events_per_file : spec.event_numbers.size();
    auto sizes = split_sizes(total, spec.n_files);
    const std::uint32_t run = spec.name.run_id;
    const std::uint64_t per_lbn = std::max<std::uint64_t>(spec.events_per_lbn, 1);
    const std::uint64_t t0 = 1'450'000'000'000ull + std::uint64_t(run) * 1000;
    std::size_t i = 0;
    for (std::size_t f = 0; f < sizes.size(); ++f) {
        SynthFile file;
        auto guid = next_guid(rng);
        file.header = header_for(spec, guid, ds.menus);
        std::array<Guid, 2> upstream{next_guid(rng), next_guid(rng)};
        file.events.reserve(sizes[f]);
        for (std::size_t k = 0; k < sizes[f]; ++k, ++i) {
            EventRecord r;
            r.key = {run, spec.event_numbers.empty() ? spec.first_event + i : spec.event_numbers[i]};
            r.dataset_id = dataset_id_of(spec.name);
            r.is_simulated = spec.simulated;
            r.lbn = spec.simulated ? 0 : static_cast<std::uint32_t>(1 + i / per_lbn);
            r.bcid = static_cast<std::uint16_t>(bcid(rng));
            r.timestamp_ms = t0 + (i / per_lbn) * 60'000 + (i % per_lbn) * (60'000 / per_lbn);
            if (spec.simulated) {
                r.event_weight = weight(rng);
                r.sim_process_id = run;
            }
            r.lhc_conditions = spec.simulated ? "" : "stable";
            if (spec.with_trigger) {
                auto smk = spec.smk_switch_at && i >= *spec.smk_switch_at ? spec.smk + 1 : spec.smk;
                r.trigger.smk = spec.smk_in_events ? smk : 0;
                r.trigger.l1_psk = smk + 7;
                r.trigger.hlt_psk = smk + 11;
                r.trigger.masks = patterns[pick_pattern(rng)];
                if (noisy(rng)) {
                    auto level = kTriggerLevels[rng() % 3];
                    auto n = spec.trigger.chains[static_cast<std::size_t>(level)];
                    if (n > 0) r.trigger.mask(level).set(rng() % n);
                }
            }
            r.locations.push_back({RefType::Indexed, guid, k});
            for (std::size_t u = 0; u < spec.upstream_refs; ++u)
                r.locations.push_back({static_cast<RefType>(u + 1), upstream[u], (k * (u + 2)) / 2});
            file.events.push_back(std::move(r));
        }
        ds.files.push_back(std::move(file));
    }
    inject_duplicates(ds, rng);
    for (auto& f : ds.files) renumber(f);
    for (const auto& e : ds.unique_events()) count_chains(e, ds.chain_counts);
    return ds;
}

SynthDataset derive(const SynthDataset& parent, const DatasetName& name, double keep_fraction, std::uint64_t seed,
                    std::size_t n_files, bool with_trigger) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution keep(keep_fraction);
    std::vector<EventRecord> chosen;
    for (const auto& e : parent.unique_events())
        if (keep(rng)) chosen.push_back(e);

    SynthDataset ds;
    ds.spec = parent.spec;
    ds.spec.name = name;
    ds.spec.seed = seed;
    ds.spec.n_files = n_files;
    ds.spec.event_numbers.clear();
    ds.spec.with_trigger = with_trigger && parent.spec.with_trigger;
    ds.spec.duplicate_rate = ds.spec.cross_file_duplicate_rate = 0;
    ds.spec.created_ms = parent.spec.created_ms + 86'400'000;
    if (ds.spec.with_trigger) ds.menus = parent.menus;
    auto sizes = split_sizes(chosen.size(), n_files);
    std::size_t i = 0;
    for (auto size : sizes) {
        SynthFile file;
        file.header = header_for(ds.spec, next_guid(rng), ds.menus);
        for (std::size_t k = 0; k < size; ++k, ++i) {
            const auto& src = chosen[i];
            EventRecord r = src;
            r.dataset_id = dataset_id_of(name);
            if (!ds.spec.with_trigger) r.trigger = TriggerBlock{};
            r.locations = {{RefType::Indexed, file.header.guid, k},
                           {RefType::Upstream1, src.locations[0].guid, src.locations[0].internal_pointer}};
            if (src.locations.size() > 1)
                r.locations.push_back({RefType::Upstream2, src.locations[1].guid, src.locations[1].internal_pointer});
            file.events.push_back(std::move(r));
        }
        renumber(file);
        ds.files.push_back(std::move(file));
    }
    if (ds.spec.with_trigger)
        for (const auto& e : ds.unique_events()) count_chains(e, ds.chain_counts);
    return ds;
}

}  // namespace ei::synth

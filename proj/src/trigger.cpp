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

#include "ei/trigger.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "ei/error.hpp"
#include "ei/rows.hpp"

namespace ei::trigger {

namespace {

template <typename T>
std::optional<T> parse_num(std::string_view s) {
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
    return v;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i)
        if (i == line.size() || line[i] == '\t') {
            out.push_back(line.substr(start, i - start));
            start = i + 1;
        }
    return out;
}

constexpr char kPairSep = '\t';

}  // namespace

MenuTable MenuTable::from_message(const spb::TriggerMenuMsg& msg) {
    MenuTable t;
    t.smk = msg.smk;
    for (std::size_t l = 0; l < 3; ++l)
        for (const auto& [counter, name] : msg.levels[l]) t.levels[l][counter] = name;
    return t;
}

MenuSet MenuSet::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::NotFound, "cannot open menu source " + path.string());
    return parse(in, path.filename().string());
}

MenuSet MenuSet::parse(std::istream& in, const std::string& source) {
    MenuSet set;
    std::map<std::uint32_t, std::array<std::set<std::string>, 3>> names;
    std::string line;
    std::size_t lineno = 0;
    auto bad = [&](const std::string& why) {
        fail(ErrorCode::MalformedMenuSource, source + " line " + std::to_string(lineno) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto f = split_tabs(line);
        if (f[0] == "MENU") {
            if (f.size() != 5) bad("MENU needs smk, level, counter and name");
            auto smk = parse_num<std::uint32_t>(f[1]);
            auto level = trigger_level_from_string(f[2]);
            auto counter = parse_num<std::uint32_t>(f[3]);
            if (!smk || *smk == 0) bad("bad smk '" + std::string(f[1]) + "'");
            if (!level) bad("bad level '" + std::string(f[2]) + "'");
            if (!counter) bad("bad counter '" + std::string(f[3]) + "'");
            if (f[4].empty()) bad("empty chain name");
            auto l = static_cast<std::size_t>(*level);
            auto& table = set.menus_[*smk];
            table.smk = *smk;
            if (!table.levels[l].emplace(*counter, std::string(f[4])).second)
                fail(ErrorCode::DuplicateCounter, source + " line " + std::to_string(lineno) + ": smk " +
                                                      std::to_string(*smk) + " " + std::string(f[2]) + " counter " +
                                                      std::to_string(*counter) + " already defined");
            if (!names[*smk][l].insert(std::string(f[4])).second) bad("chain name " + std::string(f[4]) + " repeated");
        } else if (f[0] == "SMKMAP") {
            if (f.size() != 4) bad("SMKMAP needs kind, key and smk");
            auto smk = parse_num<std::uint32_t>(f[3]);
            if (!smk || *smk == 0) bad("bad smk '" + std::string(f[3]) + "'");
            if (f[1] == "real") {
                auto run = parse_num<std::uint32_t>(f[2]);
                if (!run) bad("bad run '" + std::string(f[2]) + "'");
                set.runs_[*run] = *smk;
            } else if (f[1] == "sim") {
                if (f[2].empty()) bad("empty tag");
                set.tags_[std::string(f[2])] = *smk;
            } else {
                bad("SMKMAP kind must be real or sim");
            }
        } else {
            bad("unknown record '" + std::string(f[0]) + "'");
        }
    }
    return set;
}

void MenuSet::write(std::ostream& out) const {
    for (const auto& [smk, t] : menus_)
        for (auto level : kTriggerLevels)
            for (const auto& [c, name] : t.levels[static_cast<std::size_t>(level)])
                out << "MENU\t" << smk << '\t' << to_string(level) << '\t' << c << '\t' << name << '\n';
    for (const auto& [run, smk] : runs_) out << "SMKMAP\treal\t" << run << '\t' << smk << '\n';
    for (const auto& [tag, smk] : tags_) out << "SMKMAP\tsim\t" << tag << '\t' << smk << '\n';
}

void MenuSet::add(MenuTable table) {
    auto smk = table.smk;
    if (!menus_.emplace(smk, std::move(table)).second)
        fail(ErrorCode::DuplicateCounter, "menu for smk " + std::to_string(smk) + " already loaded");
}

const MenuTable* MenuSet::find(std::uint32_t smk) const {
    auto it = menus_.find(smk);
    return it == menus_.end() ? nullptr : &it->second;
}

const MenuTable& MenuSet::resolve(std::uint32_t smk, std::uint32_t run, bool simulated, const std::string& tag) const {
    if (smk == 0) {
        if (simulated) {
            auto it = tags_.find(tag);
            if (it == tags_.end()) fail(ErrorCode::UnknownSmk, "no smk for simulation tag '" + tag + "'");
            smk = it->second;
        } else {
            auto it = runs_.find(run);
            if (it == runs_.end()) fail(ErrorCode::UnknownSmk, "no smk for run " + std::to_string(run));
            smk = it->second;
        }
    }
    auto m = find(smk);
    if (!m) fail(ErrorCode::UnknownSmk, "no menu loaded for smk " + std::to_string(smk));
    return *m;
}

std::string placeholder_name(TriggerLevel level, std::size_t counter) {
    return std::string(to_string(level)) + "_counter_" + std::to_string(counter);
}

Decoded decode(const TriggerBlock& block, const MenuTable& menu) {
    Decoded d;
    for (auto level : kTriggerLevels) {
        const auto& names = menu.levels[static_cast<std::size_t>(level)];
        block.mask(level).for_each_set_bit([&](std::size_t bit) {
            auto it = names.find(static_cast<std::uint32_t>(bit));
            if (it != names.end()) {
                d.chains.push_back(it->second);
            } else {
                d.chains.push_back(placeholder_name(level, bit));
                ++d.unknown_bits;
            }
        });
    }
    return d;
}

Decoded decode_record(EventRecord& record, const MenuSet& menus, const std::string& reco_tag) {
    if (!record.trigger.has_masks()) {
        record.trigger.decoded_chains.clear();
        return {};
    }
    const auto& menu = menus.resolve(record.trigger.smk, record.key.run, record.is_simulated, reco_tag);
    auto d = decode(record.trigger, menu);
    record.trigger.decoded_chains = d.chains;
    return d;
}

std::string reco_tag_of(const std::string& ami_tag) {
    std::size_t start = 0;
    for (std::size_t i = 0; i <= ami_tag.size(); ++i)
        if (i == ami_tag.size() || ami_tag[i] == '_') {
            auto tok = ami_tag.substr(start, i - start);
            if (tok.size() > 1 && tok[0] == 'r') return tok;
            start = i + 1;
        }
    return ami_tag;
}

// ---- stored datasets ----

namespace {

bool row_has_masks(const rows::RowView& v) {
    return !v[rows::L1Mask].empty() || !v[rows::L2Mask].empty() || !v[rows::HltMask].empty();
}

std::uint64_t prop(const mapstore::CatalogEntry& e, const std::string& key) {
    auto it = e.properties.find(key);
    return it == e.properties.end() ? 0 : std::stoull(it->second);
}

mapstore::CatalogEntry valid_entry(const mapstore::Store& store, const std::string& dataset) {
    auto e = store.catalog().find(dataset);
    if (!e || e->status != mapstore::EntryStatus::Valid || e->kind != mapstore::EntryKind::Events)
        fail(ErrorCode::UnknownEntry, "no valid dataset " + dataset);
    return *e;
}

}  // namespace

DecodeReport decode_dataset(mapstore::Store& store, const std::string& dataset, const MenuSet& menus) {
    auto entry = valid_entry(store, dataset);
    auto name = DatasetName::parse(dataset);
    auto tag = reco_tag_of(name.ami_tag);
    auto reader = store.open_entry(entry);
    auto gen = prop(entry, "generation");
    auto rev = prop(entry, "decode_rev") + 1;
    auto base = store.table_base(dataset, (gen > 1 ? ".g" + std::to_string(gen) : "") + ".r" + std::to_string(rev));
    auto paths = mapfile::Paths::for_base(base);
    mapfile::Options opt;
    opt.mode = entry.properties.count("mode") && entry.properties.at("mode") == "RECORD" ? mapfile::Mode::Record
                                                                                          : mapfile::Mode::Block;
    opt.codec = reader->meta().codec;
    opt.block_size = reader->meta().block_size;
    opt.index_interval = reader->meta().index_interval;

    DecodeReport rep;
    rep.dataset = dataset;
    mapfile::Writer w(paths, opt);
    std::string out;
    reader->scan([&](std::string_view k, std::string_view v) {
        auto row = rows::RowView::parse(k, v);
        ++rep.rows;
        std::vector<std::string> chains;
        if (row_has_masks(row)) {
            ++rep.rows_with_trigger;
            TriggerBlock block;
            block.smk = parse_num<std::uint32_t>(row[rows::Smk]).value_or(0);
            block.mask(TriggerLevel::L1) = TriggerMask::from_hex(row[rows::L1Mask]);
            block.mask(TriggerLevel::L2) = TriggerMask::from_hex(row[rows::L2Mask]);
            block.mask(TriggerLevel::HLT) = TriggerMask::from_hex(row[rows::HltMask]);
            const auto& menu = menus.resolve(block.smk, row.key.run, row[rows::IsSim] == "1", tag);
            auto d = decode(block, menu);
            rep.unknown_bits += d.unknown_bits;
            ++rep.rows_per_smk[menu.smk];
            chains = std::move(d.chains);
        }
        w.add(k, rows::with_chains(v, chains));
        return true;
    });
    if (rep.rows_with_trigger == 0)
        fail(ErrorCode::NoTriggerData, dataset + " was indexed without trigger records");
    auto meta = w.finish();
    store.replace_files(dataset, paths, meta,
                        "decoded " + std::to_string(rep.rows_with_trigger) + " trigger records");
    auto updated = *store.catalog().find(dataset);
    updated.properties["decoded"] = "true";
    updated.properties["decode_rev"] = std::to_string(rev);
    updated.properties["trigger_rows"] = std::to_string(rep.rows_with_trigger);
    updated.properties["unknown_bits"] = std::to_string(rep.unknown_bits);
    store.catalog().put(updated);
    return rep;
}

std::optional<std::size_t> OverlapTable::index_of(const std::string& chain) const {
    auto it = std::lower_bound(chains.begin(), chains.end(), chain);
    if (it == chains.end() || *it != chain) return std::nullopt;
    return static_cast<std::size_t>(it - chains.begin());
}

std::map<std::string, std::uint64_t> OverlapTable::diagonal() const {
    std::map<std::string, std::uint64_t> d;
    for (std::size_t i = 0; i < chains.size(); ++i) d[chains[i]] = at(i, i);
    return d;
}

OverlapTable compute_overlaps(const mapstore::Store& store, const std::string& dataset) {
    auto entry = valid_entry(store, dataset);
    auto reader = store.open_entry(entry);
    if (entry.properties.count("decoded") == 0) {
        bool any = false;
        reader->scan([&](std::string_view k, std::string_view v) {
            any = row_has_masks(rows::RowView::parse(k, v));
            return !any;
        });
        if (!any) fail(ErrorCode::NoTriggerData, dataset + " was indexed without trigger records");
        fail(ErrorCode::NotDecoded, dataset + " has trigger masks but no decoded chain names");
    }
    if (prop(entry, "trigger_rows") == 0) fail(ErrorCode::NoTriggerData, dataset + " was indexed without trigger records");

    OverlapTable t;
    t.dataset = dataset;
    // pass 1: the chain vocabulary
    std::set<std::string> names;
    reader->scan([&](std::string_view k, std::string_view v) {
        for (auto c : rows::split_chains(rows::RowView::parse(k, v)[rows::Chains])) names.emplace(c);
        return true;
    });
    t.chains.assign(names.begin(), names.end());
    std::unordered_map<std::string_view, std::size_t> idx;
    for (std::size_t i = 0; i < t.chains.size(); ++i) idx.emplace(t.chains[i], i);
    const auto n = t.chains.size();
    t.matrix.assign(n * n, 0);

    // pass 2: upper triangle, mirrored afterwards
    std::vector<std::size_t> fired;
    reader->scan([&](std::string_view k, std::string_view v) {
        ++t.events;
        fired.clear();
        for (auto c : rows::split_chains(rows::RowView::parse(k, v)[rows::Chains])) fired.push_back(idx.at(c));
        std::sort(fired.begin(), fired.end());
        fired.erase(std::unique(fired.begin(), fired.end()), fired.end());
        for (std::size_t a = 0; a < fired.size(); ++a)
            for (std::size_t b = a; b < fired.size(); ++b) ++t.matrix[fired[a] * n + fired[b]];
        return true;
    });
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j) t.matrix[i * n + j] = t.matrix[j * n + i];
    return t;
}

namespace {

void persist_stats(mapstore::Store& store, const OverlapTable& t) {
    auto paths = mapfile::Paths::for_base(store.table_base(t.dataset, ".trigstats"));
    mapfile::Writer w(paths, {});
    for (std::size_t i = 0; i < t.size(); ++i) w.add(t.chains[i], std::to_string(t.at(i, i)));
    auto meta = w.finish();
    store.register_table(t.dataset + ".trigstats", mapstore::EntryKind::Derived, paths, meta, {t.dataset},
                         {{"events", std::to_string(t.events)}});
}

void persist_overlaps(mapstore::Store& store, const OverlapTable& t) {
    auto paths = mapfile::Paths::for_base(store.table_base(t.dataset, ".trigoverlap"));
    mapfile::Writer w(paths, {});
    // chains are sorted and contain no TAB, so (i, j>=i) in order gives ascending keys
    std::string key;
    for (std::size_t i = 0; i < t.size(); ++i)
        for (std::size_t j = i; j < t.size(); ++j) {
            if (t.at(i, j) == 0) continue;
            key = t.chains[i];
            key.push_back(kPairSep);
            key += t.chains[j];
            w.add(key, std::to_string(t.at(i, j)));
        }
    auto meta = w.finish();
    store.register_table(t.dataset + ".trigoverlap", mapstore::EntryKind::Derived, paths, meta, {t.dataset},
                         {{"events", std::to_string(t.events)}, {"chains", std::to_string(t.size())}});
}

}  // namespace

std::map<std::string, std::uint64_t> trigger_statistics(mapstore::Store& store, const std::string& dataset) {
    auto t = compute_overlaps(store, dataset);
    persist_stats(store, t);
    return t.diagonal();
}

OverlapTable trigger_overlaps(mapstore::Store& store, const std::string& dataset) {
    auto t = compute_overlaps(store, dataset);
    persist_overlaps(store, t);
    persist_stats(store, t);
    return t;
}

std::map<std::string, std::uint64_t> load_statistics(const mapstore::Store& store, const std::string& dataset) {
    std::map<std::string, std::uint64_t> out;
    store.open(dataset + ".trigstats")->scan([&](std::string_view k, std::string_view v) {
        out.emplace(std::string(k), parse_num<std::uint64_t>(v).value_or(0));
        return true;
    });
    return out;
}

OverlapTable load_overlaps(const mapstore::Store& store, const std::string& dataset) {
    auto name = dataset + ".trigoverlap";
    auto entry = store.catalog().find(name);
    auto reader = store.open(name);
    OverlapTable t;
    t.dataset = dataset;
    t.events = prop(*entry, "events");
    std::vector<std::tuple<std::string, std::string, std::uint64_t>> cells;
    std::set<std::string> names;
    reader->scan([&](std::string_view k, std::string_view v) {
        auto sep = k.find(kPairSep);
        if (sep == std::string_view::npos) fail(ErrorCode::CorruptData, name + ": malformed pair key");
        cells.emplace_back(std::string(k.substr(0, sep)), std::string(k.substr(sep + 1)),
                           parse_num<std::uint64_t>(v).value_or(0));
        names.emplace(k.substr(0, sep));
        names.emplace(k.substr(sep + 1));
        return true;
    });
    t.chains.assign(names.begin(), names.end());
    const auto n = t.chains.size();
    t.matrix.assign(n * n, 0);
    for (const auto& [a, b, c] : cells) {
        auto i = *t.index_of(a), j = *t.index_of(b);
        t.matrix[i * n + j] = c;
        t.matrix[j * n + i] = c;
    }
    return t;
}

}  // namespace ei::trigger

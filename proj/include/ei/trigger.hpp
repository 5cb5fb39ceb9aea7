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
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ei/core.hpp"
#include "ei/mapstore.hpp"
#include "ei/spb.hpp"

namespace ei::trigger {

struct MenuTable {
    std::uint32_t smk = 0;
    std::array<std::map<std::uint32_t, std::string>, 3> levels;  // counter -> chain name

    std::size_t size() const { return levels[0].size() + levels[1].size() + levels[2].size(); }
    static MenuTable from_message(const spb::TriggerMenuMsg& msg);
};

/// Menus by SMK plus the run -> SMK (real data) and reco tag -> SMK (simulation) maps.
class MenuSet {
public:
    /// Tab-separated "MENU smk level counter name" and "SMKMAP real|sim key smk" lines;
    /// blank lines and '#' comments are skipped. Raises MalformedMenuSource, DuplicateCounter.
    static MenuSet load(const std::filesystem::path& path);
    static MenuSet parse(std::istream& in, const std::string& source = "menu");
    void write(std::ostream& out) const;

    /// Raises DuplicateCounter when the SMK already has a table.
    void add(MenuTable table);
    void map_run(std::uint32_t run, std::uint32_t smk) { runs_[run] = smk; }
    void map_tag(const std::string& tag, std::uint32_t smk) { tags_[tag] = smk; }

    const MenuTable* find(std::uint32_t smk) const;
    std::size_t size() const { return menus_.size(); }

    /// smk != 0 is taken as is; otherwise run (real data) or reco tag (simulation).
    /// Raises UnknownSmk when nothing resolves to a loaded menu.
    const MenuTable& resolve(std::uint32_t smk, std::uint32_t run, bool simulated, const std::string& tag) const;

private:
    std::map<std::uint32_t, MenuTable> menus_;
    std::map<std::uint32_t, std::uint32_t> runs_;
    std::map<std::string, std::uint32_t> tags_;
};

/// `<LEVEL>_counter_<n>`, used for bits the menu does not define.
std::string placeholder_name(TriggerLevel level, std::size_t counter);

struct Decoded {
    std::vector<std::string> chains;  // L1, L2, HLT; counter-ascending within each level
    std::size_t unknown_bits = 0;
};

Decoded decode(const TriggerBlock& block, const MenuTable& menu);
/// Resolves the menu, decodes, and stores the names in record.trigger.decoded_chains.
Decoded decode_record(EventRecord& record, const MenuSet& menus, const std::string& reco_tag);

/// The reconstruction tag ("r" token) of an AMI tag, or the whole tag if there is none.
std::string reco_tag_of(const std::string& ami_tag);

// ---- stored datasets ----

struct DecodeReport {
    std::string dataset;
    std::uint64_t rows = 0;
    std::uint64_t rows_with_trigger = 0;
    std::uint64_t unknown_bits = 0;
    std::map<std::uint32_t, std::uint64_t> rows_per_smk;
};

/// Rewrites the chains column of every row of a VALID dataset. Raises NoTriggerData when no
/// row carries a mask, UnknownSmk when a row's menu cannot be resolved.
DecodeReport decode_dataset(mapstore::Store& store, const std::string& dataset, const MenuSet& menus);

struct OverlapTable {
    std::string dataset;
    std::vector<std::string> chains;    // ascending names
    std::vector<std::uint64_t> matrix;  // row-major chains.size()^2
    std::uint64_t events = 0;

    std::size_t size() const { return chains.size(); }
    std::uint64_t at(std::size_t i, std::size_t j) const { return matrix[i * chains.size() + j]; }
    std::optional<std::size_t> index_of(const std::string& chain) const;
    std::map<std::string, std::uint64_t> diagonal() const;
};

/// Counted from the decoded chain lists. Raises NoTriggerData, NotDecoded.
OverlapTable compute_overlaps(const mapstore::Store& store, const std::string& dataset);

/// Computes and persists <dataset>.trigstats (chain -> count) and returns the counts.
std::map<std::string, std::uint64_t> trigger_statistics(mapstore::Store& store, const std::string& dataset);
/// Computes and persists <dataset>.trigoverlap (chain TAB chain -> count, non-zero pairs).
OverlapTable trigger_overlaps(mapstore::Store& store, const std::string& dataset);

/// Read back the persisted tables; UnknownEntry when not built.
std::map<std::string, std::uint64_t> load_statistics(const mapstore::Store& store, const std::string& dataset);
OverlapTable load_overlaps(const mapstore::Store& store, const std::string& dataset);

}  // namespace ei::trigger

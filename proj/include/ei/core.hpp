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
#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ei {

/// 16-byte file identifier. Text form is 8-4-4-4-12 uppercase hex.
class Guid {
public:
    static constexpr std::size_t kTextSize = 36;

    Guid() = default;
    explicit Guid(const std::array<std::uint8_t, 16>& bytes) : bytes_(bytes) {}

    /// Case-insensitive; raises MalformedGuid.
    static Guid from_text(std::string_view text);
    /// Exactly 16 raw bytes; raises MalformedGuid otherwise.
    static Guid from_raw(std::string_view raw);

    std::string to_text() const;
    std::string_view raw() const { return {reinterpret_cast<const char*>(bytes_.data()), bytes_.size()}; }
    const std::array<std::uint8_t, 16>& bytes() const { return bytes_; }
    bool is_nil() const;

    auto operator<=>(const Guid&) const = default;

private:
    std::array<std::uint8_t, 16> bytes_{};
};

/// (run, event) pair; unique inside one dataset store file.
struct EventKey {
    std::uint32_t run = 0;
    std::uint64_t event = 0;

    auto operator<=>(const EventKey&) const = default;
};

inline constexpr std::size_t kEventKeySize = 12;

/// 4-byte big-endian run followed by 8-byte big-endian event: byte order == numeric order.
std::string encode_event_key(const EventKey& key);
EventKey decode_event_key(std::string_view bytes);

/// project.run.stream.prod_step.format.ami_tag
struct DatasetName {
    std::string project;
    std::uint32_t run_id = 0;
    std::string stream;
    std::string prod_step;
    std::string data_format;
    std::string ami_tag;

    /// Raises MalformedName.
    static DatasetName parse(std::string_view name);
    std::string str() const;
    /// Directory grouping of datasets: project.run
    std::string container() const;

    bool operator==(const DatasetName&) const = default;
};

/// Stable 32-bit identifier derived from the dataset name (CRC-32 of its text form).
std::uint32_t dataset_id_of(const DatasetName& name);

/// Variable-length bitset of 64-bit words; bits beyond the words read as "not fired".
class TriggerMask {
public:
    TriggerMask() = default;
    explicit TriggerMask(std::vector<std::uint64_t> words) : words_(std::move(words)) {}

    bool test(std::size_t bit) const {
        auto w = bit / 64;
        return w < words_.size() && ((words_[w] >> (bit % 64)) & 1u);
    }
    void set(std::size_t bit);
    bool any() const;
    bool empty() const { return words_.empty(); }
    std::size_t word_count() const { return words_.size(); }
    const std::vector<std::uint64_t>& words() const { return words_; }

    template <typename F>
    void for_each_set_bit(F&& f) const {
        for (std::size_t w = 0; w < words_.size(); ++w) {
            auto bits = words_[w];
            while (bits != 0) {
                int b = __builtin_ctzll(bits);
                f(w * 64 + static_cast<std::size_t>(b));
                bits &= bits - 1;
            }
        }
    }

    /// Words as lowercase hex joined by ':' (empty mask -> empty string).
    std::string to_hex() const;
    static TriggerMask from_hex(std::string_view text);

    bool operator==(const TriggerMask&) const = default;

private:
    std::vector<std::uint64_t> words_;
};

enum class TriggerLevel : std::uint8_t { L1 = 0, L2 = 1, HLT = 2 };
inline constexpr std::array<TriggerLevel, 3> kTriggerLevels{TriggerLevel::L1, TriggerLevel::L2, TriggerLevel::HLT};
std::string_view to_string(TriggerLevel level);
std::optional<TriggerLevel> trigger_level_from_string(std::string_view s);

struct TriggerBlock {
    std::uint32_t smk = 0;  // 0 means "absent", resolved from run or tag
    std::uint32_t l1_psk = 0;
    std::uint32_t hlt_psk = 0;
    std::array<TriggerMask, 3> masks;  // indexed by TriggerLevel; empty L2 = merged Run-2 trigger
    std::vector<std::string> decoded_chains;

    const TriggerMask& mask(TriggerLevel l) const { return masks[static_cast<std::size_t>(l)]; }
    TriggerMask& mask(TriggerLevel l) { return masks[static_cast<std::size_t>(l)]; }
    bool has_masks() const { return !masks[0].empty() || !masks[1].empty() || !masks[2].empty(); }

    bool operator==(const TriggerBlock&) const = default;
};

enum class RefType : std::uint8_t { Indexed = 0, Upstream1 = 1, Upstream2 = 2 };

struct GuidRef {
    RefType type = RefType::Indexed;
    Guid guid;
    std::uint64_t internal_pointer = 0;

    bool operator==(const GuidRef&) const = default;
};

inline constexpr std::size_t kMaxGuidRefs = 3;

struct EventRecord {
    EventKey key;
    std::uint32_t dataset_id = 0;
    std::uint32_t lbn = 0;
    std::uint16_t bcid = 0;
    std::uint64_t timestamp_ms = 0;
    bool is_simulated = false;
    float event_weight = 1.0f;
    std::uint32_t sim_process_id = 0;
    std::string lhc_conditions;
    TriggerBlock trigger;
    std::vector<GuidRef> locations;  // [0] is the indexed file

    /// Raises InvalidArgument / FieldOverflow on violated record invariants.
    void validate() const;

    bool operator==(const EventRecord&) const = default;
};

// --- dataset registry (stand-in for the external data-management catalogue) ---

enum class DatasetStatus : std::uint8_t { Valid, Bad, Obsolete };
std::string_view to_string(DatasetStatus s);
DatasetStatus dataset_status_from_string(std::string_view s);

struct RegistryFile {
    Guid guid;
    std::uint64_t expected_events = 0;

    bool operator==(const RegistryFile&) const = default;
};

struct RegistryEntry {
    DatasetName dataset;
    std::vector<RegistryFile> files;
    DatasetStatus status = DatasetStatus::Valid;
    std::uint64_t created_ms = 0;

    std::uint64_t expected_total() const;
    const RegistryFile* find_file(const Guid& guid) const;

    bool operator==(const RegistryEntry&) const = default;
};

/// Datasets with BAD or OBSOLETE status are never indexed.
bool is_indexable(const RegistryEntry& entry);

/// Line format: name TAB status TAB created-ms { TAB guid:count }
class Registry {
public:
    static Registry load(const std::filesystem::path& path);
    static Registry parse(std::istream& in);

    void save(const std::filesystem::path& path) const;
    void write(std::ostream& out) const;

    /// Raises UnknownDataset.
    const RegistryEntry& lookup(const DatasetName& dataset) const;
    const RegistryEntry* find(const DatasetName& dataset) const;
    /// Replaces an existing entry with the same name.
    void add(RegistryEntry entry);

    std::vector<const RegistryEntry*> entries() const;
    std::size_t size() const { return entries_.size(); }

private:
    std::map<std::string, RegistryEntry> entries_;
};

}  // namespace ei

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
#include <string>
#include <string_view>

#include "ei/core.hpp"

/// Stored event value: one CSV line per event, keyed by the encoded EventKey.
namespace ei::rows {

inline constexpr std::size_t kColumnCount = 17;
inline constexpr std::array<std::string_view, kColumnCount> kColumns{
    "dataset_id", "lbn",   "bcid",  "timestamp", "is_sim", "weight",  "sim_process_id", "smk",     "l1_psk",
    "hlt_psk",    "guid0", "guid1", "guid2",     "chains", "l1_mask", "l2_mask",        "hlt_mask"};

enum Col : std::uint8_t {
    DatasetId,
    Lbn,
    Bcid,
    Timestamp,
    IsSim,
    Weight,
    SimProcessId,
    Smk,
    L1Psk,
    HltPsk,
    Guid0,
    Guid1,
    Guid2,
    Chains,
    L1Mask,
    L2Mask,
    HltMask,
};

std::string encode_value(const EventRecord& record);
void encode_value(const EventRecord& record, std::string& out);

/// Inverse of encode_value for everything the value carries (upstream pointers and LHC
/// conditions are not stored). Raises CorruptData.
EventRecord decode_value(const EventKey& key, std::string_view value);

/// Zero-copy split of a stored value. Raises CorruptData unless exactly kColumnCount fields.
struct RowView {
    EventKey key;
    std::array<std::string_view, kColumnCount> cols;

    static RowView parse(std::string_view key_bytes, std::string_view value);
    std::string_view operator[](Col c) const { return cols[c]; }
};

/// "GUID:ptr" or "GUID" -> (guid, ptr). Raises CorruptData.
std::pair<Guid, std::uint64_t> parse_guid_ref(std::string_view field);

/// Chain names are joined with ';'.
std::vector<std::string_view> split_chains(std::string_view field);

/// Replaces the chains column of an encoded value.
std::string with_chains(std::string_view value, const std::vector<std::string>& chains);

}  // namespace ei::rows

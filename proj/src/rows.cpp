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

#include "ei/rows.hpp"

#include <charconv>

#include "ei/error.hpp"

namespace ei::rows {

namespace {

template <typename T>
void put_num(std::string& out, T v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, p);
}

template <typename T>
T get_num(std::string_view s, std::string_view what) {
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        fail(ErrorCode::CorruptData, "bad " + std::string(what) + " '" + std::string(s) + "'");
    return v;
}

}  // namespace

void encode_value(const EventRecord& r, std::string& out) {
    out.clear();
    put_num(out, r.dataset_id);
    out.push_back(',');
    put_num(out, r.lbn);
    out.push_back(',');
    put_num(out, r.bcid);
    out.push_back(',');
    put_num(out, r.timestamp_ms);
    out.append(r.is_simulated ? ",1," : ",0,");
    put_num(out, r.event_weight);
    out.push_back(',');
    put_num(out, r.sim_process_id);
    out.push_back(',');
    put_num(out, r.trigger.smk);
    out.push_back(',');
    put_num(out, r.trigger.l1_psk);
    out.push_back(',');
    put_num(out, r.trigger.hlt_psk);
    for (std::size_t i = 0; i < kMaxGuidRefs; ++i) {
        out.push_back(',');
        if (i < r.locations.size()) {
            out += r.locations[i].guid.to_text();
            if (i == 0) {
                out.push_back(':');
                put_num(out, r.locations[i].internal_pointer);
            }
        }
    }
    out.push_back(',');
    for (std::size_t i = 0; i < r.trigger.decoded_chains.size(); ++i) {
        if (i) out.push_back(';');
        out += r.trigger.decoded_chains[i];
    }
    for (const auto& m : r.trigger.masks) {
        out.push_back(',');
        out += m.to_hex();
    }
}

std::string encode_value(const EventRecord& record) {
    std::string out;
    encode_value(record, out);
    return out;
}

RowView RowView::parse(std::string_view key_bytes, std::string_view value) {
    RowView v;
    v.key = decode_event_key(key_bytes);
    std::size_t col = 0, start = 0;
    for (std::size_t i = 0; i <= value.size(); ++i) {
        if (i == value.size() || value[i] == ',') {
            if (col >= kColumnCount) fail(ErrorCode::CorruptData, "too many columns in stored value");
            v.cols[col++] = value.substr(start, i - start);
            start = i + 1;
        }
    }
    if (col != kColumnCount)
        fail(ErrorCode::CorruptData, "stored value has " + std::to_string(col) + " columns, expected " +
                                         std::to_string(kColumnCount));
    return v;
}

std::pair<Guid, std::uint64_t> parse_guid_ref(std::string_view field) {
    try {
        auto colon = field.find(':');
        if (colon == std::string_view::npos) return {Guid::from_text(field), 0};
        return {Guid::from_text(field.substr(0, colon)), get_num<std::uint64_t>(field.substr(colon + 1), "pointer")};
    } catch (const Error& e) {
        if (e.code() == ErrorCode::CorruptData) throw;
        fail(ErrorCode::CorruptData, e.what());
    }
}

std::vector<std::string_view> split_chains(std::string_view field) {
    std::vector<std::string_view> out;
    if (field.empty()) return out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= field.size(); ++i) {
        if (i == field.size() || field[i] == ';') {
            out.push_back(field.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

EventRecord decode_value(const EventKey& key, std::string_view value) {
    std::string key_bytes = encode_event_key(key);
    auto v = RowView::parse(key_bytes, value);
    EventRecord r;
    r.key = key;
    r.dataset_id = get_num<std::uint32_t>(v[DatasetId], "dataset_id");
    r.lbn = get_num<std::uint32_t>(v[Lbn], "lbn");
    r.bcid = get_num<std::uint16_t>(v[Bcid], "bcid");
    r.timestamp_ms = get_num<std::uint64_t>(v[Timestamp], "timestamp");
    r.is_simulated = get_num<int>(v[IsSim], "is_sim") != 0;
    r.event_weight = get_num<float>(v[Weight], "weight");
    r.sim_process_id = get_num<std::uint32_t>(v[SimProcessId], "sim_process_id");
    r.trigger.smk = get_num<std::uint32_t>(v[Smk], "smk");
    r.trigger.l1_psk = get_num<std::uint32_t>(v[L1Psk], "l1_psk");
    r.trigger.hlt_psk = get_num<std::uint32_t>(v[HltPsk], "hlt_psk");
    auto [g0, p0] = parse_guid_ref(v[Guid0]);
    r.locations.push_back({RefType::Indexed, g0, p0});
    if (!v[Guid1].empty()) r.locations.push_back({RefType::Upstream1, parse_guid_ref(v[Guid1]).first, 0});
    if (!v[Guid2].empty()) r.locations.push_back({RefType::Upstream2, parse_guid_ref(v[Guid2]).first, 0});
    for (auto c : split_chains(v[Chains])) r.trigger.decoded_chains.emplace_back(c);
    r.trigger.masks[0] = TriggerMask::from_hex(v[L1Mask]);
    r.trigger.masks[1] = TriggerMask::from_hex(v[L2Mask]);
    r.trigger.masks[2] = TriggerMask::from_hex(v[HltMask]);
    return r;
}

std::string with_chains(std::string_view value, const std::vector<std::string>& chains) {
    auto v = RowView::parse(std::string(kEventKeySize, '\0'), value);
    std::size_t begin = static_cast<std::size_t>(v[Chains].data() - value.data());
    std::string out(value.substr(0, begin));
    for (std::size_t i = 0; i < chains.size(); ++i) {
        if (i) out.push_back(';');
        out += chains[i];
    }
    out.append(value.substr(begin + v[Chains].size()));
    return out;
}

}  // namespace ei::rows

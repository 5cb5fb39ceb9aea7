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

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ei/broker.hpp"
#include "ei/messages.hpp"
#include "ei/object_store.hpp"

namespace ei::consumer {

struct ConsumerConfig {
    std::filesystem::path store_root;
    std::size_t memory_budget = 256u << 20;
    std::string ack_queue = "ei.reports";
};

struct ConsumeOutcome {
    transport::ConsumptionAck ack;
    std::filesystem::path output;
    std::uint64_t rows = 0;
    std::uint64_t skipped_events = 0;  // events of GUID groups not listed as valid
    std::size_t objects = 0;
    std::size_t spilled_runs = 0;
};

/// store-root/incoming/<container>/<dataset>.seq
std::filesystem::path output_path(const std::filesystem::path& store_root, const DatasetName& dataset);
/// store-root/incoming/<container>/_validated.txt
std::filesystem::path completion_list(const std::filesystem::path& store_root, const DatasetName& dataset);
std::vector<std::filesystem::path> read_completion_list(const std::filesystem::path& list);
/// Appends `produced` unless already listed.
void mark_completed(const std::filesystem::path& list, const std::filesystem::path& produced);

/// Fetches the validation object and every object it lists, keeps the valid GUID groups and
/// writes one key-sorted sequential file. Failures come back as an ack with status "error".
ConsumeOutcome consume_validation(const transport::ValidationNotice& notice, const transport::ObjectStoreSet& stores,
                                  const ConsumerConfig& config);

std::uint64_t ack_message_id(const transport::ConsumptionAck& ack, const transport::ObjectUri& validation_uri);

/// Handles VALIDATION_NOTICE messages until `stop`; each notice is acked on the broker only
/// after its CONSUMPTION_ACK was sent.
void run_loop(transport::Subscription& notices, transport::Channel& acks, const transport::ObjectStoreSet& stores,
              const ConsumerConfig& config, const std::atomic<bool>& stop);

}  // namespace ei::consumer

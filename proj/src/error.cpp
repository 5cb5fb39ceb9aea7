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

#include "ei/error.hpp"

namespace ei {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::Io: return "Io";
        case ErrorCode::MalformedName: return "MalformedName";
        case ErrorCode::MalformedGuid: return "MalformedGuid";
        case ErrorCode::UnknownDataset: return "UnknownDataset";
        case ErrorCode::StructureViolation: return "StructureViolation";
        case ErrorCode::SinkFailure: return "SinkFailure";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::TruncatedFrame: return "TruncatedFrame";
        case ErrorCode::UnknownType: return "UnknownType";
        case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
        case ErrorCode::DecompressFailure: return "DecompressFailure";
        case ErrorCode::FieldOverflow: return "FieldOverflow";
        case ErrorCode::BackendUnavailable: return "BackendUnavailable";
        case ErrorCode::KeyExists: return "KeyExists";
        case ErrorCode::NotFound: return "NotFound";
        case ErrorCode::BrokerUnreachable: return "BrokerUnreachable";
        case ErrorCode::CorruptInput: return "CorruptInput";
        case ErrorCode::AllStoresUnavailable: return "AllStoresUnavailable";
        case ErrorCode::FetchFailure: return "FetchFailure";
        case ErrorCode::PartialObject: return "PartialObject";
        case ErrorCode::UnsortedInput: return "UnsortedInput";
        case ErrorCode::KeyAbsent: return "KeyAbsent";
        case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
        case ErrorCode::CatalogConflict: return "CatalogConflict";
        case ErrorCode::UnknownEntry: return "UnknownEntry";
        case ErrorCode::CorruptData: return "CorruptData";
        case ErrorCode::MalformedMenuSource: return "MalformedMenuSource";
        case ErrorCode::DuplicateCounter: return "DuplicateCounter";
        case ErrorCode::UnknownSmk: return "UnknownSmk";
        case ErrorCode::NoTriggerData: return "NoTriggerData";
        case ErrorCode::NotDecoded: return "NotDecoded";
        case ErrorCode::VerificationFailure: return "VerificationFailure";
        case ErrorCode::UnknownPartition: return "UnknownPartition";
        case ErrorCode::NoReference: return "NoReference";
        case ErrorCode::PredicateError: return "PredicateError";
        case ErrorCode::TooManyEvents: return "TooManyEvents";
        case ErrorCode::StoreUnreachable: return "StoreUnreachable";
    }
    return "Unknown";
}

}  // namespace ei

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
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace ei::transport {

enum class Backend : std::uint8_t { Local, S3c, Fallback };
std::string_view to_string(Backend b);
Backend backend_from_string(std::string_view s);

/// backend://bucket/key
struct ObjectUri {
    Backend backend = Backend::Local;
    std::string bucket;
    std::string key;

    std::string str() const;
    /// Raises InvalidArgument.
    static ObjectUri parse(std::string_view text);

    auto operator<=>(const ObjectUri&) const = default;
};

struct PutReceipt {
    ObjectUri uri;
    std::uint64_t size = 0;
    std::uint32_t checksum = 0;  // CRC-32 of the content
};

/// Immutable blob store: a key is written at most once.
class ObjectStore {
public:
    virtual ~ObjectStore() = default;

    virtual Backend backend() const = 0;
    /// Raises BackendUnavailable, KeyExists.
    virtual PutReceipt put(const std::string& bucket, const std::string& key, std::string_view bytes) = 0;
    /// Raises NotFound, BackendUnavailable, CorruptData.
    virtual std::string get(const std::string& bucket, const std::string& key) const = 0;
    virtual void remove(const std::string& bucket, const std::string& key) = 0;
    /// URIs of every key in the bucket starting with `prefix`, in lexicographic key order.
    virtual std::vector<ObjectUri> list(const std::string& bucket, std::string_view prefix = {}) const = 0;
};

/// Directory-tree backend: <root>/<bucket>/<key>, CRC sidecars under <root>/.crc/.
class LocalObjectStore final : public ObjectStore {
public:
    explicit LocalObjectStore(std::filesystem::path root, Backend tag = Backend::Local);

    Backend backend() const override { return tag_; }
    PutReceipt put(const std::string& bucket, const std::string& key, std::string_view bytes) override;
    std::string get(const std::string& bucket, const std::string& key) const override;
    void remove(const std::string& bucket, const std::string& key) override;
    std::vector<ObjectUri> list(const std::string& bucket, std::string_view prefix = {}) const override;

    /// Fault injection: an unavailable store refuses every operation.
    void set_available(bool available) { available_ = available; }
    const std::filesystem::path& root() const { return root_; }

private:
    void check_available() const;
    std::filesystem::path object_path(const std::string& bucket, const std::string& key) const;
    std::filesystem::path crc_path(const std::string& bucket, const std::string& key) const;

    std::filesystem::path root_;
    Backend tag_;
    std::atomic<bool> available_{true};
};

/// Routes URIs to the configured backend for their scheme.
class ObjectStoreSet {
public:
    void attach(std::shared_ptr<ObjectStore> store);
    ObjectStore* find(Backend b) const;

    PutReceipt put(const ObjectUri& uri, std::string_view bytes);
    std::string get(const ObjectUri& uri) const;
    void remove(const ObjectUri& uri);
    std::vector<ObjectUri> list(Backend b, const std::string& bucket, std::string_view prefix = {}) const;

    /// Tries the primary (LOCAL, then S3C) and then FALLBACK; raises AllStoresUnavailable.
    PutReceipt put_with_fallback(const std::string& bucket, const std::string& key, std::string_view bytes);

private:
    ObjectStore& require(Backend b) const;

    std::map<Backend, std::shared_ptr<ObjectStore>> stores_;
};

}  // namespace ei::transport

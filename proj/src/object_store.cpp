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

#include "ei/object_store.hpp"

#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <fstream>
#include <random>
#include <sstream>

#include "ei/compress.hpp"
#include "ei/error.hpp"

namespace ei::transport {

namespace fs = std::filesystem;

std::string_view to_string(Backend b) {
    switch (b) {
        case Backend::Local: return "local";
        case Backend::S3c: return "s3c";
        case Backend::Fallback: return "fallback";
    }
    return "?";
}

Backend backend_from_string(std::string_view s) {
    if (s == "local") return Backend::Local;
    if (s == "s3c") return Backend::S3c;
    if (s == "fallback") return Backend::Fallback;
    fail(ErrorCode::InvalidArgument, "unknown object-store backend '" + std::string(s) + "'");
}

std::string ObjectUri::str() const { return std::string(to_string(backend)) + "://" + bucket + "/" + key; }

ObjectUri ObjectUri::parse(std::string_view text) {
    auto sep = text.find("://");
    if (sep == std::string_view::npos) fail(ErrorCode::InvalidArgument, "object URI without scheme: " + std::string(text));
    auto rest = text.substr(sep + 3);
    auto slash = rest.find('/');
    if (slash == std::string_view::npos || slash == 0 || slash + 1 == rest.size())
        fail(ErrorCode::InvalidArgument, "object URI needs bucket and key: " + std::string(text));
    ObjectUri u;
    u.backend = backend_from_string(text.substr(0, sep));
    u.bucket = rest.substr(0, slash);
    u.key = rest.substr(slash + 1);
    return u;
}

namespace {

void check_name(const std::string& bucket, const std::string& key) {
    auto bad = [](const std::string& s) {
        if (s.empty() || s.front() == '/' || s.find('\0') != std::string::npos) return true;
        std::istringstream parts(s);
        std::string part;
        while (std::getline(parts, part, '/'))
            if (part.empty() || part == "." || part == "..") return true;
        return false;
    };
    if (bad(bucket) || bucket.find('/') != std::string::npos || bucket.starts_with("."))
        fail(ErrorCode::InvalidArgument, "bad bucket name '" + bucket + "'");
    if (bad(key)) fail(ErrorCode::InvalidArgument, "bad object key '" + key + "'");
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(ErrorCode::NotFound, p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

}  // namespace

LocalObjectStore::LocalObjectStore(fs::path root, Backend tag) : root_(std::move(root)), tag_(tag) {
    fs::create_directories(root_);
}

void LocalObjectStore::check_available() const {
    if (!available_ || !fs::is_directory(root_))
        fail(ErrorCode::BackendUnavailable, std::string(to_string(tag_)) + " store at " + root_.string());
}

fs::path LocalObjectStore::object_path(const std::string& bucket, const std::string& key) const {
    check_name(bucket, key);
    return root_ / bucket / key;
}

fs::path LocalObjectStore::crc_path(const std::string& bucket, const std::string& key) const {
    return root_ / ".crc" / bucket / (key + ".crc");
}

PutReceipt LocalObjectStore::put(const std::string& bucket, const std::string& key, std::string_view bytes) {
    check_available();
    auto path = object_path(bucket, key);
    fs::create_directories(path.parent_path());
    auto crc = crc32(bytes);
    auto cpath = crc_path(bucket, key);
    fs::create_directories(cpath.parent_path());
    static thread_local std::mt19937_64 rng{std::random_device{}()};
    auto suffix = ".tmp." + std::to_string(rng());
    auto tmp = path;
    tmp += suffix;
    auto ctmp = cpath;
    ctmp += suffix;
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        std::ofstream c(ctmp, std::ios::trunc);
        c << crc << '\n';
        if (!out || !c) fail(ErrorCode::BackendUnavailable, "write failed: " + tmp.string());
    }
    // link() refuses to replace an existing name: a key is written at most once
    if (::link(tmp.c_str(), path.c_str()) != 0) {
        int err = errno;
        fs::remove(tmp);
        fs::remove(ctmp);
        if (err == EEXIST) fail(ErrorCode::KeyExists, bucket + "/" + key);
        fail(ErrorCode::BackendUnavailable, "link failed for " + path.string());
    }
    fs::remove(tmp);
    fs::rename(ctmp, cpath);
    return PutReceipt{ObjectUri{tag_, bucket, key}, bytes.size(), crc};
}

std::string LocalObjectStore::get(const std::string& bucket, const std::string& key) const {
    check_available();
    auto path = object_path(bucket, key);
    if (!fs::is_regular_file(path)) fail(ErrorCode::NotFound, ObjectUri{tag_, bucket, key}.str());
    auto bytes = read_file(path);
    std::ifstream c(crc_path(bucket, key));
    std::uint32_t expected = 0;
    if (c >> expected && expected != crc32(bytes))
        fail(ErrorCode::CorruptData, "checksum mismatch for " + ObjectUri{tag_, bucket, key}.str());
    return bytes;
}

void LocalObjectStore::remove(const std::string& bucket, const std::string& key) {
    check_available();
    auto path = object_path(bucket, key);
    if (!fs::remove(path)) fail(ErrorCode::NotFound, ObjectUri{tag_, bucket, key}.str());
    std::error_code ec;
    fs::remove(crc_path(bucket, key), ec);
}

std::vector<ObjectUri> LocalObjectStore::list(const std::string& bucket, std::string_view prefix) const {
    check_available();
    std::vector<ObjectUri> out;
    auto base = root_ / bucket;
    if (!fs::is_directory(base)) return out;
    for (const auto& entry : fs::recursive_directory_iterator(base)) {
        if (!entry.is_regular_file()) continue;
        auto key = fs::relative(entry.path(), base).generic_string();
        if (key.find(".tmp.") != std::string::npos) continue;
        if (key.starts_with(prefix)) out.push_back(ObjectUri{tag_, bucket, key});
    }
    std::sort(out.begin(), out.end(), [](const ObjectUri& a, const ObjectUri& b) { return a.key < b.key; });
    return out;
}

void ObjectStoreSet::attach(std::shared_ptr<ObjectStore> store) {
    auto b = store->backend();
    stores_[b] = std::move(store);
}

ObjectStore* ObjectStoreSet::find(Backend b) const {
    auto it = stores_.find(b);
    return it == stores_.end() ? nullptr : it->second.get();
}

ObjectStore& ObjectStoreSet::require(Backend b) const {
    auto* s = find(b);
    if (!s) fail(ErrorCode::BackendUnavailable, "no " + std::string(to_string(b)) + " backend configured");
    return *s;
}

PutReceipt ObjectStoreSet::put(const ObjectUri& uri, std::string_view bytes) {
    return require(uri.backend).put(uri.bucket, uri.key, bytes);
}

std::string ObjectStoreSet::get(const ObjectUri& uri) const { return require(uri.backend).get(uri.bucket, uri.key); }

void ObjectStoreSet::remove(const ObjectUri& uri) { require(uri.backend).remove(uri.bucket, uri.key); }

std::vector<ObjectUri> ObjectStoreSet::list(Backend b, const std::string& bucket, std::string_view prefix) const {
    return require(b).list(bucket, prefix);
}

PutReceipt ObjectStoreSet::put_with_fallback(const std::string& bucket, const std::string& key, std::string_view bytes) {
    std::string failures;
    for (auto b : {Backend::Local, Backend::S3c, Backend::Fallback}) {
        auto* s = find(b);
        if (!s) continue;
        try {
            return s->put(bucket, key, bytes);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::BackendUnavailable) throw;
            failures += std::string(failures.empty() ? "" : "; ") + e.what();
        }
    }
    fail(ErrorCode::AllStoresUnavailable, failures.empty() ? "no backend configured" : failures);
}

}  // namespace ei::transport

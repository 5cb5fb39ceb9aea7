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

#include <cstdint>
#include <memory>
#include <string>

#include "ei/error.hpp"
#include "ei/gateway.hpp"

namespace ei::gateway {

struct ServiceContext {
    Layout layout;
    mapstore::Store* store = nullptr;
    eio::Eio* eio = nullptr;
    PickService* picks = nullptr;
    StatusConfig status;
    ClockFn clock = system_clock_fn();
};

/// HTTP status for an error code: 400 bad query, 404 unknown name, 503 store trouble, else 500.
int http_status_of(ErrorCode code);

/// REST front end over the shared query core. Requests run on a pool of worker threads.
class RestServer {
public:
    explicit RestServer(ServiceContext ctx, std::size_t threads = 16);
    ~RestServer();
    RestServer(const RestServer&) = delete;
    RestServer& operator=(const RestServer&) = delete;

    /// Binds (port 0 = ephemeral) and serves on a background thread; returns the bound port.
    std::uint16_t start(const std::string& host, std::uint16_t port);
    /// Serves on the calling thread until stop().
    void run(const std::string& host, std::uint16_t port);
    void stop();

    /// The status document served at /api/v1/status.
    json status_document();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace ei::gateway

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

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

// Minimal blocking TCP helpers for the broker protocol.
namespace ei::net {

/// Owns a socket fd; reads are buffered and may carry a deadline.
class SocketStream {
public:
    explicit SocketStream(int fd) : fd_(fd) {}
    ~SocketStream();
    SocketStream(const SocketStream&) = delete;
    SocketStream& operator=(const SocketStream&) = delete;

    /// nullopt on EOF, error, or deadline.
    std::optional<std::string> read_line(std::optional<std::chrono::steady_clock::time_point> deadline = {});
    std::optional<std::string> read_exact(std::size_t n,
                                          std::optional<std::chrono::steady_clock::time_point> deadline = {});
    bool write_all(std::string_view data);

    /// True when the last failed read was a timeout rather than EOF/error.
    bool timed_out() const { return timed_out_; }
    void shutdown();
    int fd() const { return fd_; }

private:
    bool fill(std::optional<std::chrono::steady_clock::time_point> deadline);

    int fd_;
    std::string buf_;
    bool timed_out_ = false;
};

/// Returns a connected fd or -1.
int connect_tcp(const std::string& host, std::uint16_t port);
/// Returns a listening fd bound to host:port (port 0 = ephemeral) and stores the bound port.
int listen_tcp(const std::string& host, std::uint16_t port, std::uint16_t& bound_port);

}  // namespace ei::net

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
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

/// Durable queue broker with at-least-once delivery and explicit acknowledgement.
///
/// Wire protocol (UTF-8 lines over TCP):
///   SEND <queue> <len>\n<body>   ->  OK <id>\n      (after the message is on disk)
///   SUBSCRIBE <queue>\n          ->  OK\n, then pushes of MSG <id> <len>\n<body>
///   ACK <id>\n                   ->  (no reply)
/// Errors are answered with ERR <text>\n.
namespace ei::transport {

struct Delivery {
    std::uint64_t id = 0;
    std::string body;
};

class Subscription {
public:
    virtual ~Subscription() = default;
    /// Next delivery, or nullopt when nothing arrived within the timeout.
    virtual std::optional<Delivery> receive(std::chrono::milliseconds timeout) = 0;
    virtual void ack(std::uint64_t id) = 0;
};

/// Anything control messages can be sent through and consumed from.
class Channel {
public:
    virtual ~Channel() = default;
    /// Returns once the message is durably enqueued. Raises BrokerUnreachable.
    virtual std::uint64_t send(const std::string& queue, std::string_view body) = 0;
    virtual std::unique_ptr<Subscription> subscribe(const std::string& queue) = 0;
};

struct BrokerOptions {
    std::chrono::milliseconds redelivery_timeout{30'000};
    bool fsync = false;
};

/// File-backed broker state. One log per queue under `dir`; replayed on construction.
class Broker final : public Channel, public std::enable_shared_from_this<Broker> {
public:
    explicit Broker(std::filesystem::path dir, BrokerOptions options = {});
    ~Broker() override;
    Broker(const Broker&) = delete;
    Broker& operator=(const Broker&) = delete;

    std::uint64_t send(const std::string& queue, std::string_view body) override;
    std::unique_ptr<Subscription> subscribe(const std::string& queue) override;

    // Lower-level session API used by subscriptions and the TCP server.
    std::uint64_t attach(const std::string& queue);
    void detach(std::uint64_t subscriber);
    std::optional<Delivery> poll(std::uint64_t subscriber, std::chrono::milliseconds timeout);
    void ack(std::uint64_t subscriber, std::uint64_t id);

    /// Unacknowledged messages (ready + in flight).
    std::size_t depth(const std::string& queue) const;
    std::vector<std::string> queues() const;

    /// Fault injection: an unavailable broker refuses sends and polls.
    void set_available(bool available);
    /// Wakes all waiting polls; later calls fail with BrokerUnreachable.
    void shutdown();

private:
    struct Inflight {
        std::uint64_t subscriber;
        std::chrono::steady_clock::time_point deadline;
    };
    struct Queue {
        std::map<std::uint64_t, std::string> live;
        std::set<std::uint64_t> ready;
        std::map<std::uint64_t, Inflight> inflight;
        std::FILE* log = nullptr;
    };

    Queue& queue_locked(const std::string& name);
    void replay(const std::filesystem::path& file, const std::string& name);
    void rewrite_log(const std::string& name, Queue& q);
    void append(Queue& q, const std::string& record);
    void requeue_expired(Queue& q, std::chrono::steady_clock::time_point now);
    void check_open() const;

    std::filesystem::path dir_;
    BrokerOptions options_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::map<std::string, Queue> queues_;
    std::map<std::uint64_t, std::string> subscribers_;
    std::uint64_t next_id_ = 1;
    std::uint64_t next_subscriber_ = 1;
    bool available_ = true;
    bool closed_ = false;
};

/// Serves a Broker over TCP; one thread per session.
class BrokerServer {
public:
    BrokerServer(std::shared_ptr<Broker> broker, const std::string& host = "127.0.0.1", std::uint16_t port = 0,
                 std::size_t prefetch = 16);
    ~BrokerServer();
    BrokerServer(const BrokerServer&) = delete;
    BrokerServer& operator=(const BrokerServer&) = delete;

    std::uint16_t port() const { return port_; }
    void stop();

private:
    struct Session;
    void accept_loop();
    void run_session(std::shared_ptr<Session> session);

    std::shared_ptr<Broker> broker_;
    std::size_t prefetch_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> running_{true};
    std::thread acceptor_;
    std::mutex sessions_mu_;
    std::vector<std::shared_ptr<Session>> sessions_;
    std::vector<std::thread> threads_;
};

/// TCP client; each subscription owns its own connection.
class BrokerClient final : public Channel {
public:
    BrokerClient(std::string host, std::uint16_t port);
    ~BrokerClient() override;

    std::uint64_t send(const std::string& queue, std::string_view body) override;
    std::unique_ptr<Subscription> subscribe(const std::string& queue) override;

    /// "host:port"
    static std::unique_ptr<BrokerClient> from_endpoint(std::string_view endpoint);

private:
    struct Connection;
    std::string host_;
    std::uint16_t port_;
    std::mutex mu_;
    std::unique_ptr<Connection> conn_;
};

}  // namespace ei::transport

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

#include "ei/broker.hpp"

#include <sys/socket.h>
#include <unistd.h>

#include <charconv>
#include <fstream>
#include <sstream>

#include "ei/error.hpp"
#include "net.hpp"

namespace ei::transport {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

void check_queue_name(const std::string& name) {
    bool ok = !name.empty() && name.size() <= 200 && name[0] != '.';
    for (char c : name)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')) ok = false;
    if (!ok) fail(ErrorCode::InvalidArgument, "bad queue name '" + name + "'");
}

std::optional<std::uint64_t> to_u64(std::string_view s) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

std::vector<std::string_view> words(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && line[i] == ' ') ++i;
        auto j = i;
        while (j < line.size() && line[j] != ' ') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace

// --- Broker ---

Broker::Broker(fs::path dir, BrokerOptions options) : dir_(std::move(dir)), options_(options) {
    fs::create_directories(dir_);
    for (const auto& entry : fs::directory_iterator(dir_)) {
        if (entry.path().extension() != ".q") continue;
        replay(entry.path(), entry.path().stem().string());
    }
    std::lock_guard lock(mu_);
    for (auto& [name, q] : queues_) rewrite_log(name, q);
}

Broker::~Broker() {
    shutdown();
    for (auto& [_, q] : queues_)
        if (q.log) std::fclose(q.log);
}

void Broker::replay(const fs::path& file, const std::string& name) {
    std::ifstream in(file, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto& q = queues_[name];
    std::size_t pos = 0;
    // A record cut by a crash ends the replay; everything before it is intact.
    while (pos < data.size()) {
        auto nl = data.find('\n', pos);
        if (nl == std::string::npos) break;
        auto w = words(std::string_view(data).substr(pos, nl - pos));
        pos = nl + 1;
        if (w.size() == 2 && w[0] == "N") {
            if (auto v = to_u64(w[1])) next_id_ = std::max(next_id_, *v);
        } else if (w.size() == 3 && w[0] == "S") {
            auto id = to_u64(w[1]);
            auto len = to_u64(w[2]);
            if (!id || !len || pos + *len + 1 > data.size()) break;
            q.live[*id] = data.substr(pos, *len);
            q.ready.insert(*id);
            next_id_ = std::max(next_id_, *id + 1);
            pos += *len + 1;
        } else if (w.size() == 2 && w[0] == "A") {
            if (auto id = to_u64(w[1])) {
                q.live.erase(*id);
                q.ready.erase(*id);
            }
        } else {
            break;
        }
    }
}

void Broker::rewrite_log(const std::string& name, Queue& q) {
    if (q.log) std::fclose(q.log);
    auto path = dir_ / (name + ".q");
    auto tmp = dir_ / (name + ".q.tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << "N " << next_id_ << '\n';
        for (const auto& [id, body] : q.live) out << "S " << id << ' ' << body.size() << '\n' << body << '\n';
        if (!out) fail(ErrorCode::Io, "cannot write queue log " + tmp.string());
    }
    fs::rename(tmp, path);
    q.log = std::fopen(path.c_str(), "ab");
    if (!q.log) fail(ErrorCode::Io, "cannot open queue log " + path.string());
}

void Broker::append(Queue& q, const std::string& record) {
    if (std::fwrite(record.data(), 1, record.size(), q.log) != record.size() || std::fflush(q.log) != 0)
        fail(ErrorCode::BrokerUnreachable, "queue log write failed");
    if (options_.fsync) ::fsync(fileno(q.log));
}

Broker::Queue& Broker::queue_locked(const std::string& name) {
    auto it = queues_.find(name);
    if (it != queues_.end()) return it->second;
    check_queue_name(name);
    auto& q = queues_[name];
    rewrite_log(name, q);
    return q;
}

void Broker::check_open() const {
    if (closed_) fail(ErrorCode::BrokerUnreachable, "broker shut down");
    if (!available_) fail(ErrorCode::BrokerUnreachable, "broker unavailable");
}

std::uint64_t Broker::send(const std::string& queue, std::string_view body) {
    std::lock_guard lock(mu_);
    check_open();
    auto& q = queue_locked(queue);
    auto id = next_id_++;
    std::string record = "S " + std::to_string(id) + " " + std::to_string(body.size()) + "\n";
    record.append(body);
    record.push_back('\n');
    append(q, record);
    q.live.emplace(id, std::string(body));
    q.ready.insert(id);
    cv_.notify_all();
    return id;
}

std::uint64_t Broker::attach(const std::string& queue) {
    std::lock_guard lock(mu_);
    check_open();
    queue_locked(queue);
    auto sub = next_subscriber_++;
    subscribers_[sub] = queue;
    return sub;
}

void Broker::detach(std::uint64_t subscriber) {
    std::lock_guard lock(mu_);
    auto it = subscribers_.find(subscriber);
    if (it == subscribers_.end()) return;
    auto& q = queues_[it->second];
    for (auto f = q.inflight.begin(); f != q.inflight.end();) {
        if (f->second.subscriber == subscriber) {
            q.ready.insert(f->first);
            f = q.inflight.erase(f);
        } else {
            ++f;
        }
    }
    subscribers_.erase(it);
    cv_.notify_all();
}

void Broker::requeue_expired(Queue& q, Clock::time_point now) {
    for (auto f = q.inflight.begin(); f != q.inflight.end();) {
        if (f->second.deadline <= now) {
            q.ready.insert(f->first);
            f = q.inflight.erase(f);
        } else {
            ++f;
        }
    }
}

std::optional<Delivery> Broker::poll(std::uint64_t subscriber, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    auto until = Clock::now() + timeout;
    for (;;) {
        check_open();
        auto it = subscribers_.find(subscriber);
        if (it == subscribers_.end()) fail(ErrorCode::InvalidArgument, "unknown subscriber");
        auto& q = queues_[it->second];
        auto now = Clock::now();
        requeue_expired(q, now);
        if (!q.ready.empty()) {
            auto id = *q.ready.begin();
            q.ready.erase(q.ready.begin());
            q.inflight[id] = Inflight{subscriber, now + options_.redelivery_timeout};
            return Delivery{id, q.live.at(id)};
        }
        if (now >= until) return std::nullopt;
        auto wake = until;
        for (const auto& [_, f] : q.inflight) wake = std::min(wake, f.deadline);
        cv_.wait_until(lock, wake);
    }
}

void Broker::ack(std::uint64_t subscriber, std::uint64_t id) {
    std::lock_guard lock(mu_);
    auto it = subscribers_.find(subscriber);
    if (it == subscribers_.end()) return;
    auto& q = queues_[it->second];
    if (q.live.erase(id) == 0) return;
    q.ready.erase(id);
    q.inflight.erase(id);
    append(q, "A " + std::to_string(id) + "\n");
    if (q.live.empty()) rewrite_log(it->second, q);
}

std::size_t Broker::depth(const std::string& queue) const {
    std::lock_guard lock(mu_);
    auto it = queues_.find(queue);
    return it == queues_.end() ? 0 : it->second.live.size();
}

std::vector<std::string> Broker::queues() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [name, _] : queues_) out.push_back(name);
    return out;
}

void Broker::set_available(bool available) {
    std::lock_guard lock(mu_);
    available_ = available;
    cv_.notify_all();
}

void Broker::shutdown() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
}

namespace {

class LocalSubscription final : public Subscription {
public:
    LocalSubscription(std::shared_ptr<Broker> broker, std::uint64_t id) : broker_(std::move(broker)), id_(id) {}
    ~LocalSubscription() override { broker_->detach(id_); }

    std::optional<Delivery> receive(std::chrono::milliseconds timeout) override { return broker_->poll(id_, timeout); }
    void ack(std::uint64_t id) override { broker_->ack(id_, id); }

private:
    std::shared_ptr<Broker> broker_;
    std::uint64_t id_;
};

}  // namespace

std::unique_ptr<Subscription> Broker::subscribe(const std::string& queue) {
    auto sub = attach(queue);
    return std::make_unique<LocalSubscription>(shared_from_this(), sub);
}

// --- TCP server ---

struct BrokerServer::Session {
    explicit Session(int fd) : stream(fd) {}

    net::SocketStream stream;
    std::mutex write_mu;
    std::atomic<bool> alive{true};
    std::mutex credit_mu;
    std::condition_variable credit_cv;
    std::set<std::uint64_t> outstanding;

    bool write(std::string_view data) {
        std::lock_guard lock(write_mu);
        return stream.write_all(data);
    }
};

BrokerServer::BrokerServer(std::shared_ptr<Broker> broker, const std::string& host, std::uint16_t port,
                           std::size_t prefetch)
    : broker_(std::move(broker)), prefetch_(std::max<std::size_t>(1, prefetch)) {
    listen_fd_ = net::listen_tcp(host, port, port_);
    if (listen_fd_ < 0) fail(ErrorCode::Io, "cannot listen on " + host + ":" + std::to_string(port));
    acceptor_ = std::thread([this] { accept_loop(); });
}

BrokerServer::~BrokerServer() { stop(); }

void BrokerServer::stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::thread> threads;
    {
        std::lock_guard lock(sessions_mu_);
        for (auto& s : sessions_) {
            s->alive = false;
            s->stream.shutdown();
            s->credit_cv.notify_all();
        }
        threads.swap(threads_);
    }
    for (auto& t : threads)
        if (t.joinable()) t.join();
}

void BrokerServer::accept_loop() {
    while (running_) {
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (!running_) return;
            continue;
        }
        auto session = std::make_shared<Session>(fd);
        std::lock_guard lock(sessions_mu_);
        if (!running_) return;
        // drop finished sessions so long-lived servers do not accumulate them
        std::erase_if(sessions_, [](const auto& s) { return !s->alive && s.use_count() == 1; });
        sessions_.push_back(session);
        threads_.emplace_back([this, session] { run_session(session); });
    }
}

void BrokerServer::run_session(std::shared_ptr<Session> s) {
    std::optional<std::uint64_t> subscriber;
    std::thread pusher;
    auto push_loop = [this, s](std::uint64_t sub) {
        while (s->alive) {
            {
                std::unique_lock lock(s->credit_mu);
                s->credit_cv.wait_for(lock, std::chrono::milliseconds(200),
                                      [&] { return !s->alive || s->outstanding.size() < prefetch_; });
                if (!s->alive) return;
                if (s->outstanding.size() >= prefetch_) continue;
            }
            std::optional<Delivery> d;
            try {
                d = broker_->poll(sub, std::chrono::milliseconds(200));
            } catch (const Error&) {
                s->alive = false;
                s->stream.shutdown();
                return;
            }
            if (!d) continue;
            {
                std::lock_guard lock(s->credit_mu);
                s->outstanding.insert(d->id);
            }
            std::string frame = "MSG " + std::to_string(d->id) + " " + std::to_string(d->body.size()) + "\n" + d->body;
            if (!s->write(frame)) {
                s->alive = false;
                s->stream.shutdown();
                return;
            }
        }
    };

    while (s->alive) {
        auto line = s->stream.read_line();
        if (!line) break;
        auto w = words(*line);
        if (w.empty()) continue;
        if (w[0] == "SEND" && w.size() == 3) {
            auto len = to_u64(w[2]);
            if (!len) {
                s->write("ERR bad length\n");
                continue;
            }
            auto body = s->stream.read_exact(*len);
            if (!body) break;
            try {
                auto id = broker_->send(std::string(w[1]), *body);
                s->write("OK " + std::to_string(id) + "\n");
            } catch (const Error& e) {
                s->write(std::string("ERR ") + e.what() + "\n");
            }
        } else if (w[0] == "SUBSCRIBE" && w.size() == 2) {
            if (subscriber) {
                s->write("ERR already subscribed\n");
                continue;
            }
            try {
                subscriber = broker_->attach(std::string(w[1]));
            } catch (const Error& e) {
                s->write(std::string("ERR ") + e.what() + "\n");
                continue;
            }
            s->write("OK\n");
            pusher = std::thread(push_loop, *subscriber);
        } else if (w[0] == "ACK" && w.size() == 2 && subscriber) {
            if (auto id = to_u64(w[1])) {
                broker_->ack(*subscriber, *id);
                std::lock_guard lock(s->credit_mu);
                s->outstanding.erase(*id);
                s->credit_cv.notify_all();
            }
        } else {
            s->write("ERR unknown command\n");
        }
    }
    s->alive = false;
    s->credit_cv.notify_all();
    if (pusher.joinable()) pusher.join();
    if (subscriber) broker_->detach(*subscriber);
    s->stream.shutdown();
}

// --- TCP client ---

struct BrokerClient::Connection {
    explicit Connection(int fd) : stream(fd) {}
    net::SocketStream stream;
};

namespace {

constexpr auto kReplyTimeout = std::chrono::seconds(30);

class TcpSubscription final : public Subscription {
public:
    TcpSubscription(const std::string& host, std::uint16_t port, const std::string& queue) {
        int fd = net::connect_tcp(host, port);
        if (fd < 0) fail(ErrorCode::BrokerUnreachable, host + ":" + std::to_string(port));
        stream_ = std::make_unique<net::SocketStream>(fd);
        if (!stream_->write_all("SUBSCRIBE " + queue + "\n"))
            fail(ErrorCode::BrokerUnreachable, "subscribe write failed");
        auto reply = stream_->read_line(Clock::now() + kReplyTimeout);
        if (!reply || *reply != "OK") fail(ErrorCode::BrokerUnreachable, "subscribe refused: " + reply.value_or("<eof>"));
    }

    std::optional<Delivery> receive(std::chrono::milliseconds timeout) override {
        auto line = stream_->read_line(Clock::now() + timeout);
        if (!line) {
            if (stream_->timed_out()) return std::nullopt;
            fail(ErrorCode::BrokerUnreachable, "connection closed");
        }
        auto w = words(*line);
        std::optional<std::uint64_t> id, len;
        if (w.size() == 3 && w[0] == "MSG") {
            id = to_u64(w[1]);
            len = to_u64(w[2]);
        }
        if (!id || !len) fail(ErrorCode::BrokerUnreachable, "protocol error: " + *line);
        auto body = stream_->read_exact(*len, Clock::now() + kReplyTimeout);
        if (!body) fail(ErrorCode::BrokerUnreachable, "connection closed mid-message");
        return Delivery{*id, std::move(*body)};
    }

    void ack(std::uint64_t id) override {
        if (!stream_->write_all("ACK " + std::to_string(id) + "\n")) fail(ErrorCode::BrokerUnreachable, "ack write failed");
    }

private:
    std::unique_ptr<net::SocketStream> stream_;
};

}  // namespace

BrokerClient::BrokerClient(std::string host, std::uint16_t port) : host_(std::move(host)), port_(port) {}
BrokerClient::~BrokerClient() = default;

std::uint64_t BrokerClient::send(const std::string& queue, std::string_view body) {
    std::lock_guard lock(mu_);
    if (!conn_) {
        int fd = net::connect_tcp(host_, port_);
        if (fd < 0) fail(ErrorCode::BrokerUnreachable, host_ + ":" + std::to_string(port_));
        conn_ = std::make_unique<Connection>(fd);
    }
    std::string frame = "SEND " + queue + " " + std::to_string(body.size()) + "\n";
    frame.append(body);
    std::optional<std::string> reply;
    if (conn_->stream.write_all(frame)) reply = conn_->stream.read_line(Clock::now() + kReplyTimeout);
    if (!reply) {
        conn_.reset();
        fail(ErrorCode::BrokerUnreachable, "no reply from " + host_ + ":" + std::to_string(port_));
    }
    auto w = words(*reply);
    if (w.size() == 2 && w[0] == "OK")
        if (auto id = to_u64(w[1])) return *id;
    if (reply->starts_with("ERR bad queue") || reply->find("InvalidArgument") != std::string::npos)
        fail(ErrorCode::InvalidArgument, *reply);
    fail(ErrorCode::BrokerUnreachable, "send refused: " + *reply);
}

std::unique_ptr<Subscription> BrokerClient::subscribe(const std::string& queue) {
    return std::make_unique<TcpSubscription>(host_, port_, queue);
}

std::unique_ptr<BrokerClient> BrokerClient::from_endpoint(std::string_view endpoint) {
    auto colon = endpoint.rfind(':');
    auto port = colon == std::string_view::npos ? std::nullopt : to_u64(endpoint.substr(colon + 1));
    if (!port || *port > 65535) fail(ErrorCode::InvalidArgument, "endpoint must be host:port, got " + std::string(endpoint));
    return std::make_unique<BrokerClient>(std::string(endpoint.substr(0, colon)), static_cast<std::uint16_t>(*port));
}

}  // namespace ei::transport

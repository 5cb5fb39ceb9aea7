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

#include "ei/rest.hpp"

#include <httplib.h>

#include <thread>

#include "ei/error.hpp"

namespace ei::gateway {

int http_status_of(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument:
        case ErrorCode::PredicateError:
        case ErrorCode::MalformedName:
        case ErrorCode::MalformedGuid:
        case ErrorCode::TooManyEvents:
            return 400;
        case ErrorCode::UnknownEntry:
        case ErrorCode::UnknownDataset:
        case ErrorCode::NotFound:
        case ErrorCode::UnknownPartition:
        case ErrorCode::NoReference:
        case ErrorCode::KeyAbsent:
        case ErrorCode::NoTriggerData:
        case ErrorCode::NotDecoded:
            return 404;
        case ErrorCode::StoreUnreachable:
        case ErrorCode::Io:
        case ErrorCode::BackendUnavailable:
            return 503;
        default:
            return 500;
    }
}

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

std::optional<std::string> param(const httplib::Request& req, const char* name) {
    if (!req.has_param(name)) return std::nullopt;
    return req.get_param_value(name);
}

std::uint64_t number_param(const httplib::Request& req, const char* name) {
    auto v = req.get_param_value(name);
    try {
        std::size_t used = 0;
        auto n = std::stoull(v, &used);
        if (used == v.size()) return n;
    } catch (const std::exception&) {
    }
    fail(ErrorCode::InvalidArgument, std::string("bad ") + name + " '" + v + "'");
}

mapstore::LookupFilters filters_of(const httplib::Request& req) {
    mapstore::LookupFilters f;
    f.stream = param(req, "stream");
    f.data_format = param(req, "format");
    if (!f.data_format) f.data_format = param(req, "data_format");
    f.ami_tag = param(req, "ami");
    if (!f.ami_tag) f.ami_tag = param(req, "ami_tag");
    return f;
}

}  // namespace

struct RestServer::Impl {
    ServiceContext ctx;
    httplib::Server server;
    std::thread thread;

    template <class F>
    auto guarded(F f) {
        return [f](const httplib::Request& req, httplib::Response& res) {
            try {
                f(req, res);
            } catch (const Error& e) {
                send_json(res, {{"error", to_string(e.code())}, {"message", e.what()}}, http_status_of(e.code()));
            } catch (const std::exception& e) {
                send_json(res, {{"error", "Internal"}, {"message", e.what()}}, 500);
            }
        };
    }

    void routes(RestServer& self) {
        server.Get("/api/v1/el", guarded([this](const httplib::Request& req, httplib::Response& res) {
            std::vector<EventKey> keys;
            if (req.has_param("events")) {
                std::string list = req.get_param_value("events");
                std::size_t pos = 0;
                while (pos <= list.size()) {
                    auto end = list.find(',', pos);
                    if (end == std::string::npos) end = list.size();
                    if (end > pos) keys.push_back(parse_event_key(list.substr(pos, end - pos)));
                    pos = end + 1;
                }
            } else {
                if (!req.has_param("run") || !req.has_param("event"))
                    fail(ErrorCode::InvalidArgument, "el needs run and event (or events=run:event,...)");
                keys.push_back({static_cast<std::uint32_t>(number_param(req, "run")), number_param(req, "event")});
            }
            auto doc = el_query(*ctx.store, keys, filters_of(req));
            send_json(res, doc, doc["found"].get<std::uint64_t>() > 0 ? 200 : 404);
        }));
        server.Get("/api/v1/ei/([^/]+)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            ScanQuery q;
            q.dataset = req.matches[1];
            if (auto w = param(req, "where")) q.where = *w;
            if (auto s = param(req, "select")) {
                std::size_t pos = 0;
                while (pos <= s->size()) {
                    auto end = s->find(',', pos);
                    if (end == std::string::npos) end = s->size();
                    if (end > pos) q.select.push_back(s->substr(pos, end - pos));
                    pos = end + 1;
                }
            }
            q.count_only = param(req, "count").value_or("0") == "1" || param(req, "count").value_or("") == "true";
            q.limit = req.has_param("limit") ? std::optional<std::size_t>(number_param(req, "limit")) : std::nullopt;
            send_json(res, ei_query(*ctx.store, q));
        }));
        server.Get("/api/v1/catalog", guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_json(res, catalog_list(*ctx.store, param(req, "status"), param(req, "kind"), param(req, "prefix")));
        }));
        server.Get("/api/v1/datasets", guarded([this](const httplib::Request& req, httplib::Response& res) {
            eio::ReportFilters f;
            f.project = param(req, "project");
            if (req.has_param("run")) f.run = static_cast<std::uint32_t>(number_param(req, "run"));
            f.stream_prefix = param(req, "stream");
            f.data_format = param(req, "format");
            f.name_prefix = param(req, "prefix");
            send_json(res, datasets_json(*ctx.eio, f));
        }));
        server.Get("/api/v1/datasets/([^/]+)/report", guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_json(res, dataset_report_json(*ctx.eio, req.matches[1]));
        }));
        server.Get("/api/v1/overlaps/([0-9]+)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto run = static_cast<std::uint32_t>(std::stoul(req.matches[1]));
            auto alg = eio::overlap_algorithm_from_string(param(req, "alg").value_or("A_OVER_MIN"));
            double threshold = 70;
            if (auto t = param(req, "threshold")) {
                try {
                    threshold = std::stod(*t);
                } catch (const std::exception&) {
                    fail(ErrorCode::InvalidArgument, "bad threshold '" + *t + "'");
                }
            }
            auto rep = ctx.eio->dataset_overlaps(run, alg, threshold);
            if (param(req, "format").value_or("json") == "csv") {
                res.set_content(rep.to_csv(), "text/csv");
            } else {
                send_json(res, rep.to_json());
            }
        }));
        server.Get("/api/v1/trigger/([^/]+)/(stats|overlaps)",
                   guarded([this](const httplib::Request& req, httplib::Response& res) {
                       std::string ds = req.matches[1];
                       send_json(res, req.matches[2] == "stats" ? ti_stats(*ctx.store, ds) : ti_overlaps(*ctx.store, ds));
                   }));
        server.Post("/api/v1/pick", guarded([this](const httplib::Request& req, httplib::Response& res) {
            json body;
            try {
                body = json::parse(req.body);
            } catch (const json::exception& e) {
                fail(ErrorCode::InvalidArgument, std::string("request body is not JSON: ") + e.what());
            }
            auto id = ctx.picks->submit(PickRequest::from_json(body));
            send_json(res, {{"id", id}, {"status", "QUEUED"}, {"href", "/api/v1/pick/" + id}}, 202);
        }));
        server.Get("/api/v1/pick/([A-Za-z0-9]+)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto m = ctx.picks->get(req.matches[1]);
            if (!m) fail(ErrorCode::NotFound, "no pick job " + std::string(req.matches[1]));
            send_json(res, m->to_json());
        }));
        server.Get("/api/v1/status", guarded([&self](const httplib::Request&, httplib::Response& res) {
            send_json(res, self.status_document());
        }));
        server.Get("/api/v1/supervisor/datasets", guarded([this](const httplib::Request&, httplib::Response& res) {
            send_json(res, supervisor_datasets(ctx.layout));
        }));
        server.Get("/api/v1/supervisor/datasets/([^/]+)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_json(res, supervisor_dataset(ctx.layout, req.matches[1]));
        }));
    }
};

RestServer::RestServer(ServiceContext ctx, std::size_t threads) : impl_(std::make_unique<Impl>()) {
    impl_->ctx = std::move(ctx);
    impl_->server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    impl_->routes(*this);
}

RestServer::~RestServer() { stop(); }

std::uint16_t RestServer::start(const std::string& host, std::uint16_t port) {
    int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (bound <= 0) fail(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return static_cast<std::uint16_t>(bound);
}

void RestServer::run(const std::string& host, std::uint16_t port) {
    if (!impl_->server.listen(host, port)) fail(ErrorCode::Io, "cannot listen on " + host + ":" + std::to_string(port));
}

void RestServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

json RestServer::status_document() {
    auto& ctx = impl_->ctx;
    auto now = ctx.clock();
    return ei::gateway::status_document(ctx.layout, *ctx.store, *ctx.eio, ctx.status, now,
                                        {{"gateway", now, "heartbeat", {{"endpoint", "rest"}}}});
}

}  // namespace ei::gateway

#include "gridrag/service.hpp"

#include <chrono>
#include <filesystem>

#include "httplib.h"

namespace gridrag {

void ServiceConfig::validate() const {
    if (port < 0 || port > 65535) throw ConfigError("service port out of range");
    if (max_concurrent < 1) throw ConfigError("service concurrency cap must be >= 1");
    if (request_timeout_ms <= 0) throw ConfigError("request timeout must be positive");
}

QueryService::QueryService(ServiceConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    server_ = std::make_unique<httplib::Server>();
    setup_routes();
}

QueryService::~QueryService() {
    stop();
}

void QueryService::load(std::shared_ptr<const Infra> infra, PipelineConfig default_config) {
    default_config.validate();
    default_config_ = std::move(default_config);
    infra_ = std::move(infra);
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

struct InFlightGuard {
    explicit InFlightGuard(std::atomic<int>& counter) : counter_(counter) {
        count = counter_.fetch_add(1) + 1;
    }
    ~InFlightGuard() { counter_.fetch_sub(1); }
    std::atomic<int>& counter_;
    int count = 0;
};

}  // namespace

void QueryService::setup_routes() {
    // The pool must exceed the request cap so the cap, not the thread count,
    // is what rejects the overflow request.
    const int pool_size = std::max(16, cfg_.max_concurrent * 2);
    server_->new_task_queue = [pool_size] { return new httplib::ThreadPool(pool_size); };
    server_->set_read_timeout(cfg_.request_timeout_ms / 1000,
                              (cfg_.request_timeout_ms % 1000) * 1000);

    server_->Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
        if (!loaded()) {
            send_json(res, 503, json{{"status", "loading"}});
            return;
        }
        send_json(res, 200,
                  json{{"status", "ok"},
                       {"chunks", infra_->store.size()},
                       {"entities", infra_->graph.entities.size()},
                       {"relations", infra_->graph.relations.size()}});
    });

    server_->Post("/v1/query", [this](const httplib::Request& req, httplib::Response& res) {
        InFlightGuard guard(in_flight_);
        if (guard.count > cfg_.max_concurrent) {
            send_json(res, 429, json{{"error", "too many concurrent queries"}});
            return;
        }
        if (!loaded()) {
            send_json(res, 503, json{{"status", "loading"}});
            return;
        }

        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::parse_error& e) {
            send_json(res, 400, json{{"error", std::string("malformed JSON: ") + e.what()}});
            return;
        }
        if (!body.contains("question") || !body["question"].is_string() ||
            trim(body["question"].get<std::string>()).empty()) {
            send_json(res, 400, json{{"error", "question must be a non-empty string"}});
            return;
        }
        PipelineConfig cfg = default_config_;
        if (body.contains("preset")) {
            if (!body["preset"].is_string()) {
                send_json(res, 400, json{{"error", "preset must be a string"}});
                return;
            }
            try {
                PipelineConfig named = preset(body["preset"].get<std::string>());
                named.chat_backend = default_config_.chat_backend;
                named.embed_backend = default_config_.embed_backend;
                cfg = std::move(named);
            } catch (const ConfigError& e) {
                send_json(res, 400, json{{"error", e.what()}});
                return;
            }
        }

        AnswerResult result;
        try {
            result = answer(body["question"].get<std::string>(), cfg, *infra_);
        } catch (const ConfigError& e) {
            send_json(res, 400, json{{"error", e.what()}});
            return;
        } catch (const std::exception& e) {
            send_json(res, 500, json{{"error", e.what()}});
            return;
        }

        const std::string trace_json = result.trace.to_json().dump(2) + "\n";
        const std::string trace_id = sha256_hex(trace_json);
        if (!cfg_.trace_dir.empty()) {
            std::filesystem::create_directories(cfg_.trace_dir);
            write_file(cfg_.trace_dir + "/" + trace_id + ".json", trace_json);
        }
        if (result.failed) {
            send_json(res, 502, json{{"error", result.error}, {"trace_id", trace_id}});
            return;
        }
        json contexts = json::array();
        for (const auto& [id, text] : result.trace.bundle.documents) contexts.push_back(id);
        send_json(res, 200,
                  json{{"answer", result.answer}, {"contexts", contexts}, {"trace_id", trace_id}});
    });
}

int QueryService::start() {
    if (thread_.joinable()) return port_;
    if (cfg_.port == 0) {
        port_ = server_->bind_to_any_port(cfg_.host);
        if (port_ <= 0) throw Error("service failed to bind on " + cfg_.host);
    } else {
        if (!server_->bind_to_port(cfg_.host, cfg_.port)) {
            throw Error("service failed to bind on " + cfg_.host + ":" +
                        std::to_string(cfg_.port));
        }
        port_ = cfg_.port;
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    while (!server_->is_running()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    return port_;
}

void QueryService::stop() {
    if (!thread_.joinable()) return;
    server_->stop();
    thread_.join();
}

}  // namespace gridrag

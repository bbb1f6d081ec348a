#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <thread>

#include "gridrag/pipeline.hpp"

namespace httplib {
class Server;
}

namespace gridrag {

// ---------------------------------------------------------------------------
// HTTP query service: POST /v1/query, GET /v1/health. Read-only over an
// immutable Infra; concurrent requests beyond the cap are rejected with 429.
// ---------------------------------------------------------------------------

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port (useful in tests)
    int max_concurrent = 8;
    int request_timeout_ms = 30000;
    std::string trace_dir;  // per-request trace files when set

    void validate() const;
};

class QueryService {
public:
    explicit QueryService(ServiceConfig cfg);
    ~QueryService();

    // Queries answered with default_config unless the request names a preset.
    void load(std::shared_ptr<const Infra> infra, PipelineConfig default_config);
    bool loaded() const { return infra_ != nullptr; }

    // Binds and serves on a background thread; returns the bound port.
    int start();
    void stop();
    int port() const { return port_; }

private:
    void setup_routes();

    ServiceConfig cfg_;
    std::shared_ptr<const Infra> infra_;
    PipelineConfig default_config_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    std::atomic<int> in_flight_{0};
    int port_ = 0;
};

}  // namespace gridrag

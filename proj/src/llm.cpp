#include "gridrag/llm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <random>
#include <thread>

#include "httplib.h"

namespace gridrag {

namespace {

// Runtime-sized concurrency gate (counting semaphore with blocking acquire).
struct Gate {
    explicit Gate(int slots) : available(slots) {}
    void acquire() {
        std::unique_lock lock(m);
        cv.wait(lock, [&] { return available > 0; });
        --available;
    }
    void release() {
        {
            std::lock_guard lock(m);
            ++available;
        }
        cv.notify_one();
    }
    std::mutex m;
    std::condition_variable cv;
    int available;
};

struct GateHold {
    explicit GateHold(Gate* g) : gate(g) {
        if (gate) gate->acquire();
    }
    ~GateHold() {
        if (gate) gate->release();
    }
    GateHold(const GateHold&) = delete;
    GateHold& operator=(const GateHold&) = delete;
    Gate* gate;
};

std::string truncate_chars(const std::string& s, int max_chars) {
    if (max_chars <= 0) return s;
    const auto cps = utf8_decode(s);
    if (cps.size() <= static_cast<std::size_t>(max_chars)) return s;
    return utf8_slice(cps, 0, static_cast<std::size_t>(max_chars));
}

int backoff_with_jitter_ms(int base_ms, int attempt) {
    // attempt is 1-based; exponential with +/-25% jitter
    const double exp = static_cast<double>(base_ms) * std::pow(2.0, attempt - 1);
    thread_local std::mt19937 rng{std::random_device{}()};
    std::uniform_real_distribution<double> jitter(0.75, 1.25);
    return std::max(1, static_cast<int>(exp * jitter(rng)));
}

struct ParsedUrl {
    std::string host_port;  // scheme://host:port for httplib::Client
    std::string path_prefix;
};

ParsedUrl parse_base_url(const std::string& base_url) {
    ParsedUrl out;
    const auto scheme_end = base_url.find("://");
    const std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto slash = base_url.find('/', host_start);
    if (slash == std::string::npos) {
        out.host_port = base_url;
    } else {
        out.host_port = base_url.substr(0, slash);
        out.path_prefix = base_url.substr(slash);
        while (!out.path_prefix.empty() && out.path_prefix.back() == '/')
            out.path_prefix.pop_back();
    }
    return out;
}

bool retryable_status(int status) {
    return status == 429 || (status >= 500 && status < 600);
}

// POST with retry policy: connection failures/timeouts and 429/5xx retry with
// exponential backoff; other 4xx fail immediately.
json http_post_json(const BackendConfig& cfg, const std::string& endpoint, const json& body,
                    int& attempts_out) {
    const ParsedUrl url = parse_base_url(cfg.base_url);
    const std::string path = url.path_prefix + endpoint;
    const std::string payload = body.dump();

    httplib::Headers headers;
    if (!cfg.api_key_env.empty()) {
        if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
    }

    std::string last_error;
    int last_status = 0;
    attempts_out = 0;
    for (int attempt = 1; attempt <= cfg.max_retries + 1; ++attempt) {
        attempts_out = attempt;
        httplib::Client client(url.host_port);
        client.set_connection_timeout(0, cfg.timeout_ms * 1000LL);
        client.set_read_timeout(cfg.timeout_ms / 1000, (cfg.timeout_ms % 1000) * 1000);
        client.set_write_timeout(cfg.timeout_ms / 1000, (cfg.timeout_ms % 1000) * 1000);

        auto res = client.Post(path, headers, payload, "application/json");
        if (res) {
            if (res->status >= 200 && res->status < 300) {
                try {
                    return json::parse(res->body);
                } catch (const json::parse_error& e) {
                    throw GatewayError("backend returned invalid JSON: " + std::string(e.what()),
                                       res->status, false);
                }
            }
            last_status = res->status;
            if (!retryable_status(res->status)) {
                throw GatewayError("request error from " + path + ": HTTP " +
                                       std::to_string(res->status) + " " + res->body,
                                   res->status, false);
            }
            last_error = "HTTP " + std::to_string(res->status);
        } else {
            last_error = httplib::to_string(res.error());
        }
        if (attempt <= cfg.max_retries) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(backoff_with_jitter_ms(cfg.backoff_base_ms, attempt)));
        }
    }
    throw GatewayError("backend unavailable after " + std::to_string(attempts_out) +
                           " attempts (" + last_error + ")",
                       last_status, true);
}

void normalize_unit(std::vector<float>& v) {
    double norm_sq = 0.0;
    for (float x : v) norm_sq += static_cast<double>(x) * x;
    if (norm_sq <= 0.0) {
        if (!v.empty()) {
            std::fill(v.begin(), v.end(), 0.0f);
            v[0] = 1.0f;
        }
        return;
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (float& x : v) x = static_cast<float>(x * inv);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void BackendConfig::validate() const {
    if (kind == Kind::http && base_url.empty()) {
        throw ConfigError("http backend requires base_url");
    }
    if (timeout_ms <= 0) throw ConfigError("timeout_ms must be positive");
    if (max_retries < 0) throw ConfigError("max_retries must be non-negative");
    if (max_concurrency < 1) throw ConfigError("max_concurrency must be >= 1");
    if (kind == Kind::stub && stub_dimension < 1) {
        throw ConfigError("stub_dimension must be >= 1");
    }
}

BackendConfig BackendConfig::stub(std::string fixtures_path) {
    BackendConfig cfg;
    cfg.kind = Kind::stub;
    cfg.stub_fixtures_path = std::move(fixtures_path);
    return cfg;
}

BackendConfig BackendConfig::http(std::string base_url) {
    BackendConfig cfg;
    cfg.kind = Kind::http;
    cfg.base_url = std::move(base_url);
    return cfg;
}

json BackendConfig::to_json() const {
    return json{{"kind", kind == Kind::http ? "http" : "stub"},
                {"base_url", base_url},
                {"api_key_env", api_key_env},
                {"chat_model", chat_model},
                {"embed_model", embed_model},
                {"timeout_ms", timeout_ms},
                {"max_retries", max_retries},
                {"backoff_base_ms", backoff_base_ms},
                {"max_concurrency", max_concurrency},
                {"stub_fixtures_path", stub_fixtures_path},
                {"stub_dimension", stub_dimension}};
}

BackendConfig BackendConfig::from_json(const json& j) {
    BackendConfig cfg;
    const std::string kind = j.value("kind", "stub");
    if (kind == "http") {
        cfg.kind = Kind::http;
    } else if (kind == "stub") {
        cfg.kind = Kind::stub;
    } else {
        throw ConfigError("unknown backend kind: " + kind + " (valid: http, stub)");
    }
    cfg.base_url = j.value("base_url", cfg.base_url);
    cfg.api_key_env = j.value("api_key_env", cfg.api_key_env);
    cfg.chat_model = j.value("chat_model", cfg.chat_model);
    cfg.embed_model = j.value("embed_model", cfg.embed_model);
    cfg.timeout_ms = j.value("timeout_ms", cfg.timeout_ms);
    cfg.max_retries = j.value("max_retries", cfg.max_retries);
    cfg.backoff_base_ms = j.value("backoff_base_ms", cfg.backoff_base_ms);
    cfg.max_concurrency = j.value("max_concurrency", cfg.max_concurrency);
    cfg.stub_fixtures_path = j.value("stub_fixtures_path", cfg.stub_fixtures_path);
    cfg.stub_dimension = j.value("stub_dimension", cfg.stub_dimension);
    cfg.validate();
    return cfg;
}

void validate_chat_request(const ChatRequest& req) {
    if (req.messages.empty()) throw ConfigError("chat request has no messages");
    const std::string& first = req.messages.front().role;
    if (first != "system" && first != "user") {
        throw ConfigError("first chat message role must be system or user, got: " + first);
    }
    for (const auto& m : req.messages) {
        if (m.role != "system" && m.role != "user" && m.role != "assistant") {
            throw ConfigError("invalid chat role: " + m.role);
        }
    }
}

std::string chat_fixture_key(const std::vector<Message>& messages) {
    std::string material;
    for (const auto& m : messages) {
        material += m.role;
        material += '\n';
        material += m.content;
        material += '\n';
    }
    return sha256_hex(material);
}

std::vector<float> EmbedBackend::embed_one(const std::string& text) {
    auto res = embed({text});
    return std::move(res.vectors.front());
}

// ---------------------------------------------------------------------------
// Stub backends
// ---------------------------------------------------------------------------

StubChatBackend::StubChatBackend(const std::string& fixtures_path) {
    if (fixtures_path.empty()) return;
    for (const auto& row : read_jsonl(fixtures_path)) {
        fixtures_[row.at("prompt_sha256").get<std::string>()] =
            row.at("response").get<std::string>();
    }
}

ChatResponse StubChatBackend::chat(const ChatRequest& req) {
    validate_chat_request(req);
    ChatResponse res;
    long prompt_chars = 0;
    for (const auto& m : req.messages) prompt_chars += static_cast<long>(utf8_length(m.content));
    res.prompt_units = prompt_chars;

    const auto it = fixtures_.find(chat_fixture_key(req.messages));
    if (it != fixtures_.end()) {
        res.content = it->second;
    } else {
        const Message* last_user = nullptr;
        for (const auto& m : req.messages) {
            if (m.role == "user") last_user = &m;
        }
        res.content = "ECHO: " + (last_user ? last_user->content : req.messages.back().content);
    }
    res.content = truncate_chars(res.content, req.max_output_chars);
    res.completion_units = static_cast<long>(utf8_length(res.content));
    return res;
}

StubEmbedBackend::StubEmbedBackend(int dimension) : dim_(dimension) {
    if (dim_ < 1) throw ConfigError("embedding dimension must be >= 1");
}

EmbedResponse StubEmbedBackend::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) throw ConfigError("embed called with no texts");
    EmbedResponse res;
    res.vectors.reserve(texts.size());
    for (const auto& text : texts) {
        if (utf8_length(text) > 8000) {
            throw ConfigError("embedding input exceeds 8000 characters");
        }
        std::vector<float> v(static_cast<std::size_t>(dim_), 0.0f);
        const auto tokens = tokenize(text);
        for (const auto& tok : tokens) {
            v[fnv1a64(tok) % static_cast<std::uint64_t>(dim_)] += 1.0f;
        }
        if (tokens.empty()) ++res.empty_inputs;
        normalize_unit(v);  // token-free text falls through to e0
        res.vectors.push_back(std::move(v));
    }
    return res;
}

// ---------------------------------------------------------------------------
// HTTP backends
// ---------------------------------------------------------------------------

HttpChatBackend::HttpChatBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    gate_ = std::make_shared<Gate>(cfg_.max_concurrency);
}

ChatResponse HttpChatBackend::chat(const ChatRequest& req) {
    validate_chat_request(req);
    GateHold hold(static_cast<Gate*>(gate_.get()));

    json messages = json::array();
    for (const auto& m : req.messages) {
        messages.push_back({{"role", m.role}, {"content", m.content}});
    }
    const json body = {
        {"model", cfg_.chat_model}, {"messages", messages}, {"temperature", req.temperature}};

    ChatResponse res;
    const json reply = http_post_json(cfg_, "/v1/chat/completions", body, res.attempts);
    try {
        res.content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw GatewayError("unexpected chat completion shape: " + std::string(e.what()), 0, false);
    }
    if (reply.contains("usage")) {
        res.prompt_units = reply["usage"].value("prompt_tokens", 0);
        res.completion_units = reply["usage"].value("completion_tokens", 0);
    }
    res.content = truncate_chars(res.content, req.max_output_chars);
    return res;
}

HttpEmbedBackend::HttpEmbedBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    gate_ = std::make_shared<Gate>(cfg_.max_concurrency);
}

int HttpEmbedBackend::dimension() const {
    return dim_;
}

EmbedResponse HttpEmbedBackend::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) throw ConfigError("embed called with no texts");
    for (const auto& t : texts) {
        if (utf8_length(t) > 8000) throw ConfigError("embedding input exceeds 8000 characters");
    }
    GateHold hold(static_cast<Gate*>(gate_.get()));

    const json body = {{"model", cfg_.embed_model}, {"input", texts}};
    EmbedResponse res;
    const json reply = http_post_json(cfg_, "/v1/embeddings", body, res.attempts);

    std::vector<std::vector<float>> vectors(texts.size());
    try {
        for (const auto& item : reply.at("data")) {
            const auto idx = item.at("index").get<std::size_t>();
            if (idx >= vectors.size()) throw GatewayError("embedding index out of range", 0, false);
            vectors[idx] = item.at("embedding").get<std::vector<float>>();
        }
    } catch (const json::exception& e) {
        throw GatewayError("unexpected embeddings shape: " + std::string(e.what()), 0, false);
    }
    for (auto& v : vectors) {
        if (v.empty()) throw GatewayError("backend omitted an embedding", 0, false);
        double norm_sq = 0.0;
        for (float x : v) norm_sq += static_cast<double>(x) * x;
        if (norm_sq <= 0.0) ++res.empty_inputs;
        normalize_unit(v);
    }
    if (dim_ == 0 && !vectors.empty()) dim_ = static_cast<int>(vectors.front().size());
    res.vectors = std::move(vectors);
    return res;
}

std::shared_ptr<ChatBackend> make_chat_backend(const BackendConfig& cfg) {
    cfg.validate();
    if (cfg.kind == BackendConfig::Kind::http) return std::make_shared<HttpChatBackend>(cfg);
    return std::make_shared<StubChatBackend>(cfg.stub_fixtures_path);
}

std::shared_ptr<EmbedBackend> make_embed_backend(const BackendConfig& cfg) {
    cfg.validate();
    if (cfg.kind == BackendConfig::Kind::http) return std::make_shared<HttpEmbedBackend>(cfg);
    return std::make_shared<StubEmbedBackend>(cfg.stub_dimension);
}

}  // namespace gridrag

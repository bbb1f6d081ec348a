#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "gridrag/util.hpp"

namespace gridrag {

// ---------------------------------------------------------------------------
// Chat / embedding gateway over an OpenAI-compatible wire protocol, plus
// deterministic stub backends so the whole pipeline runs offline.
// ---------------------------------------------------------------------------

struct Message {
    std::string role;  // system | user | assistant
    std::string content;
};

struct ChatRequest {
    std::vector<Message> messages;
    double temperature = 0.0;
    // 0 means unlimited; otherwise the response content is truncated to this
    // many characters after receipt.
    int max_output_chars = 0;
};

struct ChatResponse {
    std::string content;
    long prompt_units = 0;      // tokens when the backend reports them, characters for the stub
    long completion_units = 0;
    int attempts = 1;           // total request attempts including retries
};

struct EmbedResponse {
    std::vector<std::vector<float>> vectors;
    int attempts = 1;
    long empty_inputs = 0;  // inputs that degenerated to the e0 basis vector
};

struct BackendConfig {
    enum class Kind { http, stub };
    Kind kind = Kind::stub;
    std::string base_url;                        // required for http
    std::string api_key_env = "GRIDRAG_API_KEY"; // env var holding the bearer token
    std::string chat_model = "gpt-4o";
    std::string embed_model = "text-embedding-3-small";
    int timeout_ms = 30000;
    int max_retries = 3;
    int backoff_base_ms = 500;  // exponential backoff base, jitter +/-25%
    int max_concurrency = 8;
    // stub only
    std::string stub_fixtures_path;  // optional JSONL {"prompt_sha256": hex, "response": str}
    int stub_dimension = 256;

    void validate() const;
    static BackendConfig stub(std::string fixtures_path = {});
    static BackendConfig http(std::string base_url);

    json to_json() const;
    static BackendConfig from_json(const json& j);
};

void validate_chat_request(const ChatRequest& req);

// Key material hashed to look up stub chat fixtures: for every message,
// role + "\n" + content + "\n", concatenated in order, SHA-256, lowercase hex.
std::string chat_fixture_key(const std::vector<Message>& messages);

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual ChatResponse chat(const ChatRequest& req) = 0;
    virtual std::string id() const = 0;
};

class EmbedBackend {
public:
    virtual ~EmbedBackend() = default;
    // texts must be non-empty; each text <= 8000 characters.
    virtual EmbedResponse embed(const std::vector<std::string>& texts) = 0;
    virtual int dimension() const = 0;
    virtual std::string id() const = 0;

    std::vector<float> embed_one(const std::string& text);
};

// Deterministic chat stub: fixture lookup by prompt hash, "ECHO: " + last
// user message on miss.
class StubChatBackend : public ChatBackend {
public:
    explicit StubChatBackend(const std::string& fixtures_path = {});
    ChatResponse chat(const ChatRequest& req) override;
    std::string id() const override { return "stub-chat"; }

private:
    std::unordered_map<std::string, std::string> fixtures_;
};

// Deterministic bag-of-tokens feature-hashing embedder: FNV-1a 64-bit per
// token, bucket = hash mod d, counts L2-normalized. Token-free text maps to
// the fixed basis vector e0.
class StubEmbedBackend : public EmbedBackend {
public:
    explicit StubEmbedBackend(int dimension = 256);
    EmbedResponse embed(const std::vector<std::string>& texts) override;
    int dimension() const override { return dim_; }
    std::string id() const override { return "stub-fnv1a-" + std::to_string(dim_); }

private:
    int dim_;
};

class HttpChatBackend : public ChatBackend {
public:
    explicit HttpChatBackend(BackendConfig cfg);
    ChatResponse chat(const ChatRequest& req) override;
    std::string id() const override { return "http-chat:" + cfg_.chat_model; }

private:
    BackendConfig cfg_;
    std::shared_ptr<void> gate_;  // concurrency cap, shared with nothing else
};

class HttpEmbedBackend : public EmbedBackend {
public:
    explicit HttpEmbedBackend(BackendConfig cfg);
    EmbedResponse embed(const std::vector<std::string>& texts) override;
    int dimension() const override;
    std::string id() const override { return "http-embed:" + cfg_.embed_model; }

private:
    BackendConfig cfg_;
    std::shared_ptr<void> gate_;
    mutable int dim_ = 0;  // learned from the first response
};

std::shared_ptr<ChatBackend> make_chat_backend(const BackendConfig& cfg);
std::shared_ptr<EmbedBackend> make_embed_backend(const BackendConfig& cfg);

}  // namespace gridrag

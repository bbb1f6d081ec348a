#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gridrag/corpus.hpp"
#include "gridrag/kg.hpp"
#include "gridrag/llm.hpp"
#include "gridrag/retrieval.hpp"
#include "gridrag/stages.hpp"

namespace gridrag {

// ---------------------------------------------------------------------------
// Full pipeline orchestration: intent -> rewrite -> keywords -> sub-queries
// -> per-sub-query retrieval -> fusion -> rerank -> reversed assembly ->
// generation, with every stage toggleable and a complete audit trace.
// ---------------------------------------------------------------------------

enum class RetrievalMode { dense, hybrid, graph };

std::string to_string(RetrievalMode mode);
RetrievalMode retrieval_mode_from_string(const std::string& s);

struct StageToggles {
    bool rewrite = true;
    bool keywords = false;  // known to hurt retrieval; kept for ablations
    bool fusion = true;
    bool rerank = true;
    bool intent = true;
};

struct PipelineConfig {
    StageToggles stages;
    RetrievalMode mode = RetrievalMode::graph;
    int depth_per_query = 20;
    int fusion_k_rrf = 60;
    RerankCutoffs cutoffs;  // 10 documents / 15 entities / 15 relations
    int subquery_n_max = 4;
    int seed_entity_cap = 10;      // m_ent
    double seed_entity_tau = 0.35;  // tau_ent
    int keywords_m = 5;
    double keywords_tau = 0.35;
    std::string no_context_message =
        "I could not find this in the available documentation. Please contact "
        "customer service for further help.";
    BackendConfig chat_backend = BackendConfig::stub();
    BackendConfig embed_backend = BackendConfig::stub();

    void validate() const;
    ordered_json to_json() const;
    static PipelineConfig from_json(const json& j);
};

// Named stage compositions: baseline-dense (single query, dense top-k),
// baseline-hybrid (dense + BM25 fused by RRF), baseline-graph (graph
// retrieval, no stages), optimized (rewrite + fusion + rerank + intent on,
// keywords off, graph mode).
PipelineConfig preset(const std::string& name);
std::vector<std::string> preset_names();

struct SubQueryTrace {
    std::string sub_query;
    std::string retrieval_text;  // sub-query plus appended keywords, if any
    RankedList chunks;
    RankedList entities;
    RankedList relations;
    bool graph_fallback = false;
};

struct QueryTrace {
    std::string query;
    ordered_json config;
    QueryPlan plan;
    // fallback flags
    bool rewrite_fallback = false;
    bool subquery_fallback = false;
    bool no_context = false;
    bool generation_failed = false;
    // counters
    long retries = 0;
    long empty_embed_inputs = 0;
    long dropped_missing = 0;
    std::vector<SubQueryTrace> retrievals;
    RankedList fused;
    RankedList fused_entities;
    RankedList fused_relations;
    ContextBundle bundle;
    std::string prompt;  // generation prompt material (role/content lines)
    std::string answer;
    std::map<std::string, double> timings_ms;

    // Deterministic by default: wall-clock timings are only serialized on
    // request so identical runs produce identical bytes.
    ordered_json to_json(bool with_timings = false) const;
};

struct AnswerResult {
    std::string answer;
    QueryTrace trace;
    bool failed = false;  // generation backend failure; trace still complete
    std::string error;
};

// Immutable, shareable runtime state: stores, indices, graph, intent store,
// prompts and backends.
struct Infra {
    ChunkStore store;
    DenseIndex dense;
    SparseIndex sparse;
    KnowledgeGraph graph;
    IntentStore intents;
    PromptSet prompts;
    std::shared_ptr<ChatBackend> chat;
    std::shared_ptr<EmbedBackend> embed;
};

// Runs the configured pipeline for one query. Deterministic given stub
// backends: identical inputs produce byte-identical traces.
AnswerResult answer(const std::string& query, const PipelineConfig& cfg, const Infra& infra);

}  // namespace gridrag

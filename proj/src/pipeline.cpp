#include "gridrag/pipeline.hpp"

#include <algorithm>
#include <chrono>

namespace gridrag {

std::string to_string(RetrievalMode mode) {
    switch (mode) {
        case RetrievalMode::dense: return "dense";
        case RetrievalMode::hybrid: return "hybrid";
        case RetrievalMode::graph: return "graph";
    }
    return "graph";
}

RetrievalMode retrieval_mode_from_string(const std::string& s) {
    if (s == "dense") return RetrievalMode::dense;
    if (s == "hybrid") return RetrievalMode::hybrid;
    if (s == "graph") return RetrievalMode::graph;
    throw ConfigError("unknown retrieval mode: " + s + " (valid: dense, hybrid, graph)");
}

void PipelineConfig::validate() const {
    if (stages.keywords && mode != RetrievalMode::graph) {
        throw ConfigError("keyword augmentation requires retrieval mode graph");
    }
    if (depth_per_query < 1) throw ConfigError("depth_per_query must be >= 1");
    if (fusion_k_rrf < 1) throw ConfigError("fusion_k_rrf must be >= 1");
    if (cutoffs.documents < 1 || cutoffs.entities < 1 || cutoffs.relations < 1) {
        throw ConfigError("rerank cutoffs must be >= 1");
    }
    if (subquery_n_max < 1) throw ConfigError("subquery_n_max must be >= 1");
    if (seed_entity_cap < 1) throw ConfigError("seed_entity_cap must be >= 1");
    if (keywords_m < 0) throw ConfigError("keywords_m must be >= 0");
    chat_backend.validate();
    embed_backend.validate();
}

ordered_json PipelineConfig::to_json() const {
    return ordered_json{
        {"stages",
         {{"rewrite", stages.rewrite},
          {"keywords", stages.keywords},
          {"fusion", stages.fusion},
          {"rerank", stages.rerank},
          {"intent", stages.intent}}},
        {"retrieval",
         {{"mode", to_string(mode)},
          {"depth_per_query", depth_per_query},
          {"fusion_k_rrf", fusion_k_rrf}}},
        {"rerank_cutoffs",
         {{"documents", cutoffs.documents},
          {"entities", cutoffs.entities},
          {"relations", cutoffs.relations}}},
        {"subquery_n_max", subquery_n_max},
        {"seed_entity_cap", seed_entity_cap},
        {"seed_entity_tau", seed_entity_tau},
        {"keywords_m", keywords_m},
        {"keywords_tau", keywords_tau},
        {"no_context_message", no_context_message},
        {"backends", {{"chat", chat_backend.to_json()}, {"embed", embed_backend.to_json()}}}};
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig cfg;
    if (j.contains("stages")) {
        const auto& s = j["stages"];
        cfg.stages.rewrite = s.value("rewrite", cfg.stages.rewrite);
        cfg.stages.keywords = s.value("keywords", cfg.stages.keywords);
        cfg.stages.fusion = s.value("fusion", cfg.stages.fusion);
        cfg.stages.rerank = s.value("rerank", cfg.stages.rerank);
        cfg.stages.intent = s.value("intent", cfg.stages.intent);
    }
    if (j.contains("retrieval")) {
        const auto& r = j["retrieval"];
        if (r.contains("mode")) cfg.mode = retrieval_mode_from_string(r["mode"].get<std::string>());
        cfg.depth_per_query = r.value("depth_per_query", cfg.depth_per_query);
        cfg.fusion_k_rrf = r.value("fusion_k_rrf", cfg.fusion_k_rrf);
    }
    if (j.contains("rerank_cutoffs")) {
        const auto& c = j["rerank_cutoffs"];
        cfg.cutoffs.documents = c.value("documents", cfg.cutoffs.documents);
        cfg.cutoffs.entities = c.value("entities", cfg.cutoffs.entities);
        cfg.cutoffs.relations = c.value("relations", cfg.cutoffs.relations);
    }
    cfg.subquery_n_max = j.value("subquery_n_max", cfg.subquery_n_max);
    cfg.seed_entity_cap = j.value("seed_entity_cap", cfg.seed_entity_cap);
    cfg.seed_entity_tau = j.value("seed_entity_tau", cfg.seed_entity_tau);
    cfg.keywords_m = j.value("keywords_m", cfg.keywords_m);
    cfg.keywords_tau = j.value("keywords_tau", cfg.keywords_tau);
    cfg.no_context_message = j.value("no_context_message", cfg.no_context_message);
    if (j.contains("backends")) {
        if (j["backends"].contains("chat")) {
            cfg.chat_backend = BackendConfig::from_json(j["backends"]["chat"]);
        }
        if (j["backends"].contains("embed")) {
            cfg.embed_backend = BackendConfig::from_json(j["backends"]["embed"]);
        }
    }
    cfg.validate();
    return cfg;
}

std::vector<std::string> preset_names() {
    return {"baseline-dense", "baseline-hybrid", "baseline-graph", "optimized"};
}

PipelineConfig preset(const std::string& name) {
    PipelineConfig cfg;
    if (name == "baseline-dense") {
        cfg.stages = {false, false, false, false, false};
        cfg.mode = RetrievalMode::dense;
    } else if (name == "baseline-hybrid") {
        cfg.stages = {false, false, false, false, false};
        cfg.mode = RetrievalMode::hybrid;
    } else if (name == "baseline-graph") {
        cfg.stages = {false, false, false, false, false};
        cfg.mode = RetrievalMode::graph;
    } else if (name == "optimized") {
        cfg.stages = {true, false, true, true, true};
        cfg.mode = RetrievalMode::graph;
    } else {
        throw ConfigError("unknown preset: " + name + " (valid: " + join(preset_names(), ", ") +
                          ")");
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Trace serialization
// ---------------------------------------------------------------------------

ordered_json QueryTrace::to_json(bool with_timings) const {
    ordered_json retrievals_json = ordered_json::array();
    for (const auto& r : retrievals) {
        retrievals_json.push_back(ordered_json{{"sub_query", r.sub_query},
                                               {"retrieval_text", r.retrieval_text},
                                               {"chunks", r.chunks.to_json()},
                                               {"entities", r.entities.to_json()},
                                               {"relations", r.relations.to_json()},
                                               {"graph_fallback", r.graph_fallback}});
    }
    ordered_json out{
        {"query", query},
        {"config", config},
        {"plan", plan.to_json()},
        {"flags",
         {{"rewrite_fallback", rewrite_fallback},
          {"subquery_fallback", subquery_fallback},
          {"no_context", no_context},
          {"generation_failed", generation_failed}}},
        {"counters",
         {{"retries", retries},
          {"empty_embed_inputs", empty_embed_inputs},
          {"dropped_missing", dropped_missing}}},
        {"retrievals", retrievals_json},
        {"fused", fused.to_json()},
        {"fused_entities", fused_entities.to_json()},
        {"fused_relations", fused_relations.to_json()},
        {"bundle", bundle.to_json()},
        {"prompt", prompt},
        {"answer", answer}};
    if (with_timings) out["timings_ms"] = timings_ms;
    return out;
}

// ---------------------------------------------------------------------------
// answer()
// ---------------------------------------------------------------------------

namespace {

class StageTimer {
public:
    StageTimer(QueryTrace& trace, std::string name)
        : trace_(trace), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
    ~StageTimer() {
        const auto elapsed = std::chrono::steady_clock::now() - start_;
        trace_.timings_ms[name_] =
            std::chrono::duration<double, std::milli>(elapsed).count();
    }

private:
    QueryTrace& trace_;
    std::string name_;
    std::chrono::steady_clock::time_point start_;
};

// Per-answer embedding memo; repeated texts (sub-query == rewritten, etc.)
// hit the backend once.
class EmbedMemo {
public:
    EmbedMemo(EmbedBackend& backend, QueryTrace& trace) : backend_(backend), trace_(trace) {}

    const std::vector<float>& get(const std::string& text) {
        auto it = cache_.find(text);
        if (it != cache_.end()) return it->second;
        EmbedResponse res = backend_.embed({text});
        trace_.retries += res.attempts - 1;
        trace_.empty_embed_inputs += res.empty_inputs;
        return cache_.emplace(text, std::move(res.vectors.front())).first->second;
    }

private:
    EmbedBackend& backend_;
    QueryTrace& trace_;
    std::map<std::string, std::vector<float>> cache_;
};

// Dense scores of exactly zero carry no signal (no shared tokens under the
// stub embedder); dropping them lets truly unanswerable queries surface as
// no-context instead of filling the prompt with noise. Graph provenance
// candidates are deliberately not filtered.
void drop_nonpositive(RankedList& list) {
    std::erase_if(list.items, [](const ScoredId& item) { return item.score <= 0.0; });
}

}  // namespace

AnswerResult answer(const std::string& query, const PipelineConfig& cfg, const Infra& infra) {
    cfg.validate();
    if (trim(query).empty()) throw ConfigError("query must be non-empty");
    if (!infra.chat || !infra.embed) throw ConfigError("backends not configured");

    AnswerResult result;
    QueryTrace& trace = result.trace;
    trace.query = query;
    trace.config = cfg.to_json();
    trace.plan.original = query;
    trace.plan.rewritten = query;

    try {
        EmbedMemo memo(*infra.embed, trace);

        // Intent recognition
        if (cfg.stages.intent && !infra.intents.empty()) {
            StageTimer timer(trace, "intent");
            trace.plan.intents = classify_intent(memo.get(query), infra.intents);
        }

        // Query rewriting
        if (cfg.stages.rewrite) {
            StageTimer timer(trace, "rewrite");
            const RewriteResult rewrite = rewrite_query(query, *infra.chat, infra.prompts);
            trace.plan.rewritten = rewrite.rewritten;
            trace.rewrite_fallback = rewrite.fallback;
            trace.retries += rewrite.attempts - 1;
        }

        // Keyword augmentation (off by default)
        if (cfg.stages.keywords) {
            StageTimer timer(trace, "keywords");
            trace.plan.keywords =
                augment_keywords(trace.plan.rewritten, memo.get(trace.plan.rewritten),
                                 infra.graph, cfg.keywords_m, cfg.keywords_tau);
        }

        // Sub-query generation (RAG fusion)
        if (cfg.stages.fusion) {
            StageTimer timer(trace, "subqueries");
            const SubqueryResult subs =
                generate_subqueries(trace.plan, *infra.chat, infra.prompts, cfg.subquery_n_max);
            trace.plan.sub_queries = subs.sub_queries;
            trace.subquery_fallback = subs.fallback;
            trace.retries += subs.attempts > 0 ? subs.attempts - 1 : 0;
        } else {
            trace.plan.sub_queries = {trace.plan.rewritten};
        }

        // Per-sub-query retrieval
        {
            StageTimer timer(trace, "retrieval");
            for (const auto& sub_query : trace.plan.sub_queries) {
                SubQueryTrace sq;
                sq.sub_query = sub_query;
                sq.retrieval_text = sub_query;
                if (!trace.plan.keywords.empty()) {
                    sq.retrieval_text += " " + join(trace.plan.keywords, " ");
                }
                const auto& sq_vec = memo.get(sq.retrieval_text);

                const auto dense_list = [&]() {
                    RankedList list;
                    list.k = cfg.depth_per_query;
                    if (!infra.dense.empty()) {
                        list = dense_topk(sq_vec, infra.dense, cfg.depth_per_query);
                        drop_nonpositive(list);
                    }
                    return list;
                };

                switch (cfg.mode) {
                    case RetrievalMode::dense: {
                        sq.chunks = dense_list();
                        break;
                    }
                    case RetrievalMode::hybrid: {
                        const RankedList dense = dense_list();
                        const RankedList sparse = bm25_topk(tokenize(sq.retrieval_text),
                                                            infra.sparse, cfg.depth_per_query);
                        sq.chunks = rrf_fuse({dense, sparse}, cfg.fusion_k_rrf,
                                             cfg.depth_per_query);
                        break;
                    }
                    case RetrievalMode::graph: {
                        std::vector<std::string> keywords = {sub_query};
                        keywords.insert(keywords.end(), trace.plan.keywords.begin(),
                                        trace.plan.keywords.end());
                        GraphRetrievalParams params;
                        params.k = cfg.depth_per_query;
                        params.m_ent = cfg.seed_entity_cap;
                        params.tau_ent = cfg.seed_entity_tau;
                        const GraphRetrievalResult hit =
                            graph_retrieve(keywords, sq_vec, infra.graph, infra.dense, params);
                        trace.dropped_missing +=
                            static_cast<long>(hit.dropped_missing_embedding);
                        if (hit.empty()) {
                            sq.graph_fallback = true;
                            sq.chunks = dense_list();
                        } else {
                            sq.chunks = hit.chunks;
                            sq.entities = hit.entities;
                            sq.relations = hit.relations;
                        }
                        break;
                    }
                }
                trace.retrievals.push_back(std::move(sq));
            }
        }

        // Fusion across sub-queries
        {
            StageTimer timer(trace, "fusion");
            std::vector<RankedList> chunk_lists;
            std::vector<RankedList> entity_lists;
            std::vector<RankedList> relation_lists;
            for (const auto& sq : trace.retrievals) {
                chunk_lists.push_back(sq.chunks);
                if (!sq.entities.empty()) entity_lists.push_back(sq.entities);
                if (!sq.relations.empty()) relation_lists.push_back(sq.relations);
            }
            trace.fused = rrf_fuse(chunk_lists, cfg.fusion_k_rrf, cfg.depth_per_query);
            trace.fused_entities = rrf_fuse(entity_lists, cfg.fusion_k_rrf, cfg.depth_per_query);
            trace.fused_relations =
                rrf_fuse(relation_lists, cfg.fusion_k_rrf, cfg.depth_per_query);
        }

        // Rerank (or plain truncation) + reversed assembly
        {
            StageTimer timer(trace, "rerank");
            if (cfg.stages.rerank) {
                trace.bundle = rerank(memo.get(trace.plan.rewritten), trace.fused,
                                      trace.fused_entities, trace.fused_relations, infra.store,
                                      infra.graph, infra.dense, cfg.cutoffs);
            } else {
                // Fused order, no re-scoring; documents still reversed so the
                // assembly-order effect stays constant across the ablation.
                trace.bundle = assemble_bundle(trace.fused, trace.fused_entities,
                                               trace.fused_relations, infra.store, infra.graph,
                                               cfg.cutoffs);
            }
            trace.dropped_missing += static_cast<long>(trace.bundle.dropped_missing);
        }

        const std::string rendered = render_context(trace.bundle, trace.plan);
        std::vector<Message> messages = {{"system", infra.prompts.generation_system},
                                         {"user", rendered}};
        for (const auto& m : messages) {
            trace.prompt += m.role;
            trace.prompt += '\n';
            trace.prompt += m.content;
            trace.prompt += '\n';
        }

        if (trace.fused.empty()) {
            trace.no_context = true;
            trace.answer = cfg.no_context_message;
            result.answer = trace.answer;
            return result;
        }

        // Generation
        {
            StageTimer timer(trace, "generate");
            ChatRequest req;
            req.messages = std::move(messages);
            const ChatResponse res = infra.chat->chat(req);
            trace.retries += res.attempts - 1;
            trace.answer = res.content;
            result.answer = res.content;
        }
    } catch (const GatewayError& e) {
        trace.generation_failed = true;
        result.failed = true;
        result.error = e.what();
    }
    return result;
}

}  // namespace gridrag

#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gridrag/kg.hpp"
#include "gridrag/llm.hpp"
#include "gridrag/retrieval.hpp"

namespace gridrag {

// ---------------------------------------------------------------------------
// The five independently toggleable query-transformation and post-retrieval
// stages: rewriting, keyword augmentation, intent recognition, sub-query
// generation (RAG fusion) and rerank-plus-reversed-assembly.
// ---------------------------------------------------------------------------

struct IntentExample {
    std::string label;
    std::string text;
    std::vector<float> embedding;
};

struct IntentStore {
    std::vector<IntentExample> examples;  // file order; ties fall back to it
    int k_neighbors = 5;

    bool empty() const { return examples.empty(); }
    std::size_t label_count() const;

    // JSONL: {"label": str, "examples": [str, ...]} per line.
    static IntentStore load_jsonl(const std::string& path, EmbedBackend& embedder,
                                  int k_neighbors = 5);
};

struct IntentScore {
    std::string label;
    double score = 0.0;  // neighbor vote fraction
    bool operator==(const IntentScore&) const = default;
};

// KNN vote over the annotated examples: per-label vote count among the
// k_neighbors nearest by cosine, top two labels by (votes, max neighbor
// similarity, label). Empty store yields no intents.
std::vector<IntentScore> classify_intent(std::span<const float> query_vec,
                                         const IntentStore& store);

struct QueryPlan {
    std::string original;
    std::vector<IntentScore> intents;  // up to 2
    std::string rewritten;
    std::vector<std::string> keywords;
    std::vector<std::string> sub_queries;  // deduplicated, rewritten query first

    ordered_json to_json() const;
};

// Prompt templates; single-brace named placeholders ({query}, {intents},
// {n}, {text}).
struct PromptSet {
    std::string rewrite;
    std::string subquery;
    std::string subquery_intent;
    std::string extraction;
    std::string generation_system;

    static PromptSet load(const std::string& dir);
};

struct RewriteResult {
    std::string rewritten;
    bool fallback = false;  // backend error or empty output; original returned
    int attempts = 1;
};

// Asks the backend for a single-line rewrite; any backend failure or empty
// reply falls back to the original query. The stub backend's miss marker
// ("ECHO: " + last user message) unwraps to the query itself, so offline
// runs degrade to the identity rewrite.
RewriteResult rewrite_query(const std::string& query, ChatBackend& chat,
                            const PromptSet& prompts);

// Entity names matched against the rewritten query: exact (normalized
// substring, either direction) scores 1.0, otherwise embedding cosine >= tau.
// Top m names in score order. Ships disabled by default.
std::vector<std::string> augment_keywords(const std::string& rewritten,
                                          std::span<const float> query_vec,
                                          const KnowledgeGraph& graph, int m, double tau);

struct SubqueryResult {
    std::vector<std::string> sub_queries;  // rewritten original always first
    bool fallback = false;
    int attempts = 0;
};

// Without intents: one prompt requesting n_max sub-queries. With intents: up
// to 2 sub-queries requested per top intent, shrinking total fan-out. Output
// is parsed one sub-query per line, cleaned, capped at 300 characters,
// deduplicated case-insensitively. Backend failure degrades to the rewritten
// query alone.
SubqueryResult generate_subqueries(const QueryPlan& plan, ChatBackend& chat,
                                   const PromptSet& prompts, int n_max);

struct ContextBundle {
    // Reversed rank order: rank-1 document last, adjacent to the question.
    std::vector<std::pair<std::string, std::string>> documents;  // (chunk_id, text)
    std::vector<std::pair<std::string, std::string>> entities;   // (name, description)
    std::vector<std::string> relations;                          // rendered descriptions
    std::string assembly_order_note;
    std::size_t dropped_missing = 0;  // candidates without embedding or text

    ordered_json to_json() const;
};

extern const char* const kAssemblyOrderNote;

struct RerankCutoffs {
    int documents = 10;
    int entities = 15;
    int relations = 15;
};

// Materializes ranked id lists into a bundle: document list reversed, entity
// and relation lists kept in rank order. Ids without a backing chunk, entity
// or relation are dropped and counted.
ContextBundle assemble_bundle(const RankedList& documents_ranked, const RankedList& entities,
                              const RankedList& relations, const ChunkStore& store,
                              const KnowledgeGraph& graph, const RerankCutoffs& cutoffs);

// Re-scores candidates by cosine against the query embedding, truncates to
// the cutoffs (10 documents, 15 entities, 15 relations by default) and
// assembles with the document order reversed.
ContextBundle rerank(std::span<const float> query_vec, const RankedList& candidate_chunks,
                     const RankedList& graph_entities, const RankedList& graph_relations,
                     const ChunkStore& store, const KnowledgeGraph& graph,
                     const DenseIndex& dense, const RerankCutoffs& cutoffs);

// Deterministic prompt context: "## Entities", "## Relations", "## Documents"
// (reversed order as stored), "## Intents" when present, "## Question" with
// the original query verbatim. Identical inputs produce identical bytes.
std::string render_context(const ContextBundle& bundle, const QueryPlan& plan);

}  // namespace gridrag

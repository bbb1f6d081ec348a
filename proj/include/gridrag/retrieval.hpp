#pragma once

#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gridrag/corpus.hpp"
#include "gridrag/kg.hpp"
#include "gridrag/llm.hpp"

namespace gridrag {

// ---------------------------------------------------------------------------
// The three retrieval mechanisms (dense, sparse BM25, graph-mediated) plus
// reciprocal rank fusion. All retrievers are deterministic: ties break by
// ascending id everywhere.
// ---------------------------------------------------------------------------

struct ScoredId {
    std::string id;
    double score = 0.0;
    bool operator==(const ScoredId&) const = default;
};

struct RankedList {
    std::vector<ScoredId> items;  // scores non-increasing, ids unique
    int k = 0;                    // requested cutoff

    bool empty() const { return items.empty(); }
    std::size_t size() const { return items.size(); }
    bool contains(const std::string& id) const;

    json to_json() const;  // [[id, score], ...]
    static RankedList from_json(const json& j, int k);
};

// Standard cosine in double precision. Dimension mismatch throws; a zero
// vector on either side scores 0.0 (degenerate embedding).
double cosine(std::span<const float> a, std::span<const float> b);

class DenseIndex {
public:
    DenseIndex() = default;
    explicit DenseIndex(int dimension) : dim_(dimension) {}

    void add(const std::string& id, std::vector<float> vec);
    const std::vector<float>* find(const std::string& id) const;
    int dimension() const { return dim_; }
    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<float>& row(std::size_t i) const { return rows_[i]; }

    // Flat binary file: one JSON header line {"dimension": d, "ids": [...]}
    // followed by row-major little-endian float32 data.
    void save(const std::string& path) const;
    static DenseIndex load(const std::string& path);

    static DenseIndex build(const ChunkStore& store, EmbedBackend& embedder);

private:
    int dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<std::vector<float>> rows_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

// Exact brute-force scan; the corpora here are thousands of chunks.
RankedList dense_topk(std::span<const float> query_vec, const DenseIndex& index, int k);

struct SparseIndex {
    std::map<std::string, std::vector<std::pair<std::string, int>>> postings;
    std::map<std::string, int> doc_lengths;
    double avg_len = 0.0;
    std::size_t total_docs = 0;
    double k1 = 1.5;
    double b = 0.75;

    static SparseIndex build(const ChunkStore& store);
    void save(const std::string& path) const;  // JSON Lines
    static SparseIndex load(const std::string& path);
};

// Okapi BM25 with idf = ln(1 + (N - df + 0.5)/(df + 0.5)). Chunks that match
// no query token are omitted.
RankedList bm25_topk(const std::vector<std::string>& query_tokens, const SparseIndex& index,
                     int k);

struct GraphRetrievalResult {
    RankedList chunks;
    RankedList entities;
    RankedList relations;
    std::size_t dropped_missing_embedding = 0;

    bool empty() const { return chunks.empty() && entities.empty() && relations.empty(); }
};

struct GraphRetrievalParams {
    int k = 20;             // chunk and relation cutoff
    int m_ent = 10;         // seed entity cap
    double tau_ent = 0.35;  // semantic seed threshold
};

// Seeds entities by exact name match (normalized substring, either direction,
// against any query keyword; scored 1.0) and by embedding similarity above
// tau_ent, capped at m_ent. Candidate chunks are the provenance union of the
// seeds and their adjacent relations, ranked by cosine against the dense
// index. An empty seed set yields an all-empty result so the caller can fall
// back to dense retrieval.
GraphRetrievalResult graph_retrieve(const std::vector<std::string>& query_keywords,
                                    std::span<const float> query_vec,
                                    const KnowledgeGraph& graph, const DenseIndex& dense,
                                    const GraphRetrievalParams& params);

// Reciprocal rank fusion: score(id) = sum over lists of 1/(k_rrf + rank),
// rank starting at 1. Duplicates collapse; order is score desc then id asc.
RankedList rrf_fuse(const std::vector<RankedList>& lists, int k_rrf, int k);

}  // namespace gridrag

#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gridrag/pipeline.hpp"

namespace gridrag {

// ---------------------------------------------------------------------------
// Evaluation harness: recall@k against gold chunk annotations, embedding
// cosine answer similarity with score buckets, and ablation sweeps over
// pipeline configurations.
// ---------------------------------------------------------------------------

struct EvalRecord {
    std::string question;
    std::set<std::string> gold_chunk_ids;       // non-empty, ids exist in the store
    std::optional<std::string> reference_answer;  // required for similarity scoring
    std::string lang;
};

// JSONL: {"question": str, "gold_chunk_ids": [str], "reference_answer": str?,
// "lang": str?}. Empty gold sets and ids missing from the store are rejected
// at load time with the line number.
std::vector<EvalRecord> load_eval_records(const std::string& path, const ChunkStore& store);

struct RecallScore {
    double fractional = 0.0;  // |top-k intersect gold| / |gold|
    int full = 0;             // 1 iff fractional == 1.0
};

RecallScore recall_at_k(const RankedList& retrieved, const std::set<std::string>& gold, int k);

// Cosine of the two answer embeddings clamped to [0, 1]; either side empty
// scores 0.
double answer_similarity(const std::string& answer, const std::string& reference,
                         EmbedBackend& embedder);

// Closed-left buckets [0,.2) [.2,.4) [.4,.6) [.6,.8) [.8,1]; returns
// percentages rounded to one decimal, low bucket first.
std::array<double, 5> bucketize(const std::vector<double>& scores);

struct AblationRow {
    std::string config_name;
    std::size_t records = 0;
    std::size_t failures = 0;
    double mean_similarity = 0.0;      // over records with a reference answer
    std::size_t similarity_count = 0;  // how many records that was
    std::array<double, 5> buckets{};   // percentage per bucket, low first
    double top_bucket_share = 0.0;     // the 80-100% bucket, the other accuracy reading
    double full_recall_rate = 0.0;
    double mean_fractional_recall = 0.0;
    double mean_subqueries = 0.0;
    double mean_contexts = 0.0;  // distinct retrieved chunks after fusion
};

struct AblationReport {
    std::vector<AblationRow> rows;  // ordered by config name
    int recall_k = 20;
    std::size_t dataset_size = 0;

    ordered_json to_json() const;
    // Aligned-column with/without table in the style of pairwise ablation
    // reporting, one column per configuration.
    std::string to_table() const;
};

struct EvalOptions {
    int recall_k = 20;
    int jobs = 1;                 // concurrent queries; aggregation order is fixed
    std::string trace_dir;        // per-query traces persisted here when set
    std::string worksheet_path;   // manual-judgment worksheet JSONL when set
};

// Runs answer() for every (record, config) pair and aggregates. Per-query
// failures score zero and are counted, never fatal. Rows come out sorted by
// config name; identical inputs produce identical reports.
AblationReport run_ablation(const std::vector<EvalRecord>& dataset,
                            const std::vector<std::pair<std::string, PipelineConfig>>& configs,
                            const Infra& infra, const EvalOptions& options);

}  // namespace gridrag

#include "gridrag/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

namespace gridrag {

std::vector<EvalRecord> load_eval_records(const std::string& path, const ChunkStore& store) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset: " + path);

    std::vector<EvalRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        json row;
        try {
            row = json::parse(line);
        } catch (const json::parse_error& e) {
            throw IoError(where + ": malformed JSON line: " + e.what());
        }
        EvalRecord rec;
        if (!row.contains("question") || !row["question"].is_string() ||
            row["question"].get<std::string>().empty()) {
            throw IoError(where + ": missing or empty question");
        }
        rec.question = row["question"].get<std::string>();
        if (!row.contains("gold_chunk_ids") || !row["gold_chunk_ids"].is_array() ||
            row["gold_chunk_ids"].empty()) {
            throw IoError(where + ": gold_chunk_ids must be a non-empty array");
        }
        for (const auto& id : row["gold_chunk_ids"]) {
            const std::string chunk_id = id.get<std::string>();
            if (!store.contains(chunk_id)) {
                throw IoError(where + ": gold chunk not in store: " + chunk_id);
            }
            rec.gold_chunk_ids.insert(chunk_id);
        }
        if (row.contains("reference_answer") && row["reference_answer"].is_string()) {
            rec.reference_answer = row["reference_answer"].get<std::string>();
        }
        rec.lang = row.value("lang", std::string{});
        if (rec.lang.empty()) rec.lang = detect_language(rec.question);
        records.push_back(std::move(rec));
    }
    return records;
}

RecallScore recall_at_k(const RankedList& retrieved, const std::set<std::string>& gold, int k) {
    if (k < 1) throw ConfigError("recall_at_k: k must be >= 1");
    if (gold.empty()) throw ConfigError("recall_at_k: empty gold set");
    std::size_t hits = 0;
    const std::size_t limit = std::min<std::size_t>(retrieved.items.size(),
                                                    static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < limit; ++i) {
        if (gold.count(retrieved.items[i].id)) ++hits;
    }
    RecallScore score;
    score.fractional = static_cast<double>(hits) / static_cast<double>(gold.size());
    score.full = hits == gold.size() ? 1 : 0;
    return score;
}

double answer_similarity(const std::string& answer, const std::string& reference,
                         EmbedBackend& embedder) {
    if (trim(answer).empty() || trim(reference).empty()) return 0.0;
    const auto res = embedder.embed({answer, reference});
    const double sim = cosine(res.vectors[0], res.vectors[1]);
    return std::clamp(sim, 0.0, 1.0);
}

std::array<double, 5> bucketize(const std::vector<double>& scores) {
    std::array<std::size_t, 5> counts{};
    for (double s : scores) {
        std::size_t bucket;
        if (s < 0.2) {
            bucket = 0;
        } else if (s < 0.4) {
            bucket = 1;
        } else if (s < 0.6) {
            bucket = 2;
        } else if (s < 0.8) {
            bucket = 3;
        } else {
            bucket = 4;
        }
        ++counts[bucket];
    }
    std::array<double, 5> percentages{};
    if (scores.empty()) return percentages;
    for (std::size_t i = 0; i < 5; ++i) {
        const double pct = 100.0 * static_cast<double>(counts[i]) /
                           static_cast<double>(scores.size());
        percentages[i] = std::round(pct * 10.0) / 10.0;
    }
    return percentages;
}

// ---------------------------------------------------------------------------
// Ablation runs
// ---------------------------------------------------------------------------

namespace {

struct QueryOutcome {
    AnswerResult result;
    double similarity = 0.0;
    bool has_reference = false;
    RecallScore recall;
};

std::string record_trace_path(const std::string& trace_dir, const std::string& config_name,
                              std::size_t record_index) {
    char name[32];
    std::snprintf(name, sizeof(name), "q%03zu.json", record_index);
    return trace_dir + "/" + config_name + "/" + name;
}

}  // namespace

AblationReport run_ablation(const std::vector<EvalRecord>& dataset,
                            const std::vector<std::pair<std::string, PipelineConfig>>& configs,
                            const Infra& infra, const EvalOptions& options) {
    if (dataset.empty()) throw ConfigError("run_ablation: dataset is empty");
    if (configs.empty()) throw ConfigError("run_ablation: no configurations given");
    if (options.recall_k < 1) throw ConfigError("run_ablation: recall_k must be >= 1");

    struct Task {
        std::size_t config_index;
        std::size_t record_index;
    };
    std::vector<Task> tasks;
    tasks.reserve(configs.size() * dataset.size());
    for (std::size_t c = 0; c < configs.size(); ++c) {
        for (std::size_t r = 0; r < dataset.size(); ++r) tasks.push_back({c, r});
    }

    std::vector<QueryOutcome> outcomes(tasks.size());
    const auto run_task = [&](std::size_t t) {
        const Task& task = tasks[t];
        const EvalRecord& record = dataset[task.record_index];
        QueryOutcome& outcome = outcomes[t];
        outcome.result = answer(record.question, configs[task.config_index].second, infra);
        outcome.recall = recall_at_k(outcome.result.trace.fused, record.gold_chunk_ids,
                                     options.recall_k);
        if (record.reference_answer) {
            outcome.has_reference = true;
            outcome.similarity =
                outcome.result.failed
                    ? 0.0
                    : answer_similarity(outcome.result.answer, *record.reference_answer,
                                        *infra.embed);
        }
    };

    const int jobs = std::max(1, options.jobs);
    if (jobs == 1) {
        for (std::size_t t = 0; t < tasks.size(); ++t) run_task(t);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        workers.reserve(static_cast<std::size_t>(jobs));
        for (int w = 0; w < jobs; ++w) {
            workers.emplace_back([&] {
                while (true) {
                    const std::size_t t = next.fetch_add(1);
                    if (t >= tasks.size()) return;
                    run_task(t);
                }
            });
        }
        for (auto& worker : workers) worker.join();
    }

    // Persist traces and the judgment worksheet in deterministic order.
    if (!options.trace_dir.empty()) {
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            const auto& name = configs[tasks[t].config_index].first;
            const std::string path =
                record_trace_path(options.trace_dir, name, tasks[t].record_index);
            std::filesystem::create_directories(
                std::filesystem::path(path).parent_path());
            write_file(path, outcomes[t].result.trace.to_json().dump(2) + "\n");
        }
    }
    if (!options.worksheet_path.empty()) {
        std::vector<json> rows;
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            const auto& record = dataset[tasks[t].record_index];
            const auto& trace = outcomes[t].result.trace;
            json contexts = json::array();
            for (const auto& [id, text] : trace.bundle.documents) contexts.push_back(id);
            rows.push_back(ordered_json{{"config", configs[tasks[t].config_index].first},
                                        {"question", record.question},
                                        {"answer", outcomes[t].result.answer},
                                        {"context_ids", contexts}});
        }
        write_jsonl(options.worksheet_path, rows);
    }

    AblationReport report;
    report.recall_k = options.recall_k;
    report.dataset_size = dataset.size();
    for (std::size_t c = 0; c < configs.size(); ++c) {
        AblationRow row;
        row.config_name = configs[c].first;
        std::vector<double> similarities;
        double frac_sum = 0.0;
        std::size_t full_sum = 0;
        double subquery_sum = 0.0;
        double context_sum = 0.0;
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            if (tasks[t].config_index != c) continue;
            const QueryOutcome& outcome = outcomes[t];
            ++row.records;
            if (outcome.result.failed) ++row.failures;
            if (outcome.has_reference) similarities.push_back(outcome.similarity);
            frac_sum += outcome.recall.fractional;
            full_sum += static_cast<std::size_t>(outcome.recall.full);
            subquery_sum += static_cast<double>(outcome.result.trace.plan.sub_queries.size());
            context_sum += static_cast<double>(outcome.result.trace.fused.size());
        }
        const double n = static_cast<double>(row.records);
        row.similarity_count = similarities.size();
        if (!similarities.empty()) {
            double sum = 0.0;
            for (double s : similarities) sum += s;
            row.mean_similarity = sum / static_cast<double>(similarities.size());
        }
        row.buckets = bucketize(similarities);
        row.top_bucket_share = row.buckets[4];
        row.full_recall_rate = static_cast<double>(full_sum) / n;
        row.mean_fractional_recall = frac_sum / n;
        row.mean_subqueries = subquery_sum / n;
        row.mean_contexts = context_sum / n;
        report.rows.push_back(std::move(row));
    }
    std::stable_sort(report.rows.begin(), report.rows.end(),
                     [](const AblationRow& a, const AblationRow& b) {
                         return a.config_name < b.config_name;
                     });
    return report;
}

// ---------------------------------------------------------------------------
// Report output
// ---------------------------------------------------------------------------

ordered_json AblationReport::to_json() const {
    ordered_json rows_json = ordered_json::array();
    for (const auto& row : rows) {
        rows_json.push_back(ordered_json{
            {"config", row.config_name},
            {"records", row.records},
            {"failures", row.failures},
            {"mean_similarity", row.mean_similarity},
            {"similarity_count", row.similarity_count},
            {"buckets_pct",
             {{"0-20", row.buckets[0]},
              {"20-40", row.buckets[1]},
              {"40-60", row.buckets[2]},
              {"60-80", row.buckets[3]},
              {"80-100", row.buckets[4]}}},
            {"top_bucket_share", row.top_bucket_share},
            {"full_recall_rate", row.full_recall_rate},
            {"mean_fractional_recall", row.mean_fractional_recall},
            {"mean_subqueries", row.mean_subqueries},
            {"mean_contexts", row.mean_contexts}});
    }
    return ordered_json{
        {"recall_k", recall_k}, {"dataset_size", dataset_size}, {"configs", rows_json}};
}

std::string AblationReport::to_table() const {
    const std::string recall_label = "recall@" + std::to_string(recall_k);
    std::vector<std::string> metric_names = {
        "answer similarity (mean %)", "top bucket 80-100 (%)",
        recall_label + " full (%)",   recall_label + " fractional (%)",
        "mean sub-queries",           "mean contexts",
        "failures",                   "bucket 0-20 (%)",
        "bucket 20-40 (%)",           "bucket 40-60 (%)",
        "bucket 60-80 (%)",           "bucket 80-100 (%)"};

    const auto cell = [&](const AblationRow& row, std::size_t metric) -> std::string {
        switch (metric) {
            case 0: return format_fixed(row.mean_similarity * 100.0, 1);
            case 1: return format_fixed(row.top_bucket_share, 1);
            case 2: return format_fixed(row.full_recall_rate * 100.0, 1);
            case 3: return format_fixed(row.mean_fractional_recall * 100.0, 1);
            case 4: return format_fixed(row.mean_subqueries, 2);
            case 5: return format_fixed(row.mean_contexts, 2);
            case 6: return std::to_string(row.failures);
            default: return format_fixed(row.buckets[metric - 7], 1);
        }
    };

    std::size_t name_width = 0;
    for (const auto& m : metric_names) name_width = std::max(name_width, m.size());
    std::vector<std::size_t> col_widths(rows.size());
    for (std::size_t c = 0; c < rows.size(); ++c) {
        col_widths[c] = rows[c].config_name.size();
        for (std::size_t m = 0; m < metric_names.size(); ++m) {
            col_widths[c] = std::max(col_widths[c], cell(rows[c], m).size());
        }
    }

    std::string out;
    const auto pad_left = [](const std::string& s, std::size_t width) {
        return std::string(width > s.size() ? width - s.size() : 0, ' ') + s;
    };
    out += std::string(name_width, ' ');
    for (std::size_t c = 0; c < rows.size(); ++c) {
        out += " | " + pad_left(rows[c].config_name, col_widths[c]);
    }
    out += '\n';
    out += std::string(name_width, '-');
    for (std::size_t c = 0; c < rows.size(); ++c) {
        out += "-+-" + std::string(col_widths[c], '-');
    }
    out += '\n';
    for (std::size_t m = 0; m < metric_names.size(); ++m) {
        out += metric_names[m] + std::string(name_width - metric_names[m].size(), ' ');
        for (std::size_t c = 0; c < rows.size(); ++c) {
            out += " | " + pad_left(cell(rows[c], m), col_widths[c]);
        }
        out += '\n';
    }
    return out;
}

}  // namespace gridrag

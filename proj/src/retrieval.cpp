#include "gridrag/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace gridrag {

namespace {

void sort_and_truncate(std::vector<ScoredId>& items, int k) {
    std::sort(items.begin(), items.end(), [](const ScoredId& a, const ScoredId& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    if (k >= 0 && items.size() > static_cast<std::size_t>(k)) {
        items.resize(static_cast<std::size_t>(k));
    }
}

}  // namespace

bool RankedList::contains(const std::string& id) const {
    for (const auto& item : items) {
        if (item.id == id) return true;
    }
    return false;
}

json RankedList::to_json() const {
    json arr = json::array();
    for (const auto& item : items) arr.push_back(json::array({item.id, item.score}));
    return arr;
}

RankedList RankedList::from_json(const json& j, int k) {
    RankedList list;
    list.k = k;
    for (const auto& pair : j) {
        list.items.push_back({pair.at(0).get<std::string>(), pair.at(1).get<double>()});
    }
    return list;
}

double cosine(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw Error("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()) + ")");
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------
// Dense index
// ---------------------------------------------------------------------------

void DenseIndex::add(const std::string& id, std::vector<float> vec) {
    if (dim_ == 0) dim_ = static_cast<int>(vec.size());
    if (static_cast<int>(vec.size()) != dim_) {
        throw Error("dense index: vector dimension " + std::to_string(vec.size()) +
                    " does not match index dimension " + std::to_string(dim_));
    }
    if (by_id_.count(id)) throw Error("dense index: duplicate id " + id);
    by_id_[id] = ids_.size();
    ids_.push_back(id);
    rows_.push_back(std::move(vec));
}

const std::vector<float>* DenseIndex::find(const std::string& id) const {
    const auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &rows_[it->second];
}

void DenseIndex::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write dense index: " + path);
    const ordered_json header{{"dimension", dim_}, {"ids", ids_}};
    out << header.dump() << '\n';
    for (const auto& row : rows_) {
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw IoError("short write: " + path);
}

DenseIndex DenseIndex::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dense index: " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) throw IoError("dense index missing header: " + path);
    const json header = json::parse(header_line);

    DenseIndex index(header.at("dimension").get<int>());
    const auto ids = header.at("ids").get<std::vector<std::string>>();
    for (const auto& id : ids) {
        std::vector<float> row(static_cast<std::size_t>(index.dim_));
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!in) throw IoError("dense index truncated: " + path);
        index.add(id, std::move(row));
    }
    return index;
}

DenseIndex DenseIndex::build(const ChunkStore& store, EmbedBackend& embedder) {
    DenseIndex index(embedder.dimension());
    const auto& chunks = store.chunks();
    constexpr std::size_t kBatch = 64;
    for (std::size_t start = 0; start < chunks.size(); start += kBatch) {
        const std::size_t end = std::min(chunks.size(), start + kBatch);
        std::vector<std::string> texts;
        texts.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) texts.push_back(chunks[i].text);
        auto res = embedder.embed(texts);
        for (std::size_t i = start; i < end; ++i) {
            index.add(chunks[i].chunk_id, std::move(res.vectors[i - start]));
        }
    }
    return index;
}

RankedList dense_topk(std::span<const float> query_vec, const DenseIndex& index, int k) {
    if (k < 1) throw ConfigError("dense_topk: k must be >= 1");
    if (index.empty()) throw Error("dense_topk: index is empty");
    if (static_cast<int>(query_vec.size()) != index.dimension()) {
        throw Error("dense_topk: query dimension mismatch");
    }
    RankedList list;
    list.k = k;
    list.items.reserve(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        list.items.push_back({index.ids()[i], cosine(query_vec, index.row(i))});
    }
    sort_and_truncate(list.items, k);
    return list;
}

// ---------------------------------------------------------------------------
// Sparse index / BM25
// ---------------------------------------------------------------------------

SparseIndex SparseIndex::build(const ChunkStore& store) {
    SparseIndex index;
    for (const auto& chunk : store.chunks()) {
        const auto tokens = tokenize(chunk.text);
        index.doc_lengths[chunk.chunk_id] = static_cast<int>(tokens.size());
        std::map<std::string, int> tf;
        for (const auto& tok : tokens) ++tf[tok];
        for (const auto& [tok, count] : tf) {
            index.postings[tok].emplace_back(chunk.chunk_id, count);
        }
    }
    index.total_docs = index.doc_lengths.size();
    long long total_len = 0;
    for (const auto& [id, len] : index.doc_lengths) total_len += len;
    index.avg_len = index.total_docs == 0
                        ? 0.0
                        : static_cast<double>(total_len) / static_cast<double>(index.total_docs);
    return index;
}

void SparseIndex::save(const std::string& path) const {
    std::vector<json> rows;
    rows.push_back(ordered_json{{"kind", "meta"},
                                {"N", total_docs},
                                {"avg_len", avg_len},
                                {"k1", k1},
                                {"b", b},
                                {"doc_lengths", doc_lengths}});
    for (const auto& [token, plist] : postings) {
        json arr = json::array();
        for (const auto& [id, tf] : plist) arr.push_back(json::array({id, tf}));
        rows.push_back(ordered_json{{"kind", "postings"}, {"token", token}, {"list", arr}});
    }
    write_jsonl(path, rows);
}

SparseIndex SparseIndex::load(const std::string& path) {
    SparseIndex index;
    bool meta_seen = false;
    for (const auto& row : read_jsonl(path)) {
        const std::string kind = row.at("kind").get<std::string>();
        if (kind == "meta") {
            meta_seen = true;
            index.total_docs = row.at("N").get<std::size_t>();
            index.avg_len = row.at("avg_len").get<double>();
            index.k1 = row.at("k1").get<double>();
            index.b = row.at("b").get<double>();
            index.doc_lengths = row.at("doc_lengths").get<std::map<std::string, int>>();
        } else if (kind == "postings") {
            auto& plist = index.postings[row.at("token").get<std::string>()];
            for (const auto& pair : row.at("list")) {
                plist.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<int>());
            }
        } else {
            throw IoError("sparse index: unknown row kind " + kind + " in " + path);
        }
    }
    if (!meta_seen) throw IoError("sparse index missing meta row: " + path);
    return index;
}

RankedList bm25_topk(const std::vector<std::string>& query_tokens, const SparseIndex& index,
                     int k) {
    if (k < 1) throw ConfigError("bm25_topk: k must be >= 1");
    RankedList list;
    list.k = k;
    if (query_tokens.empty() || index.total_docs == 0) return list;

    const double n_docs = static_cast<double>(index.total_docs);
    std::map<std::string, double> scores;
    for (const auto& token : query_tokens) {
        const auto it = index.postings.find(token);
        if (it == index.postings.end()) continue;
        const double df = static_cast<double>(it->second.size());
        const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
        for (const auto& [chunk_id, tf] : it->second) {
            const double len = static_cast<double>(index.doc_lengths.at(chunk_id));
            const double denom =
                tf + index.k1 * (1.0 - index.b + index.b * len / index.avg_len);
            scores[chunk_id] += idf * (tf * (index.k1 + 1.0)) / denom;
        }
    }
    for (const auto& [id, score] : scores) {
        if (score > 0.0) list.items.push_back({id, score});
    }
    sort_and_truncate(list.items, k);
    return list;
}

// ---------------------------------------------------------------------------
// Graph-mediated retrieval
// ---------------------------------------------------------------------------

GraphRetrievalResult graph_retrieve(const std::vector<std::string>& query_keywords,
                                    std::span<const float> query_vec,
                                    const KnowledgeGraph& graph, const DenseIndex& dense,
                                    const GraphRetrievalParams& params) {
    if (params.k < 1 || params.m_ent < 1) {
        throw ConfigError("graph_retrieve: cutoffs must be >= 1");
    }
    GraphRetrievalResult out;
    out.chunks.k = params.k;
    out.entities.k = params.m_ent;
    out.relations.k = params.k;
    if (graph.empty()) return out;

    std::vector<std::string> norm_keywords;
    for (const auto& kw : query_keywords) {
        const std::string norm = normalize_key(kw);
        if (!norm.empty()) norm_keywords.push_back(norm);
    }

    // Seed scoring: exact matches pin to 1.0, semantic matches carry their
    // cosine when it clears the threshold.
    std::map<std::string, double> seed_scores;
    for (const auto& [eid, entity] : graph.entities) {
        bool exact = false;
        for (const auto& kw : norm_keywords) {
            if (kw.find(entity.norm_name) != std::string::npos ||
                entity.norm_name.find(kw) != std::string::npos) {
                exact = true;
                break;
            }
        }
        if (exact) {
            seed_scores[eid] = 1.0;
            continue;
        }
        if (!entity.embedding.empty()) {
            const double sim = cosine(query_vec, entity.embedding);
            if (sim >= params.tau_ent) seed_scores[eid] = sim;
        }
    }
    if (seed_scores.empty()) return out;

    for (const auto& [eid, score] : seed_scores) out.entities.items.push_back({eid, score});
    sort_and_truncate(out.entities.items, params.m_ent);

    // Relations adjacent to the capped seed set, ranked and truncated first:
    // candidate chunks are drawn from the provenance of what is actually
    // returned, so the chunk list is always covered by the entity and
    // relation lists.
    std::set<std::string> adjacent;
    for (const auto& seed : out.entities.items) {
        if (const auto it = graph.adjacency.find(seed.id); it != graph.adjacency.end()) {
            adjacent.insert(it->second.begin(), it->second.end());
        }
    }
    for (const auto& rid : adjacent) {
        const Relation& rel = graph.relations.at(rid);
        const double sim = rel.embedding.empty() ? 0.0 : cosine(query_vec, rel.embedding);
        out.relations.items.push_back({rid, sim});
    }
    sort_and_truncate(out.relations.items, params.k);

    std::set<std::string> candidate_chunks;
    for (const auto& seed : out.entities.items) {
        const Entity& entity = graph.entities.at(seed.id);
        candidate_chunks.insert(entity.source_chunks.begin(), entity.source_chunks.end());
    }
    for (const auto& item : out.relations.items) {
        const Relation& rel = graph.relations.at(item.id);
        candidate_chunks.insert(rel.source_chunks.begin(), rel.source_chunks.end());
    }

    for (const auto& chunk_id : candidate_chunks) {
        const std::vector<float>* vec = dense.find(chunk_id);
        if (!vec) {
            ++out.dropped_missing_embedding;
            continue;
        }
        out.chunks.items.push_back({chunk_id, cosine(query_vec, *vec)});
    }
    sort_and_truncate(out.chunks.items, params.k);
    return out;
}

// ---------------------------------------------------------------------------
// Reciprocal rank fusion
// ---------------------------------------------------------------------------

RankedList rrf_fuse(const std::vector<RankedList>& lists, int k_rrf, int k) {
    if (k_rrf < 1) throw ConfigError("rrf_fuse: k_rrf must be >= 1");
    RankedList fused;
    fused.k = k;
    // Contributions are summed in sorted order so the result is bit-identical
    // under any permutation of the input lists.
    std::map<std::string, std::vector<double>> contributions;
    for (const auto& list : lists) {
        for (std::size_t rank = 0; rank < list.items.size(); ++rank) {
            contributions[list.items[rank].id].push_back(
                1.0 / (k_rrf + static_cast<double>(rank + 1)));
        }
    }
    for (auto& [id, parts] : contributions) {
        std::sort(parts.begin(), parts.end());
        double score = 0.0;
        for (double part : parts) score += part;
        fused.items.push_back({id, score});
    }
    sort_and_truncate(fused.items, k);
    return fused;
}

}  // namespace gridrag

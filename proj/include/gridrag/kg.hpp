#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "gridrag/corpus.hpp"
#include "gridrag/llm.hpp"
#include "gridrag/util.hpp"

namespace gridrag {

// ---------------------------------------------------------------------------
// Knowledge graph built from per-chunk entity/relation extraction, with
// provenance links back to the chunk store.
// ---------------------------------------------------------------------------

struct Entity {
    // Deterministic id: the normalization key itself, so graphs built from
    // the same records in any order get the same ids.
    std::string entity_id;
    std::string name;       // canonical surface form (first seen)
    std::string norm_name;  // lowercased, whitespace-collapsed, width-folded
    std::string etype;
    // Deduplicated description parts joined with '\n' (extraction records are
    // single-line, so the separator cannot collide).
    std::string description;
    std::set<std::string> source_chunks;
    std::vector<float> embedding;
};

struct Relation {
    std::string relation_id;  // content hash of (src, dst, normalized description)
    std::string src;          // entity_id
    std::string dst;          // entity_id
    std::string description;
    std::vector<std::string> keywords;
    std::set<std::string> source_chunks;
    std::vector<float> embedding;
};

struct KnowledgeGraph {
    std::map<std::string, Entity> entities;
    std::map<std::string, Relation> relations;
    std::map<std::string, std::set<std::string>> adjacency;  // entity -> relation ids

    bool empty() const { return entities.empty(); }

    // Referential integrity plus adjacency soundness; throws Error on any
    // violation. Called after every mutation batch.
    void check_invariants() const;

    // entities.jsonl + relations.jsonl + graph_manifest.json
    void save(const std::string& dir, const std::string& extractor_kind,
              const std::string& embedder_id, int dimension) const;
    static KnowledgeGraph load(const std::string& dir);
};

struct ExtractionRecord {
    enum class Kind { entity, relation };
    Kind kind = Kind::entity;
    // entity: name/etype/description; relation: src/dst/description/keywords
    std::string name;
    std::string etype;
    std::string description;
    std::string src;
    std::string dst;
    std::vector<std::string> keywords;
    std::string origin_chunk;
};

struct ExtractionResult {
    std::vector<ExtractionRecord> records;
    std::size_t skipped_lines = 0;
};

// Record grammar, one record per line:
//   E|name|type|description
//   R|src|dst|description|kw1;kw2;...
// Fields are trimmed; malformed lines (wrong prefix, missing fields, empty
// names) are skipped and counted, never fatal.
ExtractionResult parse_extraction_output(const std::string& raw, const std::string& origin_chunk);

class Extractor {
public:
    virtual ~Extractor() = default;
    virtual ExtractionResult extract(const Chunk& chunk) = 0;
    virtual std::string kind() const = 0;
};

// Deterministic extractor: matches a fixed term list (case-insensitive,
// width-folded) against chunk text, emitting an entity per matched term and a
// "co-occurs" relation per unordered pair of matched terms.
class GazetteerExtractor : public Extractor {
public:
    explicit GazetteerExtractor(const std::vector<std::string>& terms);
    // Term list file: UTF-8 text, one term per line.
    static GazetteerExtractor from_file(const std::string& path);

    ExtractionResult extract(const Chunk& chunk) override;
    std::string kind() const override { return "gazetteer"; }

private:
    std::vector<std::pair<std::string, std::string>> terms_;  // (display, norm), norm-sorted
};

// Prompts the chat backend with the extraction template ({text} placeholder)
// and parses the reply. Gateway errors propagate.
class LlmExtractor : public Extractor {
public:
    LlmExtractor(std::shared_ptr<ChatBackend> chat, std::string prompt_template);
    ExtractionResult extract(const Chunk& chunk) override;
    std::string kind() const override { return "llm"; }

private:
    std::shared_ptr<ChatBackend> chat_;
    std::string template_;
};

struct UpsertStats {
    std::size_t entity_records = 0;
    std::size_t relation_records = 0;
    std::size_t skipped_records = 0;  // dangling or degenerate relations
};

// Merges a record batch into the graph. Entities merge on norm_name
// (descriptions deduplicated in insertion order, source chunks unioned) and
// relations on (src, dst, normalized description). Embeddings of every
// touched node/edge are recomputed from the merged text, so applying the
// same batch twice equals applying it once. Entities are absorbed before
// relations; a relation whose endpoints appear in neither the batch nor the
// graph is skipped and counted.
UpsertStats upsert_records(const std::vector<ExtractionRecord>& records, KnowledgeGraph& graph,
                           EmbedBackend& embedder);

struct BuildStats {
    std::size_t chunks = 0;
    std::size_t records = 0;
    std::size_t skipped_lines = 0;
    std::size_t skipped_records = 0;
};

// Folds extract + upsert over the chunks in the order given. Extractor
// errors propagate annotated with the offending chunk_id.
BuildStats build_graph(const std::vector<Chunk>& chunks, Extractor& extractor,
                       EmbedBackend& embedder, KnowledgeGraph& graph);

// Text embedded for an entity / relation; shared by upsert and tests.
std::string entity_embed_text(const Entity& e);
std::string relation_embed_text(const Relation& r, const KnowledgeGraph& graph);

}  // namespace gridrag

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gridrag/util.hpp"

namespace gridrag {

// ---------------------------------------------------------------------------
// Corpus ingestion: recursive splitting into character-bounded chunks with a
// persistent, reproducible chunk store.
// ---------------------------------------------------------------------------

struct Document {
    std::string doc_id;
    std::string text;
    std::string lang;  // zh-Hant | zh-Hans | en | other
    std::map<std::string, std::string> meta;
};

struct Chunk {
    std::string chunk_id;  // doc_id + "#" + ordinal
    std::string doc_id;
    int ordinal = 0;
    std::string text;
    std::string lang;
    // Codepoint offsets into the parent document text; the chunk text is
    // exactly the parent slice [begin, end), overlap included.
    std::size_t span_begin = 0;
    std::size_t span_end = 0;
};

struct SplitterConfig {
    std::vector<std::string> separators = {"\n\n", "\n", "。", ".", " "};
    std::size_t max_chars = 800;
    std::size_t overlap_chars = 80;  // 10% of max_chars

    void validate() const;
    json to_json() const;
    static SplitterConfig from_json(const json& j);
};

// Splits text into chunks of at most max_chars characters, preferring the
// earliest separator that yields compliant pieces and hard-cutting anything
// no separator can reduce. Adjacent chunks share overlap_chars characters
// where the boundary permits. Pure function; empty text yields no chunks.
std::vector<Chunk> split_recursive(const std::string& text, const SplitterConfig& cfg,
                                   const std::string& doc_id = {});

// Codepoint-ratio language heuristic: CJK >= 30% of non-whitespace codepoints
// selects the Chinese branch (zh-Hans only on simplified-only evidence),
// ASCII letters >= 50% selects en, anything else (including empty) is other.
std::string detect_language(const std::string& text);

struct IngestSummary {
    std::size_t documents = 0;
    std::size_t chunks = 0;
};

class ChunkStore {
public:
    ChunkStore() = default;

    const Chunk* find(const std::string& chunk_id) const;
    const Chunk& at(const std::string& chunk_id) const;
    bool contains(const std::string& chunk_id) const { return find(chunk_id) != nullptr; }
    const std::vector<Chunk>& chunks() const { return chunks_; }
    std::size_t size() const { return chunks_.size(); }
    bool empty() const { return chunks_.empty(); }
    std::size_t document_count() const { return doc_chunks_.size(); }
    bool has_document(const std::string& doc_id) const { return doc_chunks_.count(doc_id) > 0; }
    const SplitterConfig& splitter() const { return splitter_; }

    // Persisted as chunks.jsonl plus manifest.json recording the splitter
    // configuration and counts.
    void save(const std::string& dir) const;
    static ChunkStore load(const std::string& dir);

private:
    friend IngestSummary ingest(const std::vector<Document>& documents, const SplitterConfig& cfg,
                                ChunkStore& store);

    void append_chunks(const std::string& doc_id, std::vector<Chunk> chunks);

    std::vector<Chunk> chunks_;
    std::unordered_map<std::string, std::size_t> index_;           // chunk_id -> position
    std::map<std::string, std::vector<std::size_t>> doc_chunks_;   // doc_id -> positions
    SplitterConfig splitter_;
};

// Splits and persists every document. Re-ingesting a document whose chunking
// is identical to what the store already holds is a no-op; a doc_id that is
// duplicated within the batch or conflicts with stored content is rejected
// with all offenders listed.
IngestSummary ingest(const std::vector<Document>& documents, const SplitterConfig& cfg,
                     ChunkStore& store);

// Corpus JSONL: {"doc_id": str, "text": str, "lang": str?, "meta": object?}
// per line. Missing lang triggers detect_language. Malformed lines and
// invariant violations raise IoError with the line number.
std::vector<Document> load_documents_jsonl(const std::string& path);

}  // namespace gridrag

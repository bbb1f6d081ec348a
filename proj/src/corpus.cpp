#include "gridrag/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace gridrag {

void SplitterConfig::validate() const {
    if (separators.empty()) throw ConfigError("splitter: separator list is empty");
    for (const auto& sep : separators) {
        if (sep.empty()) throw ConfigError("splitter: empty separator string");
    }
    if (max_chars == 0) throw ConfigError("splitter: max_chars must be positive");
    if (overlap_chars >= max_chars) {
        throw ConfigError("splitter: overlap_chars must be smaller than max_chars");
    }
}

json SplitterConfig::to_json() const {
    return json{{"separators", separators},
                {"max_chars", max_chars},
                {"overlap_chars", overlap_chars}};
}

SplitterConfig SplitterConfig::from_json(const json& j) {
    SplitterConfig cfg;
    if (j.contains("separators")) cfg.separators = j["separators"].get<std::vector<std::string>>();
    cfg.max_chars = j.value("max_chars", cfg.max_chars);
    cfg.overlap_chars = j.value("overlap_chars", cfg.overlap_chars);
    cfg.validate();
    return cfg;
}

namespace {

using Span = std::pair<std::size_t, std::size_t>;

std::size_t find_sub(const std::u32string& hay, const std::u32string& needle, std::size_t from,
                     std::size_t limit) {
    if (needle.empty() || limit < needle.size()) return std::u32string::npos;
    const std::size_t last = limit - needle.size();
    for (std::size_t i = from; i <= last; ++i) {
        if (std::char_traits<char32_t>::compare(hay.data() + i, needle.data(), needle.size()) == 0)
            return i;
    }
    return std::u32string::npos;
}

// Splits [begin, end) into contiguous segments of at most budget codepoints.
// At each level the segment is cut after every occurrence of the current
// separator (separator kept with the preceding piece, so concatenation is
// lossless), pieces are greedily packed back up to the budget, and any piece
// a separator level cannot reduce descends to the next one.
void split_segment(const std::u32string& cps, std::size_t begin, std::size_t end,
                   std::size_t sep_idx, std::size_t budget,
                   const std::vector<std::u32string>& seps, std::vector<Span>& out) {
    if (begin >= end) return;
    if (end - begin <= budget) {
        out.emplace_back(begin, end);
        return;
    }
    if (sep_idx >= seps.size()) {
        for (std::size_t p = begin; p < end; p += budget) {
            out.emplace_back(p, std::min(end, p + budget));
        }
        return;
    }

    const auto& sep = seps[sep_idx];
    std::vector<Span> pieces;
    std::size_t pos = begin;
    while (pos < end) {
        const std::size_t hit = find_sub(cps, sep, pos, end);
        if (hit == std::u32string::npos) {
            pieces.emplace_back(pos, end);
            break;
        }
        pieces.emplace_back(pos, hit + sep.size());
        pos = hit + sep.size();
    }
    if (pieces.size() <= 1) {
        split_segment(cps, begin, end, sep_idx + 1, budget, seps, out);
        return;
    }

    std::size_t group_begin = pieces.front().first;
    std::size_t group_end = group_begin;
    for (const auto& [pb, pe] : pieces) {
        if (pe - group_begin <= budget) {
            group_end = pe;
            continue;
        }
        if (group_end > group_begin) out.emplace_back(group_begin, group_end);
        if (pe - pb <= budget) {
            group_begin = pb;
            group_end = pe;
        } else {
            split_segment(cps, pb, pe, sep_idx + 1, budget, seps, out);
            group_begin = pe;
            group_end = pe;
        }
    }
    if (group_end > group_begin) out.emplace_back(group_begin, group_end);
}

}  // namespace

std::vector<Chunk> split_recursive(const std::string& text, const SplitterConfig& cfg,
                                   const std::string& doc_id) {
    cfg.validate();
    if (text.empty()) return {};

    const std::u32string cps = utf8_decode(text);
    std::vector<std::u32string> seps;
    seps.reserve(cfg.separators.size());
    for (const auto& s : cfg.separators) seps.push_back(utf8_decode(s));

    // With overlap enabled, segments are sized so the prepended overlap never
    // pushes a chunk past max_chars.
    const std::size_t budget = cfg.max_chars - cfg.overlap_chars;

    std::vector<Span> segments;
    split_segment(cps, 0, cps.size(), 0, budget, seps, segments);

    std::vector<Chunk> chunks;
    chunks.reserve(segments.size());
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto [seg_begin, seg_end] = segments[i];
        std::size_t overlap = 0;
        if (i > 0 && cfg.overlap_chars > 0) {
            const std::size_t prev_len = segments[i - 1].second - segments[i - 1].first;
            overlap = std::min(cfg.overlap_chars, prev_len);
        }
        Chunk chunk;
        chunk.doc_id = doc_id;
        chunk.ordinal = static_cast<int>(i);
        chunk.chunk_id = doc_id + "#" + std::to_string(i);
        chunk.span_begin = seg_begin - overlap;
        chunk.span_end = seg_end;
        chunk.text = utf8_slice(cps, chunk.span_begin, chunk.span_end);
        chunk.lang = detect_language(chunk.text);
        chunks.push_back(std::move(chunk));
    }
    return chunks;
}

std::string detect_language(const std::string& text) {
    std::size_t total = 0;
    std::size_t cjk = 0;
    std::size_t ascii_letters = 0;
    bool simplified = false;
    for (char32_t cp : utf8_decode(text)) {
        if (cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == U'\f' ||
            cp == U'\v' || cp == 0x3000) {
            continue;
        }
        ++total;
        if (is_cjk(cp)) {
            ++cjk;
            if (is_simplified_only(cp)) simplified = true;
        } else if ((cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z')) {
            ++ascii_letters;
        }
    }
    if (total == 0) return "other";
    if (cjk * 10 >= total * 3) return simplified ? "zh-Hans" : "zh-Hant";
    if (ascii_letters * 2 >= total) return "en";
    return "other";
}

// ---------------------------------------------------------------------------
// ChunkStore
// ---------------------------------------------------------------------------

const Chunk* ChunkStore::find(const std::string& chunk_id) const {
    const auto it = index_.find(chunk_id);
    return it == index_.end() ? nullptr : &chunks_[it->second];
}

const Chunk& ChunkStore::at(const std::string& chunk_id) const {
    const Chunk* c = find(chunk_id);
    if (!c) throw Error("unknown chunk_id: " + chunk_id);
    return *c;
}

void ChunkStore::append_chunks(const std::string& doc_id, std::vector<Chunk> chunks) {
    auto& positions = doc_chunks_[doc_id];
    for (auto& chunk : chunks) {
        index_[chunk.chunk_id] = chunks_.size();
        positions.push_back(chunks_.size());
        chunks_.push_back(std::move(chunk));
    }
}

void ChunkStore::save(const std::string& dir) const {
    std::vector<json> rows;
    rows.reserve(chunks_.size());
    for (const auto& c : chunks_) {
        rows.push_back(ordered_json{{"chunk_id", c.chunk_id},
                                    {"doc_id", c.doc_id},
                                    {"ordinal", c.ordinal},
                                    {"text", c.text},
                                    {"lang", c.lang},
                                    {"span", {c.span_begin, c.span_end}}});
    }
    write_jsonl(dir + "/chunks.jsonl", rows);
    const ordered_json manifest{{"splitter", splitter_.to_json()},
                                {"documents", document_count()},
                                {"chunks", chunks_.size()}};
    write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

ChunkStore ChunkStore::load(const std::string& dir) {
    ChunkStore store;
    const json manifest = json::parse(read_file(dir + "/manifest.json"));
    store.splitter_ = SplitterConfig::from_json(manifest.at("splitter"));

    std::map<std::string, std::vector<Chunk>> per_doc;
    for (const auto& row : read_jsonl(dir + "/chunks.jsonl")) {
        Chunk c;
        c.chunk_id = row.at("chunk_id").get<std::string>();
        c.doc_id = row.at("doc_id").get<std::string>();
        c.ordinal = row.at("ordinal").get<int>();
        c.text = row.at("text").get<std::string>();
        c.lang = row.at("lang").get<std::string>();
        c.span_begin = row.at("span")[0].get<std::size_t>();
        c.span_end = row.at("span")[1].get<std::size_t>();
        store.index_[c.chunk_id] = store.chunks_.size();
        store.doc_chunks_[c.doc_id].push_back(store.chunks_.size());
        store.chunks_.push_back(std::move(c));
    }
    return store;
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

IngestSummary ingest(const std::vector<Document>& documents, const SplitterConfig& cfg,
                     ChunkStore& store) {
    cfg.validate();
    if (!store.chunks_.empty()) {
        // A store only ever holds output of one splitter configuration.
        const json a = store.splitter_.to_json();
        const json b = cfg.to_json();
        if (a != b) throw ConfigError("ingest: splitter config differs from the store's manifest");
    }

    std::set<std::string> batch_ids;
    std::vector<std::string> offenders;
    struct Pending {
        const Document* doc;
        std::vector<Chunk> chunks;
    };
    std::vector<Pending> pending;

    for (const auto& doc : documents) {
        if (doc.doc_id.empty()) throw ConfigError("ingest: document with empty doc_id");
        if (doc.text.empty()) throw ConfigError("ingest: document " + doc.doc_id + " has no text");
        if (!batch_ids.insert(doc.doc_id).second) {
            offenders.push_back(doc.doc_id + " (duplicated in batch)");
            continue;
        }
        auto chunks = split_recursive(doc.text, cfg, doc.doc_id);
        if (const auto it = store.doc_chunks_.find(doc.doc_id); it != store.doc_chunks_.end()) {
            bool identical = it->second.size() == chunks.size();
            for (std::size_t i = 0; identical && i < chunks.size(); ++i) {
                identical = store.chunks_[it->second[i]].text == chunks[i].text;
            }
            if (!identical) {
                offenders.push_back(doc.doc_id + " (conflicts with stored content)");
            } else {
                // Identical re-ingest is a no-op.
                pending.push_back({&doc, {}});
            }
            continue;
        }
        pending.push_back({&doc, std::move(chunks)});
    }

    if (!offenders.empty()) {
        throw ConfigError("ingest rejected, duplicate doc_id: " + join(offenders, ", "));
    }

    IngestSummary summary;
    for (auto& p : pending) {
        ++summary.documents;
        const auto it = store.doc_chunks_.find(p.doc->doc_id);
        if (it != store.doc_chunks_.end()) {
            summary.chunks += it->second.size();
            continue;
        }
        summary.chunks += p.chunks.size();
        store.append_chunks(p.doc->doc_id, std::move(p.chunks));
    }
    store.splitter_ = cfg;
    return summary;
}

std::vector<Document> load_documents_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus file: " + path);

    std::vector<Document> docs;
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
        Document doc;
        if (!row.contains("doc_id") || !row["doc_id"].is_string() ||
            row["doc_id"].get<std::string>().empty()) {
            throw IoError(where + ": missing or empty doc_id");
        }
        if (!row.contains("text") || !row["text"].is_string() ||
            row["text"].get<std::string>().empty()) {
            throw IoError(where + ": missing or empty text");
        }
        doc.doc_id = row["doc_id"].get<std::string>();
        doc.text = row["text"].get<std::string>();
        doc.lang = row.value("lang", std::string{});
        if (doc.lang.empty()) doc.lang = detect_language(doc.text);
        if (row.contains("meta")) {
            if (!row["meta"].is_object()) throw IoError(where + ": meta must be an object");
            for (const auto& [k, v] : row["meta"].items()) {
                if (!v.is_string()) throw IoError(where + ": meta values must be strings");
                doc.meta[k] = v.get<std::string>();
            }
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

}  // namespace gridrag

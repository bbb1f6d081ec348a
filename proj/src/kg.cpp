#include "gridrag/kg.hpp"

#include <algorithm>
#include <sstream>

namespace gridrag {

namespace {

std::string relation_key(const std::string& src, const std::string& dst,
                         const std::string& description) {
    return src + "|" + dst + "|" + normalize_key(description);
}

std::string relation_id_for(const std::string& src, const std::string& dst,
                            const std::string& description) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(relation_key(src, dst, description))));
    return std::string("r") + buf;
}

std::vector<std::string> description_parts(const std::string& description) {
    std::vector<std::string> parts;
    for (auto& p : split(description, '\n')) {
        if (!p.empty()) parts.push_back(std::move(p));
    }
    return parts;
}

void merge_description(std::string& existing, const std::string& incoming) {
    if (incoming.empty()) return;
    auto parts = description_parts(existing);
    for (const auto& p : description_parts(incoming)) {
        if (std::find(parts.begin(), parts.end(), p) == parts.end()) parts.push_back(p);
    }
    existing = join(parts, "\n");
}

}  // namespace

std::string entity_embed_text(const Entity& e) {
    if (e.description.empty()) return e.name;
    return e.name + "\n" + e.description;
}

std::string relation_embed_text(const Relation& r, const KnowledgeGraph& graph) {
    std::string text;
    if (const auto it = graph.entities.find(r.src); it != graph.entities.end()) {
        text += it->second.name;
        text += ' ';
    }
    if (const auto it = graph.entities.find(r.dst); it != graph.entities.end()) {
        text += it->second.name;
        text += ' ';
    }
    text += r.description;
    for (const auto& kw : r.keywords) {
        text += ' ';
        text += kw;
    }
    return text;
}

// ---------------------------------------------------------------------------
// Invariants
// ---------------------------------------------------------------------------

void KnowledgeGraph::check_invariants() const {
    for (const auto& [rid, rel] : relations) {
        if (!entities.count(rel.src)) throw Error("relation " + rid + " has dangling src");
        if (!entities.count(rel.dst)) throw Error("relation " + rid + " has dangling dst");
        if (rel.src == rel.dst) throw Error("relation " + rid + " is a self loop");
        if (rel.source_chunks.empty()) throw Error("relation " + rid + " has no provenance");
    }
    for (const auto& [eid, ent] : entities) {
        if (ent.norm_name.empty()) throw Error("entity " + eid + " has empty norm_name");
        if (ent.source_chunks.empty()) throw Error("entity " + eid + " has no provenance");
    }
    // Adjacency must equal a rebuild from the relation map.
    std::map<std::string, std::set<std::string>> rebuilt;
    for (const auto& [rid, rel] : relations) {
        rebuilt[rel.src].insert(rid);
        rebuilt[rel.dst].insert(rid);
    }
    if (rebuilt != adjacency) throw Error("adjacency is out of sync with relations");
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

void KnowledgeGraph::save(const std::string& dir, const std::string& extractor_kind,
                          const std::string& embedder_id, int dimension) const {
    std::vector<json> entity_rows;
    entity_rows.reserve(entities.size());
    for (const auto& [eid, e] : entities) {
        entity_rows.push_back(ordered_json{
            {"entity_id", eid},
            {"name", e.name},
            {"norm_name", e.norm_name},
            {"etype", e.etype},
            {"description", e.description},
            {"source_chunks", std::vector<std::string>(e.source_chunks.begin(),
                                                       e.source_chunks.end())},
            {"embedding", e.embedding}});
    }
    write_jsonl(dir + "/entities.jsonl", entity_rows);

    std::vector<json> relation_rows;
    relation_rows.reserve(relations.size());
    for (const auto& [rid, r] : relations) {
        relation_rows.push_back(ordered_json{
            {"relation_id", rid},
            {"src", r.src},
            {"dst", r.dst},
            {"description", r.description},
            {"keywords", r.keywords},
            {"source_chunks", std::vector<std::string>(r.source_chunks.begin(),
                                                       r.source_chunks.end())},
            {"embedding", r.embedding}});
    }
    write_jsonl(dir + "/relations.jsonl", relation_rows);

    const ordered_json manifest{{"extractor", extractor_kind},
                                {"embedder", embedder_id},
                                {"dimension", dimension},
                                {"entities", entities.size()},
                                {"relations", relations.size()}};
    write_file(dir + "/graph_manifest.json", manifest.dump(2) + "\n");
}

KnowledgeGraph KnowledgeGraph::load(const std::string& dir) {
    KnowledgeGraph graph;
    for (const auto& row : read_jsonl(dir + "/entities.jsonl")) {
        Entity e;
        e.entity_id = row.at("entity_id").get<std::string>();
        e.name = row.at("name").get<std::string>();
        e.norm_name = row.at("norm_name").get<std::string>();
        e.etype = row.at("etype").get<std::string>();
        e.description = row.at("description").get<std::string>();
        for (const auto& c : row.at("source_chunks")) e.source_chunks.insert(c.get<std::string>());
        e.embedding = row.at("embedding").get<std::vector<float>>();
        graph.entities[e.entity_id] = std::move(e);
    }
    for (const auto& row : read_jsonl(dir + "/relations.jsonl")) {
        Relation r;
        r.relation_id = row.at("relation_id").get<std::string>();
        r.src = row.at("src").get<std::string>();
        r.dst = row.at("dst").get<std::string>();
        r.description = row.at("description").get<std::string>();
        r.keywords = row.at("keywords").get<std::vector<std::string>>();
        for (const auto& c : row.at("source_chunks")) r.source_chunks.insert(c.get<std::string>());
        r.embedding = row.at("embedding").get<std::vector<float>>();
        graph.adjacency[r.src].insert(r.relation_id);
        graph.adjacency[r.dst].insert(r.relation_id);
        graph.relations[r.relation_id] = std::move(r);
    }
    graph.check_invariants();
    return graph;
}

// ---------------------------------------------------------------------------
// Extraction output parser
// ---------------------------------------------------------------------------

ExtractionResult parse_extraction_output(const std::string& raw,
                                         const std::string& origin_chunk) {
    ExtractionResult out;
    std::istringstream stream(raw);
    std::string line;
    while (std::getline(stream, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;

        auto parts = split(line, '|');
        for (auto& p : parts) p = trim(p);

        ExtractionRecord rec;
        rec.origin_chunk = origin_chunk;
        if (parts[0] == "E" && parts.size() >= 4 && !parts[1].empty()) {
            rec.kind = ExtractionRecord::Kind::entity;
            rec.name = parts[1];
            rec.etype = parts[2];
            rec.description = parts[3];
            for (std::size_t i = 4; i < parts.size(); ++i) rec.description += "|" + parts[i];
        } else if (parts[0] == "R" && parts.size() >= 5 && !parts[1].empty() &&
                   !parts[2].empty()) {
            rec.kind = ExtractionRecord::Kind::relation;
            rec.src = parts[1];
            rec.dst = parts[2];
            rec.description = parts[3];
            std::string kw_field = parts[4];
            for (std::size_t i = 5; i < parts.size(); ++i) kw_field += ";" + parts[i];
            for (const auto& kw : split(kw_field, ';')) {
                const std::string t = trim(kw);
                if (!t.empty()) rec.keywords.push_back(t);
            }
        } else {
            ++out.skipped_lines;
            continue;
        }
        out.records.push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Extractors
// ---------------------------------------------------------------------------

GazetteerExtractor::GazetteerExtractor(const std::vector<std::string>& terms) {
    std::set<std::string> seen;
    for (const auto& term : terms) {
        const std::string display = trim(term);
        const std::string norm = normalize_key(display);
        if (norm.empty() || !seen.insert(norm).second) continue;
        terms_.emplace_back(display, norm);
    }
    std::sort(terms_.begin(), terms_.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
}

GazetteerExtractor GazetteerExtractor::from_file(const std::string& path) {
    std::vector<std::string> terms;
    std::istringstream stream(read_file(path));
    std::string line;
    while (std::getline(stream, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!trim(line).empty()) terms.push_back(trim(line));
    }
    return GazetteerExtractor(terms);
}

ExtractionResult GazetteerExtractor::extract(const Chunk& chunk) {
    ExtractionResult out;
    const std::string haystack = normalize_key(chunk.text);
    std::vector<const std::pair<std::string, std::string>*> matched;
    for (const auto& term : terms_) {
        if (haystack.find(term.second) != std::string::npos) matched.push_back(&term);
    }
    for (const auto* term : matched) {
        ExtractionRecord rec;
        rec.kind = ExtractionRecord::Kind::entity;
        rec.name = term->first;
        rec.etype = "term";
        rec.origin_chunk = chunk.chunk_id;
        out.records.push_back(std::move(rec));
    }
    for (std::size_t i = 0; i < matched.size(); ++i) {
        for (std::size_t j = i + 1; j < matched.size(); ++j) {
            ExtractionRecord rec;
            rec.kind = ExtractionRecord::Kind::relation;
            rec.src = matched[i]->first;
            rec.dst = matched[j]->first;
            rec.description = "co-occurs";
            rec.origin_chunk = chunk.chunk_id;
            out.records.push_back(std::move(rec));
        }
    }
    return out;
}

LlmExtractor::LlmExtractor(std::shared_ptr<ChatBackend> chat, std::string prompt_template)
    : chat_(std::move(chat)), template_(std::move(prompt_template)) {}

ExtractionResult LlmExtractor::extract(const Chunk& chunk) {
    ChatRequest req;
    req.messages = {{"system", "You extract entities and relations from support documentation. "
                               "Reply only with E|name|type|description and "
                               "R|src|dst|description|kw1;kw2 lines."},
                    {"user", render_template(template_, {{"text", chunk.text}})}};
    const ChatResponse res = chat_->chat(req);
    return parse_extraction_output(res.content, chunk.chunk_id);
}

// ---------------------------------------------------------------------------
// Upsert
// ---------------------------------------------------------------------------

UpsertStats upsert_records(const std::vector<ExtractionRecord>& records, KnowledgeGraph& graph,
                           EmbedBackend& embedder) {
    UpsertStats stats;
    std::vector<std::string> touched_entities;
    std::vector<std::string> touched_relations;

    // Entities first so relations can reference names from the same batch.
    for (const auto& rec : records) {
        if (rec.kind != ExtractionRecord::Kind::entity) continue;
        ++stats.entity_records;
        const std::string norm = normalize_key(rec.name);
        if (norm.empty()) {
            ++stats.skipped_records;
            continue;
        }
        auto [it, inserted] = graph.entities.try_emplace(norm);
        Entity& e = it->second;
        if (inserted) {
            e.entity_id = norm;
            e.norm_name = norm;
            e.name = rec.name;
            e.etype = rec.etype;
        } else if (e.etype.empty()) {
            e.etype = rec.etype;
        }
        merge_description(e.description, rec.description);
        if (!rec.origin_chunk.empty()) e.source_chunks.insert(rec.origin_chunk);
        touched_entities.push_back(norm);
    }

    for (const auto& rec : records) {
        if (rec.kind != ExtractionRecord::Kind::relation) continue;
        ++stats.relation_records;
        const std::string src = normalize_key(rec.src);
        const std::string dst = normalize_key(rec.dst);
        if (src.empty() || dst.empty() || src == dst || !graph.entities.count(src) ||
            !graph.entities.count(dst)) {
            ++stats.skipped_records;
            continue;
        }
        const std::string rid = relation_id_for(src, dst, rec.description);
        auto [it, inserted] = graph.relations.try_emplace(rid);
        Relation& r = it->second;
        if (inserted) {
            r.relation_id = rid;
            r.src = src;
            r.dst = dst;
            r.description = rec.description;
            graph.adjacency[src].insert(rid);
            graph.adjacency[dst].insert(rid);
        }
        for (const auto& kw : rec.keywords) {
            if (std::find(r.keywords.begin(), r.keywords.end(), kw) == r.keywords.end()) {
                r.keywords.push_back(kw);
            }
        }
        if (!rec.origin_chunk.empty()) r.source_chunks.insert(rec.origin_chunk);
        touched_relations.push_back(rid);
    }

    // Recompute embeddings for everything the batch touched, from the merged
    // text, in one deterministic pass.
    std::sort(touched_entities.begin(), touched_entities.end());
    touched_entities.erase(std::unique(touched_entities.begin(), touched_entities.end()),
                           touched_entities.end());
    std::sort(touched_relations.begin(), touched_relations.end());
    touched_relations.erase(std::unique(touched_relations.begin(), touched_relations.end()),
                            touched_relations.end());

    if (!touched_entities.empty()) {
        std::vector<std::string> texts;
        texts.reserve(touched_entities.size());
        for (const auto& id : touched_entities) {
            texts.push_back(entity_embed_text(graph.entities.at(id)));
        }
        auto res = embedder.embed(texts);
        for (std::size_t i = 0; i < touched_entities.size(); ++i) {
            graph.entities.at(touched_entities[i]).embedding = std::move(res.vectors[i]);
        }
    }
    if (!touched_relations.empty()) {
        std::vector<std::string> texts;
        texts.reserve(touched_relations.size());
        for (const auto& id : touched_relations) {
            texts.push_back(relation_embed_text(graph.relations.at(id), graph));
        }
        auto res = embedder.embed(texts);
        for (std::size_t i = 0; i < touched_relations.size(); ++i) {
            graph.relations.at(touched_relations[i]).embedding = std::move(res.vectors[i]);
        }
    }

    graph.check_invariants();
    return stats;
}

BuildStats build_graph(const std::vector<Chunk>& chunks, Extractor& extractor,
                       EmbedBackend& embedder, KnowledgeGraph& graph) {
    BuildStats stats;
    for (const auto& chunk : chunks) {
        ++stats.chunks;
        ExtractionResult extraction;
        try {
            extraction = extractor.extract(chunk);
        } catch (const GatewayError& e) {
            throw GatewayError("extraction failed on chunk " + chunk.chunk_id + ": " + e.what(),
                               e.http_status, e.was_retryable);
        }
        stats.records += extraction.records.size();
        stats.skipped_lines += extraction.skipped_lines;
        const UpsertStats upsert = upsert_records(extraction.records, graph, embedder);
        stats.skipped_records += upsert.skipped_records;
    }
    return stats;
}

}  // namespace gridrag

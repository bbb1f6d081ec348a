// gridrag command line: ingest corpora, build indices, query, chat, evaluate
// and serve the pipeline over HTTP.

#include <filesystem>
#include <iostream>
#include <memory>

#include "CLI11.hpp"

#include "gridrag/eval.hpp"
#include "gridrag/pipeline.hpp"
#include "gridrag/service.hpp"

namespace {

using namespace gridrag;

struct BackendOptions {
    std::string backend_config_path;
    std::string chat_fixtures_path;

    std::pair<BackendConfig, BackendConfig> resolve() const {
        BackendConfig chat = BackendConfig::stub(chat_fixtures_path);
        BackendConfig embed = BackendConfig::stub();
        if (!backend_config_path.empty()) {
            const json j = json::parse(read_file(backend_config_path));
            if (j.contains("chat")) chat = BackendConfig::from_json(j["chat"]);
            if (j.contains("embed")) embed = BackendConfig::from_json(j["embed"]);
        }
        return {chat, embed};
    }
};

struct InfraOptions {
    std::string store_dir;
    std::string prompts_dir = "prompts";
    std::string intents_path;
    BackendOptions backends;
};

Infra load_infra(const InfraOptions& opts) {
    Infra infra;
    infra.store = ChunkStore::load(opts.store_dir);
    if (file_exists(opts.store_dir + "/dense.bin")) {
        infra.dense = DenseIndex::load(opts.store_dir + "/dense.bin");
    }
    if (file_exists(opts.store_dir + "/sparse.jsonl")) {
        infra.sparse = SparseIndex::load(opts.store_dir + "/sparse.jsonl");
    }
    if (file_exists(opts.store_dir + "/entities.jsonl")) {
        infra.graph = KnowledgeGraph::load(opts.store_dir);
    }
    infra.prompts = PromptSet::load(opts.prompts_dir);
    const auto [chat_cfg, embed_cfg] = opts.backends.resolve();
    infra.chat = make_chat_backend(chat_cfg);
    infra.embed = make_embed_backend(embed_cfg);
    if (!opts.intents_path.empty()) {
        infra.intents = IntentStore::load_jsonl(opts.intents_path, *infra.embed);
    }
    return infra;
}

PipelineConfig resolve_pipeline_config(const std::string& preset_name,
                                       const std::string& config_path,
                                       const BackendOptions& backends) {
    PipelineConfig cfg;
    if (!config_path.empty()) {
        cfg = PipelineConfig::from_json(json::parse(read_file(config_path)));
    } else {
        cfg = preset(preset_name.empty() ? "optimized" : preset_name);
    }
    if (config_path.empty()) {
        const auto [chat_cfg, embed_cfg] = backends.resolve();
        cfg.chat_backend = chat_cfg;
        cfg.embed_backend = embed_cfg;
    }
    return cfg;
}

void add_infra_flags(CLI::App* cmd, InfraOptions& opts) {
    cmd->add_option("--store", opts.store_dir, "Chunk store / index directory")->required();
    cmd->add_option("--prompts", opts.prompts_dir, "Prompt template directory");
    cmd->add_option("--intents", opts.intents_path, "Intent store JSONL");
    cmd->add_option("--backend-config", opts.backends.backend_config_path,
                    "Backend config JSON ({\"chat\": {...}, \"embed\": {...}})");
    cmd->add_option("--chat-fixtures", opts.backends.chat_fixtures_path,
                    "Stub chat fixtures JSONL");
}

void print_answer(const AnswerResult& result) {
    std::cout << result.answer << "\n";
    std::cout << "[contexts]";
    for (const auto& [id, text] : result.trace.bundle.documents) std::cout << " " << id;
    std::cout << "\n";
}

std::string persist_trace(const QueryTrace& trace, const std::string& trace_dir) {
    const std::string trace_json = trace.to_json().dump(2) + "\n";
    const std::string trace_id = sha256_hex(trace_json);
    if (!trace_dir.empty()) {
        std::filesystem::create_directories(trace_dir);
        write_file(trace_dir + "/" + trace_id + ".json", trace_json);
    }
    return trace_id;
}

int run(int argc, char** argv) {
    CLI::App app{"gridrag: graph-based retrieval-augmented QA for utility customer support"};
    app.require_subcommand(1);

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "Split a corpus JSONL into a chunk store");
    std::string corpus_path;
    std::string ingest_store;
    SplitterConfig splitter;
    ingest_cmd->add_option("--corpus", corpus_path, "Corpus JSONL (one document per line)")
        ->required();
    ingest_cmd->add_option("--store", ingest_store, "Output store directory")->required();
    ingest_cmd->add_option("--max-chars", splitter.max_chars, "Chunk size limit in characters");
    ingest_cmd->add_option("--overlap", splitter.overlap_chars, "Chunk overlap in characters");

    // build
    auto* build_cmd = app.add_subcommand("build", "Build dense/sparse indices and the graph");
    InfraOptions build_opts;
    std::string extractor_kind = "gazetteer";
    std::string gazetteer_path;
    add_infra_flags(build_cmd, build_opts);
    build_cmd->add_option("--extractor", extractor_kind, "Graph extractor: llm | gazetteer");
    build_cmd->add_option("--gazetteer", gazetteer_path, "Gazetteer term list (one per line)");

    // query
    auto* query_cmd = app.add_subcommand("query", "Answer a single question");
    InfraOptions query_opts;
    std::string question;
    std::string preset_name;
    std::string config_path;
    std::string trace_dir;
    add_infra_flags(query_cmd, query_opts);
    query_cmd->add_option("--question", question, "The question to answer")->required();
    query_cmd->add_option("--preset", preset_name, "Pipeline preset name");
    query_cmd->add_option("--config", config_path, "Pipeline config JSON file");
    query_cmd->add_option("--trace-dir", trace_dir, "Persist the query trace here");

    // chat
    auto* chat_cmd = app.add_subcommand("chat", "Interactive REPL (single-turn, no state)");
    InfraOptions chat_opts;
    std::string chat_preset;
    std::string chat_config;
    std::string chat_trace_dir;
    add_infra_flags(chat_cmd, chat_opts);
    chat_cmd->add_option("--preset", chat_preset, "Pipeline preset name");
    chat_cmd->add_option("--config", chat_config, "Pipeline config JSON file");
    chat_cmd->add_option("--trace-dir", chat_trace_dir, "Persist query traces here");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Run the ablation harness over a dataset");
    InfraOptions eval_opts;
    std::string dataset_path;
    std::vector<std::string> eval_presets;
    std::vector<std::string> eval_configs;
    std::string out_dir = "eval-out";
    int recall_k = 20;
    int jobs = 1;
    add_infra_flags(eval_cmd, eval_opts);
    eval_cmd->add_option("--dataset", dataset_path, "Eval dataset JSONL")->required();
    eval_cmd->add_option("--presets", eval_presets, "Preset names to evaluate")
        ->delimiter(',');
    eval_cmd->add_option("--config", eval_configs, "Pipeline config JSON file(s)");
    eval_cmd->add_option("--out", out_dir, "Output directory for report and traces");
    eval_cmd->add_option("--recall-k", recall_k, "Recall cutoff (default 20)");
    eval_cmd->add_option("--jobs", jobs, "Concurrent queries");

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "Start the HTTP query service");
    InfraOptions serve_opts;
    ServiceConfig service_cfg;
    std::string serve_preset;
    std::string serve_config;
    add_infra_flags(serve_cmd, serve_opts);
    serve_cmd->add_option("--host", service_cfg.host, "Bind address");
    serve_cmd->add_option("--port", service_cfg.port, "Bind port");
    serve_cmd->add_option("--max-concurrent", service_cfg.max_concurrent,
                          "Concurrent query cap");
    serve_cmd->add_option("--trace-dir", service_cfg.trace_dir, "Persist query traces here");
    serve_cmd->add_option("--preset", serve_preset, "Default pipeline preset");
    serve_cmd->add_option("--config", serve_config, "Default pipeline config JSON file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 1;
    }

    if (ingest_cmd->parsed()) {
        const auto docs = load_documents_jsonl(corpus_path);
        std::filesystem::create_directories(ingest_store);
        ChunkStore store;
        if (file_exists(ingest_store + "/manifest.json")) {
            store = ChunkStore::load(ingest_store);
        }
        const IngestSummary summary = ingest(docs, splitter, store);
        store.save(ingest_store);
        std::cout << "ingested " << summary.documents << " documents into " << summary.chunks
                  << " chunks (" << ingest_store << ")\n";
        return 0;
    }

    if (build_cmd->parsed()) {
        Infra infra = load_infra(build_opts);
        DenseIndex dense = DenseIndex::build(infra.store, *infra.embed);
        dense.save(build_opts.store_dir + "/dense.bin");
        SparseIndex sparse = SparseIndex::build(infra.store);
        sparse.save(build_opts.store_dir + "/sparse.jsonl");

        std::unique_ptr<Extractor> extractor;
        if (extractor_kind == "gazetteer") {
            if (gazetteer_path.empty()) {
                throw ConfigError("--gazetteer FILE is required with the gazetteer extractor");
            }
            extractor =
                std::make_unique<GazetteerExtractor>(GazetteerExtractor::from_file(gazetteer_path));
        } else if (extractor_kind == "llm") {
            extractor = std::make_unique<LlmExtractor>(infra.chat, infra.prompts.extraction);
        } else {
            throw ConfigError("unknown extractor: " + extractor_kind +
                              " (valid: llm, gazetteer)");
        }
        KnowledgeGraph graph;
        const BuildStats stats =
            build_graph(infra.store.chunks(), *extractor, *infra.embed, graph);
        graph.save(build_opts.store_dir, extractor->kind(), infra.embed->id(),
                   infra.embed->dimension());
        std::cout << "indexed " << infra.store.size() << " chunks; graph: "
                  << graph.entities.size() << " entities, " << graph.relations.size()
                  << " relations (" << stats.skipped_lines << " lines skipped, "
                  << stats.skipped_records << " records skipped)\n";
        return 0;
    }

    if (query_cmd->parsed()) {
        const Infra infra = load_infra(query_opts);
        const PipelineConfig cfg =
            resolve_pipeline_config(preset_name, config_path, query_opts.backends);
        const AnswerResult result = answer(question, cfg, infra);
        const std::string trace_id = persist_trace(result.trace, trace_dir);
        if (result.failed) {
            std::cerr << "generation failed: " << result.error << " (trace " << trace_id
                      << ")\n";
            return 2;
        }
        print_answer(result);
        return 0;
    }

    if (chat_cmd->parsed()) {
        const Infra infra = load_infra(chat_opts);
        const PipelineConfig cfg =
            resolve_pipeline_config(chat_preset, chat_config, chat_opts.backends);
        std::cout << "gridrag chat; one question per line, Ctrl-D to exit\n";
        std::string line;
        while (std::cout << "> " << std::flush, std::getline(std::cin, line)) {
            if (trim(line).empty()) continue;
            try {
                const AnswerResult result = answer(line, cfg, infra);
                if (!chat_trace_dir.empty()) persist_trace(result.trace, chat_trace_dir);
                if (result.failed) {
                    std::cout << "[error] " << result.error << "\n";
                } else {
                    print_answer(result);
                }
            } catch (const ConfigError& e) {
                std::cout << "[error] " << e.what() << "\n";
            }
        }
        std::cout << "\n";
        return 0;
    }

    if (eval_cmd->parsed()) {
        const Infra infra = load_infra(eval_opts);
        const auto dataset = load_eval_records(dataset_path, infra.store);

        std::vector<std::pair<std::string, PipelineConfig>> configs;
        const auto [chat_cfg, embed_cfg] = eval_opts.backends.resolve();
        for (const auto& name : eval_presets) {
            PipelineConfig cfg = preset(name);
            cfg.chat_backend = chat_cfg;
            cfg.embed_backend = embed_cfg;
            configs.emplace_back(name, std::move(cfg));
        }
        for (const auto& path : eval_configs) {
            configs.emplace_back(std::filesystem::path(path).stem().string(),
                                 PipelineConfig::from_json(json::parse(read_file(path))));
        }
        if (configs.empty()) {
            throw ConfigError("eval: give at least one --presets name or --config file");
        }

        std::filesystem::create_directories(out_dir);
        EvalOptions options;
        options.recall_k = recall_k;
        options.jobs = jobs;
        options.trace_dir = out_dir + "/traces";
        options.worksheet_path = out_dir + "/worksheet.jsonl";
        const AblationReport report = run_ablation(dataset, configs, infra, options);
        write_file(out_dir + "/report.json", report.to_json().dump(2) + "\n");
        write_file(out_dir + "/report.txt", report.to_table());
        std::cout << report.to_table();
        std::cout << "report written to " << out_dir << "\n";
        return 0;
    }

    if (serve_cmd->parsed()) {
        auto infra = std::make_shared<Infra>(load_infra(serve_opts));
        const PipelineConfig cfg =
            resolve_pipeline_config(serve_preset, serve_config, serve_opts.backends);
        QueryService service(service_cfg);
        service.load(infra, cfg);
        const int port = service.start();
        std::cout << "serving on " << service_cfg.host << ":" << port
                  << " (POST /v1/query, GET /v1/health); Ctrl-C to stop\n";
        // Foreground service: block until interrupted.
        while (true) std::this_thread::sleep_for(std::chrono::seconds(3600));
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const gridrag::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const gridrag::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
}

// Regenerates the stub chat fixtures used by the bundled eval dataset: for
// every dataset question it reproduces the sub-query prompts the pipeline
// will issue (with and without intent conditioning) and maps their hashes to
// deterministic sub-query lines. Run from the repo root after changing the
// dataset, the intent store or the prompt templates.

#include <iostream>

#include "CLI11.hpp"

#include "gridrag/pipeline.hpp"

using namespace gridrag;

namespace {

std::vector<std::string> subquery_lines(const std::string& question) {
    return {
        "What are the exact steps for: " + question,
        "Which fees or amounts apply to: " + question,
        "Which documents or requirements relate to: " + question,
        "Which contact channel handles: " + question,
    };
}

std::vector<std::string> intent_lines(const std::string& question, const std::string& label) {
    // The first line is shared across intents so intent conditioning yields
    // fewer distinct sub-queries than the flat prompt.
    return {
        "What are the exact steps for: " + question,
        "For " + label + ": which details answer: " + question,
    };
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Regenerate stub chat fixtures for the bundled eval dataset"};
    std::string dataset_path = "tests/fixtures/eval_dataset.jsonl";
    std::string intents_path = "tests/fixtures/intents.jsonl";
    std::string prompts_dir = "prompts";
    std::string out_path = "tests/fixtures/chat_fixtures.jsonl";
    app.add_option("--dataset", dataset_path, "Eval dataset JSONL");
    app.add_option("--intents", intents_path, "Intent store JSONL");
    app.add_option("--prompts", prompts_dir, "Prompt template directory");
    app.add_option("--out", out_path, "Output fixtures JSONL");
    CLI11_PARSE(app, argc, argv);

    try {
        const PromptSet prompts = PromptSet::load(prompts_dir);
        StubEmbedBackend embedder;
        const IntentStore intents = IntentStore::load_jsonl(intents_path, embedder);

        std::vector<json> rows;
        for (const auto& record : read_jsonl(dataset_path)) {
            const std::string question = record.at("question").get<std::string>();
            // The dataset carries no rewrite fixtures, so the rewrite stage
            // echoes back the original question; sub-query prompts are keyed
            // on it directly.
            const std::string rewritten = question;

            std::vector<Message> flat = {
                {"system", render_template(prompts.subquery,
                                           {{"query", rewritten}, {"n", "4"}})},
                {"user", rewritten}};
            rows.push_back(ordered_json{{"prompt_sha256", chat_fixture_key(flat)},
                                        {"response", join(subquery_lines(question), "\n")}});

            const auto top = classify_intent(embedder.embed_one(question), intents);
            for (const auto& intent : top) {
                std::vector<Message> conditioned = {
                    {"system", render_template(prompts.subquery_intent,
                                               {{"query", rewritten},
                                                {"intents", intent.label},
                                                {"n", "2"}})},
                    {"user", rewritten}};
                rows.push_back(
                    ordered_json{{"prompt_sha256", chat_fixture_key(conditioned)},
                                 {"response", join(intent_lines(question, intent.label), "\n")}});
            }
        }
        write_jsonl(out_path, rows);
        std::cout << "wrote " << rows.size() << " fixture entries to " << out_path << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

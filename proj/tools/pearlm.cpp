// pearlm: command-line driver for the path language model recommender.
//
//   pearlm synth --out DIR
//   pearlm {preprocess|sample|train|recommend|evaluate|audit|pipeline} --config FILE
//
// Exit status: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "pearlm/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct StageOptions {
    std::string config;
    std::string output_dir;
    std::vector<std::string> set;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    bool deterministic = false;
    bool no_graph_constraint = false;
};

void add_stage_options(CLI::App* cmd, StageOptions& o) {
    cmd->add_option("-c,--config", o.config, "Run configuration (INI)")->required();
    cmd->add_option("-o,--output-dir", o.output_dir, "Override run.output_dir");
    cmd->add_option("--seed", o.seed, "Override run.seed");
    cmd->add_option("--threads", o.threads, "Worker threads (default: available cores)");
    cmd->add_flag("--deterministic", o.deterministic, "Force reproducible single-threaded execution");
    cmd->add_flag("--no-graph-constraint", o.no_graph_constraint, "Decode without graph-constrained masking");
    cmd->add_option("--set", o.set, "Override any key, e.g. --set train.iterations=500");
}

pearlm::RunConfig resolve(const StageOptions& o) {
    pearlm::ConfigOverrides ov;
    for (const auto& kv : o.set) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw pearlm::ConfigError("--set expects section.key=value, got '" + kv + "'");
        ov.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!o.output_dir.empty()) ov.emplace_back("run.output_dir", o.output_dir);
    if (o.seed) ov.emplace_back("run.seed", std::to_string(*o.seed));
    if (o.threads) ov.emplace_back("run.threads", std::to_string(*o.threads));
    if (o.deterministic) ov.emplace_back("run.deterministic", "true");
    if (o.no_graph_constraint) ov.emplace_back("decode.graph_constraint", "false");
    return pearlm::load_config(o.config, true, ov);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Path language model recommender over a knowledge graph"};
    app.require_subcommand(1);

    pearlm::SynthConfig synth;
    std::string synth_out;
    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic knowledge graph and a matching config");
    synth_cmd->add_option("-o,--out", synth_out, "Output directory")->required();
    synth_cmd->add_option("--users", synth.users);
    synth_cmd->add_option("--products", synth.products);
    synth_cmd->add_option("--actors", synth.actors);
    synth_cmd->add_option("--directors", synth.directors);
    synth_cmd->add_option("--genres", synth.genres);
    synth_cmd->add_option("--tags", synth.tags, "Leaf entities attached to a few products each");
    synth_cmd->add_option("--products-per-tag", synth.products_per_tag);
    synth_cmd->add_option("--interactions-per-user", synth.interactions_per_user);
    synth_cmd->add_option("--planted-train", synth.planted_train);
    synth_cmd->add_option("--rare-triplets", synth.rare_triplets);
    synth_cmd->add_option("--seed", synth.seed);

    StageOptions opts;
    struct Stage {
        const char* name;
        const char* help;
        CLI::App* cmd = nullptr;
    };
    std::vector<Stage> stages{
        {"preprocess", "Filter raw data and write the chronological split"},
        {"sample", "Sample training paths from the training graph"},
        {"train", "Train the path language model"},
        {"recommend", "Decode recommendation paths for every user"},
        {"evaluate", "Score recommendations against the test split"},
        {"audit", "Check decoded sequences against the graph hop by hop"},
        {"pipeline", "Run all stages in order"},
    };
    for (auto& s : stages) {
        s.cmd = app.add_subcommand(s.name, s.help);
        add_stage_options(s.cmd, opts);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    const auto log = pearlm::stderr_log();
    try {
        if (synth_cmd->parsed()) {
            pearlm::stage_synth(synth, synth_out, log);
            return kOk;
        }
        const pearlm::RunConfig cfg = resolve(opts);
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "preprocess") pearlm::stage_preprocess(cfg, log);
        else if (name == "sample") pearlm::stage_sample(cfg, log);
        else if (name == "train") pearlm::stage_train(cfg, log);
        else if (name == "recommend") pearlm::stage_recommend(cfg, log);
        else if (name == "evaluate") pearlm::stage_evaluate(cfg, log);
        else if (name == "audit") pearlm::stage_audit(cfg, log);
        else pearlm::run_pipeline(cfg, log);
    } catch (const pearlm::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const pearlm::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const pearlm::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
    return kOk;
}

#pragma once

// Stage functions behind the command-line tool. Every stage reads its
// inputs from the run's output directory, writes its artifacts there and
// stamps each text artifact with a manifest line:
//
//   # manifest stage=<name> config=<hash> seed=<seed> inputs=<file>:<hash>,...
//
// Hashes cover file contents, never paths or times, so two runs of the same
// configuration produce byte-identical artifacts.

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pearlm/checkpoint.hpp"
#include "pearlm/config.hpp"
#include "pearlm/data.hpp"
#include "pearlm/decoder.hpp"
#include "pearlm/metrics.hpp"
#include "pearlm/sampler.hpp"
#include "pearlm/synth.hpp"
#include "pearlm/tokenizer.hpp"
#include "pearlm/train.hpp"

namespace pearlm {

// A stage ran before the stage that produces its inputs.
struct PrerequisiteError : ConfigError {
    using ConfigError::ConfigError;
};

namespace fs = std::filesystem;

struct ArtifactPaths {
    fs::path root;

    fs::path data() const { return root / "data"; }
    fs::path entities() const { return data() / "entities.tsv"; }
    fs::path relations() const { return data() / "relations.tsv"; }
    fs::path kg() const { return data() / "kg.tsv"; }
    fs::path train() const { return data() / "train.tsv"; }
    fs::path valid() const { return data() / "valid.tsv"; }
    fs::path test() const { return data() / "test.tsv"; }
    fs::path summary() const { return data() / "summary.txt"; }
    fs::path paths() const { return root / "paths.txt"; }
    fs::path coverage() const { return root / "coverage.tsv"; }
    fs::path vocab() const { return root / "vocab.tsv"; }
    fs::path checkpoint() const { return root / "model.ckpt"; }
    fs::path loss() const { return root / "loss.tsv"; }
    fs::path recommendations(bool constrained) const {
        return root / (constrained ? "recommendations.tsv" : "recommendations.unconstrained.tsv");
    }
    fs::path sequences(bool constrained) const {
        return root / (constrained ? "sequences.tsv" : "sequences.unconstrained.tsv");
    }
    fs::path report(bool constrained) const {
        return root / (constrained ? "report.txt" : "report.unconstrained.txt");
    }
    fs::path report_kv(bool constrained) const {
        return root / (constrained ? "report.kv" : "report.unconstrained.kv");
    }
    fs::path faithfulness(bool constrained) const {
        return root / (constrained ? "faithfulness.tsv" : "faithfulness.unconstrained.tsv");
    }
};

inline void require(const fs::path& file, std::string_view producer) {
    if (!fs::exists(file))
        throw PrerequisiteError("missing " + file.string() + "; run `pearlm " + std::string(producer) + "` first");
}

inline std::string manifest_line(std::string_view stage, const RunConfig& cfg, const std::vector<fs::path>& inputs) {
    std::string out = "# manifest stage=" + std::string(stage) + " config=" + hex64(cfg.hash()) +
                      " seed=" + std::to_string(cfg.seed) + " inputs=";
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (i) out += ",";
        out += inputs[i].filename().string() + ":" + hex64(tsv::file_hash(inputs[i].string()));
    }
    return out + "\n";
}

inline nlohmann::ordered_json manifest_json(std::string_view stage, const RunConfig& cfg,
                                            const std::vector<fs::path>& inputs) {
    nlohmann::ordered_json j;
    j["stage"] = stage;
    j["config"] = hex64(cfg.hash());
    j["seed"] = cfg.seed;
    auto& in = j["inputs"] = nlohmann::ordered_json::object();
    for (const auto& p : inputs) in[p.filename().string()] = hex64(tsv::file_hash(p.string()));
    return j;
}

using StageLog = std::function<void(const std::string&)>;

inline StageLog stderr_log() {
    return [](const std::string& msg) { std::cerr << msg << "\n"; };
}

// ---------------------------------------------------------------------------

inline void write_raw_dataset(const fs::path& dir, const Dataset& d) {
    fs::create_directories(dir);
    tsv::write_file((dir / "entities.tsv").string(), format_entities(d));
    tsv::write_file((dir / "relations.tsv").string(), format_relations(d));
    tsv::write_file((dir / "kg.tsv").string(), format_triplets(d));
    tsv::write_file((dir / "interactions.tsv").string(), format_interactions(d, d.interactions));
}

// Writes a synthetic dataset plus a config file pointing at it.
inline void stage_synth(const SynthConfig& sc, const fs::path& dir, const StageLog& log = {}) {
    const Dataset d = synthesize(sc);
    write_raw_dataset(dir, d);
    std::ostringstream ini;
    ini << "[data]\nkg = kg.tsv\nentities = entities.tsv\ninteractions = interactions.tsv\n"
        << "relations = relations.tsv\ninteraction_relation = watched\ngenre_relation = belongs_to\n\n"
        << "[run]\noutput_dir = out\nseed = " << sc.seed << "\n";
    tsv::write_file((dir / "pearlm.ini").string(), ini.str());
    if (log)
        log("[synth] " + std::to_string(d.num_entities()) + " entities, " + std::to_string(d.kg_triplets.size()) +
            " KG triplets, " + std::to_string(d.interactions.size()) + " interactions -> " + dir.string());
}

inline void stage_preprocess(const RunConfig& cfg, const StageLog& log = {}) {
    cfg.validate();
    std::vector<fs::path> inputs{cfg.files.kg, cfg.files.entities, cfg.files.interactions};
    if (!cfg.files.relations.empty()) inputs.emplace_back(cfg.files.relations);
    for (const auto& p : inputs)
        if (!fs::exists(p)) throw ConfigError("input file not found: " + p.string());

    const Dataset raw = load_dataset(cfg.files);
    PreprocessStats stats;
    const Dataset d = preprocess(raw, cfg.preprocess, &stats);
    const SplitDataset split = chrono_split(d.interactions, cfg.split);

    const ArtifactPaths out{cfg.output_dir};
    fs::create_directories(out.data());
    const std::string m = manifest_line("preprocess", cfg, inputs);
    tsv::write_file(out.entities().string(), m + format_entities(d));
    tsv::write_file(out.relations().string(), m + format_relations(d));
    tsv::write_file(out.kg().string(), m + format_triplets(d));
    tsv::write_file(out.train().string(), m + format_interactions(d, split.train));
    tsv::write_file(out.valid().string(), m + format_interactions(d, split.valid));
    tsv::write_file(out.test().string(), m + format_interactions(d, split.test));
    tsv::write_file(out.summary().string(), m + format_summary(summarize(d)) + "Filter rounds\t" +
                                                std::to_string(stats.rounds) + "\n");
    if (log)
        log("[preprocess] " + std::to_string(stats.rounds) + " filter rounds; split " +
            std::to_string(split.train.size()) + "/" + std::to_string(split.valid.size()) + "/" +
            std::to_string(split.test.size()));
}

// Preprocessed dataset, split and the training graph built from it.
struct Prepared {
    Dataset data;
    SplitDataset split;
    KnowledgeGraph kg;
    std::vector<fs::path> files;
};

inline Prepared load_prepared(const RunConfig& cfg) {
    const ArtifactPaths a{cfg.output_dir};
    for (const auto& p : {a.entities(), a.relations(), a.kg(), a.train(), a.valid(), a.test()}) require(p, "preprocess");
    DatasetFiles files{a.kg().string(), a.entities().string(), a.train().string(), a.relations().string(),
                       cfg.files.interaction_relation};
    Dataset d = load_dataset(files);
    SplitDataset split;
    split.train = d.interactions;
    split.valid = load_interactions(a.valid().string(), d);
    split.test = load_interactions(a.test().string(), d);
    KnowledgeGraph kg = build_training_graph(d, split.train);
    return {std::move(d), std::move(split), std::move(kg),
            {a.entities(), a.relations(), a.kg(), a.train(), a.valid(), a.test()}};
}

inline void stage_sample(const RunConfig& cfg, const StageLog& log = {}) {
    cfg.validate();
    const Prepared p = load_prepared(cfg);
    const PathDataset ds = sample_paths(p.kg, p.split, cfg.sampler);
    if (ds.empty()) throw DataError("sampler produced no paths; check hops and the training graph");

    CoverageReport cov;
    cov.paths = ds.paths.size();
    cov.users = ds.per_user.size();
    cov.skipped_users = ds.skipped_users.size();
    cov.up_cov = user_product_coverage(ds, p.kg, p.split.train);
    cov.pp_cov = product_path_coverage(ds, p.kg.entities_of_type(EntityType::product));

    const ArtifactPaths out{cfg.output_dir};
    const std::string m = manifest_line("sample", cfg, p.files);
    tsv::write_file(out.paths().string(), format_path_file(ds, p.kg, m));
    tsv::write_file(out.coverage().string(), m + format_coverage(cov, cfg.sampler));
    if (log)
        log("[sample] " + std::to_string(ds.paths.size()) + " paths for " + std::to_string(cov.users) +
            " users (UP-COV " + tsv::fixed(cov.up_cov, 4) + ", PP-COV " + tsv::fixed(cov.pp_cov, 4) + ")");
}

inline void stage_train(const RunConfig& cfg, const StageLog& log = {}) {
    cfg.validate();
    const ArtifactPaths out{cfg.output_dir};
    require(out.paths(), "sample");
    const Prepared p = load_prepared(cfg);
    const PathDataset ds = read_path_file(out.paths().string(), p.kg);
    if (ds.config.hops != cfg.hops())
        throw ConfigError("path file has " + std::to_string(ds.config.hops) + "-hop paths but the config asks for " +
                          std::to_string(cfg.hops()) + "; rerun `pearlm sample`");
    if (ds.empty()) throw DataError("path file " + out.paths().string() + " is empty");

    const Vocabulary vocab = build_vocab(p.kg);
    ModelConfig mcfg = cfg.model;
    mcfg.vocab_size = vocab.size();
    mcfg.validate();

    const std::size_t every = std::max<std::size_t>(1, cfg.train.iterations / 10);
    auto result = train(ds, vocab, cfg.train, mcfg, [&](std::size_t step, double loss) {
        if (log && (step + 1) % every == 0)
            log("[train] step " + std::to_string(step + 1) + "/" + std::to_string(cfg.train.iterations) +
                " loss " + tsv::fixed(loss, 4));
    });

    std::vector<fs::path> inputs = p.files;
    inputs.push_back(out.paths());
    const std::string m = manifest_line("train", cfg, inputs);
    tsv::write_file(out.vocab().string(), m + vocab.serialize());
    std::string curve = m + "step\tloss\n";
    for (std::size_t i = 0; i < result.loss_curve.size(); ++i)
        curve += std::to_string(i + 1) + "\t" + tsv::fixed(result.loss_curve[i], 6) + "\n";
    tsv::write_file(out.loss().string(), curve);
    save_checkpoint(out.checkpoint().string(), result.model, vocab, manifest_json("train", cfg, inputs));
}

inline std::string format_recommendations(const std::vector<UserDecode>& decoded, const KnowledgeGraph& kg) {
    std::string out = "user\trank\tproduct\tscore\tpath\n";
    for (const auto& u : decoded) {
        const auto& list = u.recommendations;
        if (list.truncated)
            out += "# truncated " + kg.entity_name(list.user) + " " + std::to_string(list.items.size()) + "\n";
        for (std::size_t i = 0; i < list.items.size(); ++i) {
            const auto& r = list.items[i];
            out += kg.entity_name(list.user) + "\t" + std::to_string(i + 1) + "\t" + kg.entity_name(r.product) +
                   "\t" + tsv::fixed(r.score, 9) + "\t" + format_path(kg, r.path) + "\n";
        }
    }
    return out;
}

inline std::string format_sequences(const std::vector<UserDecode>& decoded, const KnowledgeGraph& kg,
                                    const Vocabulary& vocab, ScoreMode mode) {
    std::string out = "user\tbeam_score\tscore\ttokens\n";
    for (const auto& u : decoded) {
        for (const auto& s : u.sequences) {
            out += kg.entity_name(u.recommendations.user) + "\t" + tsv::fixed(s.beam_score, 9) + "\t" +
                   (s.token_probs.empty() ? std::string("nan") : tsv::fixed(score_sequence(s.token_probs, mode), 9)) +
                   "\t";
            for (std::size_t i = 0; i < s.tokens.size(); ++i) out += (i ? " " : "") + vocab.token(s.tokens[i]);
            out += "\n";
        }
    }
    return out;
}

inline Vocabulary load_vocab_for(const Prepared& p, const fs::path& file) {
    require(file, "train");
    Vocabulary vocab = Vocabulary::parse(tsv::read_file(file.string()));
    if (vocab.fingerprint() != build_vocab(p.kg).fingerprint())
        throw DataError(file.string() + " does not match the preprocessed graph; rerun `pearlm train`");
    return vocab;
}

inline void stage_recommend(const RunConfig& cfg, const StageLog& log = {}) {
    cfg.validate();
    const ArtifactPaths out{cfg.output_dir};
    require(out.checkpoint(), "train");
    const Prepared p = load_prepared(cfg);
    const Vocabulary vocab = load_vocab_for(p, out.vocab());
    const LanguageModel model = load_checkpoint(out.checkpoint().string(), vocab);
    if (model.config().context_length < ModelConfig::context_for_hops(cfg.decode.hops))
        throw ConfigError("checkpoint context " + std::to_string(model.config().context_length) + " cannot hold " +
                          std::to_string(cfg.decode.hops) + "-hop paths; retrain with matching sampler.hops");

    const auto train_items = p.split.train_items();
    std::vector<EntityId> users;
    for (const auto& [u, items] : train_items) users.push_back(u);
    std::sort(users.begin(), users.end());
    const auto decoded = decode_users(model, users, p.kg, vocab, train_items, cfg.decode);

    std::vector<fs::path> inputs = p.files;
    inputs.push_back(out.checkpoint());
    const std::string m = manifest_line("recommend", cfg, inputs);
    const bool gc = cfg.decode.graph_constraint;
    tsv::write_file(out.recommendations(gc).string(), m + format_recommendations(decoded, p.kg));
    tsv::write_file(out.sequences(gc).string(), m + format_sequences(decoded, p.kg, vocab, cfg.decode.score_mode));
    if (log) {
        std::size_t truncated = 0;
        for (const auto& u : decoded) truncated += u.recommendations.truncated ? 1 : 0;
        log("[recommend] " + std::to_string(users.size()) + " users" + (gc ? "" : " (unconstrained)") + ", " +
            std::to_string(truncated) + " with fewer than " + std::to_string(cfg.decode.top_n) + " products");
    }
}

inline RecommendationsByUser read_recommendations(const fs::path& file, const KnowledgeGraph& kg) {
    RecommendationsByUser recs;
    tsv::for_each_row(file.string(), [&](const auto& f, std::size_t line) {
        if (f.size() == 5 && f[0] == "user" && f[1] == "rank") return;
        if (f.size() != 5) throw DataError(file.string() + ":" + std::to_string(line) + ": expected 5 fields");
        auto u = kg.find_entity(f[0]);
        auto prod = kg.find_entity(f[2]);
        if (!u || !prod) throw StructuralError(file.string() + ":" + std::to_string(line) + ": unknown entity");
        auto& list = recs[*u];
        if (tsv::parse_int<std::size_t>(f[1], file.string()) != list.size() + 1)
            throw DataError(file.string() + ":" + std::to_string(line) + ": ranks must be consecutive per user");
        list.push_back(*prod);
    });
    return recs;
}

inline std::vector<std::vector<TokenId>> read_sequences(const fs::path& file, const Vocabulary& vocab) {
    std::vector<std::vector<TokenId>> out;
    tsv::for_each_row(file.string(), [&](const auto& f, std::size_t line) {
        if (f.size() == 4 && f[0] == "user" && f[3] == "tokens") return;
        if (f.size() != 4) throw DataError(file.string() + ":" + std::to_string(line) + ": expected 4 fields");
        std::vector<TokenId> ids;
        for (auto tok : tsv::split(f[3], ' ')) {
            if (tok.empty()) continue;
            auto id = vocab.find(tok);
            if (!id) throw StructuralError(file.string() + ":" + std::to_string(line) + ": unknown token '" +
                                           std::string(tok) + "'");
            ids.push_back(*id);
        }
        out.push_back(std::move(ids));
    });
    return out;
}

inline MetricsReport stage_evaluate(const RunConfig& cfg, const StageLog& log = {}) {
    cfg.validate();
    const ArtifactPaths out{cfg.output_dir};
    const bool gc = cfg.decode.graph_constraint;
    require(out.recommendations(gc), gc ? "recommend" : "recommend --no-graph-constraint");
    const Prepared p = load_prepared(cfg);
    const auto recs = read_recommendations(out.recommendations(gc), p.kg);
    const auto relevant = p.split.test_items();
    const auto catalogue = p.kg.entities_of_type(EntityType::product);

    GenreMap genres;
    std::size_t n_genres = 0;
    const auto genre_rel = p.kg.find_relation(cfg.genre_relation);
    if (genre_rel) genres = genre_map_from_kg(p.kg, *genre_rel, &n_genres);
    else if (log) log("[evaluate] relation '" + cfg.genre_relation + "' not in the graph; diversity disabled");

    EvaluationInputs in;
    in.recs = &recs;
    in.relevant = &relevant;
    in.train = &p.split.train;
    in.catalogue = &catalogue;
    in.genres = genre_rel ? &genres : nullptr;
    in.n_genres = n_genres;
    in.k = cfg.eval_k;
    in.novelty_norm = cfg.novelty_norm;
    const MetricsReport r = evaluate(in);

    std::vector<fs::path> inputs = p.files;
    inputs.push_back(out.recommendations(gc));
    const std::string m = manifest_line("evaluate", cfg, inputs);
    tsv::write_file(out.report(gc).string(), m + format_metrics_table(r));
    tsv::write_file(out.report_kv(gc).string(), m + format_metrics_kv(r));
    if (log) log("[evaluate]\n" + format_metrics_table(r));
    return r;
}

inline FaithfulnessReport stage_audit(const RunConfig& cfg, const StageLog& log = {}) {
    cfg.validate();
    const ArtifactPaths out{cfg.output_dir};
    const bool gc = cfg.decode.graph_constraint;
    require(out.sequences(gc), gc ? "recommend" : "recommend --no-graph-constraint");
    const Prepared p = load_prepared(cfg);
    const Vocabulary vocab = load_vocab_for(p, out.vocab());
    const auto seqs = read_sequences(out.sequences(gc), vocab);
    const FaithfulnessReport r = audit_faithfulness(seqs, p.kg, vocab, cfg.hops());

    std::vector<fs::path> inputs = p.files;
    inputs.push_back(out.sequences(gc));
    tsv::write_file(out.faithfulness(gc).string(), manifest_line("audit", cfg, inputs) + format_faithfulness(r));
    if (log) log("[audit]" + std::string(gc ? "" : " (unconstrained)") + "\n" + format_faithfulness(r));
    return r;
}

inline void run_pipeline(const RunConfig& cfg, const StageLog& log = {}) {
    stage_preprocess(cfg, log);
    stage_sample(cfg, log);
    stage_train(cfg, log);
    stage_recommend(cfg, log);
    stage_evaluate(cfg, log);
    stage_audit(cfg, log);
}

}  // namespace pearlm

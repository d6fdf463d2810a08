#pragma once

// Run configuration: INI file with one section per stage.
//
// Precedence, lowest to highest: built-in defaults, the config file,
// environment variables PEARLM_<SECTION>_<KEY>, command-line flags.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "pearlm/data.hpp"
#include "pearlm/decoder.hpp"
#include "pearlm/metrics.hpp"
#include "pearlm/model.hpp"
#include "pearlm/sampler.hpp"
#include "pearlm/synth.hpp"
#include "pearlm/train.hpp"

namespace pearlm {

struct RunConfig {
    DatasetFiles files;
    std::string genre_relation = "belongs_to";
    PreprocessConfig preprocess;
    std::array<double, 3> split{0.6, 0.2, 0.2};
    SamplerConfig sampler;
    std::string model_preset = "small";
    ModelConfig model = ModelConfig::preset("small");
    TrainConfig train;
    DecodeConfig decode;
    std::size_t eval_k = 10;
    NoveltyNorm novelty_norm = NoveltyNorm::max_count;
    SynthConfig synth;
    std::string output_dir = "out";
    std::uint64_t seed = 42;
    unsigned threads = std::max(1u, std::thread::hardware_concurrency());
    bool deterministic = false;

    std::size_t hops() const { return sampler.hops; }

    // Resolved settings that influence artifacts. Output directory and
    // thread count are left out: neither changes any result.
    std::string canonical() const;
    std::uint64_t hash() const { return fnv1a(canonical()); }

    // Pushes global seed, hop count and thread settings into the stage configs.
    void finalize();
    void validate() const;
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
    std::string s = v;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

inline double parse_double(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

inline std::uint64_t parse_uint(const std::string& v, const std::string& key) {
    if (v.empty() || !std::all_of(v.begin(), v.end(), [](unsigned char c) { return std::isdigit(c); }))
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ConfigError(key + ": integer out of range '" + v + "'");
    }
}

inline std::string trim(std::string s) {
    auto ws = [](unsigned char c) { return std::isspace(c); };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
    return s;
}

using Setter = std::function<void(RunConfig&, const std::string& value, const std::string& key)>;

// Table of every recognised "section.key".
inline const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto str = [](auto field) {
            return Setter([field](RunConfig& c, const std::string& v, const std::string&) { field(c) = v; });
        };
        auto num = [](auto field) {
            return Setter([field](RunConfig& c, const std::string& v, const std::string& k) {
                using T = std::remove_reference_t<decltype(field(c))>;
                if constexpr (std::is_same_v<T, bool>) field(c) = parse_bool(v, k);
                else if constexpr (std::is_floating_point_v<T>) field(c) = parse_double(v, k);
                else field(c) = static_cast<T>(parse_uint(v, k));
            });
        };
        t["data.kg"] = str([](RunConfig& c) -> std::string& { return c.files.kg; });
        t["data.entities"] = str([](RunConfig& c) -> std::string& { return c.files.entities; });
        t["data.interactions"] = str([](RunConfig& c) -> std::string& { return c.files.interactions; });
        t["data.relations"] = str([](RunConfig& c) -> std::string& { return c.files.relations; });
        t["data.interaction_relation"] = str([](RunConfig& c) -> std::string& { return c.files.interaction_relation; });
        t["data.genre_relation"] = str([](RunConfig& c) -> std::string& { return c.genre_relation; });

        t["preprocess.min_count"] = num([](RunConfig& c) -> auto& { return c.preprocess.min_count; });
        t["preprocess.min_relation_share"] = num([](RunConfig& c) -> auto& { return c.preprocess.min_relation_share; });
        t["preprocess.product_headed_only"] = num([](RunConfig& c) -> auto& { return c.preprocess.product_headed_only; });
        t["preprocess.split"] = Setter([](RunConfig& c, const std::string& v, const std::string& k) {
            auto parts = tsv::split(v, ',');
            if (parts.size() != 3) throw ConfigError(k + ": expected three comma-separated ratios");
            for (std::size_t i = 0; i < 3; ++i) c.split[i] = parse_double(trim(std::string(parts[i])), k);
        });

        t["sampler.hops"] = num([](RunConfig& c) -> auto& { return c.sampler.hops; });
        t["sampler.sample_size"] = num([](RunConfig& c) -> auto& { return c.sampler.sample_size; });
        t["sampler.restrict_end_to_interacted"] =
            num([](RunConfig& c) -> auto& { return c.sampler.restrict_end_to_interacted; });
        t["sampler.users_mid_path"] = num([](RunConfig& c) -> auto& { return c.sampler.users_mid_path; });
        t["sampler.attempts_per_path"] = num([](RunConfig& c) -> auto& { return c.sampler.attempts_per_path; });

        t["model.preset"] = Setter([](RunConfig& c, const std::string& v, const std::string&) {
            const ModelConfig p = ModelConfig::preset(v);
            c.model_preset = v;
            c.model.d_model = p.d_model, c.model.n_layers = p.n_layers, c.model.n_heads = p.n_heads,
            c.model.d_ff = p.d_ff;
        });
        t["model.d_model"] = num([](RunConfig& c) -> auto& { return c.model.d_model; });
        t["model.n_layers"] = num([](RunConfig& c) -> auto& { return c.model.n_layers; });
        t["model.n_heads"] = num([](RunConfig& c) -> auto& { return c.model.n_heads; });
        t["model.d_ff"] = num([](RunConfig& c) -> auto& { return c.model.d_ff; });
        t["model.context_length"] = num([](RunConfig& c) -> auto& { return c.model.context_length; });
        t["model.dropout"] = num([](RunConfig& c) -> auto& { return c.model.dropout; });
        t["model.init_std"] = num([](RunConfig& c) -> auto& { return c.model.init_std; });

        t["train.learning_rate"] = num([](RunConfig& c) -> auto& { return c.train.learning_rate; });
        t["train.beta1"] = num([](RunConfig& c) -> auto& { return c.train.beta1; });
        t["train.beta2"] = num([](RunConfig& c) -> auto& { return c.train.beta2; });
        t["train.weight_decay"] = num([](RunConfig& c) -> auto& { return c.train.weight_decay; });
        t["train.batch_size"] = num([](RunConfig& c) -> auto& { return c.train.batch_size; });
        t["train.iterations"] = num([](RunConfig& c) -> auto& { return c.train.iterations; });
        t["train.warmup_fraction"] = num([](RunConfig& c) -> auto& { return c.train.warmup_fraction; });
        t["train.grad_clip"] = num([](RunConfig& c) -> auto& { return c.train.grad_clip; });

        t["decode.n_beams"] = num([](RunConfig& c) -> auto& { return c.decode.n_beams; });
        t["decode.n_groups"] = num([](RunConfig& c) -> auto& { return c.decode.n_groups; });
        t["decode.diversity_penalty"] = num([](RunConfig& c) -> auto& { return c.decode.diversity_penalty; });
        t["decode.n_sequences"] = num([](RunConfig& c) -> auto& { return c.decode.n_sequences; });
        t["decode.top_n"] = num([](RunConfig& c) -> auto& { return c.decode.top_n; });
        t["decode.hops"] = num([](RunConfig& c) -> auto& { return c.decode.hops; });
        t["decode.graph_constraint"] = num([](RunConfig& c) -> auto& { return c.decode.graph_constraint; });
        t["decode.score"] = Setter([](RunConfig& c, const std::string& v, const std::string& k) {
            if (v == "mean_probability") c.decode.score_mode = ScoreMode::mean_probability;
            else if (v == "mean_log_probability") c.decode.score_mode = ScoreMode::mean_log_probability;
            else throw ConfigError(k + ": expected mean_probability or mean_log_probability");
        });

        t["eval.k"] = num([](RunConfig& c) -> auto& { return c.eval_k; });
        t["eval.novelty_norm"] = Setter([](RunConfig& c, const std::string& v, const std::string& k) {
            if (v == "max_count") c.novelty_norm = NoveltyNorm::max_count;
            else if (v == "user_count") c.novelty_norm = NoveltyNorm::user_count;
            else throw ConfigError(k + ": expected max_count or user_count");
        });

        t["synth.users"] = num([](RunConfig& c) -> auto& { return c.synth.users; });
        t["synth.products"] = num([](RunConfig& c) -> auto& { return c.synth.products; });
        t["synth.actors"] = num([](RunConfig& c) -> auto& { return c.synth.actors; });
        t["synth.directors"] = num([](RunConfig& c) -> auto& { return c.synth.directors; });
        t["synth.genres"] = num([](RunConfig& c) -> auto& { return c.synth.genres; });
        t["synth.tags"] = num([](RunConfig& c) -> auto& { return c.synth.tags; });
        t["synth.products_per_tag"] = num([](RunConfig& c) -> auto& { return c.synth.products_per_tag; });
        t["synth.interactions_per_user"] = num([](RunConfig& c) -> auto& { return c.synth.interactions_per_user; });
        t["synth.planted_train"] = num([](RunConfig& c) -> auto& { return c.synth.planted_train; });
        t["synth.rare_triplets"] = num([](RunConfig& c) -> auto& { return c.synth.rare_triplets; });

        t["run.output_dir"] = str([](RunConfig& c) -> std::string& { return c.output_dir; });
        t["run.seed"] = num([](RunConfig& c) -> auto& { return c.seed; });
        t["run.threads"] = num([](RunConfig& c) -> auto& { return c.threads; });
        t["run.deterministic"] = num([](RunConfig& c) -> auto& { return c.deterministic; });
        return t;
    }();
    return table;
}

inline std::string env_name(const std::string& key) {
    std::string out = "PEARLM_";
    for (char ch : key) out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return out;
}

}  // namespace detail

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    const auto& t = detail::setters();
    auto it = t.find(key);
    if (it == t.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(c, detail::trim(value), key);
}

// Keys set explicitly by the file or the environment.
struct ConfigSources {
    std::set<std::string> explicit_keys;
};

inline void apply_environment(RunConfig& c, ConfigSources* src = nullptr) {
    for (const auto& [key, setter] : detail::setters()) {
        if (const char* v = std::getenv(detail::env_name(key).c_str())) {
            set_config_value(c, key, v);
            if (src) src->explicit_keys.insert(key);
        }
    }
}

using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;

// Parses INI text. Relative paths in the file resolve against `base_dir`;
// environment variables and `overrides` (command-line flags) apply on top.
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {},
                              bool use_environment = true, const ConfigOverrides& overrides = {}) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    RunConfig c;
    ConfigSources src;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ConfigError("config: key '" + section + "' outside a section");
        for (const auto& [key, value] : body) {
            set_config_value(c, section + "." + key, value.get_value<std::string>());
            src.explicit_keys.insert(section + "." + key);
        }
    }
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative() && !base_dir.empty()) p = (base_dir / p).string();
    };
    resolve(c.files.kg), resolve(c.files.entities), resolve(c.files.interactions), resolve(c.files.relations);
    resolve(c.output_dir);

    if (use_environment) apply_environment(c, &src);
    for (const auto& [key, value] : overrides) {
        set_config_value(c, key, value);
        src.explicit_keys.insert(key);
    }

    if (src.explicit_keys.count("decode.hops") && c.decode.hops != c.sampler.hops)
        throw ConfigError("decode.hops=" + std::to_string(c.decode.hops) + " differs from sampler.hops=" +
                          std::to_string(c.sampler.hops));
    if (src.explicit_keys.count("model.context_length") &&
        c.model.context_length != ModelConfig::context_for_hops(c.sampler.hops))
        throw ConfigError("model.context_length=" + std::to_string(c.model.context_length) + " does not fit " +
                          std::to_string(c.sampler.hops) + "-hop paths (needs " +
                          std::to_string(ModelConfig::context_for_hops(c.sampler.hops)) + ")");
    c.finalize();
    c.validate();
    return c;
}

inline RunConfig load_config(const std::string& file, bool use_environment = true,
                             const ConfigOverrides& overrides = {}) {
    if (!std::filesystem::exists(file)) throw ConfigError("config file not found: " + file);
    return parse_config(tsv::read_file(file), std::filesystem::path(file).parent_path(), use_environment, overrides);
}

inline void RunConfig::finalize() {
    decode.hops = sampler.hops;
    model.context_length = ModelConfig::context_for_hops(sampler.hops);
    sampler.seed = mix_seed(seed, 1);
    model.seed = mix_seed(seed, 2);
    train.seed = mix_seed(seed, 3);
    decode.seed = mix_seed(seed, 4);
    synth.seed = mix_seed(seed, 5);
    decode.users_mid_path = sampler.users_mid_path;
    if (deterministic) threads = 1;
    threads = std::max(1u, threads);
    sampler.threads = threads;
    decode.threads = threads;
}

inline void RunConfig::validate() const {
    sampler.validate();
    decode.validate();
    train.validate();
    if (decode.hops != sampler.hops) throw ConfigError("decoder and sampler hop counts differ");
    if (model.context_length != ModelConfig::context_for_hops(sampler.hops))
        throw ConfigError("model context length does not match the hop count");
    if (eval_k == 0) throw ConfigError("eval.k must be >= 1");
    for (double r : split)
        if (r < 0) throw ConfigError("preprocess.split ratios must be non-negative");
    if (std::abs(split[0] + split[1] + split[2] - 1.0) > 1e-9) throw ConfigError("preprocess.split must sum to 1");
    if (preprocess.min_relation_share < 0 || preprocess.min_relation_share >= 1)
        throw ConfigError("preprocess.min_relation_share must be in [0, 1)");
}

inline std::string RunConfig::canonical() const {
    std::ostringstream o;
    auto kv = [&](const char* k, const auto& v) { o << k << "=" << v << "\n"; };
    kv("data.interaction_relation", files.interaction_relation);
    kv("data.genre_relation", genre_relation);
    kv("preprocess.min_count", preprocess.min_count);
    kv("preprocess.min_relation_share", tsv::fixed(preprocess.min_relation_share, 12));
    kv("preprocess.product_headed_only", preprocess.product_headed_only);
    kv("preprocess.split", tsv::fixed(split[0], 12) + "," + tsv::fixed(split[1], 12) + "," + tsv::fixed(split[2], 12));
    kv("sampler", sampler_header(sampler));
    kv("model.preset", model_preset);
    kv("model.d_model", model.d_model);
    kv("model.n_layers", model.n_layers);
    kv("model.n_heads", model.n_heads);
    kv("model.d_ff", model.d_ff);
    kv("model.context_length", model.context_length);
    kv("model.dropout", tsv::fixed(model.dropout, 12));
    kv("model.init_std", tsv::fixed(model.init_std, 12));
    kv("train.learning_rate", tsv::fixed(train.learning_rate, 12));
    kv("train.beta1", tsv::fixed(train.beta1, 12));
    kv("train.beta2", tsv::fixed(train.beta2, 12));
    kv("train.weight_decay", tsv::fixed(train.weight_decay, 12));
    kv("train.batch_size", train.batch_size);
    kv("train.iterations", train.iterations);
    kv("train.warmup_fraction", tsv::fixed(train.warmup_fraction, 12));
    kv("train.grad_clip", tsv::fixed(train.grad_clip, 12));
    kv("decode.n_beams", decode.n_beams);
    kv("decode.n_groups", decode.n_groups);
    kv("decode.diversity_penalty", tsv::fixed(decode.diversity_penalty, 12));
    kv("decode.n_sequences", decode.n_sequences);
    kv("decode.top_n", decode.top_n);
    kv("decode.hops", decode.hops);
    kv("decode.graph_constraint", decode.graph_constraint);
    kv("decode.score", decode.score_mode == ScoreMode::mean_probability ? "mean_probability" : "mean_log_probability");
    kv("eval.k", eval_k);
    kv("eval.novelty_norm", novelty_norm == NoveltyNorm::max_count ? "max_count" : "user_count");
    kv("run.seed", seed);
    return o.str();
}

}  // namespace pearlm

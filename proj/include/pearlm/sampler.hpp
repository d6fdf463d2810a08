#pragma once

// Random-walk extraction of user-centric training paths:
//   user -r_f-> interacted product -> ... -> product   (exactly N hops)

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pearlm/data.hpp"
#include "pearlm/kg.hpp"
#include "pearlm/tsv.hpp"

namespace pearlm {

struct SamplerConfig {
    std::size_t hops = 3;
    std::size_t sample_size = 50;
    std::uint64_t seed = 0;
    bool restrict_end_to_interacted = true;
    // Users may appear only at position 0 unless this is set.
    bool users_mid_path = false;
    // Walk attempts per user = attempts_per_path * sample_size.
    std::size_t attempts_per_path = 10;
    unsigned threads = 1;

    void validate() const {
        if (hops < 1) throw ConfigError("sampler hops must be >= 1");
        if (sample_size < 1) throw ConfigError("sampler sample_size must be >= 1");
        if (attempts_per_path < 1) throw ConfigError("sampler attempts_per_path must be >= 1");
    }
};

struct PathDataset {
    std::vector<Path> paths;
    std::map<EntityId, std::size_t> per_user;
    std::vector<EntityId> skipped_users;
    SamplerConfig config;

    bool empty() const { return paths.empty(); }
};

namespace detail {

// Uniform choice over all (relation, entity) continuations from `from`.
template <typename Rng>
bool random_step(const KnowledgeGraph& kg, EntityId from, bool users_mid_path, Rng& rng, RelationId& r_out,
                 EntityId& e_out) {
    auto admissible = [&](EntityId e) { return users_mid_path || kg.entity_type(e) != EntityType::user; };
    std::size_t total = 0;
    for (auto r : kg.relations_from(from))
        for (auto e : kg.neighbors(from, r)) total += admissible(e) ? 1 : 0;
    if (total == 0) return false;
    std::size_t pick = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
    for (auto r : kg.relations_from(from)) {
        for (auto e : kg.neighbors(from, r)) {
            if (!admissible(e)) continue;
            if (pick-- == 0) {
                r_out = r;
                e_out = e;
                return true;
            }
        }
    }
    return false;
}

inline std::vector<Path> sample_user(const KnowledgeGraph& kg, EntityId user, const std::vector<EntityId>& train_items,
                                     const SamplerConfig& cfg) {
    std::mt19937_64 rng(mix_seed(cfg.seed, user.value));
    const RelationId rf = kg.interaction_relation();
    auto start = kg.neighbors(user, rf);
    std::vector<Path> out;
    if (start.empty()) return out;

    std::set<Path> seen;
    const std::size_t budget = cfg.attempts_per_path * cfg.sample_size;
    std::size_t accepted = 0;
    for (std::size_t attempt = 0; attempt < budget && accepted < cfg.sample_size; ++attempt) {
        Path p;
        p.entities.reserve(cfg.hops + 1);
        p.relations.reserve(cfg.hops);
        p.entities.push_back(user);
        p.relations.push_back(rf);
        p.entities.push_back(start[std::uniform_int_distribution<std::size_t>(0, start.size() - 1)(rng)]);
        bool ok = true;
        for (std::size_t hop = 2; hop <= cfg.hops && ok; ++hop) {
            RelationId r;
            EntityId e;
            ok = random_step(kg, p.entities.back(), cfg.users_mid_path, rng, r, e);
            if (ok) {
                p.relations.push_back(r);
                p.entities.push_back(e);
            }
        }
        if (!ok) continue;
        const EntityId last = p.entities.back();
        if (kg.entity_type(last) != EntityType::product) continue;
        if (cfg.restrict_end_to_interacted && !std::binary_search(train_items.begin(), train_items.end(), last))
            continue;
        ++accepted;
        if (seen.insert(p).second) out.push_back(std::move(p));
    }
    return out;
}

}  // namespace detail

inline PathDataset sample_paths(const KnowledgeGraph& kg,
                                const std::unordered_map<EntityId, std::vector<EntityId>>& train_items,
                                const SamplerConfig& cfg) {
    cfg.validate();
    if (train_items.empty()) throw DataError("cannot sample paths: train set is empty");

    std::vector<EntityId> users;
    for (const auto& [u, items] : train_items) users.push_back(u);
    std::sort(users.begin(), users.end());

    std::vector<std::vector<Path>> per_user(users.size());
    const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(users.size())));
    auto work = [&](unsigned worker) {
        for (std::size_t i = worker; i < users.size(); i += threads)
            per_user[i] = detail::sample_user(kg, users[i], train_items.at(users[i]), cfg);
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w);
    }

    PathDataset ds;
    ds.config = cfg;
    for (std::size_t i = 0; i < users.size(); ++i) {
        if (per_user[i].empty()) {
            ds.skipped_users.push_back(users[i]);
            continue;
        }
        ds.per_user[users[i]] = per_user[i].size();
        for (auto& p : per_user[i]) ds.paths.push_back(std::move(p));
    }
    return ds;
}

inline PathDataset sample_paths(const KnowledgeGraph& kg, const SplitDataset& split, const SamplerConfig& cfg) {
    return sample_paths(kg, split.train_items(), cfg);
}

// Fraction of catalogue products that appear at any position of any path.
inline double product_path_coverage(const PathDataset& ds, const std::vector<EntityId>& catalogue) {
    if (catalogue.empty()) throw DataError("product coverage: empty catalogue");
    if (ds.empty()) throw DataError("product coverage: empty path dataset");
    std::unordered_set<EntityId> wanted(catalogue.begin(), catalogue.end());
    std::unordered_set<EntityId> hit;
    for (const auto& p : ds.paths)
        for (auto e : p.entities)
            if (wanted.count(e)) hit.insert(e);
    return static_cast<double>(hit.size()) / static_cast<double>(wanted.size());
}

// Unique (path user, product anywhere in the path) pairs over unique train
// pairs. Exceeds 1 when paths pass through products the user never touched.
inline double user_product_coverage(const PathDataset& ds, const KnowledgeGraph& kg,
                                    const std::vector<Interaction>& train) {
    if (train.empty()) throw DataError("user-product coverage: empty train set");
    if (ds.empty()) throw DataError("user-product coverage: empty path dataset");
    std::set<std::pair<EntityId, EntityId>> train_pairs, path_pairs;
    for (const auto& x : train) train_pairs.emplace(x.user, x.product);
    for (const auto& p : ds.paths)
        for (std::size_t i = 1; i < p.entities.size(); ++i)
            if (kg.entity_type(p.entities[i]) == EntityType::product) path_pairs.emplace(p.entities[0], p.entities[i]);
    return static_cast<double>(path_pairs.size()) / static_cast<double>(train_pairs.size());
}

// ---------------------------------------------------------------------------
// Path file: "# key=value ..." header, then one space-separated path per line.

inline std::string sampler_header(const SamplerConfig& c) {
    std::ostringstream o;
    o << "hops=" << c.hops << " sample_size=" << c.sample_size << " seed=" << c.seed
      << " restrict_end_to_interacted=" << c.restrict_end_to_interacted << " users_mid_path=" << c.users_mid_path
      << " attempts_per_path=" << c.attempts_per_path;
    return o.str();
}

inline std::string format_path_file(const PathDataset& ds, const KnowledgeGraph& kg, const std::string& manifest = {}) {
    std::string out = manifest + "# paths " + sampler_header(ds.config) + "\n";
    for (const auto& p : ds.paths) out += format_path(kg, p) + "\n";
    return out;
}

inline Path parse_path(const KnowledgeGraph& kg, std::string_view line) {
    Path p;
    std::size_t idx = 0;
    for (auto tok : tsv::split(line, ' ')) {
        if (tok.empty()) continue;
        if (idx % 2 == 0) {
            auto e = kg.find_entity(tok);
            if (!e) throw StructuralError("unknown entity token '" + std::string(tok) + "'");
            p.entities.push_back(*e);
        } else {
            auto r = kg.find_relation(tok);
            if (!r) throw StructuralError("unknown relation token '" + std::string(tok) + "'");
            p.relations.push_back(*r);
        }
        ++idx;
    }
    if (p.entities.size() != p.relations.size() + 1) throw StructuralError("path line ends on a relation");
    return p;
}

inline PathDataset read_path_file(const std::string& file, const KnowledgeGraph& kg) {
    PathDataset ds;
    std::istringstream in(tsv::read_file(file));
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("# paths ", 0) == 0) {
            for (auto kv : tsv::split(std::string_view(line).substr(8), ' ')) {
                auto eq = kv.find('=');
                if (eq == std::string_view::npos) continue;
                auto key = kv.substr(0, eq);
                auto val = tsv::parse_int<std::uint64_t>(kv.substr(eq + 1), file);
                if (key == "hops") ds.config.hops = val;
                else if (key == "sample_size") ds.config.sample_size = val;
                else if (key == "seed") ds.config.seed = val;
                else if (key == "restrict_end_to_interacted") ds.config.restrict_end_to_interacted = val != 0;
                else if (key == "users_mid_path") ds.config.users_mid_path = val != 0;
                else if (key == "attempts_per_path") ds.config.attempts_per_path = val;
            }
            continue;
        }
        if (line.empty() || line[0] == '#') continue;
        ds.paths.push_back(parse_path(kg, line));
        ++ds.per_user[ds.paths.back().entities.front()];
    }
    return ds;
}

struct CoverageReport {
    std::size_t paths{0};
    std::size_t users{0};
    std::size_t skipped_users{0};
    double up_cov{0.0};
    double pp_cov{0.0};
};

inline std::string format_coverage(const CoverageReport& r, const SamplerConfig& c) {
    std::ostringstream o;
    o << "hops\tsample_size\t# Paths\tUP-COV\tPP-COV\tusers\tskipped_users\n"
      << c.hops << "\t" << c.sample_size << "\t" << r.paths << "\t" << tsv::fixed(r.up_cov, 4) << "\t"
      << tsv::fixed(r.pp_cov, 4) << "\t" << r.users << "\t" << r.skipped_users << "\n";
    return o.str();
}

}  // namespace pearlm

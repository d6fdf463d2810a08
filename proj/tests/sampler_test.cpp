#include <gtest/gtest.h>

#include <map>
#include <set>

#include "fixtures.hpp"
#include "pearlm/sampler.hpp"
#include "pearlm/synth.hpp"

using namespace pearlm;

namespace {

struct Synthetic {
    Dataset data;
    SplitDataset split;
    KnowledgeGraph kg;
};

Synthetic synthetic(std::uint64_t seed = 7) {
    SynthConfig sc;
    sc.seed = seed;
    Dataset d = preprocess(synthesize(sc));
    SplitDataset s = chrono_split(d.interactions);
    KnowledgeGraph g = build_training_graph(d, s.train);
    return {std::move(d), std::move(s), std::move(g)};
}

// Pair and set coverage computed from names, independently of the library.
double up_cov_oracle(const PathDataset& ds, const KnowledgeGraph& kg, const std::vector<Interaction>& train) {
    std::set<std::string> train_pairs, path_pairs;
    for (const auto& x : train) train_pairs.insert(kg.entity_name(x.user) + "|" + kg.entity_name(x.product));
    for (const auto& p : ds.paths) {
        const auto& user = kg.entity_name(p.entities.front());
        for (std::size_t i = 0; i < p.entities.size(); ++i) {
            const auto e = p.entities[i];
            if (i > 0 && kg.entity_type(e) == EntityType::product) path_pairs.insert(user + "|" + kg.entity_name(e));
        }
    }
    return static_cast<double>(path_pairs.size()) / static_cast<double>(train_pairs.size());
}

double pp_cov_oracle(const PathDataset& ds, const KnowledgeGraph& kg) {
    std::size_t catalogue = 0, hit = 0;
    for (std::size_t e = 0; e < kg.num_entities(); ++e) {
        if (kg.entity_type(EntityId(e)) != EntityType::product) continue;
        ++catalogue;
        bool found = false;
        for (const auto& p : ds.paths)
            for (auto x : p.entities) found = found || x == EntityId(e);
        hit += found ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(catalogue);
}

}  // namespace

TEST(SamplePaths, ContractOnSyntheticGraph) {
    const auto s = synthetic();
    const auto items = s.split.train_items();
    // Products only meet through externals, so user-free walks have odd length.
    for (std::size_t hops : {1u, 3u, 5u}) {
        SamplerConfig cfg;
        cfg.hops = hops;
        cfg.sample_size = 40;
        cfg.seed = 3;
        const auto ds = sample_paths(s.kg, items, cfg);
        ASSERT_FALSE(ds.empty());
        std::set<Path> unique;
        for (const auto& p : ds.paths) {
            ASSERT_EQ(p.token_length(), 2 * hops + 1);
            EXPECT_TRUE(validate_path(s.kg, p).valid);
            const auto& mine = items.at(p.entities[0]);
            EXPECT_EQ(s.kg.entity_type(p.entities[0]), EntityType::user);
            EXPECT_EQ(p.relations[0], s.kg.interaction_relation());
            EXPECT_TRUE(std::binary_search(mine.begin(), mine.end(), p.entities[1]));
            EXPECT_TRUE(std::binary_search(mine.begin(), mine.end(), p.entities.back()));
            for (std::size_t i = 1; i < p.entities.size(); ++i)
                EXPECT_NE(s.kg.entity_type(p.entities[i]), EntityType::user);
            EXPECT_TRUE(unique.insert(p).second);
        }
        std::size_t total = 0;
        for (auto [u, n] : ds.per_user) total += n;
        EXPECT_EQ(total, ds.paths.size());
    }
}

TEST(SamplePaths, DeterministicAcrossThreadCounts) {
    const auto s = synthetic();
    SamplerConfig cfg;
    cfg.seed = 99;
    const auto a = sample_paths(s.kg, s.split, cfg);
    cfg.threads = 4;
    const auto b = sample_paths(s.kg, s.split, cfg);
    EXPECT_EQ(a.paths, b.paths);
    cfg.seed = 100;
    const auto c = sample_paths(s.kg, s.split, cfg);
    EXPECT_NE(a.paths, c.paths);
}

TEST(SamplePaths, UsersMidPathFlag) {
    const auto s = synthetic();
    SamplerConfig cfg;
    cfg.hops = 3;
    cfg.users_mid_path = true;
    const auto ds = sample_paths(s.kg, s.split, cfg);
    bool user_inside = false;
    for (const auto& p : ds.paths)
        for (std::size_t i = 1; i < p.entities.size(); ++i)
            user_inside = user_inside || s.kg.entity_type(p.entities[i]) == EntityType::user;
    EXPECT_TRUE(user_inside);
}

TEST(SamplePaths, UnrestrictedEndStillEndsAtProduct) {
    const auto s = synthetic();
    SamplerConfig cfg;
    cfg.restrict_end_to_interacted = false;
    const auto ds = sample_paths(s.kg, s.split, cfg);
    for (const auto& p : ds.paths) EXPECT_EQ(s.kg.entity_type(p.entities.back()), EntityType::product);
}

TEST(SamplePaths, DeadEndUserIsSkipped) {
    // u1's only product has no further edges, so no 3-hop walk exists.
    std::vector<Triplet> t{{EntityId(0u), RelationId(0u), EntityId(2u)},
                           {EntityId(1u), RelationId(0u), EntityId(3u)},
                           {EntityId(2u), RelationId(1u), EntityId(4u)}};
    auto kg = build_graph(t, {EntityType::user, EntityType::user, EntityType::product, EntityType::product,
                              EntityType::external},
                          RelationId(0u));
    std::unordered_map<EntityId, std::vector<EntityId>> items{{EntityId(0u), {EntityId(2u)}},
                                                              {EntityId(1u), {EntityId(3u)}}};
    SamplerConfig cfg;
    const auto ds = sample_paths(kg, items, cfg);
    EXPECT_EQ(ds.skipped_users, std::vector<EntityId>{EntityId(1u)});
    EXPECT_EQ(ds.per_user.count(EntityId(0u)), 1u);
}

TEST(RandomStep, UniformOverContinuations) {
    // p0 -a-> {x1,x2,x3}, p0 -b-> {y1}: each continuation has probability 1/4.
    std::vector<Triplet> t{{EntityId(0u), RelationId(0u), EntityId(1u)},
                           {EntityId(1u), RelationId(1u), EntityId(2u)},
                           {EntityId(1u), RelationId(1u), EntityId(3u)},
                           {EntityId(1u), RelationId(1u), EntityId(4u)},
                           {EntityId(1u), RelationId(2u), EntityId(5u)}};
    auto kg = build_graph(t, {EntityType::user, EntityType::product, EntityType::external, EntityType::external,
                              EntityType::external, EntityType::external},
                          RelationId(0u));
    std::mt19937_64 rng(1);
    std::map<EntityId, int> hits;
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
        RelationId r;
        EntityId e;
        ASSERT_TRUE(detail::random_step(kg, EntityId(1u), false, rng, r, e));
        ++hits[e];
    }
    ASSERT_EQ(hits.size(), 4u);
    for (auto [e, c] : hits) EXPECT_NEAR(static_cast<double>(c) / n, 0.25, 0.015) << e.value;
}

TEST(Coverage, MatchesBruteForceEnumeration) {
    const auto s = synthetic();
    for (std::size_t hops : {1u, 3u, 5u}) {
        SamplerConfig cfg;
        cfg.hops = hops;
        cfg.sample_size = 10;
        const auto ds = sample_paths(s.kg, s.split, cfg);
        EXPECT_NEAR(user_product_coverage(ds, s.kg, s.split.train), up_cov_oracle(ds, s.kg, s.split.train), 1e-12);
        EXPECT_NEAR(product_path_coverage(ds, s.kg.entities_of_type(EntityType::product)), pp_cov_oracle(ds, s.kg),
                    1e-12);
    }
}

TEST(Coverage, IndirectProductsPushUserCoverageAboveOne) {
    // u0 watched p0; p0..p3 share genre g. Five-hop walks from u0 back to p0
    // pass through p1..p3, which u0 never interacted with.
    std::vector<Triplet> t{{EntityId(0u), RelationId(0u), EntityId(1u)}};
    for (std::uint32_t p = 1; p <= 4; ++p) t.push_back({EntityId(p), RelationId(1u), EntityId(5u)});
    auto kg = build_graph(t, {EntityType::user, EntityType::product, EntityType::product, EntityType::product,
                              EntityType::product, EntityType::external},
                          RelationId(0u));
    std::vector<Interaction> train{{EntityId(0u), EntityId(1u), 0}};
    SamplerConfig cfg;
    cfg.hops = 5;
    cfg.sample_size = 50;
    const auto ds = sample_paths(kg, SplitDataset{train, {}, {}}, cfg);
    ASSERT_FALSE(ds.empty());
    EXPECT_GT(user_product_coverage(ds, kg, train), 1.0);
    EXPECT_NEAR(user_product_coverage(ds, kg, train), up_cov_oracle(ds, kg, train), 1e-12);
}

TEST(PathFile, RoundTrip) {
    const auto s = synthetic();
    SamplerConfig cfg;
    cfg.hops = 3;
    cfg.sample_size = 5;
    cfg.seed = 17;
    const auto ds = sample_paths(s.kg, s.split, cfg);
    const auto dir = fixtures::temp_dir("path_file");
    const auto file = (dir / "paths.txt").string();
    tsv::write_file(file, format_path_file(ds, s.kg, "# manifest stage=test\n"));
    const auto back = read_path_file(file, s.kg);
    EXPECT_EQ(back.paths, ds.paths);
    EXPECT_EQ(back.config.hops, 3u);
    EXPECT_EQ(back.config.seed, 17u);
    EXPECT_EQ(back.config.sample_size, 5u);
}

TEST(PathFile, UnknownTokenIsStructural) {
    const auto kg = fixtures::toy_graph();
    EXPECT_THROW(parse_path(kg, "u0 watched m9"), StructuralError);
    EXPECT_THROW(parse_path(kg, "u0 watched"), StructuralError);
    EXPECT_EQ(parse_path(kg, "u0 watched m0").hops(), 1u);
}

TEST(SamplerConfig, RejectsZeroHops) {
    SamplerConfig cfg;
    cfg.hops = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "pearlm/kg.hpp"

using namespace pearlm;
using fixtures::Toy;

namespace {

KnowledgeGraph one_edge() {
    std::vector<Triplet> t{{EntityId(0u), RelationId(0u), EntityId(1u)}};
    return build_graph(t, {EntityType::user, EntityType::product}, RelationId(0u));
}

std::vector<EntityId> as_vector(std::span<const EntityId> s) { return {s.begin(), s.end()}; }

// Tails reachable from (e, r) by scanning the raw triplet list in both directions.
std::vector<EntityId> brute_neighbors(const fixtures::RandomGraph& g, std::size_t base, EntityId e, RelationId r) {
    std::set<EntityId> out;
    for (const auto& t : g.triplets) {
        if (r.index() < base && t.head == e && t.relation == r) out.insert(t.tail);
        if (r.index() >= base && t.tail == e && t.relation.index() == r.index() - base) out.insert(t.head);
    }
    return {out.begin(), out.end()};
}

KnowledgeGraph build(const fixtures::RandomGraph& g) {
    GraphSchema s;
    s.entity_types = g.types;
    s.interaction = RelationId(0u);
    for (std::size_t r = 0; r < g.n_relations; ++r) s.relation_names.push_back("r" + std::to_string(r));
    return build_graph(g.triplets, s);
}

}  // namespace

TEST(BuildGraph, SingleTripletIsInverseClosed) {
    auto g = one_edge();
    EXPECT_EQ(as_vector(g.neighbors(EntityId(0u), RelationId(0u))), std::vector<EntityId>{EntityId(1u)});
    EXPECT_EQ(as_vector(g.neighbors(EntityId(1u), g.inverse(RelationId(0u)))), std::vector<EntityId>{EntityId(0u)});
    EXPECT_EQ(g.relation_name(g.inverse(RelationId(0u))), "r0⁻¹");
}

TEST(BuildGraph, EmptyInputIsRejected) {
    std::vector<Triplet> none;
    try {
        build_graph(none, {EntityType::user}, RelationId(0u));
        FAIL() << "expected an error";
    } catch (const StructuralError& e) {
        EXPECT_STREQ(e.what(), "empty graph");
    }
}

TEST(BuildGraph, ToyActorOnlyHasInverseStarred) {
    auto g = fixtures::toy_graph();
    auto rels = g.relations_from(EntityId(Toy::a0));
    ASSERT_EQ(rels.size(), 1u);
    EXPECT_EQ(rels[0], g.inverse(RelationId(Toy::starred_by)));
    EXPECT_EQ(g.relation_name(rels[0]), "starred_by⁻¹");
}

TEST(BuildGraph, UnknownEntityIsStructural) {
    std::vector<Triplet> t{{EntityId(0u), RelationId(0u), EntityId(5u)}};
    EXPECT_THROW(build_graph(t, {EntityType::user, EntityType::product}, RelationId(0u)), StructuralError);
}

TEST(BuildGraph, DuplicatesCollapsedAndCounted) {
    std::vector<Triplet> t(3, {EntityId(0u), RelationId(0u), EntityId(1u)});
    GraphBuildStats stats;
    auto g = build_graph(t, {EntityType::user, EntityType::product}, RelationId(0u), &stats);
    EXPECT_EQ(stats.input_triplets, 3u);
    EXPECT_EQ(stats.duplicates_removed, 2u);
    EXPECT_EQ(g.num_triplets(), 1u);
    EXPECT_EQ(g.neighbors(EntityId(0u), RelationId(0u)).size(), 1u);
}

TEST(BuildGraph, InteractionMustJoinUserToProduct) {
    std::vector<Triplet> t{{EntityId(1u), RelationId(0u), EntityId(0u)}};
    EXPECT_THROW(build_graph(t, {EntityType::user, EntityType::product}, RelationId(0u)), StructuralError);
}

TEST(BuildGraph, InteractionRelationMustBePresent) {
    std::vector<Triplet> t{{EntityId(1u), RelationId(1u), EntityId(2u)}};
    EXPECT_THROW(build_graph(t, {EntityType::user, EntityType::product, EntityType::external}, RelationId(0u)),
                 StructuralError);
}

TEST(BuildGraph, InverseOfInverseIsBase) {
    auto g = fixtures::toy_graph();
    for (std::size_t r = 0; r < g.num_relations(); ++r) {
        EXPECT_EQ(g.inverse(g.inverse(RelationId(r))), RelationId(r));
        EXPECT_NE(g.inverse(RelationId(r)), RelationId(r));
    }
    EXPECT_EQ(g.inverse(RelationId(0u)).index(), g.num_base_relations());
}

TEST(BuildGraph, SelfLoopsKept) {
    std::vector<Triplet> t{{EntityId(0u), RelationId(0u), EntityId(1u)}, {EntityId(1u), RelationId(1u), EntityId(1u)}};
    auto g = build_graph(t, {EntityType::user, EntityType::product}, RelationId(0u));
    EXPECT_TRUE(g.has_edge(EntityId(1u), RelationId(1u), EntityId(1u)));
    EXPECT_TRUE(g.has_edge(EntityId(1u), g.inverse(RelationId(1u)), EntityId(1u)));
}

TEST(BuildGraph, IndexLayoutIndependentOfInputOrder) {
    auto rg = fixtures::random_graph(11);
    auto a = build(rg);
    std::mt19937_64 rng(3);
    std::shuffle(rg.triplets.begin(), rg.triplets.end(), rng);
    rg.triplets.push_back(rg.triplets.front());
    auto b = build(rg);
    EXPECT_TRUE(std::ranges::equal(a.entity_offsets(), b.entity_offsets()));
    EXPECT_TRUE(std::ranges::equal(a.slot_offsets(), b.slot_offsets()));
    EXPECT_TRUE(std::ranges::equal(a.slot_relations(), b.slot_relations()));
    EXPECT_TRUE(std::ranges::equal(a.tail_array(), b.tail_array()));
}

TEST(Neighbors, DirectionMatters) {
    auto g = one_edge();
    EXPECT_EQ(as_vector(g.neighbors(EntityId(0u), RelationId(0u))), std::vector<EntityId>{EntityId(1u)});
    EXPECT_TRUE(g.neighbors(EntityId(1u), RelationId(0u)).empty());
}

TEST(Neighbors, ToyMovieActorsMatchScan) {
    auto g = fixtures::toy_graph();
    for (auto m : {Toy::m0, Toy::m1}) {
        std::vector<EntityId> expected;
        for (const auto& t : g.triplets())
            if (t.head == EntityId(m) && t.relation == RelationId(Toy::starred_by)) expected.push_back(t.tail);
        EXPECT_EQ(as_vector(g.neighbors(EntityId(m), RelationId(Toy::starred_by))), expected);
    }
    EXPECT_EQ(as_vector(g.neighbors(EntityId(Toy::a0), g.inverse(RelationId(Toy::starred_by)))),
              (std::vector<EntityId>{EntityId(Toy::m0), EntityId(Toy::m1)}));
}

class RandomGraphs : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(RandomGraphs, NeighborsEqualBruteForceScan) {
    const auto rg = fixtures::random_graph(GetParam());
    const auto g = build(rg);
    for (std::size_t e = 0; e < g.num_entities(); ++e) {
        for (std::size_t r = 0; r < g.num_relations(); ++r) {
            const auto got = as_vector(g.neighbors(EntityId(e), RelationId(r)));
            EXPECT_EQ(got, brute_neighbors(rg, g.num_base_relations(), EntityId(e), RelationId(r)));
            EXPECT_TRUE(std::is_sorted(got.begin(), got.end()));
            const auto rels = g.relations_from(EntityId(e));
            const bool listed = std::find(rels.begin(), rels.end(), RelationId(r)) != rels.end();
            EXPECT_EQ(listed, !got.empty());
        }
    }
}

TEST_P(RandomGraphs, InverseClosureExhaustive) {
    const auto g = build(fixtures::random_graph(GetParam()));
    for (std::size_t h = 0; h < g.num_entities(); ++h)
        for (std::size_t r = 0; r < g.num_relations(); ++r)
            for (std::size_t t = 0; t < g.num_entities(); ++t)
                EXPECT_EQ(g.has_edge(EntityId(h), RelationId(r), EntityId(t)),
                          g.has_edge(EntityId(t), g.inverse(RelationId(r)), EntityId(h)));
}

TEST_P(RandomGraphs, ValidateMatchesTripletLookup) {
    const auto rg = fixtures::random_graph(GetParam());
    const auto g = build(rg);
    const std::set<Triplet> base(rg.triplets.begin(), rg.triplets.end());
    auto exists = [&](EntityId h, RelationId r, EntityId t) {
        if (!g.is_inverse(r)) return base.count({h, r, t}) > 0;
        return base.count({t, g.base_of(r), h}) > 0;
    };
    std::mt19937_64 rng(GetParam() * 7 + 1);
    for (int trial = 0; trial < 300; ++trial) {
        Path p;
        const std::size_t hops = rng() % 5;
        p.entities.emplace_back(rng() % g.num_entities());
        for (std::size_t i = 0; i < hops; ++i) {
            const auto from = p.entities.back();
            const auto rels = g.relations_from(from);
            // Mostly walk real edges so that long valid paths occur.
            if (!rels.empty() && rng() % 4 != 0) {
                const auto r = rels[rng() % rels.size()];
                const auto n = g.neighbors(from, r);
                p.relations.push_back(r);
                p.entities.push_back(n[rng() % n.size()]);
            } else {
                p.relations.emplace_back(rng() % g.num_relations());
                p.entities.emplace_back(rng() % g.num_entities());
            }
        }
        std::optional<std::size_t> first_bad;
        for (std::size_t i = 1; i <= p.hops() && !first_bad; ++i)
            if (!exists(p.entities[i - 1], p.relations[i - 1], p.entities[i])) first_bad = i;
        const auto v = validate_path(g, p);
        EXPECT_EQ(v.valid, !first_bad.has_value());
        EXPECT_EQ(v.first_invalid_hop, first_bad);
    }
}

INSTANTIATE_TEST_SUITE_P(Seeds, RandomGraphs, ::testing::Range<std::uint64_t>(1, 21));

TEST(ValidatePath, WalkedPathIsValid) {
    auto g = fixtures::toy_graph();
    Path p{{EntityId(Toy::u0), EntityId(Toy::m0), EntityId(Toy::a0), EntityId(Toy::m1)},
           {RelationId(Toy::watched), RelationId(Toy::starred_by), g.inverse(RelationId(Toy::starred_by))}};
    EXPECT_TRUE(validate_path(g, p).valid);
    EXPECT_EQ(format_path(g, p), "u0 watched m0 starred_by a0 starred_by⁻¹ m1");
}

TEST(ValidatePath, CorruptedSecondEntityFailsAtHopTwo) {
    auto g = fixtures::toy_graph();
    Path p{{EntityId(Toy::u0), EntityId(Toy::m0), EntityId(Toy::a0), EntityId(Toy::m1)},
           {RelationId(Toy::watched), RelationId(Toy::starred_by), g.inverse(RelationId(Toy::starred_by))}};
    // Replace e_2 with every entity that breaks hop 2; the oracle is a direct edge check.
    for (std::uint32_t e = 0; e < g.num_entities(); ++e) {
        Path q = p;
        q.entities[2] = EntityId(e);
        const bool hop2 = g.has_edge(q.entities[1], q.relations[1], q.entities[2]);
        const bool hop3 = g.has_edge(q.entities[2], q.relations[2], q.entities[3]);
        const auto v = validate_path(g, q);
        if (!hop2) EXPECT_EQ(v.first_invalid_hop, 2u) << e;
        else if (!hop3) EXPECT_EQ(v.first_invalid_hop, 3u) << e;
        else EXPECT_TRUE(v.valid) << e;
    }
}

TEST(ValidatePath, SingleEntityPathIsValid) {
    auto g = fixtures::toy_graph();
    EXPECT_TRUE(validate_path(g, Path{{EntityId(Toy::m1)}, {}}).valid);
}

TEST(ValidatePath, MalformedAlternationIsStructural) {
    auto g = fixtures::toy_graph();
    Path p{{EntityId(Toy::u0), EntityId(Toy::m0)}, {RelationId(Toy::watched), RelationId(Toy::starred_by)}};
    EXPECT_THROW(validate_path(g, p), StructuralError);
}

TEST(FindRelation, ResolvesInverseSuffix) {
    auto g = fixtures::toy_graph();
    EXPECT_EQ(g.find_relation("starred_by"), RelationId(Toy::starred_by));
    EXPECT_EQ(g.find_relation("starred_by⁻¹"), g.inverse(RelationId(Toy::starred_by)));
    EXPECT_FALSE(g.find_relation("acted_in").has_value());
}

#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pearlm/kg.hpp"

namespace fixtures {

using namespace pearlm;

// Random typed graph: users hold relation 0 (interaction) edges to products,
// products hold the other relations to externals or to other products.
struct RandomGraph {
    std::vector<Triplet> triplets;
    std::vector<EntityType> types;
    std::size_t n_relations = 0;
};

inline RandomGraph random_graph(std::uint64_t seed, std::size_t users = 5, std::size_t products = 8,
                                std::size_t externals = 6, std::size_t relations = 4, std::size_t edges = 60) {
    std::mt19937_64 rng(seed);
    RandomGraph g;
    g.n_relations = relations;
    for (std::size_t i = 0; i < users; ++i) g.types.push_back(EntityType::user);
    for (std::size_t i = 0; i < products; ++i) g.types.push_back(EntityType::product);
    for (std::size_t i = 0; i < externals; ++i) g.types.push_back(EntityType::external);
    auto pick = [&](std::size_t first, std::size_t count) { return EntityId(first + rng() % count); };
    for (std::size_t u = 0; u < users; ++u)
        g.triplets.push_back({EntityId(u), RelationId(0u), pick(users, products)});
    for (std::size_t k = 0; k < edges; ++k) {
        const auto r = RelationId(1 + rng() % (relations - 1));
        if (rng() % 5 == 0) {
            g.triplets.push_back({pick(0, users), RelationId(0u), pick(users, products)});
        } else if (rng() % 7 == 0) {
            const auto p = pick(users, products);
            g.triplets.push_back({p, r, rng() % 2 ? p : pick(users, products)});
        } else {
            g.triplets.push_back({pick(users, products), r, pick(users + products, externals)});
        }
    }
    return g;
}

// Small user / movie / actor graph:
//   u0 watched m0, u1 watched m1, m0 starred_by a0, m1 starred_by a0, m0 belongs_to g0
struct Toy {
    static constexpr std::uint32_t u0 = 0, u1 = 1, m0 = 2, m1 = 3, a0 = 4, g0 = 5;
    static constexpr std::uint32_t watched = 0, starred_by = 1, belongs_to = 2;
};

inline KnowledgeGraph toy_graph() {
    GraphSchema s;
    s.entity_types = {EntityType::user, EntityType::user, EntityType::product, EntityType::product,
                      EntityType::external, EntityType::external};
    s.entity_names = {"u0", "u1", "m0", "m1", "a0", "g0"};
    s.relation_names = {"watched", "starred_by", "belongs_to"};
    s.interaction = RelationId(Toy::watched);
    std::vector<Triplet> t{
        {EntityId(Toy::u0), RelationId(Toy::watched), EntityId(Toy::m0)},
        {EntityId(Toy::u1), RelationId(Toy::watched), EntityId(Toy::m1)},
        {EntityId(Toy::m0), RelationId(Toy::starred_by), EntityId(Toy::a0)},
        {EntityId(Toy::m1), RelationId(Toy::starred_by), EntityId(Toy::a0)},
        {EntityId(Toy::m0), RelationId(Toy::belongs_to), EntityId(Toy::g0)},
    };
    return build_graph(t, s);
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::path(PEARLM_TEST_TMP) / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fixtures

#pragma once

// Parameterized toy knowledge graphs for tests and desk-scale runs.
//
// Each product has one lead actor, one director and one or two genres;
// optional "tag" leaves hang off a few products each. Every user has a
// favourite actor: three of the actor's films land in the user's train
// window and one more is the user's most recent interaction, so the
// pattern  user watched P starred_by A starred_by⁻¹ P'  leads to the
// held-out product.

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pearlm/data.hpp"

namespace pearlm {

struct SynthConfig {
    std::size_t users = 100;
    std::size_t products = 60;
    std::size_t actors = 15;
    std::size_t directors = 10;
    std::size_t genres = 8;
    std::size_t tags = 0;
    std::size_t products_per_tag = 2;
    // Interactions per user; the last one is the planted held-out product.
    std::size_t interactions_per_user = 10;
    // Films of the favourite actor placed in the train window.
    std::size_t planted_train = 3;
    // Triplets of an extra relation meant to fall below the share filter.
    std::size_t rare_triplets = 0;
    std::uint64_t seed = 7;
};

inline Dataset synthesize(const SynthConfig& c) {
    if (c.products < c.actors || c.actors == 0 || c.directors == 0 || c.genres == 0 || c.users == 0)
        throw ConfigError("synthetic graph needs users, actors, directors, genres and products >= actors");
    if (c.interactions_per_user < c.planted_train + 2 || c.interactions_per_user > c.products)
        throw ConfigError("interactions_per_user out of range for the synthetic graph");

    std::mt19937_64 rng(c.seed);
    Dataset d;
    auto add = [&](const std::string& name, EntityType t) {
        d.entity_names.push_back(name);
        d.entity_types.push_back(t);
        return EntityId(d.entity_names.size() - 1);
    };
    std::vector<EntityId> users, products, actors, directors, genres, tags;
    for (std::size_t i = 0; i < c.users; ++i) users.push_back(add("U" + std::to_string(i), EntityType::user));
    for (std::size_t i = 0; i < c.products; ++i) products.push_back(add("P" + std::to_string(i), EntityType::product));
    for (std::size_t i = 0; i < c.actors; ++i) actors.push_back(add("A" + std::to_string(i), EntityType::external));
    for (std::size_t i = 0; i < c.directors; ++i) directors.push_back(add("D" + std::to_string(i), EntityType::external));
    for (std::size_t i = 0; i < c.genres; ++i) genres.push_back(add("G" + std::to_string(i), EntityType::external));
    for (std::size_t i = 0; i < c.tags; ++i) tags.push_back(add("T" + std::to_string(i), EntityType::external));

    d.relation_names = {"watched", "starred_by", "directed_by", "belongs_to"};
    const RelationId watched(0u), starred(1u), directed(2u), belongs(3u);
    RelationId tagged(0u), rare(0u);
    if (c.tags) {
        tagged = RelationId(d.relation_names.size());
        d.relation_names.push_back("tagged_with");
    }
    if (c.rare_triplets) {
        rare = RelationId(d.relation_names.size());
        d.relation_names.push_back("rare_link");
    }
    d.interaction = watched;

    std::vector<std::vector<EntityId>> filmography(c.actors);
    for (std::size_t i = 0; i < c.products; ++i) {
        const std::size_t a = i % c.actors;
        filmography[a].push_back(products[i]);
        d.kg_triplets.push_back({products[i], starred, actors[a]});
        d.kg_triplets.push_back({products[i], directed, directors[(i * 7 + 3) % c.directors]});
        d.kg_triplets.push_back({products[i], belongs, genres[rng() % c.genres]});
        if (rng() % 3 == 0) d.kg_triplets.push_back({products[i], belongs, genres[rng() % c.genres]});
    }
    for (std::size_t t = 0; t < c.tags; ++t)
        for (std::size_t k = 0; k < c.products_per_tag; ++k)
            d.kg_triplets.push_back({products[rng() % c.products], tagged, tags[t]});
    for (std::size_t k = 0; k < c.rare_triplets; ++k)
        d.kg_triplets.push_back({products[rng() % c.products], rare, genres[rng() % c.genres]});
    std::sort(d.kg_triplets.begin(), d.kg_triplets.end());
    d.kg_triplets.erase(std::unique(d.kg_triplets.begin(), d.kg_triplets.end()), d.kg_triplets.end());

    const std::size_t n = c.interactions_per_user;
    const auto n_train = static_cast<std::size_t>(0.6 * static_cast<double>(n) + 1e-9);
    for (std::size_t u = 0; u < c.users; ++u) {
        std::size_t fav = rng() % c.actors;
        while (filmography[fav].size() < c.planted_train + 1) fav = (fav + 1) % c.actors;
        std::vector<EntityId> films = filmography[fav];
        std::shuffle(films.begin(), films.end(), rng);
        films.resize(c.planted_train + 1);

        std::vector<EntityId> others;
        for (auto p : products)
            if (std::find(filmography[fav].begin(), filmography[fav].end(), p) == filmography[fav].end())
                others.push_back(p);
        std::shuffle(others.begin(), others.end(), rng);
        others.resize(n - films.size());

        // Train window: planted films mixed with random ones; then the rest
        // of the random films; the held-out film comes last.
        std::vector<EntityId> early(films.begin(), films.begin() + static_cast<std::ptrdiff_t>(c.planted_train));
        const std::size_t random_early = n_train > c.planted_train ? n_train - c.planted_train : 0;
        early.insert(early.end(), others.begin(), others.begin() + static_cast<std::ptrdiff_t>(std::min(random_early, others.size())));
        std::shuffle(early.begin(), early.end(), rng);
        std::vector<EntityId> order = early;
        order.insert(order.end(), others.begin() + static_cast<std::ptrdiff_t>(std::min(random_early, others.size())), others.end());
        order.push_back(films.back());

        std::int64_t ts = 1'000'000 + static_cast<std::int64_t>(u) * 10'000;
        for (auto p : order) {
            ts += 1 + static_cast<std::int64_t>(rng() % 100);
            d.interactions.push_back({users[u], p, ts});
        }
    }
    return d;
}

}  // namespace pearlm

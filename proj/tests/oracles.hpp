#pragma once

// Reference implementations written independently of the library code,
// on plain strings and standard containers.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "pearlm/data.hpp"

namespace oracle {

using NamedTriplet = std::tuple<std::string, std::string, std::string>;
using NamedInteraction = std::tuple<std::string, std::string, std::int64_t>;

struct NamedData {
    std::map<std::string, std::string> types;  // entity -> user|product|external
    std::set<NamedTriplet> kg;
    std::set<NamedInteraction> interactions;
    int rounds = 0;
};

inline NamedData to_named(const pearlm::Dataset& d) {
    NamedData n;
    for (std::size_t e = 0; e < d.num_entities(); ++e)
        n.types[d.entity_names[e]] = std::string(pearlm::to_string(d.entity_types[e]));
    for (const auto& t : d.kg_triplets)
        n.kg.insert({d.entity_names[t.head.index()], d.relation_names[t.relation.index()],
                     d.entity_names[t.tail.index()]});
    for (const auto& x : d.interactions)
        n.interactions.insert({d.entity_names[x.user.index()], d.entity_names[x.product.index()], x.timestamp});
    return n;
}

// Scripted filter: binarize, keep product->external triplets, then repeat
// {relation share, product-not-in-KG, product count, user count} until no
// rule fires.
inline NamedData iterative_filter(NamedData in, std::size_t min_count, double min_share) {
    std::map<std::pair<std::string, std::string>, std::int64_t> first;
    for (const auto& [u, p, ts] : in.interactions) {
        auto key = std::make_pair(u, p);
        auto it = first.find(key);
        if (it == first.end() || ts < it->second) first[key] = ts;
    }
    in.interactions.clear();
    for (const auto& [key, ts] : first) in.interactions.insert({key.first, key.second, ts});

    std::set<NamedTriplet> kept;
    for (const auto& t : in.kg)
        if (in.types[std::get<0>(t)] == "product" && in.types[std::get<2>(t)] == "external") kept.insert(t);
    in.kg = kept;

    bool changed = true;
    while (changed) {
        changed = false;
        ++in.rounds;

        std::map<std::string, int> rel;
        for (const auto& t : in.kg) rel[std::get<1>(t)]++;
        const double total = static_cast<double>(in.kg.size());
        for (auto it = in.kg.begin(); it != in.kg.end();) {
            if (rel[std::get<1>(*it)] < min_share * total) {
                it = in.kg.erase(it);
                changed = true;
            } else {
                ++it;
            }
        }

        std::set<std::string> in_kg;
        for (const auto& t : in.kg) in_kg.insert(std::get<0>(t)), in_kg.insert(std::get<2>(t));
        for (auto it = in.interactions.begin(); it != in.interactions.end();) {
            if (!in_kg.count(std::get<1>(*it))) {
                it = in.interactions.erase(it);
                changed = true;
            } else {
                ++it;
            }
        }

        std::map<std::string, std::size_t> pc;
        for (const auto& x : in.interactions) pc[std::get<1>(x)]++;
        std::set<std::string> bad_products;
        for (const auto& [name, type] : in.types)
            if (type == "product" && (pc.count(name) || in_kg.count(name)) && pc[name] < min_count)
                bad_products.insert(name);
        for (auto it = in.interactions.begin(); it != in.interactions.end();) {
            if (bad_products.count(std::get<1>(*it))) {
                it = in.interactions.erase(it);
                changed = true;
            } else {
                ++it;
            }
        }
        for (auto it = in.kg.begin(); it != in.kg.end();) {
            if (bad_products.count(std::get<0>(*it)) || bad_products.count(std::get<2>(*it))) {
                it = in.kg.erase(it);
                changed = true;
            } else {
                ++it;
            }
        }

        std::map<std::string, std::size_t> uc;
        for (const auto& x : in.interactions) uc[std::get<0>(x)]++;
        for (auto it = in.interactions.begin(); it != in.interactions.end();) {
            if (uc[std::get<0>(*it)] < min_count) {
                it = in.interactions.erase(it);
                changed = true;
            } else {
                ++it;
            }
        }
    }

    std::set<std::string> alive;
    for (const auto& t : in.kg) alive.insert(std::get<0>(t)), alive.insert(std::get<2>(t));
    for (const auto& x : in.interactions) alive.insert(std::get<0>(x)), alive.insert(std::get<1>(x));
    for (auto it = in.types.begin(); it != in.types.end();) it = alive.count(it->first) ? std::next(it) : in.types.erase(it);
    return in;
}

// 20 users, 12 products, two product-side relations plus a rare one, a
// user-headed and a product-product triplet, duplicate interactions, and
// activity levels around the threshold so the filter cascades.
inline pearlm::Dataset preprocessing_fixture(std::uint64_t seed = 5) {
    using namespace pearlm;
    Dataset d;
    auto add = [&](const std::string& name, EntityType t) {
        d.entity_names.push_back(name);
        d.entity_types.push_back(t);
        return EntityId(d.entity_names.size() - 1);
    };
    std::vector<EntityId> users, products, ext;
    for (int i = 0; i < 20; ++i) users.push_back(add("u" + std::to_string(i), EntityType::user));
    for (int i = 0; i < 12; ++i) products.push_back(add("p" + std::to_string(i), EntityType::product));
    for (int i = 0; i < 6; ++i) ext.push_back(add("x" + std::to_string(i), EntityType::external));
    d.relation_names = {"watched", "starred_by", "belongs_to", "rare_link", "friend_of", "sequel_of"};
    d.interaction = RelationId(0u);

    // p11 has no KG triplet.
    for (int i = 0; i < 11; ++i) {
        d.kg_triplets.push_back({products[i], RelationId(1u), ext[i % 3]});
        d.kg_triplets.push_back({products[i], RelationId(2u), ext[3 + i % 3]});
        if (i % 2 == 0) d.kg_triplets.push_back({products[i], RelationId(2u), ext[3 + (i + 1) % 3]});
    }
    d.kg_triplets.push_back({products[0], RelationId(3u), ext[0]});
    d.kg_triplets.push_back({users[0], RelationId(4u), ext[1]});
    d.kg_triplets.push_back({products[1], RelationId(5u), products[2]});

    std::mt19937_64 rng(seed);
    std::int64_t ts = 100;
    auto watch = [&](int u, int p) {
        ts += 1 + static_cast<std::int64_t>(rng() % 50);
        d.interactions.push_back({users[u], products[p], ts});
        if (rng() % 6 == 0) d.interactions.push_back({users[u], products[p], ts + 1000});
    };
    // Users 0..16 pick among p0..p8; popularity decays with the index.
    std::vector<double> weight;
    for (int i = 0; i < 9; ++i) weight.push_back(1.0 / (1.0 + 0.35 * i));
    std::discrete_distribution<int> pick(weight.begin(), weight.end());
    for (int u = 0; u < 17; ++u) {
        const int activity = 3 + (u * 5) % 7;
        std::set<int> chosen;
        while (static_cast<int>(chosen.size()) < activity) chosen.insert(pick(rng));
        for (int p : chosen) watch(u, p);
    }
    // Removal chain, one link per round at min_count 5:
    //   p11 (not in KG) -> u19 -> p10 -> u18 -> p9 -> u17
    for (int p : {11, 10, 0, 1, 2}) watch(19, p);
    for (int p : {10, 9, 0, 1, 2}) watch(18, p);
    for (int p : {9, 0, 1, 2, 3}) watch(17, p);
    for (int u : {1, 2, 3}) watch(u, 10);
    for (int u : {4, 5, 9}) watch(u, 9);
    return d;
}

}  // namespace oracle

#pragma once

// Raw interaction/KG loading, sparsity filtering and the chronological
// train/valid/test split.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "pearlm/kg.hpp"
#include "pearlm/tsv.hpp"

namespace pearlm {

struct Interaction {
    EntityId user;
    EntityId product;
    std::int64_t timestamp{0};

    friend auto operator<=>(const Interaction&, const Interaction&) = default;
};

// Interactions are kept apart from the item-side KG triplets; the training
// graph adds train interactions back as interaction-relation edges.
struct Dataset {
    std::vector<std::string> entity_names;
    std::vector<EntityType> entity_types;
    std::vector<std::string> relation_names;
    RelationId interaction;
    std::vector<Triplet> kg_triplets;
    std::vector<Interaction> interactions;

    std::size_t num_entities() const { return entity_types.size(); }
};

struct SplitDataset {
    std::vector<Interaction> train;
    std::vector<Interaction> valid;
    std::vector<Interaction> test;

    // Distinct train products per user, sorted.
    std::unordered_map<EntityId, std::vector<EntityId>> train_items() const {
        return group_by_user(train);
    }
    std::unordered_map<EntityId, std::vector<EntityId>> test_items() const { return group_by_user(test); }

    static std::unordered_map<EntityId, std::vector<EntityId>> group_by_user(const std::vector<Interaction>& xs) {
        std::unordered_map<EntityId, std::vector<EntityId>> out;
        for (const auto& x : xs) out[x.user].push_back(x.product);
        for (auto& [u, ps] : out) {
            std::sort(ps.begin(), ps.end());
            ps.erase(std::unique(ps.begin(), ps.end()), ps.end());
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Loading

struct DatasetFiles {
    std::string kg;            // head \t relation \t tail
    std::string entities;      // entity \t {user|product|external}
    std::string interactions;  // user \t product \t unix_timestamp
    std::string relations;     // optional: relation \t id
    std::string interaction_relation = "watched";
};

// Reads `user \t product \t timestamp` rows against the entity table of `d`.
inline std::vector<Interaction> load_interactions(const std::string& file, const Dataset& d) {
    std::unordered_map<std::string, std::uint32_t> ids;
    for (std::size_t e = 0; e < d.entity_names.size(); ++e) ids.emplace(d.entity_names[e], static_cast<std::uint32_t>(e));
    std::vector<Interaction> out;
    tsv::for_each_row(file, [&](const auto& f, std::size_t line) {
        const std::string where = file + ":" + std::to_string(line);
        if (f.size() != 3) throw DataError(where + ": expected 3 fields");
        auto entity = [&](std::string_view name) {
            auto it = ids.find(std::string(name));
            if (it == ids.end()) throw StructuralError(where + ": unknown entity '" + std::string(name) + "'");
            return EntityId(it->second);
        };
        Interaction x{entity(f[0]), entity(f[1]), tsv::parse_int<std::int64_t>(f[2], where)};
        if (x.timestamp < 0) throw DataError(where + ": negative timestamp");
        if (d.entity_types[x.user.index()] != EntityType::user)
            throw DataError(where + ": '" + std::string(f[0]) + "' is not a user");
        if (d.entity_types[x.product.index()] != EntityType::product)
            throw DataError(where + ": '" + std::string(f[1]) + "' is not a product");
        out.push_back(x);
    });
    return out;
}

inline Dataset load_dataset(const DatasetFiles& files) {
    Dataset d;
    std::unordered_map<std::string, std::uint32_t> entity_ids;
    tsv::for_each_row(files.entities, [&](const auto& f, std::size_t line) {
        if (f.size() != 2) throw DataError(files.entities + ":" + std::to_string(line) + ": expected 2 fields");
        std::string name(f[0]);
        if (!entity_ids.emplace(name, static_cast<std::uint32_t>(d.entity_names.size())).second)
            throw DataError(files.entities + ":" + std::to_string(line) + ": duplicate entity '" + name + "'");
        d.entity_names.push_back(name);
        d.entity_types.push_back(parse_entity_type(f[1]));
    });

    std::unordered_map<std::string, std::uint32_t> relation_ids;
    auto add_relation = [&](const std::string& name) {
        auto [it, inserted] = relation_ids.emplace(name, static_cast<std::uint32_t>(d.relation_names.size()));
        if (inserted) d.relation_names.push_back(name);
        return RelationId(it->second);
    };
    if (!files.relations.empty()) {
        std::vector<std::pair<std::uint32_t, std::string>> rows;
        tsv::for_each_row(files.relations, [&](const auto& f, std::size_t line) {
            if (f.size() != 2) throw DataError(files.relations + ":" + std::to_string(line) + ": expected 2 fields");
            rows.emplace_back(tsv::parse_int<std::uint32_t>(f[1], files.relations), std::string(f[0]));
        });
        std::sort(rows.begin(), rows.end());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].first != i) throw DataError(files.relations + ": relation ids must be contiguous from 0");
            add_relation(rows[i].second);
        }
    }

    auto entity = [&](std::string_view name, const std::string& where) {
        auto it = entity_ids.find(std::string(name));
        if (it == entity_ids.end()) throw StructuralError(where + ": unknown entity '" + std::string(name) + "'");
        return EntityId(it->second);
    };

    std::vector<std::array<std::string, 3>> raw_triplets;
    tsv::for_each_row(files.kg, [&](const auto& f, std::size_t line) {
        if (f.size() != 3) throw DataError(files.kg + ":" + std::to_string(line) + ": expected 3 fields");
        raw_triplets.push_back({std::string(f[0]), std::string(f[1]), std::string(f[2])});
        if (files.relations.empty()) add_relation(std::string(f[1]));
    });
    if (files.relations.empty()) d.interaction = add_relation(files.interaction_relation);
    auto rf = relation_ids.find(files.interaction_relation);
    if (rf == relation_ids.end())
        throw ConfigError("interaction relation '" + files.interaction_relation + "' not in relation file");
    d.interaction = RelationId(rf->second);

    for (const auto& [h, r, t] : raw_triplets) {
        auto rit = relation_ids.find(r);
        if (rit == relation_ids.end()) throw StructuralError(files.kg + ": unknown relation '" + r + "'");
        if (rit->second == d.interaction.value)
            throw DataError(files.kg + ": interaction triplets belong in the interaction file");
        d.kg_triplets.push_back({entity(h, files.kg), RelationId(rit->second), entity(t, files.kg)});
    }

    d.interactions = load_interactions(files.interactions, d);
    return d;
}

// ---------------------------------------------------------------------------
// Preprocessing

struct PreprocessConfig {
    std::size_t min_count = 5;
    double min_relation_share = 0.03;
    // Keep only product -> external triplets on the item side.
    bool product_headed_only = true;
};

struct PreprocessStats {
    std::size_t rounds{0};
    std::size_t duplicate_interactions{0};
    std::size_t dropped_relations{0};
    std::size_t dropped_products{0};
    std::size_t dropped_users{0};
};

namespace detail {

// Keep the earliest (user, product) interaction: feedback is binary.
inline std::vector<Interaction> binarize(std::vector<Interaction> xs, std::size_t* removed) {
    std::sort(xs.begin(), xs.end(), [](const Interaction& a, const Interaction& b) {
        return std::tie(a.user, a.product, a.timestamp) < std::tie(b.user, b.product, b.timestamp);
    });
    std::vector<Interaction> out;
    for (const auto& x : xs)
        if (out.empty() || out.back().user != x.user || out.back().product != x.product) out.push_back(x);
    if (removed) *removed = xs.size() - out.size();
    return out;
}

}  // namespace detail

// One round: relation share, KG presence, product count, user count.
// Returns true when anything was removed.
inline bool preprocess_round(Dataset& d, const PreprocessConfig& cfg, PreprocessStats& stats) {
    bool changed = false;

    std::map<RelationId, std::size_t> rel_count;
    for (const auto& t : d.kg_triplets) ++rel_count[t.relation];
    const double threshold = cfg.min_relation_share * static_cast<double>(d.kg_triplets.size());
    std::set<RelationId> dropped;
    for (auto [r, c] : rel_count)
        if (static_cast<double>(c) < threshold) dropped.insert(r);
    if (!dropped.empty()) {
        std::erase_if(d.kg_triplets, [&](const Triplet& t) { return dropped.count(t.relation) > 0; });
        stats.dropped_relations += dropped.size();
        changed = true;
    }

    std::vector<char> in_kg(d.num_entities(), 0);
    for (const auto& t : d.kg_triplets) in_kg[t.head.index()] = in_kg[t.tail.index()] = 1;
    const auto before_absent = d.interactions.size();
    std::erase_if(d.interactions, [&](const Interaction& x) { return !in_kg[x.product.index()]; });
    changed |= d.interactions.size() != before_absent;

    std::vector<std::size_t> count(d.num_entities(), 0);
    for (const auto& x : d.interactions) ++count[x.product.index()];
    std::vector<char> drop_product(d.num_entities(), 0);
    for (std::size_t e = 0; e < d.num_entities(); ++e) {
        if (d.entity_types[e] != EntityType::product) continue;
        if (count[e] < cfg.min_count && (count[e] > 0 || in_kg[e])) {
            drop_product[e] = 1;
            ++stats.dropped_products;
        }
    }
    const auto before_products = d.interactions.size() + d.kg_triplets.size();
    std::erase_if(d.interactions, [&](const Interaction& x) { return drop_product[x.product.index()] != 0; });
    std::erase_if(d.kg_triplets, [&](const Triplet& t) {
        return drop_product[t.head.index()] != 0 || drop_product[t.tail.index()] != 0;
    });
    changed |= d.interactions.size() + d.kg_triplets.size() != before_products;

    std::fill(count.begin(), count.end(), 0);
    for (const auto& x : d.interactions) ++count[x.user.index()];
    const auto before_users = d.interactions.size();
    std::erase_if(d.interactions, [&](const Interaction& x) { return count[x.user.index()] < cfg.min_count; });
    if (d.interactions.size() != before_users) {
        for (std::size_t e = 0; e < d.num_entities(); ++e)
            if (d.entity_types[e] == EntityType::user && count[e] > 0 && count[e] < cfg.min_count)
                ++stats.dropped_users;
        changed = true;
    }
    return changed;
}

// Drops entities and relations no longer referenced and re-numbers the rest
// in their original relative order.
inline Dataset compact(const Dataset& d) {
    std::vector<char> keep(d.num_entities(), 0);
    for (const auto& t : d.kg_triplets) keep[t.head.index()] = keep[t.tail.index()] = 1;
    for (const auto& x : d.interactions) keep[x.user.index()] = keep[x.product.index()] = 1;

    Dataset out;
    std::vector<std::uint32_t> emap(d.num_entities(), UINT32_MAX);
    for (std::size_t e = 0; e < d.num_entities(); ++e) {
        if (!keep[e]) continue;
        emap[e] = static_cast<std::uint32_t>(out.entity_names.size());
        out.entity_names.push_back(d.entity_names[e]);
        out.entity_types.push_back(d.entity_types[e]);
    }
    std::vector<char> rel_used(d.relation_names.size(), 0);
    for (const auto& t : d.kg_triplets) rel_used[t.relation.index()] = 1;
    rel_used[d.interaction.index()] = 1;
    std::vector<std::uint32_t> rmap(d.relation_names.size(), UINT32_MAX);
    for (std::size_t r = 0; r < d.relation_names.size(); ++r) {
        if (!rel_used[r]) continue;
        rmap[r] = static_cast<std::uint32_t>(out.relation_names.size());
        out.relation_names.push_back(d.relation_names[r]);
    }
    out.interaction = RelationId(rmap[d.interaction.index()]);
    for (const auto& t : d.kg_triplets)
        out.kg_triplets.push_back({EntityId(emap[t.head.index()]), RelationId(rmap[t.relation.index()]),
                                   EntityId(emap[t.tail.index()])});
    for (const auto& x : d.interactions)
        out.interactions.push_back({EntityId(emap[x.user.index()]), EntityId(emap[x.product.index()]), x.timestamp});
    std::sort(out.kg_triplets.begin(), out.kg_triplets.end());
    std::sort(out.interactions.begin(), out.interactions.end());
    return out;
}

inline Dataset preprocess(const Dataset& input, const PreprocessConfig& cfg = {}, PreprocessStats* stats_out = nullptr) {
    PreprocessStats stats;
    Dataset d = input;
    d.interactions = detail::binarize(std::move(d.interactions), &stats.duplicate_interactions);

    if (cfg.product_headed_only) {
        std::erase_if(d.kg_triplets, [&](const Triplet& t) {
            return d.entity_types[t.head.index()] != EntityType::product ||
                   d.entity_types[t.tail.index()] != EntityType::external;
        });
    }
    std::sort(d.kg_triplets.begin(), d.kg_triplets.end());
    d.kg_triplets.erase(std::unique(d.kg_triplets.begin(), d.kg_triplets.end()), d.kg_triplets.end());

    do {
        ++stats.rounds;
        if (d.kg_triplets.empty())
            throw DataError("preprocessing removed every KG triplet (min_relation_share=" +
                            tsv::fixed(cfg.min_relation_share, 4) + ")");
    } while (preprocess_round(d, cfg, stats) && !d.interactions.empty() && !d.kg_triplets.empty());

    if (d.interactions.empty())
        throw DataError("preprocessing removed every interaction (min_count=" + std::to_string(cfg.min_count) + ")");
    if (d.kg_triplets.empty())
        throw DataError("preprocessing removed every KG triplet (min_relation_share=" +
                        tsv::fixed(cfg.min_relation_share, 4) + ")");
    if (stats_out) *stats_out = stats;
    return compact(d);
}

// ---------------------------------------------------------------------------
// Chronological split

inline SplitDataset chrono_split(const std::vector<Interaction>& interactions,
                                 std::array<double, 3> ratios = {0.6, 0.2, 0.2}) {
    for (double r : ratios)
        if (r < 0.0) throw ConfigError("split ratios must be non-negative");
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");

    std::map<EntityId, std::vector<Interaction>> per_user;
    for (const auto& x : interactions) per_user[x.user].push_back(x);

    SplitDataset out;
    constexpr double kSlack = 1e-9;
    for (auto& [user, xs] : per_user) {
        std::sort(xs.begin(), xs.end(), [](const Interaction& a, const Interaction& b) {
            return std::tie(a.timestamp, a.product) < std::tie(b.timestamp, b.product);
        });
        const double n = static_cast<double>(xs.size());
        auto n_train = static_cast<std::size_t>(std::floor(ratios[0] * n + kSlack));
        auto n_valid_end = static_cast<std::size_t>(std::floor((ratios[0] + ratios[1]) * n + kSlack));
        n_train = std::max<std::size_t>(n_train, 1);
        n_valid_end = std::clamp(n_valid_end, n_train, xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            auto& bucket = i < n_train ? out.train : (i < n_valid_end ? out.valid : out.test);
            bucket.push_back(xs[i]);
        }
    }
    return out;
}

// Item-side KG plus the given interactions as interaction-relation edges.
inline KnowledgeGraph build_training_graph(const Dataset& d, const std::vector<Interaction>& train,
                                           GraphBuildStats* stats = nullptr) {
    std::vector<Triplet> triplets = d.kg_triplets;
    for (const auto& x : train) triplets.push_back({x.user, d.interaction, x.product});
    GraphSchema schema{d.entity_types, d.entity_names, d.relation_names, d.interaction};
    return build_graph(triplets, std::move(schema), stats);
}

// ---------------------------------------------------------------------------
// Dataset statistics in the layout of a typical dataset table.

struct DatasetSummary {
    std::size_t users{0};
    std::size_t products{0};
    std::size_t interactions{0};
    double density{0.0};
    std::size_t kg_entities{0};
    std::size_t kg_entity_types{0};
    std::size_t kg_triplets{0};
    std::size_t kg_relation_types{0};
    double sparsity{0.0};
    double avg_degree{0.0};
    double avg_product_degree{0.0};
};

inline DatasetSummary summarize(const Dataset& d) {
    DatasetSummary s;
    std::set<EntityId> users, products, kg_entities, kg_products;
    std::set<EntityType> types;
    std::set<RelationId> rels;
    for (const auto& x : d.interactions) {
        users.insert(x.user);
        products.insert(x.product);
    }
    std::size_t product_degree = 0;
    for (const auto& t : d.kg_triplets) {
        for (auto e : {t.head, t.tail}) {
            kg_entities.insert(e);
            types.insert(d.entity_types[e.index()]);
            if (d.entity_types[e.index()] == EntityType::product) {
                kg_products.insert(e);
                ++product_degree;
            }
        }
        rels.insert(t.relation);
    }
    s.users = users.size();
    s.products = products.size();
    s.interactions = d.interactions.size();
    if (s.users && s.products)
        s.density = static_cast<double>(s.interactions) / (static_cast<double>(s.users) * static_cast<double>(s.products));
    s.kg_entities = kg_entities.size();
    s.kg_entity_types = types.size();
    s.kg_triplets = d.kg_triplets.size();
    s.kg_relation_types = rels.size();
    const double ne = static_cast<double>(s.kg_entities);
    if (s.kg_entities > 1) s.sparsity = static_cast<double>(s.kg_triplets) / (ne * (ne - 1.0));
    if (s.kg_entities) s.avg_degree = 2.0 * static_cast<double>(s.kg_triplets) / ne;
    if (!kg_products.empty())
        s.avg_product_degree = static_cast<double>(product_degree) / static_cast<double>(kg_products.size());
    return s;
}

inline std::string format_summary(const DatasetSummary& s) {
    std::ostringstream o;
    o << "Interaction Information\n"
      << "Users\t" << s.users << "\n"
      << "Products\t" << s.products << "\n"
      << "Interactions\t" << s.interactions << "\n"
      << "Density\t" << tsv::fixed(s.density, 4) << "\n"
      << "Knowledge Information\n"
      << "Entities (Types)\t" << s.kg_entities << " (" << s.kg_entity_types << ")\n"
      << "Relations (Types)\t" << s.kg_triplets << " (" << s.kg_relation_types << ")\n"
      << "Sparsity\t" << tsv::fixed(s.sparsity, 4) << "\n"
      << "Avg. Degree Overall\t" << tsv::fixed(s.avg_degree, 2) << "\n"
      << "Avg. Degree Products\t" << tsv::fixed(s.avg_product_degree, 2) << "\n";
    return o.str();
}

// ---------------------------------------------------------------------------
// Writers for the preprocessed/split artifacts.

inline std::string format_entities(const Dataset& d) {
    std::string out;
    for (std::size_t e = 0; e < d.num_entities(); ++e)
        out += d.entity_names[e] + "\t" + std::string(to_string(d.entity_types[e])) + "\n";
    return out;
}

inline std::string format_relations(const Dataset& d) {
    std::string out;
    for (std::size_t r = 0; r < d.relation_names.size(); ++r)
        out += d.relation_names[r] + "\t" + std::to_string(r) + "\n";
    return out;
}

inline std::string format_triplets(const Dataset& d) {
    std::string out;
    for (const auto& t : d.kg_triplets)
        out += d.entity_names[t.head.index()] + "\t" + d.relation_names[t.relation.index()] + "\t" +
               d.entity_names[t.tail.index()] + "\n";
    return out;
}

inline std::string format_interactions(const Dataset& d, const std::vector<Interaction>& xs) {
    std::string out;
    for (const auto& x : xs)
        out += d.entity_names[x.user.index()] + "\t" + d.entity_names[x.product.index()] + "\t" +
               std::to_string(x.timestamp) + "\n";
    return out;
}

}  // namespace pearlm

#pragma once

// In-memory knowledge graph with typed entities and inverse-closed relations.
//
// Every base relation r in [0, B) gets a synthesized inverse r + B. The
// adjacency is stored CSR-style: for each entity the sorted list of usable
// relations, and for each (entity, relation) slot the sorted tail list.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pearlm/common.hpp"

namespace pearlm {

enum class EntityType : std::uint8_t { user, product, external };

inline std::string_view to_string(EntityType t) {
    switch (t) {
        case EntityType::user: return "user";
        case EntityType::product: return "product";
        case EntityType::external: return "external";
    }
    return "external";
}

inline EntityType parse_entity_type(std::string_view s) {
    if (s == "user") return EntityType::user;
    if (s == "product") return EntityType::product;
    if (s == "external") return EntityType::external;
    throw DataError("unknown entity type '" + std::string(s) + "'");
}

struct Triplet {
    EntityId head;
    RelationId relation;
    EntityId tail;

    friend auto operator<=>(const Triplet&, const Triplet&) = default;
};

// Alternating path e_0 r_1 e_1 ... r_N e_N.
struct Path {
    std::vector<EntityId> entities;
    std::vector<RelationId> relations;

    std::size_t hops() const { return relations.size(); }
    std::size_t token_length() const { return entities.size() + relations.size(); }

    friend bool operator==(const Path&, const Path&) = default;
    friend auto operator<=>(const Path&, const Path&) = default;
};

struct PathValidation {
    bool valid{true};
    // 1-based index of the first hop whose triplet is missing.
    std::optional<std::size_t> first_invalid_hop;
};

struct GraphSchema {
    std::vector<EntityType> entity_types;
    // Optional display names; defaults are "e<i>" and "r<i>".
    std::vector<std::string> entity_names;
    // Names of the base relations. Its size fixes the number of base
    // relations when non-empty.
    std::vector<std::string> relation_names;
    RelationId interaction;
};

struct GraphBuildStats {
    std::size_t input_triplets{0};
    std::size_t duplicates_removed{0};
};

inline constexpr std::string_view kInverseSuffix = "⁻¹";

class KnowledgeGraph {
public:
    std::size_t num_entities() const { return entity_types_.size(); }
    std::size_t num_base_relations() const { return base_relations_; }
    std::size_t num_relations() const { return 2 * base_relations_; }
    std::size_t num_triplets() const { return triplets_.size(); }

    EntityType entity_type(EntityId e) const { return entity_types_[e.index()]; }
    std::span<const EntityType> entity_types() const { return entity_types_; }

    RelationId interaction_relation() const { return interaction_; }
    bool is_inverse(RelationId r) const { return r.index() >= base_relations_; }
    RelationId inverse(RelationId r) const {
        return is_inverse(r) ? RelationId(r.index() - base_relations_)
                             : RelationId(r.index() + base_relations_);
    }
    RelationId base_of(RelationId r) const { return is_inverse(r) ? inverse(r) : r; }

    // Base triplets, sorted and unique.
    std::span<const Triplet> triplets() const { return triplets_; }

    // Relations with at least one outgoing edge from e (sorted).
    std::span<const RelationId> relations_from(EntityId e) const {
        return {slot_relation_.data() + entity_offset_[e.index()],
                slot_relation_.data() + entity_offset_[e.index() + 1]};
    }

    std::span<const EntityId> neighbors(EntityId e, RelationId r) const {
        auto slot = find_slot(e, r);
        if (!slot) return {};
        return {tails_.data() + slot_offset_[*slot], tails_.data() + slot_offset_[*slot + 1]};
    }

    bool has_edge(EntityId h, RelationId r, EntityId t) const {
        if (h.index() >= num_entities() || t.index() >= num_entities() ||
            r.index() >= num_relations())
            return false;
        auto n = neighbors(h, r);
        return std::binary_search(n.begin(), n.end(), t);
    }

    // Entities of a given type in ascending id order.
    std::vector<EntityId> entities_of_type(EntityType t) const {
        std::vector<EntityId> out;
        for (std::size_t i = 0; i < entity_types_.size(); ++i)
            if (entity_types_[i] == t) out.emplace_back(i);
        return out;
    }

    const std::string& entity_name(EntityId e) const { return entity_names_[e.index()]; }
    std::string relation_name(RelationId r) const {
        if (is_inverse(r)) return relation_names_[r.index() - base_relations_] + std::string(kInverseSuffix);
        return relation_names_[r.index()];
    }
    std::span<const std::string> base_relation_names() const { return relation_names_; }

    std::optional<EntityId> find_entity(std::string_view name) const {
        auto it = entity_lookup_.find(std::string(name));
        if (it == entity_lookup_.end()) return std::nullopt;
        return EntityId(it->second);
    }
    std::optional<RelationId> find_relation(std::string_view name) const {
        std::string key(name);
        bool inv = false;
        if (key.size() > kInverseSuffix.size() &&
            key.compare(key.size() - kInverseSuffix.size(), kInverseSuffix.size(), kInverseSuffix) == 0) {
            key.resize(key.size() - kInverseSuffix.size());
            inv = true;
        }
        auto it = relation_lookup_.find(key);
        if (it == relation_lookup_.end()) return std::nullopt;
        RelationId r(it->second);
        return inv ? inverse(r) : r;
    }

    // Raw index arrays, exposed for determinism checks.
    std::span<const std::size_t> entity_offsets() const { return entity_offset_; }
    std::span<const std::size_t> slot_offsets() const { return slot_offset_; }
    std::span<const EntityId> tail_array() const { return tails_; }
    std::span<const RelationId> slot_relations() const { return slot_relation_; }

private:
    friend KnowledgeGraph build_graph(std::span<const Triplet>, GraphSchema, GraphBuildStats*);

    std::optional<std::size_t> find_slot(EntityId e, RelationId r) const {
        if (e.index() >= num_entities()) return std::nullopt;
        auto first = slot_relation_.begin() + static_cast<std::ptrdiff_t>(entity_offset_[e.index()]);
        auto last = slot_relation_.begin() + static_cast<std::ptrdiff_t>(entity_offset_[e.index() + 1]);
        auto it = std::lower_bound(first, last, r);
        if (it == last || *it != r) return std::nullopt;
        return static_cast<std::size_t>(it - slot_relation_.begin());
    }

    std::vector<EntityType> entity_types_;
    std::vector<std::string> entity_names_;
    std::vector<std::string> relation_names_;
    std::unordered_map<std::string, std::uint32_t> entity_lookup_;
    std::unordered_map<std::string, std::uint32_t> relation_lookup_;
    std::size_t base_relations_{0};
    RelationId interaction_;
    std::vector<Triplet> triplets_;

    std::vector<std::size_t> entity_offset_;  // entity -> first slot
    std::vector<RelationId> slot_relation_;   // slot -> relation
    std::vector<std::size_t> slot_offset_;    // slot -> first tail
    std::vector<EntityId> tails_;
};

inline KnowledgeGraph build_graph(std::span<const Triplet> input, GraphSchema schema,
                                  GraphBuildStats* stats = nullptr) {
    if (input.empty()) throw StructuralError("empty graph");

    const std::size_t n_entities = schema.entity_types.size();
    std::size_t n_base = schema.relation_names.size();
    if (n_base == 0) {
        for (const auto& t : input) n_base = std::max(n_base, t.relation.index() + 1);
        n_base = std::max(n_base, schema.interaction.index() + 1);
    }

    for (const auto& t : input) {
        if (t.head.index() >= n_entities || t.tail.index() >= n_entities)
            throw StructuralError("unknown entity " +
                                  std::to_string(std::max(t.head.value, t.tail.value)) + " in triplet");
        if (t.relation.index() >= n_base)
            throw StructuralError("unknown relation " + std::to_string(t.relation.value) + " in triplet");
    }
    if (schema.interaction.index() >= n_base) throw StructuralError("interaction relation out of range");

    KnowledgeGraph g;
    g.base_relations_ = n_base;
    g.interaction_ = schema.interaction;
    g.entity_types_ = std::move(schema.entity_types);

    g.entity_names_ = std::move(schema.entity_names);
    if (g.entity_names_.empty()) {
        g.entity_names_.reserve(n_entities);
        for (std::size_t i = 0; i < n_entities; ++i) g.entity_names_.push_back("e" + std::to_string(i));
    } else if (g.entity_names_.size() != n_entities) {
        throw StructuralError("entity name table does not match entity type table");
    }
    g.relation_names_ = std::move(schema.relation_names);
    if (g.relation_names_.empty())
        for (std::size_t i = 0; i < n_base; ++i) g.relation_names_.push_back("r" + std::to_string(i));

    for (std::size_t i = 0; i < n_entities; ++i)
        if (!g.entity_lookup_.emplace(g.entity_names_[i], static_cast<std::uint32_t>(i)).second)
            throw StructuralError("duplicate entity name '" + g.entity_names_[i] + "'");
    for (std::size_t i = 0; i < n_base; ++i) {
        const auto& name = g.relation_names_[i];
        if (g.entity_lookup_.count(name))
            throw StructuralError("relation name '" + name + "' collides with an entity name");
        if (!g.relation_lookup_.emplace(name, static_cast<std::uint32_t>(i)).second)
            throw StructuralError("duplicate relation name '" + name + "'");
    }

    g.triplets_.assign(input.begin(), input.end());
    std::sort(g.triplets_.begin(), g.triplets_.end());
    g.triplets_.erase(std::unique(g.triplets_.begin(), g.triplets_.end()), g.triplets_.end());
    if (stats) {
        stats->input_triplets = input.size();
        stats->duplicates_removed = input.size() - g.triplets_.size();
    }

    bool has_interaction = false;
    for (const auto& t : g.triplets_) {
        if (t.relation != g.interaction_) continue;
        has_interaction = true;
        if (g.entity_types_[t.head.index()] != EntityType::user ||
            g.entity_types_[t.tail.index()] != EntityType::product)
            throw StructuralError("interaction relation must connect user to product (" +
                                  g.entity_names_[t.head.index()] + " -> " +
                                  g.entity_names_[t.tail.index()] + ")");
    }
    if (!has_interaction) throw StructuralError("interaction relation has no triplets");

    std::vector<Triplet> edges;
    edges.reserve(2 * g.triplets_.size());
    for (const auto& t : g.triplets_) {
        edges.push_back(t);
        edges.push_back({t.tail, g.inverse(t.relation), t.head});
    }
    std::sort(edges.begin(), edges.end());

    g.entity_offset_.assign(n_entities + 1, 0);
    g.tails_.reserve(edges.size());
    std::size_t i = 0;
    for (std::size_t e = 0; e < n_entities; ++e) {
        g.entity_offset_[e] = g.slot_relation_.size();
        while (i < edges.size() && edges[i].head.index() == e) {
            const RelationId r = edges[i].relation;
            g.slot_relation_.push_back(r);
            g.slot_offset_.push_back(g.tails_.size());
            while (i < edges.size() && edges[i].head.index() == e && edges[i].relation == r)
                g.tails_.push_back(edges[i++].tail);
        }
    }
    g.entity_offset_[n_entities] = g.slot_relation_.size();
    g.slot_offset_.push_back(g.tails_.size());
    return g;
}

// Convenience form with generated names and an inferred relation count.
inline KnowledgeGraph build_graph(std::span<const Triplet> triplets, std::vector<EntityType> entity_types,
                                  RelationId interaction, GraphBuildStats* stats = nullptr) {
    GraphSchema schema;
    schema.entity_types = std::move(entity_types);
    schema.interaction = interaction;
    return build_graph(triplets, std::move(schema), stats);
}

inline PathValidation validate_path(const KnowledgeGraph& g, const Path& p) {
    if (p.entities.size() != p.relations.size() + 1)
        throw StructuralError("malformed path: " + std::to_string(p.entities.size()) + " entities for " +
                              std::to_string(p.relations.size()) + " relations");
    for (auto e : p.entities)
        if (e.index() >= g.num_entities()) throw StructuralError("path entity id out of range");
    for (auto r : p.relations)
        if (r.index() >= g.num_relations()) throw StructuralError("path relation id out of range");

    for (std::size_t hop = 1; hop <= p.hops(); ++hop) {
        if (!g.has_edge(p.entities[hop - 1], p.relations[hop - 1], p.entities[hop]))
            return {false, hop};
    }
    return {};
}

// Space-separated token rendering, e.g. "U1 watched P7 starred_by A2".
inline std::string format_path(const KnowledgeGraph& g, const Path& p) {
    std::string out;
    for (std::size_t i = 0; i < p.entities.size(); ++i) {
        if (i > 0) {
            out += ' ';
            out += g.relation_name(p.relations[i - 1]);
            out += ' ';
        }
        out += g.entity_name(p.entities[i]);
    }
    return out;
}

}  // namespace pearlm

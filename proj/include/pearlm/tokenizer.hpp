#pragma once

// Word-level vocabulary over KG elements: one token per entity and per
// relation (inverses included), plus <bos>, <eos> and <pad>.
//
// Id layout: specials [0, 3), entities [3, 3 + |E|), relations after that.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pearlm/kg.hpp"
#include "pearlm/tsv.hpp"

namespace pearlm {

enum class TokenType : std::uint8_t { entity = 0, relation = 1, special = 2 };

inline constexpr std::size_t kNumTokenTypes = 3;

inline std::string_view to_string(TokenType t) {
    switch (t) {
        case TokenType::entity: return "entity";
        case TokenType::relation: return "relation";
        case TokenType::special: return "special";
    }
    return "special";
}

struct TokenSequence {
    std::vector<TokenId> ids;
    std::vector<TokenType> types;
    std::vector<std::uint32_t> positions;

    std::size_t size() const { return ids.size(); }
    void push_back(TokenId id, TokenType type) {
        positions.push_back(static_cast<std::uint32_t>(ids.size()));
        ids.push_back(id);
        types.push_back(type);
    }
    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

class Vocabulary {
public:
    static constexpr TokenId bos{0u};
    static constexpr TokenId eos{1u};
    static constexpr TokenId pad{2u};
    static constexpr std::size_t kNumSpecials = 3;

    Vocabulary() = default;
    Vocabulary(std::vector<std::string> entity_tokens, std::vector<std::string> relation_tokens) {
        tokens_ = {"<bos>", "<eos>", "<pad>"};
        num_entities_ = entity_tokens.size();
        num_relations_ = relation_tokens.size();
        for (auto& t : entity_tokens) tokens_.push_back(std::move(t));
        for (auto& t : relation_tokens) tokens_.push_back(std::move(t));
        for (std::size_t i = 0; i < tokens_.size(); ++i)
            if (!lookup_.emplace(tokens_[i], static_cast<std::uint32_t>(i)).second)
                throw StructuralError("duplicate vocabulary token '" + tokens_[i] + "'");
    }

    std::size_t size() const { return tokens_.size(); }
    std::size_t num_entities() const { return num_entities_; }
    std::size_t num_relations() const { return num_relations_; }

    const std::string& token(TokenId id) const { return tokens_.at(id.index()); }
    TokenType type(TokenId id) const {
        if (id.index() < kNumSpecials) return TokenType::special;
        if (id.index() < kNumSpecials + num_entities_) return TokenType::entity;
        return TokenType::relation;
    }

    std::optional<TokenId> find(std::string_view s) const {
        auto it = lookup_.find(std::string(s));
        if (it == lookup_.end()) return std::nullopt;
        return TokenId(it->second);
    }

    TokenId entity_token(EntityId e) const { return TokenId(kNumSpecials + e.index()); }
    TokenId relation_token(RelationId r) const { return TokenId(kNumSpecials + num_entities_ + r.index()); }
    EntityId entity_of(TokenId t) const { return EntityId(t.index() - kNumSpecials); }
    RelationId relation_of(TokenId t) const { return RelationId(t.index() - kNumSpecials - num_entities_); }

    // token \t id \t type, one per line.
    std::string serialize() const {
        std::string out;
        for (std::size_t i = 0; i < tokens_.size(); ++i)
            out += tokens_[i] + "\t" + std::to_string(i) + "\t" +
                   std::string(to_string(type(TokenId(i)))) + "\n";
        return out;
    }

    std::uint64_t fingerprint() const { return fnv1a(serialize()); }

    static Vocabulary parse(std::string_view text) {
        std::vector<std::string> entities, relations;
        std::size_t expected = 0;
        for (auto line : tsv::split(text, '\n')) {
            if (line.empty() || line[0] == '#') continue;
            auto f = tsv::split(line);
            if (f.size() != 3) throw DataError("vocabulary: expected 3 fields");
            if (tsv::parse_int<std::size_t>(f[1], "vocabulary") != expected++)
                throw DataError("vocabulary: ids must be contiguous from 0");
            const std::size_t id = expected - 1;
            if (id < kNumSpecials) {
                if (f[2] != "special") throw DataError("vocabulary: first three tokens must be specials");
            } else if (f[2] == "entity") {
                if (!relations.empty()) throw DataError("vocabulary: entity after relation");
                entities.emplace_back(f[0]);
            } else if (f[2] == "relation") {
                relations.emplace_back(f[0]);
            } else {
                throw DataError("vocabulary: unexpected token type '" + std::string(f[2]) + "'");
            }
        }
        if (expected < kNumSpecials) throw DataError("vocabulary: missing special tokens");
        return Vocabulary(std::move(entities), std::move(relations));
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::uint32_t> lookup_;
    std::size_t num_entities_{0};
    std::size_t num_relations_{0};
};

inline Vocabulary build_vocab(const KnowledgeGraph& kg) {
    std::vector<std::string> entities, relations;
    entities.reserve(kg.num_entities());
    for (std::size_t e = 0; e < kg.num_entities(); ++e) entities.push_back(kg.entity_name(EntityId(e)));
    for (std::size_t r = 0; r < kg.num_relations(); ++r) relations.push_back(kg.relation_name(RelationId(r)));
    return Vocabulary(std::move(entities), std::move(relations));
}

// Wraps the path in <bos> ... <eos>. max_hops = 0 disables the length check.
inline TokenSequence encode(const Vocabulary& v, const Path& p, std::size_t max_hops = 0) {
    if (!p.entities.empty() && p.entities.size() != p.relations.size() + 1)
        throw StructuralError("cannot encode malformed path");
    if (max_hops && p.hops() > max_hops)
        throw StructuralError("path has " + std::to_string(p.hops()) + " hops, limit is " + std::to_string(max_hops));
    TokenSequence s;
    s.push_back(Vocabulary::bos, TokenType::special);
    for (std::size_t i = 0; i < p.entities.size(); ++i) {
        if (p.entities[i].index() >= v.num_entities()) throw StructuralError("entity id outside vocabulary");
        if (i > 0) {
            if (p.relations[i - 1].index() >= v.num_relations()) throw StructuralError("relation id outside vocabulary");
            s.push_back(v.relation_token(p.relations[i - 1]), TokenType::relation);
        }
        s.push_back(v.entity_token(p.entities[i]), TokenType::entity);
    }
    s.push_back(Vocabulary::eos, TokenType::special);
    return s;
}

// Token strings (no specials) to a wrapped sequence; unknown tokens are named.
inline TokenSequence encode_tokens(const Vocabulary& v, std::span<const std::string> tokens) {
    TokenSequence s;
    s.push_back(Vocabulary::bos, TokenType::special);
    for (const auto& t : tokens) {
        auto id = v.find(t);
        if (!id) throw StructuralError("unknown token '" + t + "'");
        s.push_back(*id, v.type(*id));
    }
    s.push_back(Vocabulary::eos, TokenType::special);
    return s;
}

// Inverse of encode: strips <bos>/<eos> and checks the alternation.
inline Path decode(const Vocabulary& v, std::span<const TokenId> ids) {
    std::size_t begin = 0, end = ids.size();
    if (begin < end && ids[begin] == Vocabulary::bos) ++begin;
    if (end > begin && ids[end - 1] == Vocabulary::eos) --end;
    Path p;
    for (std::size_t i = begin; i < end; ++i) {
        const TokenId id = ids[i];
        if (id.index() >= v.size()) throw StructuralError("token id " + std::to_string(id.value) + " outside vocabulary");
        const bool want_entity = (i - begin) % 2 == 0;
        const TokenType t = v.type(id);
        if (want_entity && t == TokenType::entity) {
            p.entities.push_back(v.entity_of(id));
        } else if (!want_entity && t == TokenType::relation) {
            p.relations.push_back(v.relation_of(id));
        } else {
            throw StructuralError("token '" + v.token(id) + "' breaks entity/relation alternation at position " +
                                  std::to_string(i - begin));
        }
    }
    if (!p.entities.empty() && p.entities.size() != p.relations.size() + 1)
        throw StructuralError("sequence ends on a relation");
    return p;
}

inline Path decode(const Vocabulary& v, const TokenSequence& s) { return decode(v, std::span<const TokenId>(s.ids)); }

}  // namespace pearlm

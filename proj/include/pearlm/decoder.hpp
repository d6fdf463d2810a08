#pragma once

// Graph-constrained decoding.
//
// Starting from the prompt <bos> user r_f, tokens that cannot extend the
// current prefix into a KG path are masked to -inf before every expansion,
// so every completed sequence is a valid path ending at a product the user
// has not interacted with in train. Search is grouped diverse beam search;
// sequences are ranked by the mean model probability of their generated
// tokens.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <thread>
#include <unordered_map>
#include <vector>

#include "pearlm/kg.hpp"
#include "pearlm/model.hpp"
#include "pearlm/tokenizer.hpp"

namespace pearlm {

enum class ScoreMode { mean_probability, mean_log_probability };

struct DecodeConfig {
    std::size_t n_beams = 30;
    std::size_t n_groups = 5;
    double diversity_penalty = 0.3;
    std::size_t n_sequences = 100;
    std::size_t top_n = 10;
    std::size_t hops = 3;
    std::uint64_t seed = 0;
    bool graph_constraint = true;
    bool users_mid_path = false;
    ScoreMode score_mode = ScoreMode::mean_probability;
    unsigned threads = 1;

    std::size_t group_size() const { return n_beams / n_groups; }

    void validate() const {
        if (n_groups == 0 || n_beams == 0 || n_beams % n_groups != 0)
            throw ConfigError("n_beams must be a positive multiple of n_groups");
        if (top_n > n_sequences) throw ConfigError("top_n must not exceed n_sequences");
        if (n_sequences < n_groups) throw ConfigError("n_sequences must be >= n_groups");
        if (hops < 1) throw ConfigError("decoder hops must be >= 1");
    }
};

// Decoding state for one hypothesis: interior tokens emitted so far
// (user first, no <bos>).
struct ConstraintState {
    std::vector<TokenId> prefix;
    std::size_t hops = 3;
    // Sorted train products of the user; excluded as terminal entities.
    std::span<const EntityId> excluded;
    bool users_mid_path = false;

    std::size_t interior_length() const { return 2 * hops + 1; }
    bool complete() const { return prefix.size() == interior_length(); }
    bool at_terminal() const { return prefix.size() == 2 * hops; }
    std::size_t remaining_hops() const {
        const std::size_t done = prefix.empty() ? 0 : (prefix.size() - 1) / 2;
        return hops - std::min(hops, done);
    }
    TokenType expected_type() const {
        if (complete()) return TokenType::special;
        return prefix.size() % 2 == 0 ? TokenType::entity : TokenType::relation;
    }
};

// True iff `candidate` may extend the state's prefix.
inline bool psi(const ConstraintState& s, TokenId candidate, const KnowledgeGraph& kg, const Vocabulary& vocab) {
    if (candidate.index() >= vocab.size()) return false;
    const std::size_t k = s.prefix.size();
    if (k > s.interior_length()) return false;
    if (s.complete()) return candidate == Vocabulary::eos;
    const TokenType type = vocab.type(candidate);
    if (type != s.expected_type()) return false;

    if (k == 0) return kg.entity_type(vocab.entity_of(candidate)) == EntityType::user;
    const EntityId last_entity = vocab.entity_of(s.prefix[k % 2 == 1 ? k - 1 : k - 2]);
    if (type == TokenType::relation) {
        auto rels = kg.relations_from(last_entity);
        return std::binary_search(rels.begin(), rels.end(), vocab.relation_of(candidate));
    }
    const EntityId e = vocab.entity_of(candidate);
    if (!kg.has_edge(last_entity, vocab.relation_of(s.prefix[k - 1]), e)) return false;
    if (!s.users_mid_path && kg.entity_type(e) == EntityType::user) return false;
    if (s.at_terminal()) {
        if (kg.entity_type(e) != EntityType::product) return false;
        if (std::binary_search(s.excluded.begin(), s.excluded.end(), e)) return false;
    }
    return true;
}

// Tokens for which psi holds, ascending; computed from the adjacency rather
// than by scanning the vocabulary.
inline std::vector<TokenId> allowed_tokens(const ConstraintState& s, const KnowledgeGraph& kg, const Vocabulary& vocab) {
    std::vector<TokenId> out;
    const std::size_t k = s.prefix.size();
    if (k > s.interior_length()) return out;
    if (s.complete()) return {Vocabulary::eos};
    if (k == 0) {
        for (auto u : kg.entities_of_type(EntityType::user)) out.push_back(vocab.entity_token(u));
        return out;
    }
    const EntityId last_entity = vocab.entity_of(s.prefix[k % 2 == 1 ? k - 1 : k - 2]);
    if (k % 2 == 1) {
        for (auto r : kg.relations_from(last_entity)) out.push_back(vocab.relation_token(r));
        return out;
    }
    for (auto e : kg.neighbors(last_entity, vocab.relation_of(s.prefix[k - 1]))) {
        const EntityType t = kg.entity_type(e);
        if (!s.users_mid_path && t == EntityType::user) continue;
        if (s.at_terminal() &&
            (t != EntityType::product || std::binary_search(s.excluded.begin(), s.excluded.end(), e)))
            continue;
        out.push_back(vocab.entity_token(e));
    }
    return out;
}

// Sets every psi-false entry to -inf. Returns false when nothing survives
// (the hypothesis is dead).
template <typename S>
bool mask_logits(std::span<S> logits, const ConstraintState& s, const KnowledgeGraph& kg, const Vocabulary& vocab) {
    const auto allowed = allowed_tokens(s, kg, vocab);
    std::vector<char> keep(logits.size(), 0);
    for (auto t : allowed)
        if (t.index() < keep.size()) keep[t.index()] = 1;
    for (std::size_t i = 0; i < logits.size(); ++i)
        if (!keep[i]) logits[i] = -std::numeric_limits<S>::infinity();
    return std::any_of(logits.begin(), logits.end(), [](S v) { return std::isfinite(v); });
}

inline double score_sequence(std::span<const double> token_probs, ScoreMode mode = ScoreMode::mean_probability) {
    if (token_probs.empty()) throw std::invalid_argument("cannot score an empty sequence");
    double sum = 0;
    for (double p : token_probs) sum += mode == ScoreMode::mean_probability ? p : std::log(p);
    return sum / static_cast<double>(token_probs.size());
}

struct DecodedSequence {
    // <bos> interior... <eos>
    std::vector<TokenId> tokens;
    // Unmasked model probability of each generated token (prompt and <eos>
    // excluded).
    std::vector<double> token_probs;
    // Search score: cumulative log-probability including diversity penalties.
    double beam_score = 0;

    std::span<const TokenId> interior() const {
        std::span<const TokenId> t(tokens);
        std::size_t b = !t.empty() && t.front() == Vocabulary::bos ? 1 : 0;
        std::size_t e = t.size() > b && t.back() == Vocabulary::eos ? 1 : 0;
        return t.subspan(b, t.size() - b - e);
    }
};

struct DecodeDiagnostics {
    std::size_t dead_beams = 0;
    std::size_t completed = 0;
};

namespace detail {

struct Beam {
    std::vector<TokenId> interior;
    std::vector<double> probs;
    double score = 0;
};

struct Candidate {
    double score;
    std::size_t beam;
    TokenId token;
};

inline bool candidate_before(const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.beam != b.beam) return a.beam < b.beam;
    return a.token < b.token;
}

}  // namespace detail

// Runs grouped diverse beam search for one user. `train_items` must be
// sorted. Returns at most cfg.n_sequences completed sequences; dead
// hypotheses are dropped.
template <typename S>
std::vector<DecodedSequence> group_beam_search(const Transformer<S>& model, EntityId user, const KnowledgeGraph& kg,
                                               const Vocabulary& vocab, std::span<const EntityId> train_items,
                                               const DecodeConfig& cfg, DecodeDiagnostics* diag = nullptr) {
    cfg.validate();
    if (model.config().vocab_size != vocab.size()) throw ConfigError("model and vocabulary sizes differ");
    if (model.config().context_length < ModelConfig::context_for_hops(cfg.hops) - 1)
        throw ConfigError("model context is too short for " + std::to_string(cfg.hops) + "-hop decoding");

    using detail::Beam;
    using detail::Candidate;
    const std::size_t interior_len = 2 * cfg.hops + 1;
    const std::size_t group_size = cfg.group_size();
    DecodeDiagnostics local;
    DecodeDiagnostics& d = diag ? *diag : local;

    std::vector<std::vector<Beam>> groups(cfg.n_groups);
    for (auto& g : groups)
        g.push_back(Beam{{vocab.entity_token(user), vocab.relation_token(kg.interaction_relation())}, {}, 0.0});
    std::vector<DecodedSequence> finished;

    auto finish = [&](const Beam& b, TokenId last, double p, double score) {
        DecodedSequence seq;
        seq.tokens.push_back(Vocabulary::bos);
        seq.tokens.insert(seq.tokens.end(), b.interior.begin(), b.interior.end());
        seq.token_probs = b.probs;
        if (last != Vocabulary::eos) {
            seq.tokens.push_back(last);
            seq.token_probs.push_back(p);
        }
        seq.tokens.push_back(Vocabulary::eos);
        seq.beam_score = score;
        finished.push_back(std::move(seq));
    };

    for (std::size_t pos = 2; pos < interior_len; ++pos) {
        const bool last_step = pos + 1 == interior_len;

        std::vector<const Beam*> live;
        for (const auto& g : groups)
            for (const auto& b : g) live.push_back(&b);
        if (live.empty()) break;

        std::vector<TokenSequence> seqs;
        seqs.reserve(live.size());
        for (const Beam* b : live) {
            TokenSequence s;
            s.push_back(Vocabulary::bos, TokenType::special);
            for (auto t : b->interior) s.push_back(t, vocab.type(t));
            seqs.push_back(std::move(s));
        }
        const TokenBatch batch = TokenBatch::for_inference(seqs);
        const Mat<S> logits = model.forward(batch);

        std::map<TokenId, std::size_t> chosen_this_step;
        std::size_t flat = 0;
        std::vector<std::vector<Beam>> next(cfg.n_groups);
        for (std::size_t gi = 0; gi < cfg.n_groups; ++gi) {
            std::vector<Candidate> cands;
            std::vector<std::vector<double>> probs(groups[gi].size());
            for (std::size_t bi = 0; bi < groups[gi].size(); ++bi, ++flat) {
                const Beam& beam = groups[gi][bi];
                const auto row = logits.row(static_cast<Eigen::Index>(flat * batch.length + beam.interior.size()));
                std::vector<double> logp(vocab.size());
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t t = 0; t < logp.size(); ++t) mx = std::max(mx, logp[t] = static_cast<double>(row(static_cast<Eigen::Index>(t))));
                double z = 0;
                for (double v : logp) z += std::exp(v - mx);
                const double lz = mx + std::log(z);
                for (double& v : logp) v -= lz;
                probs[bi].resize(logp.size());
                for (std::size_t t = 0; t < logp.size(); ++t) probs[bi][t] = std::exp(logp[t]);

                std::vector<double> masked = logp;
                if (cfg.graph_constraint) {
                    ConstraintState st{beam.interior, cfg.hops, train_items, cfg.users_mid_path};
                    if (!mask_logits<double>(masked, st, kg, vocab)) {
                        ++d.dead_beams;
                        continue;
                    }
                }
                for (std::size_t t = 0; t < masked.size(); ++t) {
                    if (!std::isfinite(masked[t])) continue;
                    const TokenId tok(t);
                    double penalty = 0;
                    if (auto it = chosen_this_step.find(tok); it != chosen_this_step.end())
                        penalty = cfg.diversity_penalty * static_cast<double>(it->second);
                    cands.push_back({beam.score + masked[t] - penalty, bi, tok});
                }
            }
            std::sort(cands.begin(), cands.end(), detail::candidate_before);

            const std::size_t cap = last_step ? cfg.n_sequences / cfg.n_groups + (gi < cfg.n_sequences % cfg.n_groups ? 1 : 0)
                                              : group_size;
            std::size_t taken = 0;
            for (const auto& c : cands) {
                if (taken == cap) break;
                ++taken;
                ++chosen_this_step[c.token];
                const Beam& parent = groups[gi][c.beam];
                const double p = probs[c.beam][c.token.index()];
                if (last_step || c.token == Vocabulary::eos) {
                    finish(parent, c.token, p, c.score);
                } else {
                    Beam child = parent;
                    child.interior.push_back(c.token);
                    child.probs.push_back(p);
                    child.score = c.score;
                    next[gi].push_back(std::move(child));
                }
            }
        }
        groups = std::move(next);
    }
    if (finished.size() > cfg.n_sequences) finished.resize(cfg.n_sequences);
    d.completed = finished.size();
    return finished;
}

struct Recommendation {
    EntityId product;
    double score = 0;
    Path path;
};

struct RecommendationList {
    EntityId user;
    std::vector<Recommendation> items;
    // Fewer than top_n distinct products were reachable.
    bool truncated = false;
    std::size_t sequences = 0;
};

// Ranks decoded sequences by score, keeps the best path per terminal
// product and returns the top_n products.
inline RecommendationList rank_sequences(EntityId user, const std::vector<DecodedSequence>& seqs,
                                         const KnowledgeGraph& kg, const Vocabulary& vocab,
                                         std::span<const EntityId> train_items, const DecodeConfig& cfg) {
    struct Scored {
        double score;
        const DecodedSequence* seq;
        Path path;
    };
    std::vector<Scored> scored;
    for (const auto& s : seqs) {
        if (s.token_probs.empty()) continue;
        Path path;
        try {
            path = decode(vocab, s.tokens);
        } catch (const StructuralError&) {
            continue;
        }
        if (path.entities.empty()) continue;
        const EntityId last = path.entities.back();
        if (kg.entity_type(last) != EntityType::product) continue;
        if (std::binary_search(train_items.begin(), train_items.end(), last)) continue;
        scored.push_back({score_sequence(s.token_probs, cfg.score_mode), &s, std::move(path)});
    }
    std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        return std::lexicographical_compare(a.seq->tokens.begin(), a.seq->tokens.end(), b.seq->tokens.begin(),
                                            b.seq->tokens.end());
    });

    RecommendationList out;
    out.user = user;
    out.sequences = seqs.size();
    std::vector<EntityId> seen;
    for (auto& s : scored) {
        if (out.items.size() == cfg.top_n) break;
        const EntityId product = s.path.entities.back();
        if (std::find(seen.begin(), seen.end(), product) != seen.end()) continue;
        seen.push_back(product);
        out.items.push_back({product, s.score, std::move(s.path)});
    }
    out.truncated = out.items.size() < cfg.top_n;
    return out;
}

template <typename S>
RecommendationList recommend(const Transformer<S>& model, EntityId user, const KnowledgeGraph& kg,
                             const Vocabulary& vocab, std::span<const EntityId> train_items, const DecodeConfig& cfg) {
    const auto seqs = group_beam_search(model, user, kg, vocab, train_items, cfg);
    return rank_sequences(user, seqs, kg, vocab, train_items, cfg);
}

struct UserDecode {
    RecommendationList recommendations;
    std::vector<DecodedSequence> sequences;
};

// Decodes every user (ascending id); users are split across cfg.threads
// workers, output order does not depend on the thread count.
template <typename S>
std::vector<UserDecode> decode_users(const Transformer<S>& model, const std::vector<EntityId>& users,
                                     const KnowledgeGraph& kg, const Vocabulary& vocab,
                                     const std::unordered_map<EntityId, std::vector<EntityId>>& train_items,
                                     const DecodeConfig& cfg) {
    std::vector<UserDecode> out(users.size());
    static const std::vector<EntityId> none;
    auto work = [&](unsigned worker, unsigned stride) {
        for (std::size_t i = worker; i < users.size(); i += stride) {
            auto it = train_items.find(users[i]);
            const auto& items = it == train_items.end() ? none : it->second;
            out[i].sequences = group_beam_search(model, users[i], kg, vocab, items, cfg);
            out[i].recommendations = rank_sequences(users[i], out[i].sequences, kg, vocab, items, cfg);
        }
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(users.size())));
    if (threads == 1) {
        work(0, 1);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w, threads);
    }
    return out;
}

}  // namespace pearlm

#pragma once

// Top-k utility metrics (NDCG, MRR, precision, recall), beyond-utility
// metrics (serendipity, diversity, coverage, novelty) and the hop-level
// faithfulness audit of generated paths.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>
#include <vector>

#include "pearlm/data.hpp"
#include "pearlm/kg.hpp"
#include "pearlm/tokenizer.hpp"
#include "pearlm/tsv.hpp"

namespace pearlm {

// Binary-relevance NDCG with a 1/log2(rank+1) discount; nullopt when there is
// nothing relevant (the user is skipped).
template <typename Item>
std::optional<double> ndcg_at_k(const std::vector<Item>& ranked, const std::set<Item>& relevant, std::size_t k = 10) {
    if (relevant.empty()) return std::nullopt;
    double dcg = 0, idcg = 0;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i)
        if (relevant.count(ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    for (std::size_t i = 0; i < std::min(k, relevant.size()); ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    return dcg / idcg;
}

template <typename Item>
std::optional<double> mrr_at_k(const std::vector<Item>& ranked, const std::set<Item>& relevant, std::size_t k = 10) {
    if (relevant.empty()) return std::nullopt;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i)
        if (relevant.count(ranked[i])) return 1.0 / static_cast<double>(i + 1);
    return 0.0;
}

template <typename Item>
std::size_t hits_at_k(const std::vector<Item>& ranked, const std::set<Item>& relevant, std::size_t k) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) hits += relevant.count(ranked[i]);
    return hits;
}

template <typename Item>
std::optional<double> precision_at_k(const std::vector<Item>& ranked, const std::set<Item>& relevant, std::size_t k = 10) {
    if (relevant.empty()) return std::nullopt;
    return static_cast<double>(hits_at_k(ranked, relevant, k)) / static_cast<double>(k);
}

template <typename Item>
std::optional<double> recall_at_k(const std::vector<Item>& ranked, const std::set<Item>& relevant, std::size_t k = 10) {
    if (relevant.empty()) return std::nullopt;
    return static_cast<double>(hits_at_k(ranked, relevant, k)) / static_cast<double>(relevant.size());
}

using RecommendationsByUser = std::map<EntityId, std::vector<EntityId>>;

// Global top-k products by train interaction count, ties by ascending id.
inline std::set<EntityId> popular_baseline(const std::vector<Interaction>& train, std::size_t k = 10) {
    std::map<EntityId, std::size_t> count;
    for (const auto& x : train) ++count[x.product];
    std::vector<std::pair<EntityId, std::size_t>> items(count.begin(), count.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::set<EntityId> out;
    for (std::size_t i = 0; i < std::min(k, items.size()); ++i) out.insert(items[i].first);
    return out;
}

// Mean per-user share of recommended items outside the popularity baseline.
inline double serendipity(const RecommendationsByUser& recs, const std::set<EntityId>& popular) {
    double total = 0;
    std::size_t users = 0;
    for (const auto& [u, items] : recs) {
        if (items.empty()) continue;
        std::size_t outside = 0;
        for (auto p : items) outside += popular.count(p) ? 0 : 1;
        total += static_cast<double>(outside) / static_cast<double>(items.size());
        ++users;
    }
    return users ? total / static_cast<double>(users) : 0.0;
}

using GenreMap = std::unordered_map<EntityId, std::vector<EntityId>>;

// product -> tails of the designated genre relation.
inline GenreMap genre_map_from_kg(const KnowledgeGraph& kg, RelationId genre_relation, std::size_t* n_genres = nullptr) {
    GenreMap out;
    std::set<EntityId> genres;
    for (const auto& t : kg.triplets()) {
        if (t.relation != genre_relation) continue;
        out[t.head].push_back(t.tail);
        genres.insert(t.tail);
    }
    if (n_genres) *n_genres = genres.size();
    return out;
}

// Mean per-user |distinct genres| / min(n_genres, k). Products without a
// genre add nothing and are counted in *missing.
inline double diversity(const RecommendationsByUser& recs, const GenreMap& genres, std::size_t n_genres,
                        std::size_t k = 10, std::size_t* missing = nullptr) {
    if (n_genres == 0) return 0.0;
    const double denom = static_cast<double>(std::min(n_genres, k));
    double total = 0;
    std::size_t users = 0, no_genre = 0;
    for (const auto& [u, items] : recs) {
        if (items.empty()) continue;
        std::set<EntityId> seen;
        for (auto p : items) {
            auto it = genres.find(p);
            if (it == genres.end() || it->second.empty()) {
                ++no_genre;
                continue;
            }
            seen.insert(it->second.begin(), it->second.end());
        }
        total += static_cast<double>(seen.size()) / denom;
        ++users;
    }
    if (missing) *missing = no_genre;
    return users ? total / static_cast<double>(users) : 0.0;
}

inline double coverage(const RecommendationsByUser& recs, const std::vector<EntityId>& catalogue) {
    if (catalogue.empty()) throw DataError("coverage: empty catalogue");
    std::set<EntityId> cat(catalogue.begin(), catalogue.end()), used;
    for (const auto& [u, items] : recs)
        for (auto p : items)
            if (cat.count(p)) used.insert(p);
    return static_cast<double>(used.size()) / static_cast<double>(cat.size());
}

enum class NoveltyNorm { max_count, user_count };

// Per item 1 - popularity, popularity = train count / max train count (or
// / number of users); averaged over a user's items, then over users.
inline double novelty(const RecommendationsByUser& recs, const std::vector<Interaction>& train,
                      NoveltyNorm norm = NoveltyNorm::max_count) {
    std::map<EntityId, std::size_t> count;
    std::set<EntityId> users_seen;
    for (const auto& x : train) {
        ++count[x.product];
        users_seen.insert(x.user);
    }
    std::size_t denom = 0;
    if (norm == NoveltyNorm::max_count) {
        for (const auto& [p, c] : count) denom = std::max(denom, c);
    } else {
        denom = users_seen.size();
    }
    double total = 0;
    std::size_t users = 0;
    for (const auto& [u, items] : recs) {
        if (items.empty()) continue;
        double s = 0;
        for (auto p : items) {
            auto it = count.find(p);
            const double c = it == count.end() ? 0.0 : static_cast<double>(it->second);
            s += denom ? 1.0 - c / static_cast<double>(denom) : 1.0;
        }
        total += s / static_cast<double>(items.size());
        ++users;
    }
    return users ? total / static_cast<double>(users) : 0.0;
}

struct MetricsReport {
    double ndcg = 0, mrr = 0, precision = 0, recall = 0;
    double serendipity = 0, diversity = 0, coverage = 0, novelty = 0;
    std::size_t k = 10;
    std::size_t users_evaluated = 0;
    std::size_t users_without_relevant = 0;
    std::size_t products_without_genre = 0;
    bool diversity_enabled = true;
};

struct EvaluationInputs {
    const RecommendationsByUser* recs = nullptr;
    const std::unordered_map<EntityId, std::vector<EntityId>>* relevant = nullptr;
    const std::vector<Interaction>* train = nullptr;
    const std::vector<EntityId>* catalogue = nullptr;
    const GenreMap* genres = nullptr;  // null disables diversity
    std::size_t n_genres = 0;
    std::size_t k = 10;
    NoveltyNorm novelty_norm = NoveltyNorm::max_count;
};

// Utility metrics average over users with at least one relevant item; users
// without recommendations score zero there.
inline MetricsReport evaluate(const EvaluationInputs& in) {
    MetricsReport r;
    r.k = in.k;
    const auto& recs = *in.recs;
    double ndcg = 0, mrr = 0, prec = 0, rec = 0;
    for (const auto& [u, items] : *in.relevant) {
        std::set<EntityId> rel(items.begin(), items.end());
        if (rel.empty()) {
            ++r.users_without_relevant;
            continue;
        }
        static const std::vector<EntityId> empty;
        auto it = recs.find(u);
        const auto& ranked = it == recs.end() ? empty : it->second;
        ndcg += *ndcg_at_k(ranked, rel, in.k);
        mrr += *mrr_at_k(ranked, rel, in.k);
        prec += *precision_at_k(ranked, rel, in.k);
        rec += *recall_at_k(ranked, rel, in.k);
        ++r.users_evaluated;
    }
    if (r.users_evaluated) {
        const double n = static_cast<double>(r.users_evaluated);
        r.ndcg = ndcg / n, r.mrr = mrr / n, r.precision = prec / n, r.recall = rec / n;
    }
    r.serendipity = serendipity(recs, popular_baseline(*in.train, in.k));
    r.diversity_enabled = in.genres != nullptr && in.n_genres > 0;
    if (r.diversity_enabled) r.diversity = diversity(recs, *in.genres, in.n_genres, in.k, &r.products_without_genre);
    r.coverage = coverage(recs, *in.catalogue);
    r.novelty = novelty(recs, *in.train, in.novelty_norm);
    return r;
}

inline std::string format_metrics_table(const MetricsReport& r) {
    std::ostringstream o;
    o << "NDCG\tMRR\tPrecision\tRecall\tSER\tDIV\tCOV\tNOV\n"
      << tsv::fixed(r.ndcg, 4) << "\t" << tsv::fixed(r.mrr, 4) << "\t" << tsv::fixed(r.precision, 4) << "\t"
      << tsv::fixed(r.recall, 4) << "\t" << tsv::fixed(r.serendipity, 4) << "\t"
      << (r.diversity_enabled ? tsv::fixed(r.diversity, 4) : std::string("n/a")) << "\t"
      << tsv::fixed(r.coverage, 4) << "\t" << tsv::fixed(r.novelty, 4) << "\n"
      << "(k=" << r.k << ", users evaluated " << r.users_evaluated << ", without relevant items "
      << r.users_without_relevant << ")\n";
    return o.str();
}

inline std::string format_metrics_kv(const MetricsReport& r) {
    std::ostringstream o;
    o << "k=" << r.k << "\n"
      << "ndcg=" << tsv::fixed(r.ndcg, 12) << "\n"
      << "mrr=" << tsv::fixed(r.mrr, 12) << "\n"
      << "precision=" << tsv::fixed(r.precision, 12) << "\n"
      << "recall=" << tsv::fixed(r.recall, 12) << "\n"
      << "serendipity=" << tsv::fixed(r.serendipity, 12) << "\n"
      << "diversity=" << (r.diversity_enabled ? tsv::fixed(r.diversity, 12) : std::string("nan")) << "\n"
      << "coverage=" << tsv::fixed(r.coverage, 12) << "\n"
      << "novelty=" << tsv::fixed(r.novelty, 12) << "\n"
      << "users_evaluated=" << r.users_evaluated << "\n"
      << "users_without_relevant=" << r.users_without_relevant << "\n"
      << "products_without_genre=" << r.products_without_genre << "\n";
    return o.str();
}

// ---------------------------------------------------------------------------
// Faithfulness audit

struct FaithfulnessReport {
    std::size_t total = 0;
    // valid_through_hop[i] = fraction of paths whose hops 1..i+1 all exist.
    std::vector<double> valid_through_hop;
    double fully_valid = 0;
};

// Sequences may carry <bos>/<eos>. A sequence that does not alternate
// entity/relation is counted invalid from hop 1.
inline FaithfulnessReport audit_faithfulness(std::span<const std::vector<TokenId>> sequences, const KnowledgeGraph& kg,
                                             const Vocabulary& vocab, std::size_t max_hops) {
    FaithfulnessReport r;
    r.total = sequences.size();
    r.valid_through_hop.assign(max_hops, 0.0);
    if (sequences.empty()) return r;
    std::vector<std::size_t> through(max_hops, 0);
    std::size_t full = 0;
    for (const auto& seq : sequences) {
        std::optional<std::size_t> first_invalid;
        try {
            const Path p = decode(vocab, seq);
            if (p.entities.empty()) {
                first_invalid = 1;
            } else {
                first_invalid = validate_path(kg, p).first_invalid_hop;
            }
        } catch (const StructuralError&) {
            first_invalid = 1;
        }
        if (!first_invalid) ++full;
        for (std::size_t h = 1; h <= max_hops; ++h)
            if (!first_invalid || *first_invalid > h) ++through[h - 1];
    }
    const double n = static_cast<double>(r.total);
    for (std::size_t h = 0; h < max_hops; ++h) r.valid_through_hop[h] = static_cast<double>(through[h]) / n;
    r.fully_valid = static_cast<double>(full) / n;
    return r;
}

inline std::string format_faithfulness(const FaithfulnessReport& r) {
    std::ostringstream o;
    o << "audited\t" << r.total << "\n";
    for (std::size_t h = 0; h < r.valid_through_hop.size(); ++h)
        o << "valid_through_hop_" << h + 1 << "\t" << tsv::fixed(r.valid_through_hop[h], 6) << "\n";
    o << "fully_valid\t" << tsv::fixed(r.fully_valid, 6) << "\n";
    return o.str();
}

}  // namespace pearlm

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "pearlm/model.hpp"
#include "pearlm/sampler.hpp"
#include "pearlm/tokenizer.hpp"

namespace pearlm {

struct TrainConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    std::size_t batch_size = 32;
    std::size_t iterations = 2000;
    // Linear warmup over this fraction of the budget, constant afterwards.
    double warmup_fraction = 0.05;
    double grad_clip = 1.0;  // <= 0 disables clipping
    std::uint64_t seed = 0;

    void validate() const {
        if (iterations < 1) throw ConfigError("training iterations must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (learning_rate < 0) throw ConfigError("learning_rate must be >= 0");
    }
};

// Decoupled weight decay Adam over a flat parameter vector.
template <typename S>
class AdamW {
public:
    AdamW(const ParameterLayout& layout, const TrainConfig& cfg)
        : cfg_(cfg), m_(layout.total, S(0)), v_(layout.total, S(0)), decay_(layout.total, 0) {
        for (const auto& t : layout.tensors)
            if (t.decay) std::fill_n(decay_.begin() + static_cast<std::ptrdiff_t>(t.offset), t.rows * t.cols, 1);
    }

    void step(std::span<S> params, std::span<const S> grad, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
        const S step_size = static_cast<S>(lr / bc1);
        const S bc2_sqrt = static_cast<S>(std::sqrt(bc2));
        const S eps = static_cast<S>(cfg_.adam_eps);
        const S decay = static_cast<S>(lr * cfg_.weight_decay);
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = b1 * m_[i] + (S(1) - b1) * grad[i];
            v_[i] = b2 * v_[i] + (S(1) - b2) * grad[i] * grad[i];
            if (decay_[i]) params[i] -= decay * params[i];
            params[i] -= step_size * m_[i] / (std::sqrt(v_[i]) / bc2_sqrt + eps);
        }
    }

private:
    TrainConfig cfg_;
    std::vector<S> m_, v_;
    std::vector<char> decay_;
    std::size_t t_{0};
};

struct TrainResult {
    LanguageModel model;
    std::vector<double> loss_curve;
};

inline std::string describe(const TrainConfig& t, const ModelConfig& m) {
    std::ostringstream o;
    o << "seed=" << t.seed << " lr=" << t.learning_rate << " batch=" << t.batch_size << " iterations=" << t.iterations
      << " model_seed=" << m.seed << " d_model=" << m.d_model << " layers=" << m.n_layers << " heads=" << m.n_heads
      << " d_ff=" << m.d_ff << " vocab=" << m.vocab_size << " context=" << m.context_length;
    return o.str();
}

using TrainObserver = std::function<void(std::size_t step, double loss)>;

// Runs exactly cfg.iterations optimizer steps of next-token cross-entropy.
inline TrainResult train(std::span<const TokenSequence> data, const TrainConfig& cfg, const ModelConfig& mcfg,
                         const TrainObserver& observer = {}) {
    cfg.validate();
    if (data.empty()) throw DataError("cannot train on an empty path dataset");
    for (const auto& s : data)
        if (s.size() > mcfg.context_length + 1)
            throw ConfigError("sequence of " + std::to_string(s.size()) + " tokens does not fit context " +
                              std::to_string(mcfg.context_length));

    TrainResult result{LanguageModel(mcfg), {}};
    auto& model = result.model;
    AdamW<float> opt(model.layout(), cfg);
    AlignedVector<float> grad(model.parameters().size());

    std::mt19937_64 batch_rng(mix_seed(cfg.seed, 0));
    std::mt19937_64 dropout_rng(mix_seed(cfg.seed, 1));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), batch_rng);
    std::size_t cursor = 0;

    const auto warmup = static_cast<std::size_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(cfg.iterations)));
    std::vector<TokenSequence> batch_seqs;
    result.loss_curve.reserve(cfg.iterations);
    for (std::size_t step = 0; step < cfg.iterations; ++step) {
        batch_seqs.clear();
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), batch_rng);
                cursor = 0;
            }
            batch_seqs.push_back(data[order[cursor++]]);
        }
        const TokenBatch batch = TokenBatch::for_training(batch_seqs);

        float loss = 0;
        try {
            loss = model.loss_and_grad(batch, grad, mcfg.dropout > 0 ? &dropout_rng : nullptr);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " at step " + std::to_string(step) + " [" + describe(cfg, mcfg) + "]");
        }
        if (!std::isfinite(loss))
            throw NumericalError("training diverged at step " + std::to_string(step) + " [" + describe(cfg, mcfg) + "]");

        if (cfg.grad_clip > 0) {
            double norm2 = 0;
            for (float g : grad) norm2 += static_cast<double>(g) * g;
            const double norm = std::sqrt(norm2);
            if (norm > cfg.grad_clip) {
                const auto scale = static_cast<float>(cfg.grad_clip / norm);
                for (float& g : grad) g *= scale;
            }
        }
        const double lr = warmup > 0 && step < warmup
                              ? cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup)
                              : cfg.learning_rate;
        opt.step(model.parameters(), grad, lr);
        result.loss_curve.push_back(loss);
        if (observer) observer(step, loss);
    }
    return result;
}

inline std::vector<TokenSequence> encode_paths(const Vocabulary& vocab, const PathDataset& ds) {
    std::vector<TokenSequence> out;
    out.reserve(ds.paths.size());
    for (const auto& p : ds.paths) out.push_back(encode(vocab, p, ds.config.hops));
    return out;
}

inline TrainResult train(const PathDataset& paths, const Vocabulary& vocab, const TrainConfig& cfg,
                         const ModelConfig& mcfg, const TrainObserver& observer = {}) {
    const auto seqs = encode_paths(vocab, paths);
    return train(seqs, cfg, mcfg, observer);
}

// Teacher-forced next-token accuracy over all target positions.
template <typename S>
double next_token_accuracy(const Transformer<S>& model, std::span<const TokenSequence> data) {
    const TokenBatch batch = TokenBatch::for_training(data);
    const Mat<S> logits = model.forward(batch);
    std::size_t hit = 0, total = 0;
    for (std::size_t r = 0; r < batch.rows(); ++r) {
        if (batch.targets[r] < 0) continue;
        Eigen::Index arg;
        logits.row(static_cast<Eigen::Index>(r)).maxCoeff(&arg);
        hit += arg == batch.targets[r] ? 1 : 0;
        ++total;
    }
    return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckOptions {
    double eps = 1e-4;
    // Parameters probed per tensor.
    std::size_t per_tensor = 8;
    std::uint64_t seed = 0;
    BackwardFault fault = BackwardFault::none;
    // Denominator floor for the relative error.
    double floor = 1e-8;
};

// Max |analytic - numeric| / max(|analytic|, |numeric|, floor) over a random
// parameter subset, numeric = central difference with step eps.
inline double grad_check(const Transformer<double>& model, const TokenBatch& batch, const GradCheckOptions& opt = {}) {
    Transformer<double> probe = model;
    AlignedVector<double> grad(probe.parameters().size());
    probe.loss_and_grad(batch, grad, nullptr, opt.fault);

    std::mt19937_64 rng(opt.seed);
    double worst = 0;
    for (const auto& t : probe.layout().tensors) {
        const std::size_t n = t.rows * t.cols;
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        for (std::size_t k = 0; k < std::min(opt.per_tensor, n); ++k) {
            const std::size_t i = t.offset + pick(rng);
            auto params = probe.parameters();
            const double saved = params[i];
            params[i] = saved + opt.eps;
            const double up = probe.loss(batch);
            params[i] = saved - opt.eps;
            const double down = probe.loss(batch);
            params[i] = saved;
            const double numeric = (up - down) / (2 * opt.eps);
            const double denom = std::max({std::abs(grad[i]), std::abs(numeric), opt.floor});
            worst = std::max(worst, std::abs(grad[i] - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace pearlm

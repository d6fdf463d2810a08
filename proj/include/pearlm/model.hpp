#pragma once

// Decoder-only causal transformer over the KG vocabulary.
//
// Input embedding is the sum of token, token-type and position embeddings.
// Blocks are pre-norm (LayerNorm -> masked multi-head attention -> residual,
// LayerNorm -> GELU MLP -> residual), followed by a final LayerNorm and one
// linear head over the whole vocabulary. Forward and backward passes are
// written out by hand; Eigen supplies the dense products.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pearlm/common.hpp"
#include "pearlm/tokenizer.hpp"

namespace pearlm {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;
template <typename S>
using MapMat = Eigen::Map<Mat<S>>;
template <typename S>
using CMapMat = Eigen::Map<const Mat<S>>;
template <typename S>
using CMapRow = Eigen::Map<const RowVec<S>>;
template <typename S>
using MapRow = Eigen::Map<RowVec<S>>;
// Buffers viewed through Map. Vectorized kernels peel differently with the
// base address, so a fixed alignment keeps results bit-reproducible.
template <typename S>
using AlignedVector = std::vector<S, Eigen::aligned_allocator<S>>;

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 128;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t d_ff = 512;
    // Interior path length 2N+1 plus <bos>/<eos>.
    std::size_t context_length = 9;
    std::size_t n_types = kNumTokenTypes;
    double dropout = 0.0;
    double init_std = 0.02;
    std::uint64_t seed = 0;
    bool final_norm = true;

    static std::size_t context_for_hops(std::size_t hops) { return 2 * hops + 3; }

    // "small", "distil-like" and "base-like"; vocab/context filled in later.
    static ModelConfig preset(std::string_view name) {
        ModelConfig c;
        if (name == "small") {
            c.d_model = 128, c.n_layers = 4, c.n_heads = 4;
        } else if (name == "distil-like") {
            c.d_model = 768, c.n_layers = 6, c.n_heads = 12;
        } else if (name == "base-like") {
            c.d_model = 768, c.n_layers = 12, c.n_heads = 12;
        } else {
            throw ConfigError("unknown model preset '" + std::string(name) + "'");
        }
        c.d_ff = 4 * c.d_model;
        return c;
    }

    void validate() const {
        if (vocab_size == 0) throw ConfigError("model vocab_size must be set");
        if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
            throw ConfigError("d_model must be a positive multiple of n_heads");
        if (context_length < 2) throw ConfigError("context_length must be >= 2");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    }

    std::size_t head_dim() const { return d_model / n_heads; }
};

// Model input: `batch` rows of `length` tokens. targets[i] < 0 means the
// position does not contribute to the loss.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t length = 0;
    std::vector<std::int32_t> ids;
    std::vector<std::int32_t> types;
    std::vector<std::int32_t> targets;

    std::size_t rows() const { return batch * length; }

    // Teacher forcing: inputs are seq[0..n-2], targets seq[1..n-1]; padded
    // to the longest sequence with <pad>.
    static TokenBatch for_training(std::span<const TokenSequence> seqs) {
        TokenBatch b;
        b.batch = seqs.size();
        for (const auto& s : seqs) b.length = std::max(b.length, s.size() - 1);
        b.ids.assign(b.rows(), static_cast<std::int32_t>(Vocabulary::pad.value));
        b.types.assign(b.rows(), static_cast<std::int32_t>(TokenType::special));
        b.targets.assign(b.rows(), -1);
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            const auto& s = seqs[i];
            for (std::size_t t = 0; t + 1 < s.size(); ++t) {
                b.ids[i * b.length + t] = static_cast<std::int32_t>(s.ids[t].value);
                b.types[i * b.length + t] = static_cast<std::int32_t>(s.types[t]);
                if (s.ids[t + 1] != Vocabulary::pad) b.targets[i * b.length + t] = static_cast<std::int32_t>(s.ids[t + 1].value);
            }
        }
        return b;
    }

    // Sequences fed as-is (all tokens are inputs); no targets.
    static TokenBatch for_inference(std::span<const TokenSequence> seqs) {
        TokenBatch b;
        b.batch = seqs.size();
        for (const auto& s : seqs) b.length = std::max(b.length, s.size());
        b.ids.assign(b.rows(), static_cast<std::int32_t>(Vocabulary::pad.value));
        b.types.assign(b.rows(), static_cast<std::int32_t>(TokenType::special));
        b.targets.assign(b.rows(), -1);
        for (std::size_t i = 0; i < seqs.size(); ++i)
            for (std::size_t t = 0; t < seqs[i].size(); ++t) {
                b.ids[i * b.length + t] = static_cast<std::int32_t>(seqs[i].ids[t].value);
                b.types[i * b.length + t] = static_cast<std::int32_t>(seqs[i].types[t]);
            }
        return b;
    }
};

// Offsets of every tensor inside the flat parameter vector.
struct ParameterLayout {
    struct Tensor {
        std::string name;
        std::size_t offset;
        std::size_t rows;
        std::size_t cols;
        bool decay;
    };
    struct Layer {
        std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
    };

    std::vector<Tensor> tensors;
    std::size_t tok_emb{}, type_emb{}, pos_emb{};
    std::vector<Layer> layers;
    std::size_t lnf_g{}, lnf_b{}, head_w{}, head_b{};
    std::size_t total{0};

    explicit ParameterLayout(const ModelConfig& c) {
        const std::size_t d = c.d_model;
        tok_emb = add("tok_emb", c.vocab_size, d, true);
        type_emb = add("type_emb", c.n_types, d, true);
        pos_emb = add("pos_emb", c.context_length, d, true);
        for (std::size_t l = 0; l < c.n_layers; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            Layer L{};
            L.ln1_g = add(p + "ln1.gamma", 1, d, false);
            L.ln1_b = add(p + "ln1.beta", 1, d, false);
            L.w_qkv = add(p + "attn.w_qkv", d, 3 * d, true);
            L.b_qkv = add(p + "attn.b_qkv", 1, 3 * d, false);
            L.w_o = add(p + "attn.w_o", d, d, true);
            L.b_o = add(p + "attn.b_o", 1, d, false);
            L.ln2_g = add(p + "ln2.gamma", 1, d, false);
            L.ln2_b = add(p + "ln2.beta", 1, d, false);
            L.w_fc = add(p + "mlp.w_fc", d, c.d_ff, true);
            L.b_fc = add(p + "mlp.b_fc", 1, c.d_ff, false);
            L.w_proj = add(p + "mlp.w_proj", c.d_ff, d, true);
            L.b_proj = add(p + "mlp.b_proj", 1, d, false);
            layers.push_back(L);
        }
        if (c.final_norm) {
            lnf_g = add("lnf.gamma", 1, d, false);
            lnf_b = add("lnf.beta", 1, d, false);
        }
        head_w = add("head.w", d, c.vocab_size, true);
        head_b = add("head.b", 1, c.vocab_size, false);
    }

private:
    std::size_t add(std::string name, std::size_t rows, std::size_t cols, bool decay) {
        tensors.push_back({std::move(name), total, rows, cols, decay});
        total += rows * cols;
        return tensors.back().offset;
    }
};

// Backward-pass mutations used as negative controls for the gradient check.
enum class BackwardFault { none, drop_softmax_correction, skip_layernorm_centering };

namespace nn {

inline constexpr double kLayerNormEps = 1e-5;

// Masked scaled dot-product attention for one head:
// softmax(Q K^T / sqrt(d_k)) V, with positions j > i hidden when causal.
template <typename S>
Mat<S> attention(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, bool causal = true) {
    const auto T = q.rows();
    const S scale = S(1) / std::sqrt(static_cast<S>(q.cols()));
    Mat<S> out = Mat<S>::Zero(T, v.cols());
    std::vector<S> p(static_cast<std::size_t>(k.rows()));
    for (Eigen::Index i = 0; i < T; ++i) {
        const Eigen::Index visible = causal ? i + 1 : k.rows();
        S mx = -std::numeric_limits<S>::infinity();
        for (Eigen::Index j = 0; j < visible; ++j) {
            p[j] = q.row(i).dot(k.row(j)) * scale;
            mx = std::max(mx, p[j]);
        }
        S sum = 0;
        for (Eigen::Index j = 0; j < visible; ++j) sum += (p[j] = std::exp(p[j] - mx));
        for (Eigen::Index j = 0; j < visible; ++j) out.row(i) += (p[j] / sum) * v.row(j);
    }
    return out;
}

template <typename S>
void layer_norm(const Mat<S>& x, const S* gamma, const S* beta, Mat<S>& y, Mat<S>& xhat, std::vector<S>& rstd) {
    const auto n = x.rows(), d = x.cols();
    y.resize(n, d);
    xhat.resize(n, d);
    rstd.resize(static_cast<std::size_t>(n));
    CMapRow<S> g(gamma, d), b(beta, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const S mu = x.row(i).mean();
        const S var = (x.row(i).array() - mu).square().mean();
        const S r = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
        rstd[static_cast<std::size_t>(i)] = r;
        xhat.row(i) = (x.row(i).array() - mu) * r;
        y.row(i) = xhat.row(i).cwiseProduct(g) + b;
    }
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat, const std::vector<S>& rstd, const S* gamma,
                           S* dgamma, S* dbeta, bool center = true) {
    const auto n = dy.rows(), d = dy.cols();
    CMapRow<S> g(gamma, d);
    MapRow<S> dg(dgamma, d), db(dbeta, d);
    Mat<S> dx(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        dg += dy.row(i).cwiseProduct(xhat.row(i));
        db += dy.row(i);
        RowVec<S> dxhat = dy.row(i).cwiseProduct(g);
        const S mean_dxhat = center ? dxhat.mean() : S(0);
        const S mean_dxhat_xhat = dxhat.cwiseProduct(xhat.row(i)).mean();
        dx.row(i) = rstd[static_cast<std::size_t>(i)] *
                    (dxhat.array() - mean_dxhat - xhat.row(i).array() * mean_dxhat_xhat).matrix();
    }
    return dx;
}

// tanh approximation of GELU.
template <typename S>
S gelu(S x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return S(0.5) * x * (S(1) + std::tanh(S(c) * (x + S(0.044715) * x * x * x)));
}

template <typename S>
S gelu_grad(S x) {
    constexpr double c = 0.7978845608028654;
    const S u = S(c) * (x + S(0.044715) * x * x * x);
    const S t = std::tanh(u);
    return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * S(c) * (S(1) + S(3 * 0.044715) * x * x);
}

}  // namespace nn

template <typename S>
class Transformer {
public:
    using Scalar = S;

    explicit Transformer(ModelConfig cfg) : cfg_(std::move(cfg)), layout_((cfg_.validate(), cfg_)) {
        params_.assign(layout_.total, S(0));
        std::mt19937_64 rng(cfg_.seed);
        std::normal_distribution<double> normal(0.0, cfg_.init_std);
        for (const auto& t : layout_.tensors) {
            S* p = params_.data() + t.offset;
            const std::size_t n = t.rows * t.cols;
            if (t.name.ends_with(".gamma")) {
                std::fill(p, p + n, S(1));
            } else if (t.rows > 1) {
                for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<S>(normal(rng));
            }
        }
    }

    const ModelConfig& config() const { return cfg_; }
    const ParameterLayout& layout() const { return layout_; }
    std::span<S> parameters() { return params_; }
    std::span<const S> parameters() const { return params_; }

    template <typename T>
    Transformer<T> cast() const {
        Transformer<T> out(cfg_);
        auto dst = out.parameters();
        for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<T>(params_[i]);
        return out;
    }

    MapMat<S> tensor(std::size_t offset, std::size_t rows, std::size_t cols) {
        return MapMat<S>(params_.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    }
    CMapMat<S> tensor(std::size_t offset, std::size_t rows, std::size_t cols) const {
        return CMapMat<S>(params_.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    }
    MapMat<S> token_embedding() { return tensor(layout_.tok_emb, cfg_.vocab_size, cfg_.d_model); }
    MapMat<S> type_embedding() { return tensor(layout_.type_emb, cfg_.n_types, cfg_.d_model); }
    MapMat<S> position_embedding() { return tensor(layout_.pos_emb, cfg_.context_length, cfg_.d_model); }
    CMapMat<S> token_embedding() const { return tensor(layout_.tok_emb, cfg_.vocab_size, cfg_.d_model); }
    CMapMat<S> type_embedding() const { return tensor(layout_.type_emb, cfg_.n_types, cfg_.d_model); }
    CMapMat<S> position_embedding() const { return tensor(layout_.pos_emb, cfg_.context_length, cfg_.d_model); }
    MapMat<S> head_weight() { return tensor(layout_.head_w, cfg_.d_model, cfg_.vocab_size); }
    MapMat<S> head_bias() { return tensor(layout_.head_b, 1, cfg_.vocab_size); }

    // Row b*length+t = E_V[id] + E_T[type] + E_P[t].
    Mat<S> embed(const TokenBatch& batch) const {
        check_batch(batch);
        const auto d = static_cast<Eigen::Index>(cfg_.d_model);
        Mat<S> x(static_cast<Eigen::Index>(batch.rows()), d);
        auto tok = token_embedding();
        auto typ = type_embedding();
        auto pos = position_embedding();
        for (std::size_t b = 0; b < batch.batch; ++b)
            for (std::size_t t = 0; t < batch.length; ++t) {
                const std::size_t r = b * batch.length + t;
                x.row(static_cast<Eigen::Index>(r)) = tok.row(batch.ids[r]) + typ.row(batch.types[r]) +
                                                      pos.row(static_cast<Eigen::Index>(t));
            }
        return x;
    }

    Mat<S> embed(const TokenSequence& seq) const {
        return embed(TokenBatch::for_inference(std::span<const TokenSequence>(&seq, 1)));
    }

    // Logits, one row per input position.
    Mat<S> forward(const TokenBatch& batch) const {
        Cache cache;
        run_forward(batch, cache, nullptr, false);
        return std::move(cache.logits);
    }

    Mat<S> forward(const TokenSequence& seq) const {
        return forward(TokenBatch::for_inference(std::span<const TokenSequence>(&seq, 1)));
    }

    // Mean next-token cross-entropy over positions with a target.
    S loss(const TokenBatch& batch) const {
        Cache cache;
        run_forward(batch, cache, nullptr, false);
        return cross_entropy(batch, cache.logits, nullptr);
    }

    // Loss plus its gradient with respect to every parameter. `grad` must
    // have parameters().size() entries and is overwritten. Dropout is active
    // only when a generator is passed.
    S loss_and_grad(const TokenBatch& batch, std::span<S> grad, std::mt19937_64* dropout_rng = nullptr,
                    BackwardFault fault = BackwardFault::none) const {
        if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer size mismatch");
        std::fill(grad.begin(), grad.end(), S(0));
        Cache cache;
        run_forward(batch, cache, dropout_rng, true);
        Mat<S> dlogits;
        const S value = cross_entropy(batch, cache.logits, &dlogits);
        run_backward(batch, cache, dlogits, grad, fault);
        return value;
    }

private:
    struct LayerCache {
        Mat<S> ln1_out, ln1_hat, qkv, att, ln2_out, ln2_hat, fc_pre, fc_act;
        Mat<S> attn_mask, mlp_mask;
        std::vector<S> ln1_rstd, ln2_rstd, probs;
    };
    struct Cache {
        Mat<S> emb_mask;
        std::vector<LayerCache> layers;
        Mat<S> lnf_hat, hidden, logits;
        std::vector<S> lnf_rstd;
    };

    void check_batch(const TokenBatch& b) const {
        if (b.length > cfg_.context_length)
            throw StructuralError("sequence length " + std::to_string(b.length) + " exceeds context " +
                                  std::to_string(cfg_.context_length));
        if (b.ids.size() != b.rows() || b.types.size() != b.rows())
            throw std::invalid_argument("token batch arrays do not match its shape");
        for (std::size_t i = 0; i < b.rows(); ++i) {
            if (b.ids[i] < 0 || static_cast<std::size_t>(b.ids[i]) >= cfg_.vocab_size)
                throw StructuralError("token id " + std::to_string(b.ids[i]) + " outside vocabulary");
            if (b.types[i] < 0 || static_cast<std::size_t>(b.types[i]) >= cfg_.n_types)
                throw StructuralError("token type " + std::to_string(b.types[i]) + " out of range");
        }
    }

    const S* p(std::size_t offset) const { return params_.data() + offset; }

    Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, std::mt19937_64* rng) const {
        Mat<S> m(rows, cols);
        std::bernoulli_distribution keep(1.0 - cfg_.dropout);
        const S scale = static_cast<S>(1.0 / (1.0 - cfg_.dropout));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(*rng) ? scale : S(0);
        return m;
    }

    static void require_finite(const Mat<S>& m, const std::string& where) {
        if (!m.allFinite()) throw NumericalError("non-finite activation " + where);
    }

    void run_forward(const TokenBatch& batch, Cache& c, std::mt19937_64* rng, bool keep) const {
        const auto d = static_cast<Eigen::Index>(cfg_.d_model);
        const auto dff = static_cast<Eigen::Index>(cfg_.d_ff);
        const bool drop = rng != nullptr && cfg_.dropout > 0.0;

        Mat<S> x = embed(batch);
        if (drop) {
            c.emb_mask = dropout_mask(x.rows(), x.cols(), rng);
            x.array() *= c.emb_mask.array();
        }
        c.layers.resize(cfg_.n_layers);
        for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
            const auto& L = layout_.layers[l];
            LayerCache& lc = c.layers[l];

            nn::layer_norm(x, p(L.ln1_g), p(L.ln1_b), lc.ln1_out, lc.ln1_hat, lc.ln1_rstd);
            lc.qkv.noalias() = lc.ln1_out * CMapMat<S>(p(L.w_qkv), d, 3 * d);
            lc.qkv.rowwise() += CMapRow<S>(p(L.b_qkv), 3 * d);
            attend(batch, lc);
            Mat<S> proj = lc.att * CMapMat<S>(p(L.w_o), d, d);
            proj.rowwise() += CMapRow<S>(p(L.b_o), d);
            if (drop) {
                lc.attn_mask = dropout_mask(proj.rows(), d, rng);
                proj.array() *= lc.attn_mask.array();
            }
            x += proj;

            nn::layer_norm(x, p(L.ln2_g), p(L.ln2_b), lc.ln2_out, lc.ln2_hat, lc.ln2_rstd);
            lc.fc_pre.noalias() = lc.ln2_out * CMapMat<S>(p(L.w_fc), d, dff);
            lc.fc_pre.rowwise() += CMapRow<S>(p(L.b_fc), dff);
            lc.fc_act = lc.fc_pre.unaryExpr([](S v) { return nn::gelu(v); });
            Mat<S> out = lc.fc_act * CMapMat<S>(p(L.w_proj), dff, d);
            out.rowwise() += CMapRow<S>(p(L.b_proj), d);
            if (drop) {
                lc.mlp_mask = dropout_mask(out.rows(), d, rng);
                out.array() *= lc.mlp_mask.array();
            }
            x += out;
            require_finite(x, "after decoder layer " + std::to_string(l));
            if (!keep) lc = LayerCache{};
        }
        if (cfg_.final_norm) {
            Mat<S> y;
            nn::layer_norm(x, p(layout_.lnf_g), p(layout_.lnf_b), y, c.lnf_hat, c.lnf_rstd);
            c.hidden = std::move(y);
        } else {
            c.hidden = std::move(x);
        }
        c.logits.noalias() = c.hidden * CMapMat<S>(p(layout_.head_w), d, static_cast<Eigen::Index>(cfg_.vocab_size));
        c.logits.rowwise() += CMapRow<S>(p(layout_.head_b), static_cast<Eigen::Index>(cfg_.vocab_size));
        require_finite(c.logits, "in output logits");
    }

    void attend(const TokenBatch& batch, LayerCache& lc) const {
        const std::size_t T = batch.length, H = cfg_.n_heads, hd = cfg_.head_dim(), d = cfg_.d_model;
        const S scale = S(1) / std::sqrt(static_cast<S>(hd));
        lc.att = Mat<S>::Zero(static_cast<Eigen::Index>(batch.rows()), static_cast<Eigen::Index>(d));
        lc.probs.assign(batch.batch * H * T * T, S(0));
        const S* qkv = lc.qkv.data();
        S* out = lc.att.data();
        std::vector<S> row(T);
        for (std::size_t b = 0; b < batch.batch; ++b)
            for (std::size_t h = 0; h < H; ++h) {
                S* P = lc.probs.data() + ((b * H + h) * T) * T;
                for (std::size_t i = 0; i < T; ++i) {
                    const S* q = qkv + (b * T + i) * 3 * d + h * hd;
                    S mx = -std::numeric_limits<S>::infinity();
                    for (std::size_t j = 0; j <= i; ++j) {
                        const S* k = qkv + (b * T + j) * 3 * d + d + h * hd;
                        S s = 0;
                        for (std::size_t e = 0; e < hd; ++e) s += q[e] * k[e];
                        row[j] = s * scale;
                        mx = std::max(mx, row[j]);
                    }
                    S sum = 0;
                    for (std::size_t j = 0; j <= i; ++j) sum += (row[j] = std::exp(row[j] - mx));
                    S* o = out + (b * T + i) * d + h * hd;
                    for (std::size_t j = 0; j <= i; ++j) {
                        const S pij = row[j] / sum;
                        P[i * T + j] = pij;
                        const S* v = qkv + (b * T + j) * 3 * d + 2 * d + h * hd;
                        for (std::size_t e = 0; e < hd; ++e) o[e] += pij * v[e];
                    }
                }
            }
    }

    Mat<S> attend_backward(const TokenBatch& batch, const LayerCache& lc, const Mat<S>& datt, BackwardFault fault) const {
        const std::size_t T = batch.length, H = cfg_.n_heads, hd = cfg_.head_dim(), d = cfg_.d_model;
        const S scale = S(1) / std::sqrt(static_cast<S>(hd));
        Mat<S> dqkv = Mat<S>::Zero(lc.qkv.rows(), lc.qkv.cols());
        const S* qkv = lc.qkv.data();
        S* g = dqkv.data();
        std::vector<S> dp(T);
        for (std::size_t b = 0; b < batch.batch; ++b)
            for (std::size_t h = 0; h < H; ++h) {
                const S* P = lc.probs.data() + ((b * H + h) * T) * T;
                for (std::size_t i = 0; i < T; ++i) {
                    const S* dout = datt.data() + (b * T + i) * d + h * hd;
                    S rowdot = 0;
                    for (std::size_t j = 0; j <= i; ++j) {
                        const S* v = qkv + (b * T + j) * 3 * d + 2 * d + h * hd;
                        S* dv = g + (b * T + j) * 3 * d + 2 * d + h * hd;
                        S s = 0;
                        const S pij = P[i * T + j];
                        for (std::size_t e = 0; e < hd; ++e) {
                            s += dout[e] * v[e];
                            dv[e] += pij * dout[e];
                        }
                        dp[j] = s;
                        rowdot += pij * s;
                    }
                    if (fault == BackwardFault::drop_softmax_correction) rowdot = 0;
                    const S* q = qkv + (b * T + i) * 3 * d + h * hd;
                    S* dq = g + (b * T + i) * 3 * d + h * hd;
                    for (std::size_t j = 0; j <= i; ++j) {
                        const S ds = P[i * T + j] * (dp[j] - rowdot) * scale;
                        const S* k = qkv + (b * T + j) * 3 * d + d + h * hd;
                        S* dk = g + (b * T + j) * 3 * d + d + h * hd;
                        for (std::size_t e = 0; e < hd; ++e) {
                            dq[e] += ds * k[e];
                            dk[e] += ds * q[e];
                        }
                    }
                }
            }
        return dqkv;
    }

    S cross_entropy(const TokenBatch& batch, const Mat<S>& logits, Mat<S>* dlogits) const {
        std::size_t count = 0;
        for (auto t : batch.targets) count += t >= 0 ? 1 : 0;
        if (batch.targets.size() != batch.rows()) throw std::invalid_argument("targets do not match batch shape");
        if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
        if (count == 0) return S(0);
        const S inv = S(1) / static_cast<S>(count);
        S total = 0;
        for (Eigen::Index r = 0; r < logits.rows(); ++r) {
            const auto target = batch.targets[static_cast<std::size_t>(r)];
            if (target < 0) continue;
            const S mx = logits.row(r).maxCoeff();
            RowVec<S> e = (logits.row(r).array() - mx).exp().matrix();
            const S z = e.sum();
            total += std::log(z) + mx - logits(r, target);
            if (dlogits) {
                dlogits->row(r) = e * (inv / z);
                (*dlogits)(r, target) -= inv;
            }
        }
        return total * inv;
    }

    static void linear_backward(const Mat<S>& input, const Mat<S>& dout, S* dw, S* db) {
        MapMat<S>(dw, input.cols(), dout.cols()).noalias() += input.transpose() * dout;
        MapRow<S>(db, dout.cols()) += dout.colwise().sum();
    }

    void run_backward(const TokenBatch& batch, const Cache& c, const Mat<S>& dlogits, std::span<S> grad,
                      BackwardFault fault) const {
        const auto d = static_cast<Eigen::Index>(cfg_.d_model);
        const auto dff = static_cast<Eigen::Index>(cfg_.d_ff);
        const auto V = static_cast<Eigen::Index>(cfg_.vocab_size);
        S* G = grad.data();
        const bool center = fault != BackwardFault::skip_layernorm_centering;

        linear_backward(c.hidden, dlogits, G + layout_.head_w, G + layout_.head_b);
        Mat<S> dx = dlogits * CMapMat<S>(p(layout_.head_w), d, V).transpose();
        if (cfg_.final_norm)
            dx = nn::layer_norm_backward(dx, c.lnf_hat, c.lnf_rstd, p(layout_.lnf_g), G + layout_.lnf_g,
                                         G + layout_.lnf_b, center);

        for (std::size_t li = cfg_.n_layers; li-- > 0;) {
            const auto& L = layout_.layers[li];
            const LayerCache& lc = c.layers[li];

            Mat<S> dout = dx;
            if (lc.mlp_mask.size()) dout.array() *= lc.mlp_mask.array();
            linear_backward(lc.fc_act, dout, G + L.w_proj, G + L.b_proj);
            Mat<S> dfc = dout * CMapMat<S>(p(L.w_proj), dff, d).transpose();
            dfc.array() *= lc.fc_pre.unaryExpr([](S v) { return nn::gelu_grad(v); }).array();
            linear_backward(lc.ln2_out, dfc, G + L.w_fc, G + L.b_fc);
            Mat<S> dln2 = dfc * CMapMat<S>(p(L.w_fc), d, dff).transpose();
            dx += nn::layer_norm_backward(dln2, lc.ln2_hat, lc.ln2_rstd, p(L.ln2_g), G + L.ln2_g, G + L.ln2_b, center);

            Mat<S> dproj = dx;
            if (lc.attn_mask.size()) dproj.array() *= lc.attn_mask.array();
            linear_backward(lc.att, dproj, G + L.w_o, G + L.b_o);
            Mat<S> datt = dproj * CMapMat<S>(p(L.w_o), d, d).transpose();
            Mat<S> dqkv = attend_backward(batch, lc, datt, fault);
            linear_backward(lc.ln1_out, dqkv, G + L.w_qkv, G + L.b_qkv);
            Mat<S> dln1 = dqkv * CMapMat<S>(p(L.w_qkv), d, 3 * d).transpose();
            dx += nn::layer_norm_backward(dln1, lc.ln1_hat, lc.ln1_rstd, p(L.ln1_g), G + L.ln1_g, G + L.ln1_b, center);
        }

        if (c.emb_mask.size()) dx.array() *= c.emb_mask.array();
        for (std::size_t b = 0; b < batch.batch; ++b)
            for (std::size_t t = 0; t < batch.length; ++t) {
                const std::size_t r = b * batch.length + t;
                const auto row = dx.row(static_cast<Eigen::Index>(r));
                MapRow<S>(G + layout_.tok_emb + static_cast<std::size_t>(batch.ids[r]) * cfg_.d_model, d) += row;
                MapRow<S>(G + layout_.type_emb + static_cast<std::size_t>(batch.types[r]) * cfg_.d_model, d) += row;
                MapRow<S>(G + layout_.pos_emb + t * cfg_.d_model, d) += row;
            }
    }

    ModelConfig cfg_;
    ParameterLayout layout_;
    AlignedVector<S> params_;
};

// Per-position next-token distributions.
template <typename S>
Mat<S> softmax_rows(const Mat<S>& logits) {
    Mat<S> out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const S mx = logits.row(r).maxCoeff();
        out.row(r) = (logits.row(r).array() - mx).exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

using LanguageModel = Transformer<float>;

}  // namespace pearlm

#include <gtest/gtest.h>

#include <random>

#include "pearlm/model.hpp"

using namespace pearlm;

namespace {

ModelConfig tiny_config(std::size_t vocab = 23, std::uint64_t seed = 1) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 32;
    c.context_length = 9;
    c.init_std = 0.3;
    c.seed = seed;
    return c;
}

TokenSequence random_sequence(std::mt19937_64& rng, std::size_t vocab, std::size_t length) {
    TokenSequence s;
    for (std::size_t i = 0; i < length; ++i) {
        const auto id = static_cast<std::uint32_t>(rng() % vocab);
        s.push_back(TokenId(id), static_cast<TokenType>(rng() % kNumTokenTypes));
    }
    return s;
}

// Attention by materializing the full score matrix with -inf above the diagonal.
Mat<double> attention_reference(const Mat<double>& q, const Mat<double>& k, const Mat<double>& v) {
    const auto T = q.rows();
    Mat<double> scores = (q * k.transpose()) / std::sqrt(static_cast<double>(q.cols()));
    for (Eigen::Index i = 0; i < T; ++i)
        for (Eigen::Index j = i + 1; j < T; ++j) scores(i, j) = -std::numeric_limits<double>::infinity();
    Mat<double> weights = Mat<double>::Zero(T, T);
    for (Eigen::Index i = 0; i < T; ++i) {
        double total = 0;
        for (Eigen::Index j = 0; j < T; ++j) total += std::exp(scores(i, j));
        for (Eigen::Index j = 0; j < T; ++j) weights(i, j) = std::exp(scores(i, j)) / total;
    }
    return weights * v;
}

}  // namespace

TEST(Embed, EqualsSumOfThreeLookups) {
    Transformer<float> m(tiny_config());
    std::mt19937_64 rng(4);
    const auto seq = random_sequence(rng, 23, 9);
    const auto x = m.embed(seq);
    for (std::size_t t = 0; t < seq.size(); ++t) {
        const auto tt = static_cast<Eigen::Index>(t);
        RowVec<float> expected = m.token_embedding().row(seq.ids[t].value) +
                                 m.type_embedding().row(static_cast<Eigen::Index>(seq.types[t])) +
                                 m.position_embedding().row(tt);
        for (Eigen::Index j = 0; j < x.cols(); ++j) EXPECT_EQ(x(tt, j), expected(j));
    }
}

TEST(Embed, ZeroingTwoTablesLeavesTheThird) {
    std::mt19937_64 rng(5);
    const auto seq = random_sequence(rng, 23, 7);
    for (int keep = 0; keep < 3; ++keep) {
        Transformer<float> m(tiny_config());
        if (keep != 0) m.token_embedding().setZero();
        if (keep != 1) m.type_embedding().setZero();
        if (keep != 2) m.position_embedding().setZero();
        const auto x = m.embed(seq);
        for (std::size_t t = 0; t < seq.size(); ++t) {
            const auto tt = static_cast<Eigen::Index>(t);
            RowVec<float> expected = keep == 0   ? RowVec<float>(m.token_embedding().row(seq.ids[t].value))
                                     : keep == 1 ? RowVec<float>(m.type_embedding().row(static_cast<Eigen::Index>(seq.types[t])))
                                                 : RowVec<float>(m.position_embedding().row(tt));
            EXPECT_TRUE(x.row(tt) == expected) << "keep=" << keep << " t=" << t;
        }
    }
}

TEST(Attention, MatchesFullMatrixReference) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0, 1);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index T = 1 + trial % 9, d = 4;
        Mat<double> q(T, d), k(T, d), v(T, d);
        for (auto* m : {&q, &k, &v})
            for (Eigen::Index i = 0; i < T; ++i)
                for (Eigen::Index j = 0; j < d; ++j) (*m)(i, j) = n(rng);
        const auto got = nn::attention(q, k, v, true);
        const auto want = attention_reference(q, k, v);
        EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Forward, CausalPerturbationLeavesEarlierLogitsUnchanged) {
    Transformer<float> m(tiny_config());
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t len = 2 + rng() % 8;
        auto seq = random_sequence(rng, 23, len);
        const std::size_t j = 1 + rng() % (len - 1);
        const auto before = m.forward(seq);
        seq.ids[j] = TokenId(static_cast<std::uint32_t>((seq.ids[j].value + 1 + rng() % 22) % 23));
        seq.types[j] = static_cast<TokenType>((static_cast<int>(seq.types[j]) + 1) % 3);
        const auto after = m.forward(seq);
        for (std::size_t i = 0; i < j; ++i)
            EXPECT_TRUE(before.row(static_cast<Eigen::Index>(i)) == after.row(static_cast<Eigen::Index>(i)))
                << "trial " << trial << " position " << i << " perturbed " << j;
        EXPECT_FALSE(before.row(static_cast<Eigen::Index>(j)) == after.row(static_cast<Eigen::Index>(j)));
    }
}

TEST(Forward, PrefixRerunMatchesFullSequence) {
    Transformer<double> m(tiny_config());
    std::mt19937_64 rng(8);
    const auto seq = random_sequence(rng, 23, 9);
    const auto full = m.forward(seq);
    for (std::size_t len = 1; len < seq.size(); ++len) {
        TokenSequence prefix;
        for (std::size_t t = 0; t < len; ++t) prefix.push_back(seq.ids[t], seq.types[t]);
        const auto part = m.forward(prefix);
        EXPECT_LT((part - full.topRows(static_cast<Eigen::Index>(len))).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Forward, PaddedBatchMatchesSingles) {
    Transformer<double> m(tiny_config());
    std::mt19937_64 rng(9);
    std::vector<TokenSequence> seqs{random_sequence(rng, 23, 3), random_sequence(rng, 23, 9),
                                    random_sequence(rng, 23, 5)};
    const auto batch = TokenBatch::for_inference(seqs);
    const auto logits = m.forward(batch);
    for (std::size_t b = 0; b < seqs.size(); ++b) {
        const auto single = m.forward(seqs[b]);
        const auto rows = logits.middleRows(static_cast<Eigen::Index>(b * batch.length), single.rows());
        EXPECT_LT((rows - single).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Forward, OutputShapeCoversVocabulary) {
    Transformer<float> m(tiny_config(31));
    std::mt19937_64 rng(10);
    const auto logits = m.forward(random_sequence(rng, 31, 4));
    EXPECT_EQ(logits.rows(), 4);
    EXPECT_EQ(logits.cols(), 31);
    const auto p = softmax_rows(logits);
    for (Eigen::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0f, 1e-5f);
}

TEST(Forward, RejectsOverlongAndOutOfVocabulary) {
    Transformer<float> m(tiny_config());
    std::mt19937_64 rng(11);
    EXPECT_THROW(m.forward(random_sequence(rng, 23, 10)), StructuralError);
    TokenSequence s;
    s.push_back(TokenId(23u), TokenType::entity);
    EXPECT_THROW(m.forward(s), StructuralError);
}

TEST(Forward, NonFiniteActivationNamesLayer) {
    Transformer<float> m(tiny_config());
    const auto& L = m.layout().layers[0];
    m.parameters()[L.w_fc] = std::numeric_limits<float>::quiet_NaN();
    std::mt19937_64 rng(12);
    try {
        m.forward(random_sequence(rng, 23, 4));
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("decoder layer 0"), std::string::npos) << e.what();
    }
}

TEST(Init, DeterministicPerSeed) {
    Transformer<float> a(tiny_config(23, 3)), b(tiny_config(23, 3)), c(tiny_config(23, 4));
    EXPECT_TRUE(std::ranges::equal(a.parameters(), b.parameters()));
    EXPECT_FALSE(std::ranges::equal(a.parameters(), c.parameters()));
}

TEST(Init, CastPreservesForward) {
    Transformer<float> f(tiny_config());
    const auto d = f.cast<double>();
    std::mt19937_64 rng(13);
    const auto seq = random_sequence(rng, 23, 6);
    EXPECT_LT((f.forward(seq).cast<double>() - d.forward(seq)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(ModelConfig, Presets) {
    const auto s = ModelConfig::preset("small");
    EXPECT_EQ(s.d_model, 128u);
    EXPECT_EQ(s.n_layers, 4u);
    EXPECT_EQ(s.n_heads, 4u);
    EXPECT_EQ(s.d_ff, 512u);
    EXPECT_EQ(ModelConfig::preset("distil-like").n_layers, 6u);
    EXPECT_EQ(ModelConfig::preset("base-like").n_layers, 12u);
    EXPECT_THROW(ModelConfig::preset("huge"), ConfigError);
    EXPECT_EQ(ModelConfig::context_for_hops(3), 9u);
    EXPECT_EQ(ModelConfig::context_for_hops(5), 13u);
}

TEST(ModelConfig, RejectsIndivisibleHeads) {
    auto c = tiny_config();
    c.n_heads = 3;
    EXPECT_THROW(Transformer<float>{c}, ConfigError);
}

TEST(ParameterLayout, TensorsTileTheVector) {
    Transformer<float> m(tiny_config());
    std::size_t next = 0;
    for (const auto& t : m.layout().tensors) {
        EXPECT_EQ(t.offset, next) << t.name;
        next += t.rows * t.cols;
    }
    EXPECT_EQ(next, m.parameters().size());
}

#include "kare/context_encoder.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace kare;

namespace {

using Rows = std::vector<std::vector<double>>;

Rows to_rows(const Matrix& m) {
    Rows r(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) r[i][j] = m(i, j);
    return r;
}

std::vector<double> norm_row(const std::vector<double>& x, const Vector& g, const Vector& b) {
    double mu = 0, var = 0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(x.size());
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x.size());
    std::vector<double> y(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) y[k] = g(k) * (x[k] - mu) / std::sqrt(var + 1e-5) + b(k);
    return y;
}

std::vector<double> lin(const Matrix& w, const Vector& b, const std::vector<double>& x) {
    std::vector<double> y(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        double s = b(i);
        for (Eigen::Index j = 0; j < w.cols(); ++j) s += w(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

// Scalar-loop transformer over the same weights, one head at a time.
std::vector<Rows> oracle(const std::vector<std::size_t>& words, const SurrogateWeights& w, std::size_t heads) {
    std::vector<std::size_t> ids = {w.begin_id()};
    ids.insert(ids.end(), words.begin(), words.end());
    ids.push_back(w.end_id());
    const std::size_t T = ids.size(), h = w.hidden(), dk = h / heads;
    Rows x(T);
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> e(h);
        for (std::size_t k = 0; k < h; ++k) e[k] = w.token(ids[t], k) + w.position(t, k);
        x[t] = norm_row(e, w.emb_ln_g, w.emb_ln_b);
    }
    std::vector<Rows> out;
    for (const auto& L : w.layers) {
        Rows q(T), k(T), v(T);
        for (std::size_t t = 0; t < T; ++t) {
            q[t] = lin(L.wq, L.bq, x[t]);
            k[t] = lin(L.wk, L.bk, x[t]);
            v[t] = lin(L.wv, L.bv, x[t]);
        }
        Rows next(T);
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<double> ctx(h, 0.0);
            for (std::size_t hd = 0; hd < heads; ++hd) {
                std::vector<double> s(T);
                double mx = -1e300, z = 0;
                for (std::size_t u = 0; u < T; ++u) {
                    double dot = 0;
                    for (std::size_t c = hd * dk; c < (hd + 1) * dk; ++c) dot += q[t][c] * k[u][c];
                    s[u] = dot / std::sqrt(static_cast<double>(dk));
                    mx = std::max(mx, s[u]);
                }
                for (auto& sv : s) z += (sv = std::exp(sv - mx));
                for (std::size_t u = 0; u < T; ++u)
                    for (std::size_t c = hd * dk; c < (hd + 1) * dk; ++c) ctx[c] += s[u] / z * v[u][c];
            }
            auto a = lin(L.wo, L.bo, ctx);
            for (std::size_t c = 0; c < h; ++c) a[c] += x[t][c];
            const auto x1 = norm_row(a, L.ln1_g, L.ln1_b);
            auto f = lin(L.w1, L.b1, x1);
            for (auto& fv : f) fv = 0.5 * fv * (1.0 + std::erf(fv / std::sqrt(2.0)));
            auto y = lin(L.w2, L.b2, f);
            for (std::size_t c = 0; c < h; ++c) y[c] += x1[c];
            next[t] = norm_row(y, L.ln2_g, L.ln2_b);
        }
        x = next;
        out.push_back(x);
    }
    return out;
}

SurrogateWeights random_weights(const SurrogateConfig& cfg, std::size_t vocab, std::uint64_t seed) {
    SurrogateWeights w(cfg, vocab);
    Rng rng(seed);
    w.init(rng);
    for (auto& l : w.layers) {
        for (Vector* v : {&l.bq, &l.bk, &l.bv, &l.bo, &l.b1, &l.b2, &l.ln1_b, &l.ln2_b}) uniform_fill(*v, rng, 0.3);
        for (Vector* v : {&l.ln1_g, &l.ln2_g}) {
            uniform_fill(*v, rng, 0.3);
            v->array() += 1.0;
        }
    }
    return w;
}

}  // namespace

TEST(Surrogate, StackShape) {
    SurrogateConfig cfg;
    cfg.layers = 3;
    cfg.heads = 2;
    cfg.hidden = 6;
    cfg.ff = 10;
    cfg.max_len = 16;
    const auto w = random_weights(cfg, 9, 1);
    const auto stack = encode_context({1, 2, 3, 4}, w, cfg.heads);
    ASSERT_EQ(stack.depth(), 3u);
    ASSERT_EQ(stack.length(), 6u);
    EXPECT_TRUE(stack.special.front());
    EXPECT_TRUE(stack.special.back());
    for (const auto& layer : stack.layers) {
        EXPECT_EQ(layer.rows(), 6);
        EXPECT_EQ(layer.cols(), 6);
    }
}

TEST(Surrogate, MatchesScalarOracleSingleToken) {
    SurrogateConfig cfg;
    cfg.layers = 1;
    cfg.heads = 1;
    cfg.hidden = 2;
    cfg.ff = 3;
    cfg.max_len = 4;
    const auto w = random_weights(cfg, 3, 5);
    const auto stack = encode_context({2}, w, 1);
    const auto ref = oracle({2}, w, 1);
    const auto got = to_rows(stack.layers[0]);
    for (std::size_t t = 0; t < got.size(); ++t)
        for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(got[t][k], ref[0][t][k], 1e-12);
}

TEST(Surrogate, MatchesScalarOracleMultiHead) {
    SurrogateConfig cfg;
    cfg.layers = 2;
    cfg.heads = 3;
    cfg.hidden = 6;
    cfg.ff = 7;
    cfg.max_len = 10;
    const auto w = random_weights(cfg, 11, 9);
    const std::vector<std::size_t> words = {0, 5, 10, 3, 3};
    const auto stack = encode_context(words, w, cfg.heads);
    const auto ref = oracle(words, w, cfg.heads);
    for (std::size_t l = 0; l < 2; ++l) {
        const auto got = to_rows(stack.layers[l]);
        for (std::size_t t = 0; t < got.size(); ++t)
            for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(got[t][k], ref[l][t][k], 1e-10);
    }
}

TEST(Surrogate, TruncatesWithWarning) {
    SurrogateConfig cfg;
    cfg.layers = 1;
    cfg.heads = 1;
    cfg.hidden = 4;
    cfg.ff = 4;
    cfg.max_len = 3;
    const auto w = random_weights(cfg, 4, 2);
    std::vector<std::string> seen;
    ScopedWarningSink sink([&](std::string_view m) { seen.emplace_back(m); });
    const auto stack = encode_context({0, 1, 2, 3, 0}, w, 1);
    EXPECT_EQ(stack.length(), 5u);
    ASSERT_EQ(seen.size(), 1u);
    EXPECT_NE(seen[0].find("truncated"), std::string::npos);
    EXPECT_THROW(encode_context({4}, w, 1), Error);
}

TEST(Surrogate, BadConfig) {
    SurrogateConfig cfg;
    cfg.hidden = 10;
    cfg.heads = 4;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.heads = 2;
    cfg.layers = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Pooling, MeanSkipsFramingRows) {
    LayerStack s;
    Matrix m(4, 2);
    m << 100, 100, 1, 2, 3, 4, -100, -100;
    s.layers = {m};
    s.special = {true, false, false, true};
    EXPECT_EQ(pool_context(s, 1), Eigen::Vector2d(2, 3));
    EXPECT_EQ(pool_context(s, 1, PoolMode::Cls), Eigen::Vector2d(100, 100));
    EXPECT_THROW(pool_context(s, 2), Error);
    s.special = {true, true, true, true};
    EXPECT_THROW(pool_context(s, 1), Error);
}

TEST(Pooling, LayerSelection) {
    EXPECT_EQ(resolve_layer(-1, 4), 3u);
    EXPECT_EQ(resolve_layer(0, 4), 4u);
    EXPECT_EQ(resolve_layer(2, 4), 2u);
    EXPECT_EQ(resolve_layer(-1, 1), 1u);
    EXPECT_THROW(resolve_layer(5, 4), ConfigError);
    EXPECT_THROW(resolve_layer(-4, 4), ConfigError);
    EXPECT_THROW(resolve_layer(1, 0), Error);
}

TEST(Pooling, SelectsTheRequestedLayer) {
    LayerStack s;
    s.layers = {Matrix::Constant(3, 2, 1.0), Matrix::Constant(3, 2, 2.0), Matrix::Constant(3, 2, 3.0)};
    s.special = {true, false, true};
    EXPECT_EQ(pool_context(s, resolve_layer(-1, 3)), Eigen::Vector2d(2, 2));
}

TEST(ExternalContextFile, LoadsAndAligns) {
    std::istringstream in(R"({"id":"t1","tokens":["a","b"],"vectors":[[1,2],[3,4]]}
{"id":7,"tokens":["c"],"vectors":[[5,6]]}
)");
    const auto ctx = ExternalContext::parse(in, "ctx.jsonl");
    EXPECT_EQ(ctx.size(), 2u);
    EXPECT_EQ(ctx.width(), 2u);
    EXPECT_TRUE(ctx.contains("7"));
    const auto stack = ctx.stack("t1", 2, 2);
    EXPECT_EQ(stack.depth(), 2u);
    EXPECT_EQ(pool_context(stack, 1), Eigen::Vector2d(2, 3));
    EXPECT_THROW(ctx.vectors("t1", 3, 2), AlignmentError);
    EXPECT_THROW(ctx.vectors("t1", 2, 5), AlignmentError);
    EXPECT_THROW(ctx.at("missing"), Error);
}

TEST(ExternalContextFile, RejectsMalformedLines) {
    std::istringstream count(R"({"id":"a","tokens":["x","y"],"vectors":[[1]]})");
    EXPECT_THROW(ExternalContext::parse(count), AlignmentError);
    std::istringstream width("{\"id\":\"a\",\"tokens\":[\"x\"],\"vectors\":[[1,2]]}\n{\"id\":\"b\",\"tokens\":[\"x\"],\"vectors\":[[1]]}\n");
    EXPECT_THROW(ExternalContext::parse(width), AlignmentError);
    std::istringstream dup("{\"id\":\"a\",\"tokens\":[],\"vectors\":[]}\n{\"id\":\"a\",\"tokens\":[],\"vectors\":[]}\n");
    EXPECT_THROW(ExternalContext::parse(dup), DuplicateError);
    std::istringstream junk("{\"id\":\n");
    try {
        ExternalContext::parse(junk, "c.jsonl");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 1u);
    }
}

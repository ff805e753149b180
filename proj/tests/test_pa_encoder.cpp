#include "kare/pa_encoder.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace kare;

namespace {

AttentionParams unit_params(bool position) {
    AttentionParams p(1, 1, position ? std::optional<std::size_t>(1) : std::nullopt);
    p.W_h.setOnes();
    p.W_q.setOnes();
    if (position) {
        p.W_c.setOnes();
        p.W_d.setOnes();
    }
    p.v.setOnes();
    return p;
}

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    uniform_fill(m, rng, 1.0);
    return m;
}

}  // namespace

TEST(Conv, HandConvolution) {
    FilterBank bank({3}, 1, 1);
    bank.weights[0].setOnes();
    Matrix x(3, 1);
    x << 1, 2, 3;
    const Matrix h = conv_encode(x, bank);
    EXPECT_NEAR(h(0, 0), std::tanh(3.0), 1e-12);
    EXPECT_NEAR(h(1, 0), std::tanh(6.0), 1e-12);
    EXPECT_NEAR(h(2, 0), std::tanh(5.0), 1e-12);
}

TEST(Conv, EvenWindowPadsRight) {
    // m = 2: left pad 0, right pad 1, so h_i = tanh(x_i + x_{i+1}).
    FilterBank bank({2}, 1, 1);
    bank.weights[0].setOnes();
    Matrix x(3, 1);
    x << 1, 2, 3;
    const Matrix h = conv_encode(x, bank);
    EXPECT_NEAR(h(0, 0), std::tanh(3.0), 1e-12);
    EXPECT_NEAR(h(2, 0), std::tanh(3.0), 1e-12);
}

TEST(Conv, ShapesAndZeros) {
    FilterBank bank({2, 3}, 5, 4);
    EXPECT_EQ(bank.output_width(), 10u);
    const Matrix h = conv_encode(Matrix::Zero(7, 4), bank);
    EXPECT_EQ(h.rows(), 7);
    EXPECT_EQ(h.cols(), 10);
    EXPECT_EQ(h.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_THROW(conv_encode(Matrix::Zero(7, 3), bank), ShapeError);
}

TEST(Aggregate, Mean) {
    Matrix h(2, 2);
    h << 1, 3, 3, 5;
    EXPECT_EQ(aggregate_vector(h), Eigen::Vector2d(2, 4));
    EXPECT_THROW(aggregate_vector(Matrix(0, 2)), Error);
}

TEST(Attention, HandCase) {
    Matrix h(2, 1);
    h << 0, 1;
    Vector q(1);
    q << 0.5;
    const Matrix P = Matrix::Zero(2, 1);
    const auto p = unit_params(true);
    const auto st = attend(h, q, &P, &P, p);
    const double u0 = std::tanh(0.5), u1 = std::tanh(1.5);
    const double a1 = std::exp(u1) / (std::exp(u0) + std::exp(u1));
    EXPECT_NEAR(st.scores(0), u0, 1e-12);
    EXPECT_NEAR(st.scores(1), u1, 1e-12);
    EXPECT_NEAR(st.scores(0), 0.46212, 1e-5);
    EXPECT_NEAR(st.scores(1), 0.90515, 1e-5);
    const auto [trace, R] = position_attention(h, q, P, P, p);
    EXPECT_NEAR(trace.alphas[0], 1.0 - a1, 1e-12);
    EXPECT_NEAR(trace.alphas[1], a1, 1e-12);
    EXPECT_NEAR(R(0), a1, 1e-12);
    EXPECT_NEAR(a1, 0.608981, 1e-6);
    const auto [vt, vR] = vanilla_attention(h, q, unit_params(false));
    EXPECT_NEAR(vR(0), R(0), 1e-12);
}

TEST(Attention, SingleTokenAndUniform) {
    Rng rng(3);
    const Matrix h1 = random_matrix(rng, 1, 4);
    AttentionParams p(3, 4, 2);
    p.init(rng);
    const Matrix P1 = random_matrix(rng, 1, 2);
    const auto [t1, R1] = position_attention(h1, aggregate_vector(h1), P1, P1, p);
    EXPECT_DOUBLE_EQ(t1.alphas[0], 1.0);
    EXPECT_TRUE(R1.isApprox(h1.row(0).transpose()));

    p.v.setZero();
    const Matrix h = random_matrix(rng, 5, 4);
    const Matrix P = random_matrix(rng, 5, 2);
    const auto [t, R] = position_attention(h, aggregate_vector(h), P, P, p);
    for (double a : t.alphas) EXPECT_NEAR(a, 0.2, 1e-15);
}

TEST(Attention, ZeroPositionWeightsMatchVanilla) {
    Rng rng(8);
    AttentionParams p(4, 3, 2);
    p.init(rng);
    p.W_c.setZero();
    p.W_d.setZero();
    const Matrix h = random_matrix(rng, 6, 3);
    const Matrix Pc = random_matrix(rng, 6, 2), Pd = random_matrix(rng, 6, 2);
    const Vector q = aggregate_vector(h);
    const auto [a, Ra] = position_attention(h, q, Pc, Pd, p);
    const auto [b, Rb] = vanilla_attention(h, q, p);
    EXPECT_EQ(a.alphas, b.alphas);
    EXPECT_EQ(Ra, Rb);
}

TEST(Attention, NormalizedAndInsideHull) {
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.below(12));
        AttentionParams p(3, 4, 2);
        p.init(rng);
        const Matrix h = random_matrix(rng, n, 4);
        const Matrix Pc = random_matrix(rng, n, 2), Pd = random_matrix(rng, n, 2);
        const auto [t, R] = position_attention(h, aggregate_vector(h), Pc, Pd, p);
        double sum = 0;
        for (double a : t.alphas) {
            EXPECT_GT(a, 0.0);
            sum += a;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
        for (Eigen::Index k = 0; k < 4; ++k) {
            EXPECT_GE(R(k), h.col(k).minCoeff() - 1e-12);
            EXPECT_LE(R(k), h.col(k).maxCoeff() + 1e-12);
        }
    }
}

TEST(Attention, ShapeErrors) {
    AttentionParams p(3, 4, 2);
    const Matrix h = Matrix::Zero(2, 5);
    const Matrix P = Matrix::Zero(2, 2);
    EXPECT_THROW(position_attention(h, Vector::Zero(5), P, P, p), ShapeError);
    EXPECT_THROW(position_attention(Matrix::Zero(2, 4), Vector::Zero(4), Matrix::Zero(3, 2), P, p), ShapeError);
}

// Central differences of a scalar function of R = attention(conv(x)).
TEST(Attention, EncoderGradientsMatchFiniteDifferences) {
    Rng rng(31);
    FilterBank bank({2, 3}, 3, 4);
    bank.init(rng);
    for (auto& b : bank.biases) uniform_fill(b, rng, 0.5);
    AttentionParams p(4, bank.output_width(), 2);
    p.init(rng);
    const Matrix x = random_matrix(rng, 5, 4);
    const Matrix Pc = random_matrix(rng, 5, 2), Pd = random_matrix(rng, 5, 2);
    Vector c(static_cast<Eigen::Index>(bank.output_width()));
    uniform_fill(c, rng, 1.0);

    auto objective = [&] {
        const Matrix h = conv_encode(x, bank);
        return c.dot(attend(h, aggregate_vector(h), &Pc, &Pd, p).R);
    };

    const Matrix h = conv_encode(x, bank);
    const Vector q = aggregate_vector(h);
    const auto st = attend(h, q, &Pc, &Pd, p);
    AttentionParams gp = p;
    for (Matrix* m : {&gp.W_h, &gp.W_q, &gp.W_c, &gp.W_d}) m->setZero();
    gp.v.setZero();
    Matrix dh = Matrix::Zero(h.rows(), h.cols());
    Vector dq = Vector::Zero(q.size());
    attention_backward(h, q, &Pc, &Pd, p, st, c, &gp, dh, dq, nullptr, nullptr);
    dh.rowwise() += dq.transpose() / static_cast<double>(h.rows());
    FilterBank gb = bank;
    for (auto& w : gb.weights) w.setZero();
    for (auto& b : gb.biases) b.setZero();
    conv_backward(x, bank, h, dh, &gb, nullptr);

    auto check = [&](auto& value, const auto& grad) {
        for (Eigen::Index k = 0; k < value.size(); ++k) {
            const double saved = value.data()[k];
            value.data()[k] = saved + 1e-6;
            const double up = objective();
            value.data()[k] = saved - 1e-6;
            const double down = objective();
            value.data()[k] = saved;
            const double numeric = (up - down) / 2e-6;
            const double analytic = grad.data()[k];
            EXPECT_LT(std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6}), 1e-4);
        }
    };
    check(p.W_h, gp.W_h);
    check(p.W_q, gp.W_q);
    check(p.W_c, gp.W_c);
    check(p.W_d, gp.W_d);
    check(p.v, gp.v);
    for (std::size_t w = 0; w < bank.windows.size(); ++w) {
        check(bank.weights[w], gb.weights[w]);
        check(bank.biases[w], gb.biases[w]);
    }
}

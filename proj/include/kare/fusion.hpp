#pragma once

#include "kare/common.hpp"
#include "kare/corpus.hpp"
#include "kare/pa_encoder.hpp"

#include <algorithm>
#include <cmath>

namespace kare {

/// Gate and classifier weights. W_R/W_B/W_g are empty when the corresponding
/// branch or the gate is switched off.
struct FusionParams {
    Matrix W_R;  // d_f x d_h
    Matrix W_B;  // d_f x h_b
    Matrix W_g;  // d_f x (d_h + h_b)
    Matrix W;    // 4 x d_f (or 4 x (d_h + h_b) for concatenation)
    Vector a;    // 4
};

struct GateResult {
    Vector h_R;
    Vector h_B;
    Vector g;
    Vector F;
};

inline double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline Vector concat(const Vector& a, const Vector& b) {
    Vector out(a.size() + b.size());
    out << a, b;
    return out;
}

/// h_R = tanh(W_R R), h_B = tanh(W_B B), g = sigmoid(W_g [R; B]),
/// F = g * h_R + (1 - g) * h_B.
inline GateResult gated_fuse(const Vector& R, const Vector& B, const FusionParams& p) {
    require_shape(p.W_R.cols() == R.size() && p.W_B.cols() == B.size(), "fusion input widths");
    require_shape(p.W_R.rows() == p.W_B.rows() && p.W_g.rows() == p.W_R.rows(), "fusion output width");
    require_shape(p.W_g.cols() == R.size() + B.size(), "gate input width");
    GateResult r;
    r.h_R = (p.W_R * R).array().tanh().matrix();
    r.h_B = (p.W_B * B).array().tanh().matrix();
    r.g = (p.W_g * concat(R, B)).unaryExpr([](double z) { return sigmoid(z); });
    r.F = (r.g.array() * r.h_R.array() + (1.0 - r.g.array()) * r.h_B.array()).matrix();
    return r;
}

/// Backward of gated_fuse. Accumulates W_R, W_B, W_g gradients into `grad`
/// when non-null and returns dR, dB through the out-parameters.
inline void gated_fuse_backward(const Vector& R, const Vector& B, const FusionParams& p, const GateResult& r,
                                const Vector& dF, FusionParams* grad, Vector& dR, Vector& dB) {
    const Vector dpre_R = (dF.array() * r.g.array() * (1.0 - r.h_R.array().square())).matrix();
    const Vector dpre_B = (dF.array() * (1.0 - r.g.array()) * (1.0 - r.h_B.array().square())).matrix();
    const Vector dz = (dF.array() * (r.h_R - r.h_B).array() * r.g.array() * (1.0 - r.g.array())).matrix();
    if (grad) {
        grad->W_R.noalias() += dpre_R * R.transpose();
        grad->W_B.noalias() += dpre_B * B.transpose();
        grad->W_g.noalias() += dz * concat(R, B).transpose();
    }
    const Vector dRB = p.W_g.transpose() * dz;
    dR = p.W_R.transpose() * dpre_R + dRB.head(R.size());
    dB = p.W_B.transpose() * dpre_B + dRB.tail(B.size());
}

/// softmax(W F + a).
inline Vector classify(const Vector& F, const FusionParams& p) {
    require_shape(p.W.cols() == F.size() && p.W.rows() == p.a.size(), "classifier weights");
    return softmax(p.W * F + p.a);
}

/// Lowest index wins ties.
inline RelationLabel argmax_label(const Vector& probs) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < probs.size(); ++i) {
        if (probs(i) > probs(best)) best = i;
    }
    return label_at(static_cast<std::size_t>(best));
}

inline constexpr double kProbabilityFloor = 1e-12;

/// Cross-entropy -log p[gold]; a probability below 1e-12 is clamped.
inline double cross_entropy(const Vector& probs, RelationLabel gold) {
    const double p = probs(static_cast<Eigen::Index>(index_of(gold)));
    if (p < kProbabilityFloor) {
        warn("gold-class probability " + std::to_string(p) + " clamped to 1e-12");
        return -std::log(kProbabilityFloor);
    }
    return -std::log(p);
}

}  // namespace kare

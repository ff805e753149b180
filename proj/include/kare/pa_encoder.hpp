#pragma once

#include "kare/common.hpp"
#include "kare/random.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace kare {

/// Multi-window filter bank. For window m the weights are stored flattened as
/// filters x (m * input_width): column j * input_width + k multiplies feature k
/// of the j-th row inside the window.
struct FilterBank {
    std::vector<int> windows;
    std::vector<Matrix> weights;
    std::vector<Vector> biases;

    FilterBank() = default;
    FilterBank(std::vector<int> window_sizes, std::size_t filters, std::size_t input_width)
        : windows(std::move(window_sizes)) {
        if (windows.empty()) throw ConfigError("filter bank needs at least one window size");
        for (int m : windows) {
            if (m < 1) throw ConfigError("window sizes must be >= 1");
            weights.push_back(Matrix::Zero(static_cast<Eigen::Index>(filters), m * static_cast<Eigen::Index>(input_width)));
            biases.push_back(Vector::Zero(static_cast<Eigen::Index>(filters)));
        }
    }

    std::size_t filters() const { return weights.empty() ? 0 : static_cast<std::size_t>(weights[0].rows()); }
    std::size_t input_width() const {
        return weights.empty() ? 0 : static_cast<std::size_t>(weights[0].cols() / windows[0]);
    }
    std::size_t output_width() const { return filters() * windows.size(); }

    void init(Rng& rng) {
        for (std::size_t w = 0; w < windows.size(); ++w) {
            glorot_fill(weights[w], rng, static_cast<double>(weights[w].cols()), static_cast<double>(weights[w].rows()));
            biases[w].setZero();
        }
    }
};

namespace detail {

inline Eigen::Index left_pad(int m) { return (m - 1) / 2; }

// Rows of the zero-padded windows: row i = x̄[i], ..., x̄[i+m-1] flattened.
inline Matrix unfold(const Matrix& x, int m) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    const Eigen::Index lp = left_pad(m);
    Matrix out = Matrix::Zero(n, m * d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            const Eigen::Index src = i - lp + j;
            if (src >= 0 && src < n) out.block(i, j * d, 1, d) = x.row(src);
        }
    }
    return out;
}

inline void fold_add(const Matrix& windows, int m, Matrix& dx) {
    const Eigen::Index n = dx.rows();
    const Eigen::Index d = dx.cols();
    const Eigen::Index lp = left_pad(m);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            const Eigen::Index src = i - lp + j;
            if (src >= 0 && src < n) dx.row(src) += windows.block(i, j * d, 1, d);
        }
    }
}

}  // namespace detail

/// Same-length tanh convolution for each window size (left pad floor((m-1)/2),
/// right pad ceil((m-1)/2)); h_i concatenates every filter output at i.
inline Matrix conv_encode(const Matrix& x, const FilterBank& bank) {
    require_shape(static_cast<std::size_t>(x.cols()) == bank.input_width(),
                  "input width " + std::to_string(x.cols()) + " vs filter bank width " + std::to_string(bank.input_width()));
    const Eigen::Index f = static_cast<Eigen::Index>(bank.filters());
    Matrix h(x.rows(), static_cast<Eigen::Index>(bank.output_width()));
    for (std::size_t w = 0; w < bank.windows.size(); ++w) {
        const Matrix cols = detail::unfold(x, bank.windows[w]);
        Matrix pre = cols * bank.weights[w].transpose();
        pre.rowwise() += bank.biases[w].transpose();
        h.middleCols(static_cast<Eigen::Index>(w) * f, f) = pre.array().tanh().matrix();
    }
    return h;
}

/// Accumulates filter gradients into `grad` (when non-null) and input
/// gradients into `dx` (when non-null). `h` is the forward output.
inline void conv_backward(const Matrix& x, const FilterBank& bank, const Matrix& h, const Matrix& dh, FilterBank* grad,
                          Matrix* dx) {
    const Eigen::Index f = static_cast<Eigen::Index>(bank.filters());
    for (std::size_t w = 0; w < bank.windows.size(); ++w) {
        const auto out = h.middleCols(static_cast<Eigen::Index>(w) * f, f);
        const Matrix dpre =
            (dh.middleCols(static_cast<Eigen::Index>(w) * f, f).array() * (1.0 - out.array().square())).matrix();
        const Matrix cols = detail::unfold(x, bank.windows[w]);
        if (grad) {
            grad->weights[w].noalias() += dpre.transpose() * cols;
            grad->biases[w] += dpre.colwise().sum().transpose();
        }
        if (dx) detail::fold_add(dpre * bank.weights[w], bank.windows[w], *dx);
    }
}

/// q = mean of the hidden rows.
inline Vector aggregate_vector(const Matrix& h) {
    if (h.rows() == 0) throw Error("aggregate over an empty sequence");
    return h.colwise().mean().transpose();
}

/// Scores u_i = v . tanh(W_h h_i + W_q q [+ W_c Pc_i + W_d Pd_i]).
/// W_c and W_d are empty for the vanilla variant.
struct AttentionParams {
    Matrix W_h;
    Matrix W_q;
    Matrix W_c;
    Matrix W_d;
    Vector v;

    AttentionParams() = default;
    AttentionParams(std::size_t attn_dim, std::size_t hidden_dim, std::optional<std::size_t> position_dim) {
        const auto a = static_cast<Eigen::Index>(attn_dim);
        W_h = Matrix::Zero(a, static_cast<Eigen::Index>(hidden_dim));
        W_q = Matrix::Zero(a, static_cast<Eigen::Index>(hidden_dim));
        if (position_dim) {
            W_c = Matrix::Zero(a, static_cast<Eigen::Index>(*position_dim));
            W_d = Matrix::Zero(a, static_cast<Eigen::Index>(*position_dim));
        }
        v = Vector::Zero(a);
    }

    bool position_aware() const { return W_c.size() > 0; }

    void init(Rng& rng) {
        for (Matrix* m : {&W_h, &W_q, &W_c, &W_d}) {
            if (m->size()) glorot_fill(*m, rng, static_cast<double>(m->cols()), static_cast<double>(m->rows()));
        }
        glorot_fill(v, rng, static_cast<double>(v.size()), 1.0);
    }
};

struct AttentionTrace {
    std::vector<std::string> tokens;
    std::vector<double> alphas;
    std::optional<std::string> predicted;
    std::optional<std::string> gold;
};

// Forward intermediates kept for the backward pass.
struct AttentionState {
    Matrix act;     // tanh(...) rows, n x d_a
    Vector scores;  // u
    Vector alphas;
    Vector R;
};

inline Vector softmax(const Vector& u) {
    Vector e = (u.array() - u.maxCoeff()).exp().matrix();
    return e / e.sum();
}

inline AttentionState attend(const Matrix& h, const Vector& q, const Matrix* Pc, const Matrix* Pd,
                             const AttentionParams& p) {
    const Eigen::Index n = h.rows();
    require_shape(n > 0, "attention over an empty sequence");
    require_shape(p.W_h.cols() == h.cols() && p.W_q.cols() == q.size(), "attention hidden width");
    require_shape(p.W_h.rows() == p.v.size() && p.W_q.rows() == p.v.size(), "attention size d_a");
    Matrix s = h * p.W_h.transpose();
    s.rowwise() += (p.W_q * q).transpose();
    if (p.position_aware()) {
        require_shape(Pc && Pd, "position-aware attention needs both position blocks");
        require_shape(Pc->rows() == n && Pd->rows() == n, "position block length");
        require_shape(p.W_c.cols() == Pc->cols() && p.W_d.cols() == Pd->cols() && p.W_c.rows() == p.v.size() &&
                          p.W_d.rows() == p.v.size(),
                      "position attention weights");
        s.noalias() += *Pc * p.W_c.transpose();
        s.noalias() += *Pd * p.W_d.transpose();
    }
    AttentionState st;
    st.act = s.array().tanh().matrix();
    st.scores = st.act * p.v;
    st.alphas = softmax(st.scores);
    st.R = h.transpose() * st.alphas;
    return st;
}

inline AttentionTrace make_trace(const Vector& alphas, std::vector<std::string> tokens = {}) {
    AttentionTrace t;
    t.tokens = std::move(tokens);
    t.alphas.assign(alphas.data(), alphas.data() + alphas.size());
    return t;
}

/// Entity position-aware attention pooling. Returns the trace and R = sum a_i h_i.
inline std::pair<AttentionTrace, Vector> position_attention(const Matrix& h, const Vector& q, const Matrix& Pc,
                                                            const Matrix& Pd, const AttentionParams& p) {
    require_shape(p.position_aware(), "position attention requires W_c and W_d");
    auto st = attend(h, q, &Pc, &Pd, p);
    return {make_trace(st.alphas), st.R};
}

/// Same scoring without the two position terms; W_c and W_d are ignored.
inline std::pair<AttentionTrace, Vector> vanilla_attention(const Matrix& h, const Vector& q, const AttentionParams& p) {
    AttentionParams plain;
    plain.W_h = p.W_h;
    plain.W_q = p.W_q;
    plain.v = p.v;
    auto st = attend(h, q, nullptr, nullptr, plain);
    return {make_trace(st.alphas), st.R};
}

/// Backward through attend(). Adds parameter gradients to `grad` (if non-null),
/// the direct gradient w.r.t. h into `dh`, w.r.t. q into `dq`, and w.r.t. the
/// position blocks into dPc / dPd when those are non-null.
inline void attention_backward(const Matrix& h, const Vector& q, const Matrix* Pc, const Matrix* Pd,
                               const AttentionParams& p, const AttentionState& st, const Vector& dR,
                               AttentionParams* grad, Matrix& dh, Vector& dq, Matrix* dPc, Matrix* dPd) {
    const Vector dalpha = h * dR;
    const Vector du = (st.alphas.array() * (dalpha.array() - st.alphas.dot(dalpha))).matrix();
    const Matrix ds = ((du * p.v.transpose()).array() * (1.0 - st.act.array().square())).matrix();
    const Vector ds_sum = ds.colwise().sum().transpose();
    if (grad) {
        grad->v.noalias() += st.act.transpose() * du;
        grad->W_h.noalias() += ds.transpose() * h;
        grad->W_q.noalias() += ds_sum * q.transpose();
        if (p.position_aware()) {
            grad->W_c.noalias() += ds.transpose() * *Pc;
            grad->W_d.noalias() += ds.transpose() * *Pd;
        }
    }
    dh.noalias() += ds * p.W_h;
    dh.noalias() += st.alphas * dR.transpose();
    dq.noalias() += p.W_q.transpose() * ds_sum;
    if (p.position_aware()) {
        if (dPc) dPc->noalias() += ds * p.W_c;
        if (dPd) dPd->noalias() += ds * p.W_d;
    }
}

}  // namespace kare

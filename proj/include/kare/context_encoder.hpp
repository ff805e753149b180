#pragma once

#include "kare/common.hpp"
#include "kare/pa_encoder.hpp"
#include "kare/random.hpp"
#include "kare/text.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

namespace kare {

struct SurrogateConfig {
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t hidden = 128;
    std::size_t ff = 512;
    std::size_t max_len = 128;
    bool trainable = true;

    void validate() const {
        if (layers < 1) throw ConfigError("context.layers must be >= 1");
        if (heads < 1 || hidden % heads != 0) throw ConfigError("context.hidden must be divisible by context.heads");
        if (ff < 1 || max_len < 1) throw ConfigError("context.ff and context.max_len must be >= 1");
    }
};

/// Per-layer token representations, L x (tokens x h_b). special[j] marks the
/// begin/end framing rows.
struct LayerStack {
    std::vector<Matrix> layers;
    std::vector<bool> special;

    std::size_t depth() const { return layers.size(); }
    std::size_t length() const { return special.size(); }
};

struct TransformerLayer {
    Matrix wq, wk, wv, wo;
    Vector bq, bk, bv, bo;
    Vector ln1_g, ln1_b;
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;
    Vector ln2_g, ln2_b;
};

/// Learned token + absolute position embeddings, embedding layer norm, then
/// post-norm encoder layers (self-attention, residual, norm, GELU feed-forward,
/// residual, norm). Token rows: vocabulary ids, then <begin>, <end>.
struct SurrogateWeights {
    Matrix token;
    Matrix position;
    Vector emb_ln_g, emb_ln_b;
    std::vector<TransformerLayer> layers;

    SurrogateWeights() = default;
    SurrogateWeights(const SurrogateConfig& cfg, std::size_t vocab_size) {
        cfg.validate();
        const auto h = static_cast<Eigen::Index>(cfg.hidden);
        const auto f = static_cast<Eigen::Index>(cfg.ff);
        token = Matrix::Zero(static_cast<Eigen::Index>(vocab_size + 2), h);
        position = Matrix::Zero(static_cast<Eigen::Index>(cfg.max_len + 2), h);
        emb_ln_g = Vector::Ones(h);
        emb_ln_b = Vector::Zero(h);
        layers.resize(cfg.layers);
        for (auto& l : layers) {
            for (Matrix* m : {&l.wq, &l.wk, &l.wv, &l.wo}) *m = Matrix::Zero(h, h);
            for (Vector* v : {&l.bq, &l.bk, &l.bv, &l.bo, &l.ln1_b, &l.ln2_b}) *v = Vector::Zero(h);
            l.ln1_g = Vector::Ones(h);
            l.ln2_g = Vector::Ones(h);
            l.w1 = Matrix::Zero(f, h);
            l.b1 = Vector::Zero(f);
            l.w2 = Matrix::Zero(h, f);
            l.b2 = Vector::Zero(h);
        }
    }

    std::size_t hidden() const { return static_cast<std::size_t>(token.cols()); }
    std::size_t begin_id() const { return static_cast<std::size_t>(token.rows()) - 2; }
    std::size_t end_id() const { return static_cast<std::size_t>(token.rows()) - 1; }
    std::size_t max_len() const { return static_cast<std::size_t>(position.rows()) - 2; }

    void init(Rng& rng) {
        uniform_fill(token, rng, 0.1);
        uniform_fill(position, rng, 0.1);
        for (auto& l : layers) {
            for (Matrix* m : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2}) {
                glorot_fill(*m, rng, static_cast<double>(m->cols()), static_cast<double>(m->rows()));
            }
        }
    }

    /// Calls f(name, tensor_of_each_set...) for every tensor, walking several
    /// identically-shaped weight sets in lockstep (e.g. values and gradients).
    template <class F, class... W>
    static void for_each(const std::string& prefix, F&& f, W&... ws) {
        f(prefix + "token", ws.token...);
        f(prefix + "position", ws.position...);
        f(prefix + "emb_ln.gamma", ws.emb_ln_g...);
        f(prefix + "emb_ln.beta", ws.emb_ln_b...);
        const std::size_t depth = std::get<0>(std::forward_as_tuple(ws...)).layers.size();
        for (std::size_t i = 0; i < depth; ++i) {
            const std::string p = prefix + "layer" + std::to_string(i) + ".";
            f(p + "wq", ws.layers[i].wq...);
            f(p + "bq", ws.layers[i].bq...);
            f(p + "wk", ws.layers[i].wk...);
            f(p + "bk", ws.layers[i].bk...);
            f(p + "wv", ws.layers[i].wv...);
            f(p + "bv", ws.layers[i].bv...);
            f(p + "wo", ws.layers[i].wo...);
            f(p + "bo", ws.layers[i].bo...);
            f(p + "ln1.gamma", ws.layers[i].ln1_g...);
            f(p + "ln1.beta", ws.layers[i].ln1_b...);
            f(p + "w1", ws.layers[i].w1...);
            f(p + "b1", ws.layers[i].b1...);
            f(p + "w2", ws.layers[i].w2...);
            f(p + "b2", ws.layers[i].b2...);
            f(p + "ln2.gamma", ws.layers[i].ln2_g...);
            f(p + "ln2.beta", ws.layers[i].ln2_b...);
        }
    }
};

namespace nn {

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
    Matrix xhat;
    Vector inv_std;
};

inline Matrix layer_norm(const Matrix& x, const Vector& g, const Vector& b, LayerNormCache& c) {
    const Eigen::Index n = x.rows();
    c.xhat.resize(n, x.cols());
    c.inv_std.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = x.row(i).mean();
        const double var = (x.row(i).array() - mu).square().mean();
        c.inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEps);
        c.xhat.row(i) = (x.row(i).array() - mu) * c.inv_std(i);
    }
    Matrix y = (c.xhat.array().rowwise() * g.transpose().array()).matrix();
    y.rowwise() += b.transpose();
    return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const Vector& g, const LayerNormCache& c, Vector* dg, Vector* db) {
    if (dg) *dg += (dy.array() * c.xhat.array()).colwise().sum().transpose().matrix();
    if (db) *db += dy.colwise().sum().transpose();
    const Matrix dxhat = (dy.array().rowwise() * g.transpose().array()).matrix();
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double m1 = dxhat.row(i).mean();
        const double m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
        dx.row(i) = c.inv_std(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
    }
    return dx;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline Matrix affine(const Matrix& x, const Matrix& w, const Vector& b) {
    Matrix y = x * w.transpose();
    y.rowwise() += b.transpose();
    return y;
}

inline Matrix row_softmax(const Matrix& s) {
    Matrix out(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const Eigen::RowVectorXd e = (s.row(i).array() - s.row(i).maxCoeff()).exp().matrix();
        out.row(i) = e / e.sum();
    }
    return out;
}

}  // namespace nn

struct SurrogateCache {
    struct Layer {
        Matrix input, q, k, v, ctx;
        std::vector<Matrix> attn;
        nn::LayerNormCache ln1, ln2;
        Matrix x1, z1, g;
    };
    std::vector<std::size_t> ids;
    nn::LayerNormCache emb_ln;
    std::vector<Layer> layers;
};

/// Surrogate forward over word ids. Adds <begin>/<end> around the sequence and
/// truncates (with a warning) beyond max_len. Fills `cache` when non-null.
inline LayerStack encode_context(const std::vector<std::size_t>& word_ids, const SurrogateWeights& w,
                                 std::size_t heads, SurrogateCache* cache = nullptr) {
    std::vector<std::size_t> ids;
    std::size_t n = word_ids.size();
    if (n > w.max_len()) {
        warn("sequence of " + std::to_string(n) + " tokens truncated to context.max_len=" + std::to_string(w.max_len()));
        n = w.max_len();
    }
    ids.push_back(w.begin_id());
    for (std::size_t i = 0; i < n; ++i) {
        if (word_ids[i] >= w.begin_id()) throw Error("token id outside the context encoder vocabulary");
        ids.push_back(word_ids[i]);
    }
    ids.push_back(w.end_id());
    const auto T = static_cast<Eigen::Index>(ids.size());
    const auto h = static_cast<Eigen::Index>(w.hidden());
    const auto dk = h / static_cast<Eigen::Index>(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    SurrogateCache local;
    SurrogateCache& c = cache ? *cache : local;
    c.ids = ids;
    c.layers.assign(w.layers.size(), {});

    Matrix e(T, h);
    for (Eigen::Index j = 0; j < T; ++j) e.row(j) = w.token.row(static_cast<Eigen::Index>(ids[j])) + w.position.row(j);
    Matrix x = nn::layer_norm(e, w.emb_ln_g, w.emb_ln_b, c.emb_ln);

    LayerStack stack;
    stack.special.assign(ids.size(), false);
    stack.special.front() = stack.special.back() = true;
    for (std::size_t li = 0; li < w.layers.size(); ++li) {
        const auto& L = w.layers[li];
        auto& lc = c.layers[li];
        lc.input = x;
        lc.q = nn::affine(x, L.wq, L.bq);
        lc.k = nn::affine(x, L.wk, L.bk);
        lc.v = nn::affine(x, L.wv, L.bv);
        lc.ctx.resize(T, h);
        lc.attn.resize(heads);
        for (std::size_t hd = 0; hd < heads; ++hd) {
            const auto off = static_cast<Eigen::Index>(hd) * dk;
            const Matrix s = lc.q.middleCols(off, dk) * lc.k.middleCols(off, dk).transpose() * scale;
            lc.attn[hd] = nn::row_softmax(s);
            lc.ctx.middleCols(off, dk) = lc.attn[hd] * lc.v.middleCols(off, dk);
        }
        const Matrix res1 = x + nn::affine(lc.ctx, L.wo, L.bo);
        lc.x1 = nn::layer_norm(res1, L.ln1_g, L.ln1_b, lc.ln1);
        lc.z1 = nn::affine(lc.x1, L.w1, L.b1);
        lc.g = lc.z1.unaryExpr([](double v) { return nn::gelu(v); });
        const Matrix res2 = lc.x1 + nn::affine(lc.g, L.w2, L.b2);
        x = nn::layer_norm(res2, L.ln2_g, L.ln2_b, lc.ln2);
        stack.layers.push_back(x);
    }
    return stack;
}

/// Backward from per-layer output gradients (entries may be empty = zero).
inline void surrogate_backward(const SurrogateCache& c, const SurrogateWeights& w, std::size_t heads,
                               const std::vector<Matrix>& d_layers, SurrogateWeights& grad) {
    const auto T = static_cast<Eigen::Index>(c.ids.size());
    const auto h = static_cast<Eigen::Index>(w.hidden());
    const auto dk = h / static_cast<Eigen::Index>(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    Matrix carry = Matrix::Zero(T, h);
    bool live = false;
    for (std::size_t li = w.layers.size(); li-- > 0;) {
        if (li < d_layers.size() && d_layers[li].size()) {
            carry += d_layers[li];
            live = true;
        }
        if (!live) continue;
        const auto& L = w.layers[li];
        auto& G = grad.layers[li];
        const auto& lc = c.layers[li];

        const Matrix dres2 = nn::layer_norm_backward(carry, L.ln2_g, lc.ln2, &G.ln2_g, &G.ln2_b);
        Matrix dx1 = dres2;
        G.w2.noalias() += dres2.transpose() * lc.g;
        G.b2 += dres2.colwise().sum().transpose();
        const Matrix dg = dres2 * L.w2;
        const Matrix dz1 = (dg.array() * lc.z1.unaryExpr([](double v) { return nn::gelu_grad(v); }).array()).matrix();
        G.w1.noalias() += dz1.transpose() * lc.x1;
        G.b1 += dz1.colwise().sum().transpose();
        dx1.noalias() += dz1 * L.w1;

        const Matrix dres1 = nn::layer_norm_backward(dx1, L.ln1_g, lc.ln1, &G.ln1_g, &G.ln1_b);
        Matrix dx = dres1;
        G.wo.noalias() += dres1.transpose() * lc.ctx;
        G.bo += dres1.colwise().sum().transpose();
        const Matrix dctx = dres1 * L.wo;
        Matrix dq(T, h), dkm(T, h), dv(T, h);
        for (std::size_t hd = 0; hd < heads; ++hd) {
            const auto off = static_cast<Eigen::Index>(hd) * dk;
            const Matrix& A = lc.attn[hd];
            const Matrix dA = dctx.middleCols(off, dk) * lc.v.middleCols(off, dk).transpose();
            dv.middleCols(off, dk) = A.transpose() * dctx.middleCols(off, dk);
            const Vector rowdot = (dA.array() * A.array()).rowwise().sum().matrix();
            const Matrix dS = (A.array() * (dA.colwise() - rowdot).array()).matrix() * scale;
            dq.middleCols(off, dk) = dS * lc.k.middleCols(off, dk);
            dkm.middleCols(off, dk) = dS.transpose() * lc.q.middleCols(off, dk);
        }
        G.wq.noalias() += dq.transpose() * lc.input;
        G.bq += dq.colwise().sum().transpose();
        G.wk.noalias() += dkm.transpose() * lc.input;
        G.bk += dkm.colwise().sum().transpose();
        G.wv.noalias() += dv.transpose() * lc.input;
        G.bv += dv.colwise().sum().transpose();
        dx.noalias() += dq * L.wq;
        dx.noalias() += dkm * L.wk;
        dx.noalias() += dv * L.wv;
        carry = std::move(dx);
    }
    if (!live) return;
    const Matrix de = nn::layer_norm_backward(carry, w.emb_ln_g, c.emb_ln, &grad.emb_ln_g, &grad.emb_ln_b);
    for (Eigen::Index j = 0; j < T; ++j) {
        grad.token.row(static_cast<Eigen::Index>(c.ids[j])) += de.row(j);
        grad.position.row(j) += de.row(j);
    }
}

enum class PoolMode { Mean, Cls };

/// Map a layer selector to a 1-based layer: negative counts down from the top
/// (-1 is L-1, the default), 0 is the top layer, positive is absolute. A
/// one-layer stack resolves -1 to its only layer.
inline std::size_t resolve_layer(int select, std::size_t depth) {
    if (depth == 0) throw Error("empty layer stack");
    long idx = select < 0 ? static_cast<long>(depth) + select : select == 0 ? static_cast<long>(depth) : select;
    if (select < 0 && depth == 1) idx = 1;
    if (idx < 1 || idx > static_cast<long>(depth)) {
        throw ConfigError("context.layer " + std::to_string(select) + " outside [1, " + std::to_string(depth) + "]");
    }
    return static_cast<std::size_t>(idx);
}

/// Zero the framing rows and average the remaining rows of one layer
/// (denominator = number of real tokens). Cls mode returns the first framing row.
inline Vector pool_context(const LayerStack& stack, std::size_t layer, PoolMode mode = PoolMode::Mean) {
    if (layer < 1 || layer > stack.depth()) throw Error("layer selection outside the stack");
    const Matrix& H = stack.layers[layer - 1];
    if (mode == PoolMode::Cls) {
        if (stack.special.empty() || !stack.special.front()) throw Error("cls pooling needs a leading begin token");
        return H.row(0).transpose();
    }
    Vector sum = Vector::Zero(H.cols());
    std::size_t count = 0;
    for (std::size_t j = 0; j < stack.special.size(); ++j) {
        if (stack.special[j]) continue;
        sum += H.row(static_cast<Eigen::Index>(j)).transpose();
        ++count;
    }
    if (count == 0) throw Error("every token in the stack is a framing token");
    return sum / static_cast<double>(count);
}

inline Matrix pool_backward(const LayerStack& stack, std::size_t layer, PoolMode mode, const Vector& dB) {
    const Matrix& H = stack.layers[layer - 1];
    Matrix d = Matrix::Zero(H.rows(), H.cols());
    if (mode == PoolMode::Cls) {
        d.row(0) = dB.transpose();
        return d;
    }
    std::size_t count = 0;
    for (bool s : stack.special) count += s ? 0 : 1;
    for (std::size_t j = 0; j < stack.special.size(); ++j) {
        if (!stack.special[j]) d.row(static_cast<Eigen::Index>(j)) = dB.transpose() / static_cast<double>(count);
    }
    return d;
}

class AlignmentError : public Error {
public:
    using Error::Error;
};

/// Precomputed per-token contextual vectors keyed by example id
/// (JSON-lines `{id, tokens:[...], vectors:[[...]...]}`).
class ExternalContext {
public:
    struct Entry {
        std::vector<std::string> tokens;
        Matrix vectors;
    };

    static ExternalContext parse(std::istream& in, const std::string& source = "<context>") {
        ExternalContext ctx;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (trim(line).empty()) continue;
            try {
                const auto j = nlohmann::json::parse(line);
                Entry e;
                const std::string id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
                e.tokens = j.at("tokens").get<std::vector<std::string>>();
                const auto rows = j.at("vectors").get<std::vector<std::vector<double>>>();
                if (rows.size() != e.tokens.size()) {
                    throw AlignmentError(source + ":" + std::to_string(lineno) + ": " + std::to_string(rows.size()) +
                                         " vectors for " + std::to_string(e.tokens.size()) + " tokens");
                }
                const std::size_t width = rows.empty() ? ctx.width_ : rows.front().size();
                if (ctx.width_ == 0) ctx.width_ = width;
                e.vectors.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    if (rows[r].size() != ctx.width_) {
                        throw AlignmentError(source + ":" + std::to_string(lineno) + ": vector width " +
                                             std::to_string(rows[r].size()) + " != " + std::to_string(ctx.width_));
                    }
                    for (std::size_t k = 0; k < width; ++k) e.vectors(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
                }
                if (!ctx.entries_.emplace(id, std::move(e)).second) {
                    throw DuplicateError(source + ":" + std::to_string(lineno) + ": duplicate id '" + id + "'");
                }
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(source, lineno, e.what());
            }
        }
        return ctx;
    }

    static ExternalContext load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open context file '" + path + "'");
        return parse(in, path);
    }

    std::size_t size() const { return entries_.size(); }
    std::size_t width() const { return width_; }
    bool contains(const std::string& id) const { return entries_.count(id) != 0; }

    const Entry& at(const std::string& id) const {
        auto it = entries_.find(id);
        if (it == entries_.end()) throw Error("no external context for id '" + id + "'");
        return it->second;
    }

    /// Vectors for `id`, checked against the expected token count and width.
    const Matrix& vectors(const std::string& id, std::size_t expected_tokens, std::size_t expected_width) const {
        const Entry& e = at(id);
        if (e.tokens.size() != expected_tokens) {
            throw AlignmentError("external context for '" + id + "' has " + std::to_string(e.tokens.size()) +
                                 " tokens, expected " + std::to_string(expected_tokens));
        }
        if (static_cast<std::size_t>(e.vectors.cols()) != expected_width) {
            throw AlignmentError("external context for '" + id + "' has width " + std::to_string(e.vectors.cols()) +
                                 ", expected " + std::to_string(expected_width));
        }
        return e.vectors;
    }

    /// The provided layer stands in for layer L-1 and is duplicated to L = 2.
    LayerStack stack(const std::string& id, std::size_t expected_tokens, std::size_t expected_width) const {
        const Matrix& v = vectors(id, expected_tokens, expected_width);
        LayerStack s;
        s.layers = {v, v};
        s.special.assign(expected_tokens, false);
        return s;
    }

private:
    std::unordered_map<std::string, Entry> entries_;
    std::size_t width_ = 0;
};

}  // namespace kare

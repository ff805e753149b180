#pragma once

#include "kare/common.hpp"
#include "kare/config.hpp"
#include "kare/context_encoder.hpp"
#include "kare/corpus.hpp"
#include "kare/embedding.hpp"
#include "kare/fusion.hpp"
#include "kare/lexicon.hpp"
#include "kare/pa_encoder.hpp"
#include "kare/random.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <tuple>
#include <type_traits>
#include <unordered_map>
#include <vector>

namespace kare {

/// Every trainable tensor of the network. Tensors of switched-off components
/// are empty (size 0).
struct ModelParams {
    Matrix words;      // pre-trained word rows, V x d
    Matrix special;    // <cannabis>, <depression>, <unk> rows, 3 x d
    Matrix positions;  // (2 clip + 1) x d_p, shared by both entities
    FilterBank conv;
    AttentionParams attention;
    SurrogateWeights context;
    FusionParams fusion;

    /// f(name, tensor_of_each_set...) for every tensor slot, present or not.
    template <class F, class... P>
    static void for_each(F&& f, P&... ps) {
        const auto& first = std::get<0>(std::forward_as_tuple(ps...));
        f(std::string("embed.words"), ps.words...);
        f(std::string("embed.special"), ps.special...);
        f(std::string("position.table"), ps.positions...);
        for (std::size_t w = 0; w < first.conv.windows.size(); ++w) {
            const std::string p = "conv.m" + std::to_string(first.conv.windows[w]);
            f(p + ".weight", ps.conv.weights[w]...);
            f(p + ".bias", ps.conv.biases[w]...);
        }
        f(std::string("attn.W_h"), ps.attention.W_h...);
        f(std::string("attn.W_q"), ps.attention.W_q...);
        f(std::string("attn.W_c"), ps.attention.W_c...);
        f(std::string("attn.W_d"), ps.attention.W_d...);
        f(std::string("attn.v"), ps.attention.v...);
        SurrogateWeights::for_each("ctx.", f, ps.context...);
        f(std::string("fuse.W_R"), ps.fusion.W_R...);
        f(std::string("fuse.W_B"), ps.fusion.W_B...);
        f(std::string("fuse.W_g"), ps.fusion.W_g...);
        f(std::string("cls.W"), ps.fusion.W...);
        f(std::string("cls.a"), ps.fusion.a...);
    }

    template <class F>
    void visit(F&& f) {
        for_each(std::forward<F>(f), *this);
    }
};

template <class T>
inline constexpr bool is_vector_v = std::is_same_v<std::decay_t<T>, Vector>;

struct TensorInfo {
    std::string name;
    std::vector<std::size_t> shape;
    bool trainable = true;

    std::size_t count() const {
        std::size_t c = 1;
        for (auto s : shape) c *= s;
        return c;
    }
    bool operator==(const TensorInfo&) const = default;
};

template <class T>
std::vector<std::size_t> shape_of(const T& t) {
    if constexpr (is_vector_v<T>) return {static_cast<std::size_t>(t.size())};
    else return {static_cast<std::size_t>(t.rows()), static_cast<std::size_t>(t.cols())};
}

/// A located and masked example mapped to vocabulary ids.
struct EncodedExample {
    std::string id;
    std::vector<std::string> tokens;
    std::vector<std::size_t> ids;
    std::size_t cannabis = 0;
    std::size_t depression = 0;
    const Matrix* external = nullptr;  // n x h_b when the context provider is external
    RelationLabel label = RelationLabel::Ambiguous;
};

struct Prediction {
    Vector probs;
    RelationLabel label = RelationLabel::Ambiguous;
    Vector alphas;  // empty when there is no entity branch
};

/// Entity branch (positions, convolution, attention), context branch (pooled
/// contextual layer), fusion and classifier, with exact reverse-mode gradients.
class Model {
public:
    static constexpr std::size_t kSpecialRows = EmbeddingTable::kSpecialCount;

    /// Zero-valued parameters shaped for `cfg`; `words` is the word vocabulary
    /// without the special tokens.
    Model(ModelConfig cfg, std::vector<std::string> words) : cfg_(std::move(cfg)), words_(std::move(words)) {
        cfg_.validate();
        for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
        allocate();
    }

    /// Random initialization; word and special rows come from `table`.
    static Model initialized(ModelConfig cfg, const EmbeddingTable& table, Rng& rng) {
        std::vector<std::string> words(table.tokens().begin(),
                                       table.tokens().begin() + static_cast<std::ptrdiff_t>(table.pretrained_size()));
        Model m(std::move(cfg), std::move(words));
        m.init(table, rng);
        return m;
    }

    const ModelConfig& config() const noexcept { return cfg_; }
    const std::vector<std::string>& vocabulary() const noexcept { return words_; }
    std::size_t vocab_size() const noexcept { return words_.size() + kSpecialRows; }
    ModelParams& params() noexcept { return p_; }
    const ModelParams& params() const noexcept { return p_; }

    std::size_t hidden_width() const { return hidden_width_; }
    std::size_t context_width() const { return cfg_.surrogate.hidden; }

    std::size_t lookup(std::string_view token) const {
        if (token == kCannabisMask) return words_.size();
        if (token == kDepressionMask) return words_.size() + 1;
        auto it = index_.find(std::string(token));
        return it == index_.end() ? words_.size() + 2 : it->second;
    }

    bool trainable(const std::string& name) const {
        if (name == "embed.words") return cfg_.embed_trainable;
        if (name.rfind("ctx.", 0) == 0) return cfg_.surrogate.trainable;
        return true;
    }

    /// Gradient buffers: zeros for trainable tensors, empty for frozen ones.
    ModelParams zero_gradients() const {
        ModelParams g = p_;
        ModelParams::for_each(
            [&](const std::string& name, auto& t) {
                if (trainable(name)) t.setZero();
                else if constexpr (is_vector_v<decltype(t)>) t.resize(0);
                else t.resize(0, 0);
            },
            g);
        return g;
    }

    std::vector<TensorInfo> census(bool trainable_only = true) const {
        std::vector<TensorInfo> out;
        ModelParams::for_each(
            [&](const std::string& name, const auto& t) {
                if (t.size() == 0) return;
                const bool tr = trainable(name);
                if (trainable_only && !tr) return;
                out.push_back({name, shape_of(t), tr});
            },
            p_);
        return out;
    }

    std::size_t parameter_count(bool trainable_only = true) const {
        std::size_t c = 0;
        for (const auto& t : census(trainable_only)) c += t.count();
        return c;
    }

    EncodedExample encode(const MaskedTweet& m, std::string id = {}, RelationLabel label = RelationLabel::Ambiguous,
                          const ExternalContext* external = nullptr) const {
        EncodedExample e;
        e.id = std::move(id);
        e.tokens = m.tokens;
        e.cannabis = m.cannabis_index;
        e.depression = m.depression_index;
        e.label = label;
        e.ids.reserve(m.tokens.size());
        for (const auto& t : m.tokens) e.ids.push_back(lookup(t));
        if (cfg_.use_context && cfg_.provider == ContextProvider::External) {
            if (!external) throw Error("context.provider=external but no context file is loaded");
            e.external = &external->vectors(e.id, e.tokens.size(), context_width());
        }
        if (cfg_.use_context && cfg_.provider == ContextProvider::Surrogate &&
            cfg_.entity_source == EntitySource::Context && e.ids.size() > cfg_.surrogate.max_len) {
            throw Error("example '" + e.id + "' has " + std::to_string(e.ids.size()) +
                        " tokens, more than context.max_len");
        }
        return e;
    }

    Prediction predict(const EncodedExample& ex) const {
        Cache c;
        forward(ex, c);
        Prediction p;
        p.probs = c.probs;
        p.label = argmax_label(c.probs);
        p.alphas = c.alphas;
        return p;
    }

    /// Forward + backward for one example; adds weight * dLoss/dtheta into
    /// `grads` (from zero_gradients()) and returns the unweighted loss.
    double accumulate_gradients(const EncodedExample& ex, RelationLabel gold, double weight, ModelParams& grads) const {
        Cache c;
        forward(ex, c);
        const double loss = cross_entropy(c.probs, gold);
        backward(ex, c, gold, weight, grads);
        return loss;
    }

    double loss(const EncodedExample& ex, RelationLabel gold) const {
        Cache c;
        forward(ex, c);
        return cross_entropy(c.probs, gold);
    }

private:
    struct Cache {
        LayerStack stack;
        SurrogateCache surrogate;
        std::size_t layer = 0;
        std::size_t stack_offset = 0;
        std::vector<Eigen::Index> pc_rows, pd_rows;
        Matrix Pc, Pd, base, X, H;
        Vector q;
        AttentionState att;
        Vector alphas;
        Vector R, B;
        GateResult gate;
        Vector F;
        Vector probs;
    };

    std::size_t base_width() const {
        return cfg_.entity_source == EntitySource::Context ? cfg_.surrogate.hidden : cfg_.embed_dim;
    }

    std::size_t input_width() const {
        return base_width() + (cfg_.use_position_embedding ? 2 * cfg_.position_dim : 0);
    }

    void allocate() {
        const auto d = static_cast<Eigen::Index>(cfg_.embed_dim);
        const auto hb = cfg_.surrogate.hidden;
        const auto df = static_cast<Eigen::Index>(cfg_.fusion_dim);
        if (cfg_.entity_source == EntitySource::Words) {
            p_.words = Matrix::Zero(static_cast<Eigen::Index>(words_.size()), d);
            p_.special = Matrix::Zero(static_cast<Eigen::Index>(kSpecialRows), d);
        }
        if (cfg_.uses_positions()) {
            p_.positions = Matrix::Zero(2 * cfg_.clip + 1, static_cast<Eigen::Index>(cfg_.position_dim));
        }
        hidden_width_ = 0;
        if (cfg_.entity_branch()) {
            std::vector<int> seen;
            for (int w : cfg_.windows) {
                if (std::find(seen.begin(), seen.end(), w) != seen.end()) throw ConfigError("duplicate window size in conv.windows");
                seen.push_back(w);
            }
            if (cfg_.use_cnn) p_.conv = FilterBank(cfg_.windows, cfg_.filters, input_width());
            hidden_width_ = cfg_.use_cnn ? p_.conv.output_width() : input_width();
            if (cfg_.attention != AttentionKind::Mean) {
                p_.attention = AttentionParams(cfg_.attn_dim, hidden_width_,
                                               cfg_.attention == AttentionKind::Position
                                                   ? std::optional<std::size_t>(cfg_.position_dim)
                                                   : std::nullopt);
            }
        }
        if (cfg_.surrogate_present()) p_.context = SurrogateWeights(cfg_.surrogate, vocab_size());
        const auto dh = static_cast<Eigen::Index>(hidden_width_);
        const auto b = static_cast<Eigen::Index>(hb);
        auto& f = p_.fusion;
        if (cfg_.two_branches() && cfg_.fusion == FusionKind::Concat) {
            f.W = Matrix::Zero(static_cast<Eigen::Index>(kNumLabels), dh + b);
        } else {
            if (cfg_.entity_branch()) f.W_R = Matrix::Zero(df, dh);
            if (cfg_.context_branch()) f.W_B = Matrix::Zero(df, b);
            if (cfg_.two_branches()) f.W_g = Matrix::Zero(df, dh + b);
            f.W = Matrix::Zero(static_cast<Eigen::Index>(kNumLabels), df);
        }
        f.a = Vector::Zero(static_cast<Eigen::Index>(kNumLabels));
    }

    void init(const EmbeddingTable& table, Rng& rng) {
        if (p_.words.size() || p_.special.size()) {
            if (table.dim() != cfg_.embed_dim) {
                throw ConfigError("embedding table width " + std::to_string(table.dim()) + " != embedding.dim " +
                                  std::to_string(cfg_.embed_dim));
            }
            p_.words = table.matrix().topRows(static_cast<Eigen::Index>(table.pretrained_size()));
            p_.special = table.matrix().bottomRows(static_cast<Eigen::Index>(kSpecialRows));
        }
        if (p_.positions.size()) uniform_fill(p_.positions, rng, 0.1);
        if (p_.conv.weights.size()) p_.conv.init(rng);
        if (p_.attention.v.size()) p_.attention.init(rng);
        if (p_.context.token.size()) p_.context.init(rng);
        for (Matrix* m : {&p_.fusion.W_R, &p_.fusion.W_B, &p_.fusion.W_g, &p_.fusion.W}) {
            if (m->size()) glorot_fill(*m, rng, static_cast<double>(m->cols()), static_cast<double>(m->rows()));
        }
    }

    void forward(const EncodedExample& ex, Cache& c) const {
        const std::size_t n = ex.ids.size();
        if (n == 0) throw Error("empty example");
        if (ex.cannabis >= n || ex.depression >= n) throw Error("entity index outside the example");

        if (cfg_.use_context) {
            if (cfg_.provider == ContextProvider::Surrogate) {
                c.stack = encode_context(ex.ids, p_.context, cfg_.surrogate.heads, &c.surrogate);
                c.stack_offset = 1;
            } else {
                if (!ex.external) throw Error("missing external context for example '" + ex.id + "'");
                require_shape(static_cast<std::size_t>(ex.external->rows()) == n &&
                                  static_cast<std::size_t>(ex.external->cols()) == context_width(),
                              "external context block");
                c.stack.layers = {*ex.external, *ex.external};
                c.stack.special.assign(n, false);
                c.stack_offset = 0;
            }
            c.layer = resolve_layer(cfg_.context_layer, c.stack.depth());
        }

        if (cfg_.entity_branch()) {
            const auto nn = static_cast<Eigen::Index>(n);
            if (cfg_.entity_source == EntitySource::Words) {
                c.base.resize(nn, static_cast<Eigen::Index>(cfg_.embed_dim));
                for (std::size_t i = 0; i < n; ++i) c.base.row(static_cast<Eigen::Index>(i)) = word_row(ex.ids[i]);
            } else {
                c.base = c.stack.layers[c.layer - 1].middleRows(static_cast<Eigen::Index>(c.stack_offset), nn);
            }
            if (cfg_.uses_positions()) {
                c.pc_rows = position_rows(position_sequence(n, ex.cannabis, ex.cannabis), cfg_.clip);
                c.pd_rows = position_rows(position_sequence(n, ex.depression, ex.depression), cfg_.clip);
                c.Pc = gather_rows(p_.positions, c.pc_rows);
                c.Pd = gather_rows(p_.positions, c.pd_rows);
            }
            c.X = cfg_.use_position_embedding ? hconcat({&c.base, &c.Pc, &c.Pd}) : c.base;
            c.H = cfg_.use_cnn ? conv_encode(c.X, p_.conv) : c.X;
            c.q = aggregate_vector(c.H);
            if (cfg_.attention == AttentionKind::Mean) {
                c.R = c.q;
                c.alphas = Vector::Constant(nn, 1.0 / static_cast<double>(n));
            } else {
                const bool pos = cfg_.attention == AttentionKind::Position;
                c.att = attend(c.H, c.q, pos ? &c.Pc : nullptr, pos ? &c.Pd : nullptr, p_.attention);
                c.R = c.att.R;
                c.alphas = c.att.alphas;
            }
        }
        if (cfg_.context_branch()) c.B = pool_context(c.stack, c.layer, cfg_.pool);

        const auto& f = p_.fusion;
        if (cfg_.two_branches()) {
            if (cfg_.fusion == FusionKind::Gated) {
                c.gate = gated_fuse(c.R, c.B, f);
                c.F = c.gate.F;
            } else {
                c.F = concat(c.R, c.B);
            }
        } else if (cfg_.entity_branch()) {
            c.gate.h_R = (f.W_R * c.R).array().tanh().matrix();
            c.F = c.gate.h_R;
        } else {
            c.gate.h_B = (f.W_B * c.B).array().tanh().matrix();
            c.F = c.gate.h_B;
        }
        c.probs = classify(c.F, f);
    }

    Eigen::RowVectorXd word_row(std::size_t id) const {
        if (id < words_.size()) return p_.words.row(static_cast<Eigen::Index>(id));
        return p_.special.row(static_cast<Eigen::Index>(id - words_.size()));
    }

    void backward(const EncodedExample& ex, const Cache& c, RelationLabel gold, double weight, ModelParams& g) const {
        const std::size_t n = ex.ids.size();
        const auto nn = static_cast<Eigen::Index>(n);
        const auto& f = p_.fusion;

        Vector dlogits = c.probs;
        dlogits(static_cast<Eigen::Index>(index_of(gold))) -= 1.0;
        dlogits *= weight;
        g.fusion.W.noalias() += dlogits * c.F.transpose();
        g.fusion.a += dlogits;
        const Vector dF = f.W.transpose() * dlogits;

        Vector dR, dB;
        if (cfg_.two_branches()) {
            if (cfg_.fusion == FusionKind::Gated) {
                gated_fuse_backward(c.R, c.B, f, c.gate, dF, &g.fusion, dR, dB);
            } else {
                dR = dF.head(c.R.size());
                dB = dF.tail(c.B.size());
            }
        } else if (cfg_.entity_branch()) {
            const Vector dpre = (dF.array() * (1.0 - c.gate.h_R.array().square())).matrix();
            g.fusion.W_R.noalias() += dpre * c.R.transpose();
            dR = f.W_R.transpose() * dpre;
        } else {
            const Vector dpre = (dF.array() * (1.0 - c.gate.h_B.array().square())).matrix();
            g.fusion.W_B.noalias() += dpre * c.B.transpose();
            dB = f.W_B.transpose() * dpre;
        }

        const bool context_grads = cfg_.surrogate_present() && cfg_.surrogate.trainable;
        Matrix d_layer;
        if (context_grads) d_layer = Matrix::Zero(c.stack.layers[c.layer - 1].rows(), c.stack.layers[c.layer - 1].cols());
        if (cfg_.context_branch() && context_grads) d_layer += pool_backward(c.stack, c.layer, cfg_.pool, dB);

        if (cfg_.entity_branch()) {
            Matrix dH = Matrix::Zero(c.H.rows(), c.H.cols());
            Vector dq = Vector::Zero(c.q.size());
            Matrix dPc = Matrix::Zero(cfg_.uses_positions() ? nn : 0, static_cast<Eigen::Index>(cfg_.position_dim));
            Matrix dPd = dPc;
            if (cfg_.attention == AttentionKind::Mean) {
                dq = dR;
            } else {
                const bool pos = cfg_.attention == AttentionKind::Position;
                attention_backward(c.H, c.q, pos ? &c.Pc : nullptr, pos ? &c.Pd : nullptr, p_.attention, c.att, dR,
                                   &g.attention, dH, dq, pos ? &dPc : nullptr, pos ? &dPd : nullptr);
            }
            dH.rowwise() += dq.transpose() / static_cast<double>(n);

            Matrix dX;
            if (cfg_.use_cnn) {
                dX = Matrix::Zero(c.X.rows(), c.X.cols());
                conv_backward(c.X, p_.conv, c.H, dH, &g.conv, &dX);
            } else {
                dX = std::move(dH);
            }
            const auto bw = static_cast<Eigen::Index>(base_width());
            if (cfg_.use_position_embedding) {
                const auto dp = static_cast<Eigen::Index>(cfg_.position_dim);
                dPc += dX.middleCols(bw, dp);
                dPd += dX.middleCols(bw + dp, dp);
            }
            if (cfg_.uses_positions()) {
                for (std::size_t i = 0; i < n; ++i) {
                    g.positions.row(c.pc_rows[i]) += dPc.row(static_cast<Eigen::Index>(i));
                    g.positions.row(c.pd_rows[i]) += dPd.row(static_cast<Eigen::Index>(i));
                }
            }
            if (cfg_.entity_source == EntitySource::Words) {
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t id = ex.ids[i];
                    if (id >= words_.size()) {
                        g.special.row(static_cast<Eigen::Index>(id - words_.size())) += dX.row(static_cast<Eigen::Index>(i)).head(bw);
                    } else if (g.words.size()) {
                        g.words.row(static_cast<Eigen::Index>(id)) += dX.row(static_cast<Eigen::Index>(i)).head(bw);
                    }
                }
            } else if (context_grads) {
                d_layer.middleRows(static_cast<Eigen::Index>(c.stack_offset), nn) += dX.leftCols(bw);
            }
        }

        if (context_grads) {
            std::vector<Matrix> d_layers(c.stack.depth());
            d_layers[c.layer - 1] = std::move(d_layer);
            surrogate_backward(c.surrogate, p_.context, cfg_.surrogate.heads, d_layers, g.context);
        }
    }

    ModelConfig cfg_;
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::size_t> index_;
    ModelParams p_;
    std::size_t hidden_width_ = 0;
};

}  // namespace kare

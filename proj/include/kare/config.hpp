#pragma once

#include "kare/common.hpp"
#include "kare/context_encoder.hpp"
#include "kare/lexicon.hpp"
#include "kare/text.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace kare {

enum class ValueKind { Int, Real, OptReal, Bool, String, Choice, IntList, RealList };

struct KeySpec {
    std::string key;
    ValueKind kind;
    std::string default_value;
    std::string help;
    std::vector<std::string> choices = {};
};

inline const std::vector<KeySpec>& config_schema() {
    static const std::vector<KeySpec> schema = {
        {"seed", ValueKind::Int, "13", "global random seed"},
        {"lexicon.path", ValueKind::String, "", "term<TAB>class[<TAB>concept] lexicon file"},
        {"lexicon.max_ngram", ValueKind::Int, "4", "longest n-gram compared against lexicon terms"},
        {"lexicon.max_distance", ValueKind::Int, "1", "largest accepted edit distance"},
        {"lexicon.normalized_threshold", ValueKind::OptReal, "0.25", "distance / max length bound, or 'none'"},
        {"lexicon.case_folding", ValueKind::Bool, "true", "compare lowercased n-grams"},
        {"embedding.path", ValueKind::String, "", "text embedding file; empty builds a random vocabulary from training data"},
        {"embedding.dim", ValueKind::Int, "300", "word embedding width d"},
        {"embedding.trainable", ValueKind::Bool, "false", "update pre-trained word rows (special rows always train)"},
        {"position.dim", ValueKind::Int, "30", "position embedding width d_p"},
        {"position.clip", ValueKind::Int, "50", "largest absolute relative distance"},
        {"conv.windows", ValueKind::IntList, "2,3,4", "convolution window sizes M"},
        {"conv.filters", ValueKind::Int, "50", "filters per window size"},
        {"attention.dim", ValueKind::Int, "100", "attention size d_a"},
        {"context.provider", ValueKind::Choice, "surrogate", "contextual encoder", {"surrogate", "external"}},
        {"context.path", ValueKind::String, "", "external context JSON-lines file"},
        {"context.layer", ValueKind::Int, "-1", "pooled layer: -1 = L-1, 0 = top, k > 0 = layer k"},
        {"context.pool", ValueKind::Choice, "mean", "pooling of the selected layer", {"mean", "cls"}},
        {"context.trainable", ValueKind::Bool, "true", "update surrogate weights"},
        {"context.layers", ValueKind::Int, "4", "surrogate layers L"},
        {"context.heads", ValueKind::Int, "4", "surrogate attention heads"},
        {"context.hidden", ValueKind::Int, "128", "context width h_b"},
        {"context.ff", ValueKind::Int, "512", "surrogate feed-forward width"},
        {"context.max_len", ValueKind::Int, "128", "surrogate maximum word tokens"},
        {"model.use_context", ValueKind::Bool, "true", "contextual encoder present"},
        {"model.use_cnn", ValueKind::Bool, "true", "convolution over the entity-branch input"},
        {"model.use_position_embedding", ValueKind::Bool, "true", "position blocks in the entity-branch input"},
        {"model.attention", ValueKind::Choice, "position", "entity-branch pooling", {"position", "vanilla", "mean"}},
        {"model.fusion", ValueKind::Choice, "gated", "two-branch combination", {"gated", "concat"}},
        {"model.entity_source", ValueKind::Choice, "words", "entity-branch token features", {"words", "context", "none"}},
        {"model.fusion_dim", ValueKind::Int, "128", "fused width d_f"},
        {"train.epochs", ValueKind::Int, "30", "maximum epochs"},
        {"train.batch", ValueKind::Int, "32", "mini-batch size"},
        {"train.lr", ValueKind::Real, "0.001", "learning rate"},
        {"train.context_lr", ValueKind::Real, "0.001", "learning rate for surrogate weights"},
        {"train.beta1", ValueKind::Real, "0.9", "first-moment decay"},
        {"train.beta2", ValueKind::Real, "0.999", "second-moment decay"},
        {"train.eps", ValueKind::Real, "1e-08", "adaptive-moment epsilon"},
        {"train.patience", ValueKind::Int, "5", "epochs without dev improvement before stopping; 0 disables"},
        {"train.class_weighting", ValueKind::Choice, "none", "loss weighting", {"none", "inverse"}},
        {"split.ratios", ValueKind::RealList, "0.8,0.1,0.1", "train,dev,test ratios"},
        {"eval.averaging", ValueKind::Choice, "weighted", "reference averaging", {"weighted", "macro", "micro"}},
    };
    return schema;
}

inline const KeySpec* find_key(const std::string& key) {
    for (const auto& spec : config_schema()) {
        if (spec.key == key) return &spec;
    }
    return nullptr;
}

namespace detail {

inline std::optional<long long> parse_int(std::string_view s) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::optional<double> parse_real(std::string_view s) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline std::string format_real(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace detail

/// Flat `section.key = value` configuration validated against config_schema().
class RunConfig {
public:
    RunConfig() {
        for (const auto& spec : config_schema()) values_[spec.key] = spec.default_value;
    }

    void set(const std::string& key, const std::string& raw) {
        const KeySpec* spec = find_key(key);
        if (!spec) throw ConfigError("unknown config key '" + key + "'");
        values_[key] = canonicalize(*spec, trim(raw));
    }

    // Accepts "key=value".
    void set_assignment(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + kv + "'");
        set(trim(kv.substr(0, eq)), kv.substr(eq + 1));
    }

    void merge(std::istream& in, const std::string& source = "<config>") {
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
            try {
                set(trim(t.substr(0, eq)), t.substr(eq + 1));
            } catch (const ConfigError& e) {
                throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
    }

    static RunConfig from_text(const std::string& text, const std::string& source = "<config>") {
        RunConfig c;
        std::istringstream in(text);
        c.merge(in, source);
        return c;
    }

    static RunConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open config file '" + path + "'");
        RunConfig c;
        c.merge(in, path);
        return c;
    }

    /// Every key, sorted, one `key = value` per line.
    std::string canonical() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

    const std::string& raw(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
        return it->second;
    }

    long long get_int(const std::string& key) const { return *detail::parse_int(raw(key)); }
    std::size_t get_size(const std::string& key) const {
        const long long v = get_int(key);
        if (v < 0) throw ConfigError(key + " must be non-negative");
        return static_cast<std::size_t>(v);
    }
    double get_real(const std::string& key) const { return *detail::parse_real(raw(key)); }
    std::optional<double> get_opt_real(const std::string& key) const {
        const auto& r = raw(key);
        if (r == "none") return std::nullopt;
        return detail::parse_real(r);
    }
    bool get_bool(const std::string& key) const { return raw(key) == "true"; }
    const std::string& get_string(const std::string& key) const { return raw(key); }
    std::vector<int> get_int_list(const std::string& key) const {
        std::vector<int> out;
        for (const auto& p : split(raw(key), ',')) out.push_back(static_cast<int>(*detail::parse_int(p)));
        return out;
    }
    std::vector<double> get_real_list(const std::string& key) const {
        std::vector<double> out;
        for (const auto& p : split(raw(key), ',')) out.push_back(*detail::parse_real(p));
        return out;
    }

    bool operator==(const RunConfig&) const = default;

private:
    static std::string canonicalize(const KeySpec& spec, const std::string& v) {
        auto bad = [&](const std::string& why) {
            return ConfigError("bad value '" + v + "' for " + spec.key + ": " + why);
        };
        switch (spec.kind) {
            case ValueKind::Int: {
                auto i = detail::parse_int(v);
                if (!i) throw bad("expected an integer");
                return std::to_string(*i);
            }
            case ValueKind::Real: {
                auto r = detail::parse_real(v);
                if (!r) throw bad("expected a real number");
                return detail::format_real(*r);
            }
            case ValueKind::OptReal: {
                if (ascii_lower(v) == "none" || v.empty()) return "none";
                auto r = detail::parse_real(v);
                if (!r) throw bad("expected a real number or 'none'");
                return detail::format_real(*r);
            }
            case ValueKind::Bool: {
                const std::string l = ascii_lower(v);
                if (l == "true" || l == "1" || l == "yes" || l == "on") return "true";
                if (l == "false" || l == "0" || l == "no" || l == "off") return "false";
                throw bad("expected a boolean");
            }
            case ValueKind::String:
                return v;
            case ValueKind::Choice: {
                const std::string l = ascii_lower(v);
                if (std::find(spec.choices.begin(), spec.choices.end(), l) == spec.choices.end()) {
                    throw bad("expected one of " + join(spec.choices, "|"));
                }
                return l;
            }
            case ValueKind::IntList: {
                std::vector<std::string> parts;
                for (const auto& p : split(v, ',')) {
                    auto i = detail::parse_int(trim(p));
                    if (!i) throw bad("expected comma-separated integers");
                    parts.push_back(std::to_string(*i));
                }
                return join(parts, ",");
            }
            case ValueKind::RealList: {
                std::vector<std::string> parts;
                for (const auto& p : split(v, ',')) {
                    auto r = detail::parse_real(trim(p));
                    if (!r) throw bad("expected comma-separated reals");
                    parts.push_back(detail::format_real(*r));
                }
                return join(parts, ",");
            }
        }
        return v;
    }

    std::map<std::string, std::string> values_;
};

enum class AttentionKind { Position, Vanilla, Mean };
enum class FusionKind { Gated, Concat };
enum class EntitySource { Words, Context, None };
enum class ContextProvider { Surrogate, External };

/// Architecture switches and sizes derived from a RunConfig.
struct ModelConfig {
    std::size_t embed_dim = 300;
    bool embed_trainable = false;
    std::size_t position_dim = 30;
    int clip = 50;
    std::vector<int> windows = {2, 3, 4};
    std::size_t filters = 50;
    std::size_t attn_dim = 100;
    std::size_t fusion_dim = 128;

    bool use_context = true;
    bool use_cnn = true;
    bool use_position_embedding = true;
    AttentionKind attention = AttentionKind::Position;
    FusionKind fusion = FusionKind::Gated;
    EntitySource entity_source = EntitySource::Words;

    ContextProvider provider = ContextProvider::Surrogate;
    SurrogateConfig surrogate;
    int context_layer = -1;
    PoolMode pool = PoolMode::Mean;

    bool entity_branch() const { return entity_source != EntitySource::None; }
    // The pooled context vector B feeds the fusion only when the context
    // encoder is not already consumed by the entity branch.
    bool context_branch() const { return use_context && entity_source != EntitySource::Context; }
    bool two_branches() const { return entity_branch() && context_branch(); }
    bool uses_positions() const {
        return entity_branch() && (use_position_embedding || attention == AttentionKind::Position);
    }
    bool surrogate_present() const { return use_context && provider == ContextProvider::Surrogate; }

    void validate() const {
        if (!use_context && !use_cnn) throw ConfigError("at least one of model.use_context and model.use_cnn must be true");
        if (entity_source == EntitySource::Context && !use_context) {
            throw ConfigError("model.entity_source=context requires model.use_context=true");
        }
        if (entity_source == EntitySource::None && use_cnn) {
            throw ConfigError("model.entity_source=none leaves no input for the convolution; set model.use_cnn=false");
        }
        if (embed_dim < 1 || position_dim < 1 || filters < 1 || attn_dim < 1 || fusion_dim < 1) {
            throw ConfigError("dimensions must be >= 1");
        }
        if (pool == PoolMode::Cls && provider == ContextProvider::External) {
            throw ConfigError("context.pool=cls needs the surrogate provider (external files carry no begin token)");
        }
        surrogate.validate();
    }

    static ModelConfig from(const RunConfig& rc) {
        ModelConfig m;
        m.embed_dim = rc.get_size("embedding.dim");
        m.embed_trainable = rc.get_bool("embedding.trainable");
        m.position_dim = rc.get_size("position.dim");
        m.clip = static_cast<int>(rc.get_int("position.clip"));
        if (m.clip < 0) throw ConfigError("position.clip must be >= 0");
        m.windows = rc.get_int_list("conv.windows");
        m.filters = rc.get_size("conv.filters");
        m.attn_dim = rc.get_size("attention.dim");
        m.fusion_dim = rc.get_size("model.fusion_dim");
        m.use_context = rc.get_bool("model.use_context");
        m.use_cnn = rc.get_bool("model.use_cnn");
        m.use_position_embedding = rc.get_bool("model.use_position_embedding");
        const auto& att = rc.get_string("model.attention");
        m.attention = att == "position" ? AttentionKind::Position : att == "vanilla" ? AttentionKind::Vanilla : AttentionKind::Mean;
        m.fusion = rc.get_string("model.fusion") == "gated" ? FusionKind::Gated : FusionKind::Concat;
        const auto& src = rc.get_string("model.entity_source");
        m.entity_source = src == "words" ? EntitySource::Words : src == "context" ? EntitySource::Context : EntitySource::None;
        m.provider = rc.get_string("context.provider") == "surrogate" ? ContextProvider::Surrogate : ContextProvider::External;
        m.surrogate.layers = rc.get_size("context.layers");
        m.surrogate.heads = rc.get_size("context.heads");
        m.surrogate.hidden = rc.get_size("context.hidden");
        m.surrogate.ff = rc.get_size("context.ff");
        m.surrogate.max_len = rc.get_size("context.max_len");
        m.surrogate.trainable = rc.get_bool("context.trainable");
        m.context_layer = static_cast<int>(rc.get_int("context.layer"));
        m.pool = rc.get_string("context.pool") == "cls" ? PoolMode::Cls : PoolMode::Mean;
        for (int w : m.windows) {
            if (w < 1) throw ConfigError("conv.windows entries must be >= 1");
        }
        if (m.windows.empty()) throw ConfigError("conv.windows must not be empty");
        m.validate();
        return m;
    }
};

inline MatcherConfig matcher_config(const RunConfig& rc) {
    MatcherConfig m;
    m.max_ngram = rc.get_size("lexicon.max_ngram");
    m.max_distance = rc.get_size("lexicon.max_distance");
    m.normalized_threshold = rc.get_opt_real("lexicon.normalized_threshold");
    m.case_folding = rc.get_bool("lexicon.case_folding");
    m.validate();
    return m;
}

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch = 32;
    double lr = 1e-3;
    double context_lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t patience = 5;
    bool inverse_class_weights = false;
    std::uint64_t seed = 13;

    static TrainConfig from(const RunConfig& rc) {
        TrainConfig t;
        t.epochs = rc.get_size("train.epochs");
        t.batch = std::max<std::size_t>(1, rc.get_size("train.batch"));
        t.lr = rc.get_real("train.lr");
        t.context_lr = rc.get_real("train.context_lr");
        t.beta1 = rc.get_real("train.beta1");
        t.beta2 = rc.get_real("train.beta2");
        t.eps = rc.get_real("train.eps");
        t.patience = rc.get_size("train.patience");
        t.inverse_class_weights = rc.get_string("train.class_weighting") == "inverse";
        t.seed = static_cast<std::uint64_t>(rc.get_int("seed"));
        return t;
    }
};

}  // namespace kare

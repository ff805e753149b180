#pragma once

#include "kare/checkpoint.hpp"
#include "kare/config.hpp"
#include "kare/corpus.hpp"
#include "kare/embedding.hpp"
#include "kare/lexicon.hpp"
#include "kare/metrics.hpp"
#include "kare/model.hpp"
#include "kare/optim.hpp"
#include "kare/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace kare {

struct MaskedExample {
    std::string id;
    RelationLabel label = RelationLabel::Ambiguous;
    MaskedTweet masked;
};

struct SkippedExample {
    std::string id;
    std::string reason;
};

struct PreparedCorpus {
    std::vector<MaskedExample> examples;
    std::vector<SkippedExample> skipped;
};

/// Masks one example, using its precomputed spans when present.
inline MaskedTweet mask_example(const Example& ex, const Lexicon& lexicon, const MatcherConfig& matcher) {
    const auto tokens = tokenize(ex.text, matcher.case_folding);
    if (!ex.spans) return locate_and_mask(tokens, lexicon, matcher);
    std::vector<EntitySpan> spans;
    for (const auto& h : *ex.spans) {
        if (h.start > h.end || h.end >= tokens.size()) {
            throw Error("example '" + ex.id + "': span " + std::to_string(h.start) + ".." + std::to_string(h.end) +
                        " outside " + std::to_string(tokens.size()) + " tokens");
        }
        EntitySpan s;
        s.cls = h.cls;
        s.start = h.start;
        s.end = h.end;
        s.matched_term = join(tokens, " ", h.start, h.end + 1);
        s.extra = canonical_span(spans, h.cls) != nullptr;
        spans.push_back(std::move(s));
    }
    MaskedTweet m = mask_entities(tokens, canonical_span(spans, EntityClass::Cannabis),
                                  canonical_span(spans, EntityClass::Depression));
    m.spans = std::move(spans);
    return m;
}

/// Tokenize and mask every example; examples without both entities are
/// skipped and listed rather than aborting the run.
inline PreparedCorpus prepare(const Corpus& corpus, const Lexicon& lexicon, const MatcherConfig& matcher) {
    PreparedCorpus out;
    for (const auto& ex : corpus) {
        try {
            out.examples.push_back({ex.id, ex.label, mask_example(ex, lexicon, matcher)});
        } catch (const MissingEntityError& e) {
            out.skipped.push_back({ex.id, e.what()});
        } catch (const OverlapError& e) {
            out.skipped.push_back({ex.id, e.what()});
        }
    }
    return out;
}

inline std::vector<EncodedExample> encode_all(const Model& model, const std::vector<MaskedExample>& examples,
                                              const ExternalContext* external = nullptr) {
    std::vector<EncodedExample> out;
    out.reserve(examples.size());
    for (const auto& m : examples) out.push_back(model.encode(m.masked, m.id, m.label, external));
    return out;
}

/// Sorted distinct non-mask tokens.
inline std::vector<std::string> collect_vocabulary(const std::vector<MaskedExample>& examples) {
    std::set<std::string> words;
    for (const auto& m : examples) {
        for (const auto& t : m.masked.tokens) {
            if (t != kCannabisMask && t != kDepressionMask) words.insert(t);
        }
    }
    return {words.begin(), words.end()};
}

/// Pre-trained vectors from embedding.path, or random vectors over the
/// training vocabulary when no path is set.
inline EmbeddingTable build_embeddings(const RunConfig& cfg, const std::vector<MaskedExample>& train, Rng& rng) {
    const std::size_t dim = cfg.get_size("embedding.dim");
    const auto& path = cfg.get_string("embedding.path");
    if (!path.empty()) return EmbeddingTable::load(path, dim, rng);
    return EmbeddingTable::random(collect_vocabulary(train), dim, rng);
}

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads; each index is owned by
/// exactly one thread, so writes to slot i need no locking.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(jobs);
    for (std::size_t t = 0; t < jobs; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += jobs) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct Evaluation {
    std::vector<Prediction> predictions;
    ConfusionMatrix confusion;
    Metrics metrics;
};

inline Evaluation evaluate(const Model& model, const std::vector<EncodedExample>& examples,
                           Averaging averaging = Averaging::Weighted, std::size_t jobs = 1) {
    if (examples.empty()) throw Error("nothing to evaluate");
    Evaluation ev;
    ev.predictions.resize(examples.size());
    parallel_for(examples.size(), jobs, [&](std::size_t i) { ev.predictions[i] = model.predict(examples[i]); });
    for (std::size_t i = 0; i < examples.size(); ++i) ev.confusion.add(examples[i].label, ev.predictions[i].label);
    ev.metrics = prf(ev.confusion, averaging);
    return ev;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double dev_f1 = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochRecord> history;
    std::vector<SkippedExample> skipped_train;
    std::vector<SkippedExample> skipped_dev;
};

/// Inverse-frequency weights N / (K * count_k); a balanced set gets 1
/// everywhere and labels absent from training get 0.
inline std::array<double, kNumLabels> class_weights(const std::vector<MaskedExample>& train, bool inverse) {
    std::array<double, kNumLabels> w;
    w.fill(1.0);
    if (!inverse) return w;
    LabelCounts counts{};
    for (const auto& m : train) ++counts[index_of(m.label)];
    for (std::size_t k = 0; k < kNumLabels; ++k) {
        w[k] = counts[k] ? static_cast<double>(train.size()) / (kNumLabels * static_cast<double>(counts[k])) : 0.0;
    }
    return w;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam training with early stopping on dev F1 (eval.averaging).
/// The returned checkpoint holds the best-dev parameters. When the dev set is
/// empty, selection falls back to training F1.
inline TrainResult train(const RunConfig& cfg, const Corpus& train_corpus, const Corpus& dev_corpus,
                         const Lexicon& lexicon, const ExternalContext* external = nullptr,
                         const EpochCallback& on_epoch = {}) {
    if (train_corpus.empty()) throw Error("training corpus is empty");
    const ModelConfig mcfg = ModelConfig::from(cfg);
    const TrainConfig tcfg = TrainConfig::from(cfg);
    const MatcherConfig matcher = matcher_config(cfg);
    const Averaging averaging = parse_averaging(cfg.get_string("eval.averaging"));

    PreparedCorpus tr = prepare(train_corpus, lexicon, matcher);
    PreparedCorpus dv = prepare(dev_corpus, lexicon, matcher);
    if (tr.examples.empty()) throw Error("no training example contains both a cannabis and a depression entity");
    for (const auto& s : tr.skipped) warn("skipped training example '" + s.id + "': " + s.reason);
    for (const auto& s : dv.skipped) warn("skipped dev example '" + s.id + "': " + s.reason);

    Rng init_rng(Rng::mix(tcfg.seed, 0x1417));
    const EmbeddingTable table = build_embeddings(cfg, tr.examples, init_rng);
    Model model = Model::initialized(mcfg, table, init_rng);

    const auto train_set = encode_all(model, tr.examples, external);
    const auto dev_set = encode_all(model, dv.examples, external);
    const auto& select_set = dev_set.empty() ? train_set : dev_set;
    if (dev_set.empty()) warn("dev set is empty; model selection uses training F1");
    const auto weights = class_weights(tr.examples, tcfg.inverse_class_weights);

    Adam adam(model, tcfg);
    ModelParams best = model.params();
    double best_f1 = -1.0;
    std::size_t best_epoch = 0;
    std::size_t stale = 0;
    std::vector<EpochRecord> history;
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::size_t epoch = 0;
    while (epoch < tcfg.epochs) {
        ++epoch;
        Rng shuffle_rng(Rng::mix(tcfg.seed, 0x5eed0000 + epoch));
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += tcfg.batch) {
            const std::size_t stop = std::min(order.size(), start + tcfg.batch);
            ModelParams grads = model.zero_gradients();
            const double scale = 1.0 / static_cast<double>(stop - start);
            for (std::size_t k = start; k < stop; ++k) {
                const auto& ex = train_set[order[k]];
                loss_sum += model.accumulate_gradients(ex, ex.label, scale * weights[index_of(ex.label)], grads);
            }
            adam.step(model, grads);
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train_set.size());
        rec.dev_f1 = evaluate(model, select_set, averaging).metrics.aggregate.f1;
        history.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (rec.dev_f1 > best_f1) {
            best_f1 = rec.dev_f1;
            best_epoch = epoch;
            best = model.params();
            stale = 0;
        } else {
            ++stale;
        }
        if (best_f1 >= 100.0 - 1e-9) break;
        if (tcfg.patience > 0 && stale >= tcfg.patience) break;
    }
    model.params() = std::move(best);

    TrainingMetadata meta;
    meta.seed = tcfg.seed;
    meta.epochs_run = epoch;
    meta.best_epoch = best_epoch;
    meta.best_dev_f1 = best_f1;
    meta.split_hash = corpus_hash(train_corpus) ^ (corpus_hash(dev_corpus) * 0x9e3779b97f4a7c15ULL);
    return TrainResult{Checkpoint{cfg, meta, lexicon, std::move(model)}, std::move(history), std::move(tr.skipped),
                       std::move(dv.skipped)};
}

struct TextPrediction {
    MaskedTweet masked;
    Prediction prediction;
    AttentionTrace trace;
};

/// Raw text to label, probabilities and attention trace. Throws
/// MissingEntityError (with the spans found) when an entity is not located.
inline TextPrediction predict_text(const Checkpoint& ck, const std::string& text, const Lexicon* lexicon = nullptr,
                                   const ExternalContext* external = nullptr, const std::string& id = "input") {
    const Lexicon& lex = lexicon ? *lexicon : ck.lexicon;
    const MatcherConfig matcher = matcher_config(ck.config);
    TextPrediction out;
    out.masked = locate_and_mask(tokenize(text, matcher.case_folding), lex, matcher);
    const auto ex = ck.model.encode(out.masked, id, RelationLabel::Ambiguous, external);
    out.prediction = ck.model.predict(ex);
    out.trace = make_trace(out.prediction.alphas, out.masked.tokens);
    out.trace.predicted = std::string(to_string(out.prediction.label));
    return out;
}

inline nlohmann::ordered_json trace_json(const std::string& id, const AttentionTrace& t) {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["tokens"] = t.tokens;
    j["alphas"] = t.alphas;
    if (t.predicted) j["predicted"] = *t.predicted;
    if (t.gold) j["gold"] = *t.gold;
    return j;
}

/// One trace per example in input order.
inline std::vector<AttentionTrace> attention_traces(const Model& model, const std::vector<EncodedExample>& examples,
                                                    std::size_t jobs = 1) {
    std::vector<AttentionTrace> out(examples.size());
    parallel_for(examples.size(), jobs, [&](std::size_t i) {
        const auto p = model.predict(examples[i]);
        out[i] = make_trace(p.alphas, examples[i].tokens);
        out[i].predicted = std::string(to_string(p.label));
        out[i].gold = std::string(to_string(examples[i].label));
    });
    return out;
}

// ---------------------------------------------------------------- ablation

struct Variant {
    std::string name;
    std::vector<std::pair<std::string, std::string>> overrides;
};

/// Component removals compared against the full model: context encoder,
/// position-aware attention (vanilla instead), position embeddings, the
/// convolution, and gated fusion (concatenation instead).
inline std::vector<Variant> ablation_variants(bool with_baselines = false) {
    std::vector<Variant> v = {
        {"full", {}},
        {"-context", {{"model.use_context", "false"}}},
        {"-position_attention", {{"model.attention", "vanilla"}}},
        {"-position_embedding", {{"model.use_position_embedding", "false"}}},
        {"-cnn", {{"model.use_cnn", "false"}}},
        {"-gated_fusion", {{"model.fusion", "concat"}}},
    };
    if (with_baselines) {
        v.push_back({"bert", {{"model.entity_source", "none"}, {"model.use_cnn", "false"}}});
        v.push_back({"bert_pe", {{"model.entity_source", "context"}, {"model.attention", "mean"}, {"model.use_cnn", "false"}}});
        v.push_back(
            {"bert_pe_pa", {{"model.entity_source", "context"}, {"model.attention", "position"}, {"model.use_cnn", "false"}}});
    }
    return v;
}

inline RunConfig apply_variant(RunConfig cfg, const Variant& v) {
    for (const auto& [k, val] : v.overrides) cfg.set(k, val);
    return cfg;
}

struct CensusDiff {
    std::vector<std::string> removed;   // in the reference only
    std::vector<std::string> added;     // in the variant only
    std::vector<std::string> reshaped;  // in both, different shape
    long long parameter_delta = 0;      // variant - reference
};

inline CensusDiff census_diff(const std::vector<TensorInfo>& reference, const std::vector<TensorInfo>& variant) {
    CensusDiff d;
    long long ref_total = 0, var_total = 0;
    for (const auto& t : reference) ref_total += static_cast<long long>(t.count());
    for (const auto& t : variant) var_total += static_cast<long long>(t.count());
    d.parameter_delta = var_total - ref_total;
    for (const auto& r : reference) {
        auto it = std::find_if(variant.begin(), variant.end(), [&](const TensorInfo& t) { return t.name == r.name; });
        if (it == variant.end()) d.removed.push_back(r.name);
        else if (it->shape != r.shape) d.reshaped.push_back(r.name);
    }
    for (const auto& v : variant) {
        auto it = std::find_if(reference.begin(), reference.end(), [&](const TensorInfo& t) { return t.name == v.name; });
        if (it == reference.end()) d.added.push_back(v.name);
    }
    return d;
}

/// Trainable-parameter census of a configuration without training it.
inline std::vector<TensorInfo> census_for(const RunConfig& cfg, std::size_t vocab_words) {
    std::vector<std::string> words(vocab_words);
    for (std::size_t i = 0; i < vocab_words; ++i) words[i] = "w" + std::to_string(i);
    return Model(ModelConfig::from(cfg), std::move(words)).census();
}

struct VariantResult {
    std::string name;
    RunConfig config;
    std::vector<TensorInfo> census;
    CensusDiff diff;
    Metrics metrics;
    std::size_t best_epoch = 0;
};

struct AblationResult {
    std::vector<VariantResult> variants;
    Report report;
};

/// Trains every variant on `train`, selects on `dev` and scores on `test`.
inline AblationResult ablate(const RunConfig& base, const Corpus& train_corpus, const Corpus& dev_corpus,
                             const Corpus& test_corpus, const Lexicon& lexicon, bool with_baselines = false,
                             const ExternalContext* external = nullptr,
                             const std::function<void(const std::string&)>& progress = {}) {
    const Averaging averaging = parse_averaging(base.get_string("eval.averaging"));
    const MatcherConfig matcher = matcher_config(base);
    const PreparedCorpus test = prepare(test_corpus, lexicon, matcher);
    if (test.examples.empty()) throw Error("no usable test example for ablation");

    AblationResult out;
    std::vector<NamedMetrics> named;
    for (const auto& v : ablation_variants(with_baselines)) {
        if (progress) progress(v.name);
        VariantResult r;
        r.name = v.name;
        r.config = apply_variant(base, v);
        auto trained = train(r.config, train_corpus, dev_corpus, lexicon, external);
        const Model& model = trained.checkpoint.model;
        r.census = model.census();
        r.best_epoch = trained.checkpoint.meta.best_epoch;
        r.metrics = evaluate(model, encode_all(model, test.examples, external), averaging).metrics;
        out.variants.push_back(std::move(r));
        named.push_back({v.name, out.variants.back().metrics});
    }
    for (auto& r : out.variants) r.diff = census_diff(out.variants.front().census, r.census);
    out.report = report(named, "full");
    return out;
}

}  // namespace kare

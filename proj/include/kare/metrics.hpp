#pragma once

#include "kare/common.hpp"
#include "kare/corpus.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

namespace kare {

/// counts[gold][predicted].
struct ConfusionMatrix {
    std::array<std::array<std::size_t, kNumLabels>, kNumLabels> counts{};

    std::size_t total() const {
        std::size_t t = 0;
        for (const auto& row : counts)
            for (auto c : row) t += c;
        return t;
    }
    std::size_t support(std::size_t gold) const {
        std::size_t s = 0;
        for (auto c : counts[gold]) s += c;
        return s;
    }
    std::size_t predicted(std::size_t label) const {
        std::size_t s = 0;
        for (const auto& row : counts) s += row[label];
        return s;
    }
    void add(RelationLabel gold, RelationLabel pred) { ++counts[index_of(gold)][index_of(pred)]; }
    bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(std::span<const RelationLabel> preds, std::span<const RelationLabel> golds) {
    if (preds.size() != golds.size()) {
        throw LengthMismatchError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                                  std::to_string(golds.size()) + " gold labels");
    }
    ConfusionMatrix m;
    for (std::size_t i = 0; i < preds.size(); ++i) m.add(golds[i], preds[i]);
    return m;
}

enum class Averaging { Macro, Micro, Weighted };

inline std::string_view to_string(Averaging a) {
    switch (a) {
        case Averaging::Macro: return "macro";
        case Averaging::Micro: return "micro";
        case Averaging::Weighted: return "weighted";
    }
    return "weighted";
}

inline Averaging parse_averaging(std::string_view s) {
    if (s == "macro") return Averaging::Macro;
    if (s == "micro") return Averaging::Micro;
    if (s == "weighted") return Averaging::Weighted;
    throw ConfigError("averaging must be macro, micro or weighted, got '" + std::string(s) + "'");
}

/// Harmonic mean; 0 when p + r = 0.
inline double f1_from(double p, double r) { return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0; }

struct Score {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Percentages in [0, 100].
struct Metrics {
    Averaging averaging = Averaging::Weighted;
    std::array<Score, kNumLabels> per_class{};
    std::array<std::size_t, kNumLabels> support{};
    Score aggregate;
    double accuracy = 0.0;
};

/// Per-class P/R/F1 plus the aggregate under `averaging`. Aggregate P and R
/// are averaged; aggregate F1 is the harmonic mean of those two.
inline Metrics prf(const ConfusionMatrix& m, Averaging averaging = Averaging::Weighted) {
    const std::size_t total = m.total();
    if (total == 0) throw Error("metrics over an empty confusion matrix");
    Metrics out;
    out.averaging = averaging;
    std::size_t correct = 0;
    for (std::size_t k = 0; k < kNumLabels; ++k) {
        const double tp = static_cast<double>(m.counts[k][k]);
        const double pred = static_cast<double>(m.predicted(k));
        const double gold = static_cast<double>(m.support(k));
        auto& s = out.per_class[k];
        s.precision = pred > 0 ? 100.0 * tp / pred : 0.0;
        s.recall = gold > 0 ? 100.0 * tp / gold : 0.0;
        s.f1 = f1_from(s.precision, s.recall);
        out.support[k] = m.support(k);
        correct += m.counts[k][k];
    }
    out.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(total);
    double p = 0.0, r = 0.0;
    switch (averaging) {
        case Averaging::Micro:
            p = r = out.accuracy;
            break;
        case Averaging::Macro:
            for (const auto& s : out.per_class) {
                p += s.precision / static_cast<double>(kNumLabels);
                r += s.recall / static_cast<double>(kNumLabels);
            }
            break;
        case Averaging::Weighted:
            for (std::size_t k = 0; k < kNumLabels; ++k) {
                const double w = static_cast<double>(out.support[k]) / static_cast<double>(total);
                p += w * out.per_class[k].precision;
                r += w * out.per_class[k].recall;
            }
            break;
    }
    out.aggregate = {p, r, f1_from(p, r)};
    return out;
}

/// Weighted F1 of always predicting the most frequent gold label.
inline double majority_baseline_f1(std::span<const RelationLabel> golds, Averaging averaging = Averaging::Weighted) {
    LabelCounts counts{};
    for (auto g : golds) ++counts[index_of(g)];
    std::size_t best = 0;
    for (std::size_t k = 1; k < kNumLabels; ++k)
        if (counts[k] > counts[best]) best = k;
    std::vector<RelationLabel> preds(golds.size(), label_at(best));
    return prf(confusion(preds, golds), averaging).aggregate.f1;
}

inline nlohmann::ordered_json to_json(const Metrics& m) {
    nlohmann::ordered_json j;
    j["averaging"] = std::string(to_string(m.averaging));
    j["precision"] = m.aggregate.precision;
    j["recall"] = m.aggregate.recall;
    j["f1"] = m.aggregate.f1;
    j["accuracy"] = m.accuracy;
    nlohmann::ordered_json classes = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < kNumLabels; ++k) {
        classes[std::string(to_string(label_at(k)))] = {{"precision", m.per_class[k].precision},
                                                        {"recall", m.per_class[k].recall},
                                                        {"f1", m.per_class[k].f1},
                                                        {"support", m.support[k]}};
    }
    j["per_class"] = std::move(classes);
    return j;
}

inline std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string signed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.2f", v);
    return std::string(buf) == "-0.00" ? "+0.00" : buf;
}

inline std::string pad_right(std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
}

inline std::string pad_left(std::string s, std::size_t w) {
    if (s.size() < w) s.insert(0, w - s.size(), ' ');
    return s;
}

inline std::string format_metrics(const Metrics& m) {
    std::string out = pad_right("label", 12) + pad_left("P", 8) + pad_left("R", 8) + pad_left("F1", 8) +
                      pad_left("support", 9) + '\n';
    for (std::size_t k = 0; k < kNumLabels; ++k) {
        const auto& s = m.per_class[k];
        out += pad_right(std::string(to_string(label_at(k))), 12) + pad_left(fixed2(s.precision), 8) +
               pad_left(fixed2(s.recall), 8) + pad_left(fixed2(s.f1), 8) +
               pad_left(std::to_string(m.support[k]), 9) + '\n';
    }
    out += pad_right(std::string(to_string(m.averaging)), 12) + pad_left(fixed2(m.aggregate.precision), 8) +
           pad_left(fixed2(m.aggregate.recall), 8) + pad_left(fixed2(m.aggregate.f1), 8) + '\n';
    out += pad_right("accuracy", 12) + pad_left(fixed2(m.accuracy), 8) + '\n';
    return out;
}

struct NamedMetrics {
    std::string name;
    Metrics metrics;
};

struct Report {
    std::string text;
    nlohmann::ordered_json json;
};

/// Each variant's aggregate P/R/F1 and its signed difference from `reference`.
inline Report report(const std::vector<NamedMetrics>& variants, const std::string& reference) {
    const NamedMetrics* ref = nullptr;
    for (const auto& v : variants)
        if (v.name == reference) ref = &v;
    if (!ref) throw Error("report: reference variant '" + reference + "' not present");

    std::size_t width = 8;
    for (const auto& v : variants) width = std::max(width, v.name.size() + 2);
    Report r;
    r.text = pad_right("variant", width) + pad_left("P", 8) + pad_left("R", 8) + pad_left("F1", 8) + pad_left("dP", 8) +
             pad_left("dR", 8) + pad_left("dF1", 8) + '\n';
    r.json = nlohmann::ordered_json::object();
    r.json["reference"] = reference;
    r.json["averaging"] = std::string(to_string(ref->metrics.averaging));
    r.json["variants"] = nlohmann::ordered_json::array();
    const auto& base = ref->metrics.aggregate;
    for (const auto& v : variants) {
        const auto& a = v.metrics.aggregate;
        const double dp = a.precision - base.precision;
        const double dr = a.recall - base.recall;
        const double df = a.f1 - base.f1;
        r.text += pad_right(v.name, width) + pad_left(fixed2(a.precision), 8) + pad_left(fixed2(a.recall), 8) +
                  pad_left(fixed2(a.f1), 8) + pad_left(signed2(dp), 8) + pad_left(signed2(dr), 8) +
                  pad_left(signed2(df), 8) + '\n';
        r.json["variants"].push_back({{"name", v.name},
                                      {"precision", a.precision},
                                      {"recall", a.recall},
                                      {"f1", a.f1},
                                      {"delta_precision", dp},
                                      {"delta_recall", dr},
                                      {"delta_f1", df}});
    }
    return r;
}

}  // namespace kare

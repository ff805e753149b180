#pragma once

#include "kare/common.hpp"
#include "kare/lexicon.hpp"
#include "kare/random.hpp"
#include "kare/text.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace kare {

enum class RelationLabel : std::uint8_t { Reason = 0, Effect = 1, Addiction = 2, Ambiguous = 3 };

inline constexpr std::size_t kNumLabels = 4;
inline constexpr std::array<RelationLabel, kNumLabels> kAllLabels = {
    RelationLabel::Reason, RelationLabel::Effect, RelationLabel::Addiction, RelationLabel::Ambiguous};

inline std::size_t index_of(RelationLabel l) { return static_cast<std::size_t>(l); }

inline RelationLabel label_at(std::size_t i) { return kAllLabels.at(i); }

inline std::string_view to_string(RelationLabel l) {
    static constexpr std::array<std::string_view, kNumLabels> names = {"Reason", "Effect", "Addiction", "Ambiguous"};
    return names[index_of(l)];
}

class LabelError : public Error {
public:
    using Error::Error;
};

// Accepts the label names (any case) and the annotation codes 1-4.
inline std::optional<RelationLabel> parse_label(std::string_view s) {
    const std::string l = ascii_lower(trim(s));
    for (auto label : kAllLabels) {
        if (l == ascii_lower(to_string(label))) return label;
        if (l == std::to_string(index_of(label) + 1)) return label;
    }
    return std::nullopt;
}

using LabelCounts = std::array<std::size_t, kNumLabels>;

struct SpanHint {
    EntityClass cls;
    std::size_t start;
    std::size_t end;
};

struct Example {
    std::string id;
    std::string text;
    RelationLabel label = RelationLabel::Ambiguous;
    std::optional<std::vector<SpanHint>> spans;
};

class Corpus {
public:
    Corpus() = default;

    void add(Example ex) {
        if (ex.text.empty()) throw Error("example '" + ex.id + "' has empty text");
        if (!ids_.insert(ex.id).second) throw DuplicateError("duplicate example id '" + ex.id + "'");
        examples_.push_back(std::move(ex));
    }

    std::size_t size() const noexcept { return examples_.size(); }
    bool empty() const noexcept { return examples_.empty(); }
    const Example& operator[](std::size_t i) const { return examples_[i]; }
    const std::vector<Example>& examples() const noexcept { return examples_; }
    auto begin() const { return examples_.begin(); }
    auto end() const { return examples_.end(); }
    bool contains(const std::string& id) const { return ids_.count(id) != 0; }

private:
    std::vector<Example> examples_;
    std::set<std::string> ids_;
};

inline nlohmann::ordered_json to_json(const Example& ex) {
    nlohmann::ordered_json j;
    j["id"] = ex.id;
    j["text"] = ex.text;
    j["label"] = std::string(to_string(ex.label));
    if (ex.spans) {
        auto arr = nlohmann::ordered_json::array();
        for (const auto& s : *ex.spans) {
            arr.push_back({{"class", std::string(to_string(s.cls))}, {"start", s.start}, {"end", s.end}});
        }
        j["spans"] = std::move(arr);
    }
    return j;
}

inline Example example_from_json(const nlohmann::json& j, const std::string& source, std::size_t line) {
    if (!j.is_object()) throw ParseError(source, line, "expected a JSON object");
    for (const char* key : {"id", "text", "label"}) {
        if (!j.contains(key)) throw ParseError(source, line, std::string("missing field '") + key + "'");
    }
    Example ex;
    ex.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    ex.text = j["text"].get<std::string>();
    const std::string raw = j["label"].is_string() ? j["label"].get<std::string>() : j["label"].dump();
    const auto label = parse_label(raw);
    if (!label) throw LabelError(source + ":" + std::to_string(line) + ": unknown label '" + raw + "'");
    ex.label = *label;
    if (j.contains("spans")) {
        std::vector<SpanHint> hints;
        for (const auto& s : j["spans"]) {
            const auto cls = parse_entity_class(s.at("class").get<std::string>());
            if (!cls) throw ParseError(source, line, "unknown span class");
            hints.push_back({*cls, s.at("start").get<std::size_t>(), s.at("end").get<std::size_t>()});
        }
        ex.spans = std::move(hints);
    }
    return ex;
}

inline Corpus parse_dataset(std::istream& in, const std::string& source = "<dataset>") {
    Corpus corpus;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(source, lineno, e.what());
        }
        Example ex;
        try {
            ex = example_from_json(j, source, lineno);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(source, lineno, e.what());
        }
        try {
            corpus.add(std::move(ex));
        } catch (const DuplicateError& e) {
            throw DuplicateError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return corpus;
}

inline Corpus load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset '" + path + "'");
    return parse_dataset(in, path);
}

inline void write_dataset(std::ostream& out, const Corpus& corpus) {
    for (const auto& ex : corpus) out << to_json(ex).dump() << '\n';
}

inline void save_dataset(const std::string& path, const Corpus& corpus) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write dataset '" + path + "'");
    write_dataset(out, corpus);
}

inline LabelCounts class_distribution(const Corpus& corpus) {
    LabelCounts counts{};
    for (const auto& ex : corpus) ++counts[index_of(ex.label)];
    return counts;
}

/// Split `total` items into parts proportional to `ratios` by largest
/// remainder; ties go to the earlier part.
inline std::vector<std::size_t> apportion(std::size_t total, std::span<const double> ratios) {
    std::vector<std::size_t> out(ratios.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t used = 0;
    for (std::size_t k = 0; k < ratios.size(); ++k) {
        const double exact = ratios[k] * static_cast<double>(total);
        out[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        used += out[k];
        rem.emplace_back(exact - static_cast<double>(out[k]), k);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; used < total && i < rem.size(); ++i, ++used) ++out[rem[i].second];
    return out;
}

struct Split {
    Corpus train;
    Corpus dev;
    Corpus test;
};

/// Per-label shuffle then largest-remainder allocation, so each label's share
/// of every part is within one example of its ratio. Parts keep corpus order.
inline Split stratified_split(const Corpus& corpus, std::array<double, 3> ratios, std::uint64_t seed) {
    double sum = 0.0;
    for (double r : ratios) {
        if (!(r > 0.0)) throw ConfigError("split ratios must all be > 0");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("split ratios must sum to 1");

    std::vector<int> part(corpus.size(), 0);
    for (auto label : kAllLabels) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            if (corpus[i].label == label) idx.push_back(i);
        }
        if (idx.empty()) continue;
        if (idx.size() < ratios.size()) {
            warn("label " + std::string(to_string(label)) + " has " + std::to_string(idx.size()) +
                 " example(s), fewer than the number of split parts");
        }
        Rng rng(Rng::mix(seed, index_of(label)));
        rng.shuffle(idx);
        const auto counts = apportion(idx.size(), ratios);
        std::size_t pos = 0;
        for (std::size_t k = 0; k < counts.size(); ++k) {
            for (std::size_t c = 0; c < counts[k]; ++c) part[idx[pos++]] = static_cast<int>(k);
        }
    }
    Split out;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        Corpus& dst = part[i] == 0 ? out.train : part[i] == 1 ? out.dev : out.test;
        dst.add(corpus[i]);
    }
    return out;
}

// Stable digest of a corpus' ids, recorded in checkpoints.
inline std::uint64_t corpus_hash(const Corpus& corpus) {
    std::uint64_t h = fnv1a("");
    for (const auto& ex : corpus) {
        h = fnv1a(ex.id, h);
        h = fnv1a("\n", h);
    }
    return h;
}

class LengthMismatchError : public Error {
public:
    using Error::Error;
};

/// Two-rater Cohen's kappa over any equality-comparable label type.
/// When chance agreement is 1 (both raters constant on the same label)
/// the result is defined as 1.
template <class Label>
double cohen_kappa(std::span<const Label> a, std::span<const Label> b) {
    if (a.size() != b.size()) {
        throw LengthMismatchError("annotation lists differ in length (" + std::to_string(a.size()) + " vs " +
                                  std::to_string(b.size()) + ")");
    }
    if (a.empty()) throw LengthMismatchError("annotation lists are empty");
    const double n = static_cast<double>(a.size());
    std::map<Label, std::pair<double, double>> marginals;
    double agree = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) agree += 1.0;
        marginals[a[i]].first += 1.0;
        marginals[b[i]].second += 1.0;
    }
    const double p_o = agree / n;
    double p_e = 0.0;
    for (const auto& [label, m] : marginals) p_e += (m.first / n) * (m.second / n);
    if (std::abs(1.0 - p_e) < 1e-15) return 1.0;
    return (p_o - p_e) / (1.0 - p_e);
}

template <class Label>
double cohen_kappa(const std::vector<Label>& a, const std::vector<Label>& b) {
    return cohen_kappa(std::span<const Label>(a), std::span<const Label>(b));
}

// One annotator's labels keyed by item id, in file order.
struct Annotations {
    std::string name;
    std::vector<std::pair<std::string, std::string>> rows;
};

inline Annotations parse_annotations(std::istream& in, const std::string& source) {
    Annotations a;
    a.name = source;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || trim(line)[0] == '#') continue;
        const auto cols = split(line, '\t');
        if (cols.size() != 2) throw ParseError(source, lineno, "expected id<TAB>label");
        const std::string id = trim(cols[0]);
        if (!seen.insert(id).second) throw DuplicateError(source + ":" + std::to_string(lineno) + ": duplicate id '" + id + "'");
        a.rows.emplace_back(id, trim(cols[1]));
    }
    return a;
}

inline Annotations load_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open annotation file '" + path + "'");
    return parse_annotations(in, path);
}

struct AgreementReport {
    std::size_t items = 0;
    double kappa = 0.0;
    double observed = 0.0;
    std::vector<std::string> disagreements;  // ids, in the first annotator's order
};

/// Align two annotators by id and compute kappa plus the list of items a
/// third coder would need to review.
inline AgreementReport compare_annotations(const Annotations& a, const Annotations& b) {
    std::unordered_map<std::string, std::string> lookup(b.rows.begin(), b.rows.end());
    if (lookup.size() != a.rows.size()) {
        throw LengthMismatchError(a.name + " and " + b.name + " annotate different numbers of items");
    }
    std::vector<std::string> la, lb;
    AgreementReport r;
    for (const auto& [id, label] : a.rows) {
        auto it = lookup.find(id);
        if (it == lookup.end()) throw LengthMismatchError("id '" + id + "' missing from " + b.name);
        la.push_back(label);
        lb.push_back(it->second);
        if (label != it->second) r.disagreements.push_back(id);
    }
    r.items = la.size();
    r.kappa = cohen_kappa(la, lb);
    r.observed = 1.0 - static_cast<double>(r.disagreements.size()) / static_cast<double>(r.items);
    return r;
}

// Upper-triangular pairwise kappa table; entry [i][j] for i < j.
inline std::vector<std::vector<double>> pairwise_kappa(const std::vector<Annotations>& raters) {
    const std::size_t k = raters.size();
    std::vector<std::vector<double>> table(k, std::vector<double>(k, std::nan("")));
    for (std::size_t i = 0; i < k; ++i) {
        table[i][i] = 1.0;
        for (std::size_t j = i + 1; j < k; ++j) {
            table[i][j] = table[j][i] = compare_annotations(raters[i], raters[j]).kappa;
        }
    }
    return table;
}

}  // namespace kare

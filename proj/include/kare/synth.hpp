#pragma once

#include "kare/corpus.hpp"
#include "kare/lexicon.hpp"
#include "kare/random.hpp"
#include "kare/text.hpp"

#include <array>
#include <cstdio>
#include <string>
#include <vector>

namespace kare {

struct SynthOptions {
    // Reason : Effect : Addiction : Ambiguous.
    std::array<double, kNumLabels> ratios = {3243, 707, 158, 1777};
    // Probability of adding a clause carrying another label's cue word, placed
    // away from both entities.
    double distractor_rate = 0.5;
    std::size_t max_filler = 3;
};

namespace detail {

// {C} and {D} are the entity slots.
inline const std::array<std::vector<std::string>, kNumLabels>& synth_templates() {
    static const std::array<std::vector<std::string>, kNumLabels> t = {{
        {"{C} really helps with my {D}", "{C} is good for {D}", "using {C} for my {D}", "{C} helps me handle {D}",
         "took some {C} for the {D} and it helps", "nothing works for my {D} like {C}"},
        {"{C} is making my {D} worse", "{C} causes my {D}", "{C} keeps making me {D}", "pretty sure {C} causes {D}",
         "my {D} got worse from {C}", "{C} is making me so {D}"},
        {"lack of {C} gives me {D}", "i need {C} or the {D} kicks in", "without {C} my {D} comes back",
         "ran out of {C} and need it , {D} all day", "no {C} today so {D} again", "the lack of {C} leaves me {D}"},
        {"{C} and {D} trending again", "read an article on {C} and {D}", "{C} vs {D} debate tonight",
         "podcast about {C} and {D}", "{D} awareness week and {C} ads everywhere", "saw a thread on {C} and {D}"},
    }};
    return t;
}

inline const std::array<std::vector<std::string>, kNumLabels>& synth_distractors() {
    static const std::array<std::vector<std::string>, kNumLabels> t = {{
        {"my friend says yoga helps", "tea is good for sleep", "music helps a lot"},
        {"traffic is making me late", "that show causes headaches", "work keeps making me tired"},
        {"i need coffee first", "lack of sleep this week", "need a vacation"},
        {"news is on again", "read an article today", "podcast later"},
    }};
    return t;
}

inline const std::vector<std::string>& synth_fillers() {
    static const std::vector<std::string> f = {"honestly", "today", "lol", "tbh", "again", "this", "week",
                                               "tonight", "still", "just", "yeah", "so", "ok", "anyway"};
    return f;
}

}  // namespace detail

/// Templated tweets with one planted cannabis and one planted depression term
/// each. Label counts follow opts.ratios (largest remainder); every example is
/// checked to locate its planted terms as the canonical spans at distance 0.
inline Corpus generate_synthetic(std::size_t n, std::uint64_t seed, const Lexicon& lexicon, const SynthOptions& opts = {}) {
    if (n < kNumLabels) throw ConfigError("synthetic corpus needs n >= 4");
    std::vector<std::string> cannabis, depression;
    for (const auto& e : lexicon.entries()) (e.cls == EntityClass::Cannabis ? cannabis : depression).push_back(e.term);
    if (cannabis.empty() || depression.empty()) throw ClassError("lexicon must contain both entity classes");

    double sum = 0.0;
    for (double r : opts.ratios) {
        if (!(r >= 0.0)) throw ConfigError("synthetic ratios must be non-negative");
        sum += r;
    }
    if (sum <= 0.0) throw ConfigError("synthetic ratios must not all be zero");
    std::array<double, kNumLabels> norm;
    for (std::size_t k = 0; k < kNumLabels; ++k) norm[k] = opts.ratios[k] / sum;
    const auto counts = apportion(n, norm);

    Rng rng(seed);
    std::vector<RelationLabel> labels;
    for (std::size_t k = 0; k < kNumLabels; ++k) labels.insert(labels.end(), counts[k], label_at(k));
    rng.shuffle(labels);

    const auto& templates = detail::synth_templates();
    const auto& distractors = detail::synth_distractors();
    const auto& fillers = detail::synth_fillers();
    const MatcherConfig matcher;

    Corpus corpus;
    const int width = static_cast<int>(std::to_string(n).size());
    for (std::size_t i = 0; i < n; ++i) {
        const RelationLabel label = labels[i];
        const std::size_t k = index_of(label);
        std::string text;
        std::string c_term, d_term;
        bool ok = false;
        for (int attempt = 0; attempt < 64 && !ok; ++attempt) {
            c_term = rng.pick(cannabis);
            d_term = rng.pick(depression);
            std::string core = rng.pick(templates[k]);
            core.replace(core.find("{C}"), 3, c_term);
            core.replace(core.find("{D}"), 3, d_term);

            std::vector<std::string> parts;
            for (std::size_t f = rng.below(opts.max_filler + 1); f > 0; --f) parts.push_back(rng.pick(fillers));
            parts.push_back(core);
            if (rng.uniform() < opts.distractor_rate) {
                std::size_t other = rng.below(kNumLabels - 1);
                if (other >= k) ++other;
                parts.push_back(",");
                for (std::size_t f = 1 + rng.below(opts.max_filler); f > 0; --f) parts.push_back(rng.pick(fillers));
                parts.push_back(rng.pick(distractors[other]));
            }
            text = join(parts, " ", 0, parts.size());

            const auto spans = locate_entities(tokenize(text), lexicon, matcher);
            const auto* c = canonical_span(spans, EntityClass::Cannabis);
            const auto* d = canonical_span(spans, EntityClass::Depression);
            ok = c && d && c->distance == 0 && d->distance == 0 && c->matched_term == c_term && d->matched_term == d_term;
        }
        if (!ok) throw Error("could not plant unambiguous entities; lexicon terms collide with the template words");
        char id[32];
        std::snprintf(id, sizeof id, "syn-%0*zu", width, i + 1);
        corpus.add({id, text, label, std::nullopt});
    }
    return corpus;
}

}  // namespace kare

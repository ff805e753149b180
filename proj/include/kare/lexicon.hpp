#pragma once

#include "kare/common.hpp"
#include "kare/text.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kare {

enum class EntityClass : std::uint8_t { Cannabis = 0, Depression = 1 };

inline std::string_view to_string(EntityClass c) {
    return c == EntityClass::Cannabis ? "cannabis" : "depression";
}

inline std::optional<EntityClass> parse_entity_class(std::string_view s) {
    const std::string l = ascii_lower(trim(s));
    if (l == "cannabis") return EntityClass::Cannabis;
    if (l == "depression") return EntityClass::Depression;
    return std::nullopt;
}

inline constexpr std::string_view kCannabisMask = "<cannabis>";
inline constexpr std::string_view kDepressionMask = "<depression>";

inline std::string_view mask_token(EntityClass c) {
    return c == EntityClass::Cannabis ? kCannabisMask : kDepressionMask;
}

class ClassError : public Error {
public:
    using Error::Error;
};

// Lowercase and collapse internal whitespace to single spaces.
inline std::string normalize_term(std::string_view term, bool fold_case = true) {
    return join(split_whitespace(fold_case ? ascii_lower(term) : std::string(term)), " ");
}

/// Unit-cost edit distance between two sequences (characters of a string,
/// or tokens of a token list). Two-row dynamic programme, O(|a|·|b|).
template <class SeqA, class SeqB>
std::size_t levenshtein(const SeqA& a, const SeqB& b) {
    const std::size_t n = std::size(a);
    const std::size_t m = std::size(b);
    if (n == 0) return m;
    if (m == 0) return n;
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    auto ai = std::begin(a);
    for (std::size_t i = 1; i <= n; ++i, ++ai) {
        cur[0] = i;
        auto bj = std::begin(b);
        for (std::size_t j = 1; j <= m; ++j, ++bj) {
            const std::size_t sub = prev[j - 1] + (*ai == *bj ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

inline std::size_t levenshtein(std::string_view a, std::string_view b) {
    return levenshtein<std::string_view, std::string_view>(a, b);
}

/// Flat term -> entity class dictionary standing in for the ontology.
class Lexicon {
public:
    struct Entry {
        std::string term;  // normalized
        EntityClass cls;
        std::string concept_id;
        std::size_t token_count;
    };

    void add(std::string_view term, EntityClass cls, std::string concept_id = {}) {
        std::string norm = normalize_term(term);
        if (norm.empty()) throw Error("empty lexicon term");
        if (index_.count(norm)) throw DuplicateError("duplicate lexicon term '" + norm + "'");
        const std::size_t tokens = split_whitespace(norm).size();
        index_.emplace(norm, entries_.size());
        entries_.push_back({std::move(norm), cls, std::move(concept_id), tokens});
    }

    static Lexicon parse(std::istream& in, const std::string& source = "<lexicon>") {
        Lexicon lex;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            const auto cols = split(line, '\t');
            if (cols.size() < 2 || cols.size() > 3) {
                throw ParseError(source, lineno, "expected term<TAB>class[<TAB>concept], got " +
                                                     std::to_string(cols.size()) + " column(s)");
            }
            const auto cls = parse_entity_class(cols[1]);
            if (!cls) throw ClassError(source + ":" + std::to_string(lineno) + ": unknown entity class '" + trim(cols[1]) + "'");
            if (trim(cols[0]).empty()) throw ParseError(source, lineno, "empty term");
            try {
                lex.add(cols[0], *cls, cols.size() == 3 ? trim(cols[2]) : std::string{});
            } catch (const DuplicateError& e) {
                throw DuplicateError(source + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
        return lex;
    }

    static Lexicon load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open lexicon file '" + path + "'");
        return parse(in, path);
    }

    // Serialized form accepted by parse().
    std::string to_tsv() const {
        std::ostringstream out;
        for (const auto& e : entries_) {
            out << e.term << '\t' << to_string(e.cls);
            if (!e.concept_id.empty()) out << '\t' << e.concept_id;
            out << '\n';
        }
        return out.str();
    }

    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    const Entry* find(std::string_view term) const {
        auto it = index_.find(normalize_term(term));
        return it == index_.end() ? nullptr : &entries_[it->second];
    }

    std::size_t max_term_tokens() const {
        std::size_t m = 0;
        for (const auto& e : entries_) m = std::max(m, e.token_count);
        return m;
    }

    bool has_class(EntityClass c) const {
        return std::any_of(entries_.begin(), entries_.end(), [c](const Entry& e) { return e.cls == c; });
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct EntitySpan {
    EntityClass cls = EntityClass::Cannabis;
    std::size_t start = 0;  // inclusive
    std::size_t end = 0;    // inclusive
    std::string matched_term;
    std::size_t distance = 0;
    bool extra = false;  // additional mention, reported but not masked

    std::size_t length() const { return end - start + 1; }
    bool overlaps(const EntitySpan& o) const { return start <= o.end && o.start <= end; }
    bool operator==(const EntitySpan&) const = default;
};

struct MatcherConfig {
    std::size_t max_ngram = 4;
    std::size_t max_distance = 1;
    std::optional<double> normalized_threshold = 0.25;
    bool case_folding = true;

    void validate() const {
        if (max_ngram < 1) throw ConfigError("lexicon.max_ngram must be >= 1");
        if (normalized_threshold && (*normalized_threshold < 0.0 || *normalized_threshold > 1.0)) {
            throw ConfigError("lexicon.normalized_threshold must lie in [0, 1]");
        }
    }
};

/// Scan every n-gram (n <= max_ngram) against every lexicon term. Overlaps are
/// resolved greedily by (distance, longer span, leftmost). The best span of each
/// class is canonical; other surviving matches come back with extra = true.
/// Result is ordered by start index.
inline std::vector<EntitySpan> locate_entities(const std::vector<std::string>& tokens, const Lexicon& lexicon,
                                               const MatcherConfig& cfg = {}) {
    cfg.validate();
    std::vector<std::string> folded;
    folded.reserve(tokens.size());
    for (const auto& t : tokens) folded.push_back(cfg.case_folding ? ascii_lower(t) : t);

    struct Candidate {
        EntitySpan span;
        std::size_t entry;
    };
    std::vector<Candidate> cands;
    const auto& entries = lexicon.entries();
    for (std::size_t i = 0; i < folded.size(); ++i) {
        for (std::size_t n = 1; n <= cfg.max_ngram && i + n <= folded.size(); ++n) {
            const std::string gram = join(folded, " ", i, i + n);
            std::optional<Candidate> best;
            for (std::size_t k = 0; k < entries.size(); ++k) {
                const auto& term = entries[k].term;
                const std::size_t longest = std::max(gram.size(), term.size());
                std::size_t allowed = cfg.max_distance;
                if (cfg.normalized_threshold) {
                    allowed = std::min(allowed, static_cast<std::size_t>(*cfg.normalized_threshold * longest + 1e-9));
                }
                const std::size_t gap = gram.size() > term.size() ? gram.size() - term.size() : term.size() - gram.size();
                if (gap > allowed) continue;
                const std::size_t d = levenshtein(gram, term);
                if (d > allowed) continue;
                if (!best || d < best->span.distance) {
                    best = Candidate{EntitySpan{entries[k].cls, i, i + n - 1, term, d, false}, k};
                }
            }
            if (best) cands.push_back(std::move(*best));
        }
    }

    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.span.distance != b.span.distance) return a.span.distance < b.span.distance;
        if (a.span.length() != b.span.length()) return a.span.length() > b.span.length();
        if (a.span.start != b.span.start) return a.span.start < b.span.start;
        return a.entry < b.entry;
    });

    std::vector<EntitySpan> accepted;
    bool seen[2] = {false, false};
    for (auto& c : cands) {
        const bool clash = std::any_of(accepted.begin(), accepted.end(),
                                       [&](const EntitySpan& s) { return s.overlaps(c.span); });
        if (clash) continue;
        auto& flag = seen[static_cast<int>(c.span.cls)];
        c.span.extra = flag;
        flag = true;
        accepted.push_back(std::move(c.span));
    }
    std::sort(accepted.begin(), accepted.end(),
              [](const EntitySpan& a, const EntitySpan& b) { return a.start < b.start; });
    return accepted;
}

inline const EntitySpan* canonical_span(const std::vector<EntitySpan>& spans, EntityClass cls) {
    for (const auto& s : spans) {
        if (s.cls == cls && !s.extra) return &s;
    }
    return nullptr;
}

class MissingEntityError : public Error {
public:
    MissingEntityError(const std::string& what, std::vector<EntitySpan> found)
        : Error(what), found_(std::move(found)) {}
    const std::vector<EntitySpan>& found() const noexcept { return found_; }

private:
    std::vector<EntitySpan> found_;
};

class OverlapError : public Error {
public:
    using Error::Error;
};

struct MaskedTweet {
    std::vector<std::string> tokens;
    std::size_t cannabis_index = 0;
    std::size_t depression_index = 0;
    std::vector<std::string> original;
    std::vector<EntitySpan> spans;
};

/// Collapse each entity span to its class mask token.
inline MaskedTweet mask_entities(const std::vector<std::string>& tokens, const EntitySpan* cannabis,
                                 const EntitySpan* depression) {
    if (!cannabis || !depression) {
        std::vector<EntitySpan> found;
        if (cannabis) found.push_back(*cannabis);
        if (depression) found.push_back(*depression);
        throw MissingEntityError(std::string("missing ") + (cannabis ? "depression" : "cannabis") + " entity",
                                 std::move(found));
    }
    for (const EntitySpan* s : {cannabis, depression}) {
        if (s->start > s->end || s->end >= tokens.size()) {
            throw Error("entity span " + std::to_string(s->start) + ".." + std::to_string(s->end) +
                        " outside token range of length " + std::to_string(tokens.size()));
        }
    }
    if (cannabis->overlaps(*depression)) {
        throw OverlapError("entity spans " + std::to_string(cannabis->start) + ".." + std::to_string(cannabis->end) +
                           " and " + std::to_string(depression->start) + ".." + std::to_string(depression->end) +
                           " overlap");
    }
    if (cannabis->cls != EntityClass::Cannabis || depression->cls != EntityClass::Depression) {
        throw ClassError("entity span class does not match its mask slot");
    }
    MaskedTweet out;
    out.original = tokens;
    out.spans = {*cannabis, *depression};
    for (std::size_t i = 0; i < tokens.size();) {
        if (i == cannabis->start) {
            out.cannabis_index = out.tokens.size();
            out.tokens.emplace_back(kCannabisMask);
            i = cannabis->end + 1;
        } else if (i == depression->start) {
            out.depression_index = out.tokens.size();
            out.tokens.emplace_back(kDepressionMask);
            i = depression->end + 1;
        } else {
            out.tokens.push_back(tokens[i++]);
        }
    }
    return out;
}

inline MaskedTweet mask_entities(const std::vector<std::string>& tokens, const EntitySpan& cannabis,
                                 const EntitySpan& depression) {
    return mask_entities(tokens, &cannabis, &depression);
}

/// Locate, pick the canonical span of each class and mask them.
inline MaskedTweet locate_and_mask(const std::vector<std::string>& tokens, const Lexicon& lexicon,
                                   const MatcherConfig& cfg = {}) {
    auto spans = locate_entities(tokens, lexicon, cfg);
    const EntitySpan* c = canonical_span(spans, EntityClass::Cannabis);
    const EntitySpan* d = canonical_span(spans, EntityClass::Depression);
    if (!c || !d) {
        throw MissingEntityError(std::string("missing ") + (c ? "depression" : "cannabis") + " entity", spans);
    }
    MaskedTweet m = mask_entities(tokens, *c, *d);
    m.spans = std::move(spans);
    return m;
}

}  // namespace kare

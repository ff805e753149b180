#include "kare/lexicon.hpp"
#include "kare/random.hpp"
#include "kare/text.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <sstream>

using namespace kare;

namespace {

// Plain recursive edit distance with memoization, independent of the two-row DP.
std::size_t reference_distance(const std::string& a, const std::string& b) {
    std::vector<std::vector<long>> memo(a.size() + 1, std::vector<long>(b.size() + 1, -1));
    std::function<long(std::size_t, std::size_t)> d = [&](std::size_t i, std::size_t j) -> long {
        if (i == 0) return static_cast<long>(j);
        if (j == 0) return static_cast<long>(i);
        if (memo[i][j] >= 0) return memo[i][j];
        long best = std::min(d(i - 1, j) + 1, d(i, j - 1) + 1);
        best = std::min(best, d(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1));
        return memo[i][j] = best;
    };
    return static_cast<std::size_t>(d(a.size(), b.size()));
}

Lexicon sample_lexicon() {
    std::istringstream in(
        "# term\tclass\tconcept\n"
        "cbd oil\tcannabis\tcbd\n"
        "weed\tcannabis\tmarijuana\n"
        "smoke weed\tcannabis\tmarijuana\n"
        "marijuana\tcannabis\tmarijuana\n"
        "depressed\tdepression\tdepression\n"
        "depression\tdepression\tdepression\n");
    return Lexicon::parse(in, "sample.tsv");
}

}  // namespace

TEST(Levenshtein, KnownValues) {
    EXPECT_EQ(levenshtein("marijuanna", "marijuana"), 1u);
    EXPECT_EQ(levenshtein("kitten", "sitting"), 3u);
    EXPECT_EQ(levenshtein("", "abc"), 3u);
    EXPECT_EQ(levenshtein("same", "same"), 0u);
}

TEST(Levenshtein, MatchesRecursiveOracle) {
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        std::string a(rng.below(9), 'a'), b(rng.below(9), 'a');
        for (auto& c : a) c = static_cast<char>('a' + rng.below(4));
        for (auto& c : b) c = static_cast<char>('a' + rng.below(4));
        ASSERT_EQ(levenshtein(a, b), reference_distance(a, b)) << a << " / " << b;
        ASSERT_EQ(levenshtein(a, b), levenshtein(b, a));
    }
}

TEST(Lexicon, ParsesTsv) {
    const Lexicon lex = sample_lexicon();
    EXPECT_EQ(lex.size(), 6u);
    ASSERT_NE(lex.find("CBD Oil"), nullptr);
    EXPECT_EQ(lex.find("cbd oil")->cls, EntityClass::Cannabis);
    EXPECT_EQ(lex.find("cbd oil")->concept_id, "cbd");
    EXPECT_EQ(lex.max_term_tokens(), 2u);
    EXPECT_TRUE(lex.has_class(EntityClass::Depression));
}

TEST(Lexicon, RejectsBadRows) {
    std::istringstream bad_class("weed\tcannabis\nsad\tmood\n");
    try {
        Lexicon::parse(bad_class, "x.tsv");
        FAIL() << "expected ClassError";
    } catch (const ClassError& e) {
        EXPECT_NE(std::string(e.what()).find("x.tsv:2"), std::string::npos);
    }
    std::istringstream dup("weed\tcannabis\nWeed\tcannabis\n");
    EXPECT_THROW(Lexicon::parse(dup), DuplicateError);
    std::istringstream columns("weed\n");
    try {
        Lexicon::parse(columns, "y.tsv");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 1u);
    }
}

TEST(Locate, AnnotatedReasonTweet) {
    const auto tokens =
        tokenize("-Not saying im cured, but i feel less depressed lately, could be my CBD oil supplement.");
    const auto spans = locate_entities(tokens, sample_lexicon());
    const auto* c = canonical_span(spans, EntityClass::Cannabis);
    const auto* d = canonical_span(spans, EntityClass::Depression);
    ASSERT_TRUE(c && d);
    EXPECT_EQ(c->matched_term, "cbd oil");
    EXPECT_EQ(join(tokens, " ", c->start, c->end + 1), "cbd oil");
    EXPECT_EQ(d->matched_term, "depressed");
    EXPECT_EQ(c->distance, 0u);
}

TEST(Locate, FuzzyMatchWithinThreshold) {
    const auto spans = locate_entities(tokenize("too much marijuanna makes me depresed"), sample_lexicon());
    const auto* c = canonical_span(spans, EntityClass::Cannabis);
    const auto* d = canonical_span(spans, EntityClass::Depression);
    ASSERT_TRUE(c && d);
    EXPECT_EQ(c->matched_term, "marijuana");
    EXPECT_EQ(c->distance, 1u);
    EXPECT_EQ(d->distance, reference_distance("depresed", d->matched_term));
}

TEST(Locate, ShortTermsNeedExactMatch) {
    // floor(0.25 * 4) = 1 allows one edit on "weed"; three-letter terms get none.
    Lexicon lex;
    lex.add("pot", EntityClass::Cannabis);
    lex.add("sad", EntityClass::Depression);
    EXPECT_TRUE(locate_entities(tokenize("got mad"), lex).empty());
    MatcherConfig loose;
    loose.normalized_threshold.reset();
    EXPECT_EQ(locate_entities(tokenize("got mad"), lex, loose).size(), 2u);
}

TEST(Locate, PrefersLongerExactSpan) {
    const auto spans = locate_entities(tokenize("people will smoke weed and be depressed"), sample_lexicon());
    const auto* c = canonical_span(spans, EntityClass::Cannabis);
    ASSERT_NE(c, nullptr);
    EXPECT_EQ(c->matched_term, "smoke weed");
    EXPECT_EQ(c->start, 2u);
    EXPECT_EQ(c->end, 3u);
}

TEST(Locate, ExtraMentionsAreFlagged) {
    const auto spans = locate_entities(tokenize("weed weed depressed"), sample_lexicon());
    ASSERT_EQ(spans.size(), 3u);
    EXPECT_FALSE(spans[0].extra);
    EXPECT_TRUE(spans[1].extra);
    for (std::size_t i = 1; i < spans.size(); ++i) EXPECT_FALSE(spans[i - 1].overlaps(spans[i]));
}

TEST(Locate, PlantedTermsAlwaysFound) {
    const Lexicon lex = sample_lexicon();
    const std::vector<std::string> filler = {"so", "my", "the", "today", "really", "feel", "lol"};
    Rng rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        const auto& term = lex.entries()[rng.below(lex.size())];
        std::vector<std::string> tokens;
        for (std::size_t i = rng.below(6); i > 0; --i) tokens.push_back(rng.pick(filler));
        const std::size_t start = tokens.size();
        for (const auto& t : split_whitespace(term.term)) tokens.push_back(t);
        for (std::size_t i = rng.below(6); i > 0; --i) tokens.push_back(rng.pick(filler));
        const auto spans = locate_entities(tokens, lex);
        const auto* s = canonical_span(spans, term.cls);
        ASSERT_NE(s, nullptr);
        EXPECT_EQ(s->start, start);
        EXPECT_EQ(s->distance, 0u);
    }
}

TEST(Mask, CollapsesSpansToClassTokens) {
    const auto tokens = tokenize("cbd oil helps my depression a lot");
    const auto m = locate_and_mask(tokens, sample_lexicon(), {});
    EXPECT_EQ(m.tokens, (std::vector<std::string>{"<cannabis>", "helps", "my", "<depression>", "a", "lot"}));
    EXPECT_EQ(m.cannabis_index, 0u);
    EXPECT_EQ(m.depression_index, 3u);
    EXPECT_EQ(m.original, tokens);
}

TEST(Mask, MissingEntityCarriesFoundSpans) {
    try {
        locate_and_mask(tokenize("weed is great"), sample_lexicon(), {});
        FAIL() << "expected MissingEntityError";
    } catch (const MissingEntityError& e) {
        ASSERT_EQ(e.found().size(), 1u);
        EXPECT_EQ(e.found()[0].matched_term, "weed");
    }
}

TEST(Mask, RejectsOverlapAndClassMismatch) {
    const std::vector<std::string> tokens = {"a", "b", "c"};
    EntitySpan c{EntityClass::Cannabis, 0, 1, "x", 0, false};
    EntitySpan d{EntityClass::Depression, 1, 2, "y", 0, false};
    EXPECT_THROW(mask_entities(tokens, c, d), OverlapError);
    EntitySpan wrong{EntityClass::Cannabis, 2, 2, "y", 0, false};
    EXPECT_THROW(mask_entities(tokens, c, wrong), ClassError);
}

#include "kare/text.hpp"

#include <gtest/gtest.h>

using kare::tokenize;
using Tokens = std::vector<std::string>;

TEST(Tokenize, SplitsAndLowercases) {
    EXPECT_EQ(tokenize("CBD Oil helps"), (Tokens{"cbd", "oil", "helps"}));
    EXPECT_EQ(tokenize("CBD Oil", false), (Tokens{"CBD", "Oil"}));
}

TEST(Tokenize, PeelsPunctuation) {
    EXPECT_EQ(tokenize("\"depressed,\" lately."), (Tokens{"\"", "depressed", ",", "\"", "lately", "."}));
    EXPECT_EQ(tokenize("clash!Weed"), (Tokens{"clash!weed"}));
    EXPECT_EQ(tokenize("..."), (Tokens{".", ".", "."}));
}

TEST(Tokenize, KeepsUrlsAndMentions) {
    EXPECT_EQ(tokenize("@Me see https://t.co/AbC."), (Tokens{"@me", "see", "https://t.co/abc."}));
}

TEST(Tokenize, EmptyInput) {
    EXPECT_TRUE(tokenize("").empty());
    EXPECT_TRUE(tokenize("   \t\n").empty());
}

TEST(Text, JoinAndSplit) {
    const Tokens t = {"a", "b", "c"};
    EXPECT_EQ(kare::join(t, " "), "a b c");
    EXPECT_EQ(kare::join(t, "-", 1, 3), "b-c");
    EXPECT_EQ(kare::split("a\t\tb", '\t'), (Tokens{"a", "", "b"}));
    EXPECT_EQ(kare::trim("  x y \n"), "x y");
}

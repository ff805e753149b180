#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace kare {

inline std::string ascii_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

inline bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

inline std::vector<std::string> split_whitespace(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(s[i])) ++i;
        std::size_t j = i;
        while (j < s.size() && !is_space(s[j])) ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep, std::size_t begin = 0,
                        std::size_t end = std::string::npos) {
    end = std::min(end, parts.size());
    std::string out;
    for (std::size_t i = begin; i < end; ++i) {
        if (i > begin) out += sep;
        out += parts[i];
    }
    return out;
}

namespace detail {

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(s[i])) != prefix[i]) return false;
    }
    return true;
}

}  // namespace detail

// URLs and @mentions survive as single tokens.
inline bool is_atomic_token(std::string_view chunk) {
    return detail::starts_with_ci(chunk, "http://") || detail::starts_with_ci(chunk, "https://") ||
           detail::starts_with_ci(chunk, "www.") || (chunk.size() > 1 && chunk[0] == '@');
}

// Tweet tokenizer: whitespace split, then leading and trailing punctuation
// characters are peeled off one token each. Lowercases ASCII when asked.
inline std::vector<std::string> tokenize(std::string_view text, bool lowercase = true) {
    std::vector<std::string> out;
    for (const auto& chunk : split_whitespace(text)) {
        std::string_view c = chunk;
        if (is_atomic_token(c)) {
            out.push_back(lowercase ? ascii_lower(c) : std::string(c));
            continue;
        }
        std::size_t lo = 0;
        std::size_t hi = c.size();
        while (lo < hi && is_punct(c[lo])) ++lo;
        while (hi > lo && is_punct(c[hi - 1])) --hi;
        for (std::size_t i = 0; i < lo; ++i) out.emplace_back(1, c[i]);
        if (hi > lo) out.push_back(lowercase ? ascii_lower(c.substr(lo, hi - lo)) : std::string(c.substr(lo, hi - lo)));
        for (std::size_t i = hi; i < c.size(); ++i) out.emplace_back(1, c[i]);
    }
    return out;
}

inline std::string trim(std::string_view s) {
    std::size_t lo = 0;
    std::size_t hi = s.size();
    while (lo < hi && is_space(s[lo])) ++lo;
    while (hi > lo && is_space(s[hi - 1])) --hi;
    return std::string(s.substr(lo, hi - lo));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

}  // namespace kare

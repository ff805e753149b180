#pragma once

#include "kare/common.hpp"
#include "kare/lexicon.hpp"
#include "kare/random.hpp"
#include "kare/text.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace kare {

inline constexpr std::string_view kUnknownToken = "<unk>";

/// Word vocabulary plus V x d embedding matrix. The last three rows are the
/// special tokens <cannabis>, <depression>, <unk>, in that order.
class EmbeddingTable {
public:
    static constexpr std::size_t kSpecialCount = 3;

    EmbeddingTable() = default;

    /// Text format: optional "V d" header, then one `token v1 ... vd` per line.
    static EmbeddingTable load(const std::string& path, std::size_t dim, Rng& rng) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open embedding file '" + path + "'");
        return parse(in, dim, rng, path);
    }

    static EmbeddingTable parse(std::istream& in, std::size_t dim, Rng& rng, const std::string& source = "<embeddings>") {
        std::vector<std::string> tokens;
        std::vector<double> values;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto fields = split_whitespace(line);
            if (fields.empty()) continue;
            if (lineno == 1 && fields.size() == 2 && is_integer(fields[0]) && is_integer(fields[1])) {
                if (std::stoul(fields[1]) != dim) {
                    throw ParseError(source, lineno, "header dimension " + fields[1] + " != configured " + std::to_string(dim));
                }
                continue;
            }
            if (fields.size() != dim + 1) {
                throw ParseError(source, lineno, "expected " + std::to_string(dim) + " values, got " +
                                                     std::to_string(fields.size() - 1));
            }
            for (std::size_t k = 1; k < fields.size(); ++k) {
                double v = 0.0;
                const auto& f = fields[k];
                auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
                if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
                    throw ParseError(source, lineno, "bad number '" + f + "'");
                }
                values.push_back(v);
            }
            tokens.push_back(fields[0]);
        }
        Matrix m(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(dim));
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            for (std::size_t k = 0; k < dim; ++k) m(i, k) = values[i * dim + k];
        }
        return EmbeddingTable(std::move(tokens), std::move(m), rng);
    }

    /// Random uniform(+-scale) vectors for a fixed vocabulary.
    static EmbeddingTable random(std::vector<std::string> tokens, std::size_t dim, Rng& rng, double scale = 0.5) {
        Matrix m(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(dim));
        uniform_fill(m, rng, scale);
        return EmbeddingTable(std::move(tokens), std::move(m), rng);
    }

    /// Rebuild from stored rows (specials included), e.g. from a checkpoint.
    static EmbeddingTable from_rows(std::vector<std::string> words, Matrix rows) {
        EmbeddingTable t;
        t.pretrained_ = words.size();
        if (static_cast<std::size_t>(rows.rows()) != words.size() + kSpecialCount) {
            throw ShapeError("embedding rows do not match vocabulary plus specials");
        }
        t.tokens_ = std::move(words);
        t.append_specials();
        t.matrix_ = std::move(rows);
        return t;
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(matrix_.cols()); }
    std::size_t pretrained_size() const noexcept { return pretrained_; }
    const Matrix& matrix() const noexcept { return matrix_; }
    Matrix& matrix() noexcept { return matrix_; }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    std::size_t unk_index() const { return pretrained_ + 2; }
    std::size_t special_index(EntityClass c) const { return pretrained_ + static_cast<std::size_t>(c); }

    std::size_t lookup(std::string_view token) const {
        auto it = index_.find(std::string(token));
        return it == index_.end() ? unk_index() : it->second;
    }

    bool contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

    Eigen::RowVectorXd row(std::string_view token) const { return matrix_.row(static_cast<Eigen::Index>(lookup(token))); }

private:
    EmbeddingTable(std::vector<std::string> tokens, Matrix pretrained, Rng& rng) {
        pretrained_ = tokens.size();
        tokens_ = std::move(tokens);
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (!index_.emplace(tokens_[i], i).second) {
                throw DuplicateError("duplicate embedding token '" + tokens_[i] + "'");
            }
        }
        const Eigen::Index d = pretrained.cols();
        Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(d);
        if (pretrained.rows() > 0) mean = pretrained.colwise().mean();
        matrix_.resize(pretrained.rows() + static_cast<Eigen::Index>(kSpecialCount), d);
        matrix_.topRows(pretrained.rows()) = pretrained;
        for (std::size_t s = 0; s < kSpecialCount; ++s) {
            for (Eigen::Index k = 0; k < d; ++k) {
                matrix_(pretrained.rows() + static_cast<Eigen::Index>(s), k) = mean(k) + rng.uniform(-0.01, 0.01);
            }
        }
        append_specials();
    }

    void append_specials() {
        tokens_.resize(pretrained_);
        tokens_.emplace_back(kCannabisMask);
        tokens_.emplace_back(kDepressionMask);
        tokens_.emplace_back(kUnknownToken);
        index_.clear();
        for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
    }

    static bool is_integer(const std::string& s) {
        return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
    Matrix matrix_;
    std::size_t pretrained_ = 0;
};

using PositionSequence = std::vector<int>;

/// Signed distance of each token to the span [first, last]; zero inside it.
inline PositionSequence position_sequence(std::size_t n, std::size_t first, std::size_t last) {
    if (first > last || last >= n) {
        throw Error("invalid entity span " + std::to_string(first) + ".." + std::to_string(last) + " for length " +
                    std::to_string(n));
    }
    PositionSequence p(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<long>(i);
        if (i < first) p[i] = static_cast<int>(ii - static_cast<long>(first));
        else if (i > last) p[i] = static_cast<int>(ii - static_cast<long>(last));
        else p[i] = 0;
    }
    return p;
}

/// Shared (2*clip+1) x d_p table indexed by clamped relative distance.
struct PositionEmbedding {
    int clip = 50;
    Matrix table;

    PositionEmbedding() = default;
    PositionEmbedding(int clip_, std::size_t dim) : clip(clip_), table(Matrix::Zero(2 * clip_ + 1, static_cast<Eigen::Index>(dim))) {
        if (clip_ < 0) throw ConfigError("position.clip must be >= 0");
    }

    std::size_t dim() const { return static_cast<std::size_t>(table.cols()); }

    static Eigen::Index row_for(int distance, int clip) { return std::clamp(distance, -clip, clip) + clip; }
    Eigen::Index row_for(int distance) const { return row_for(distance, clip); }
};

inline std::vector<Eigen::Index> position_rows(const PositionSequence& seq, int clip) {
    std::vector<Eigen::Index> rows(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) rows[i] = PositionEmbedding::row_for(seq[i], clip);
    return rows;
}

inline Matrix gather_rows(const Matrix& table, const std::vector<Eigen::Index>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), table.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = table.row(rows[i]);
    return out;
}

inline Matrix embed_positions(const PositionSequence& seq, const PositionEmbedding& P) {
    return gather_rows(P.table, position_rows(seq, P.clip));
}

inline Matrix hconcat(const std::vector<const Matrix*>& blocks) {
    Eigen::Index rows = blocks.empty() ? 0 : blocks.front()->rows();
    Eigen::Index cols = 0;
    for (auto* b : blocks) {
        require_shape(b->rows() == rows, "concatenated blocks differ in row count");
        cols += b->cols();
    }
    Matrix out(rows, cols);
    Eigen::Index c = 0;
    for (auto* b : blocks) {
        out.middleCols(c, b->cols()) = *b;
        c += b->cols();
    }
    return out;
}

/// Rows x_i = e_i (+) P[p_i^c] (+) P[p_i^d] over the masked sequence, where each
/// entity occupies exactly one token.
inline Matrix compose_input(const MaskedTweet& masked, const EmbeddingTable& table, const PositionEmbedding& P) {
    const std::size_t n = masked.tokens.size();
    if (masked.cannabis_index >= n || masked.tokens[masked.cannabis_index] != kCannabisMask ||
        masked.depression_index >= n || masked.tokens[masked.depression_index] != kDepressionMask) {
        throw MissingEntityError("masked tweet lacks a mask token at the recorded index", masked.spans);
    }
    Matrix words(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(table.dim()));
    for (std::size_t i = 0; i < n; ++i) {
        words.row(static_cast<Eigen::Index>(i)) = table.matrix().row(static_cast<Eigen::Index>(table.lookup(masked.tokens[i])));
    }
    const Matrix pc = embed_positions(position_sequence(n, masked.cannabis_index, masked.cannabis_index), P);
    const Matrix pd = embed_positions(position_sequence(n, masked.depression_index, masked.depression_index), P);
    return hconcat({&words, &pc, &pd});
}

}  // namespace kare

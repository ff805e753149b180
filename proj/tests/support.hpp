#pragma once

#include "kare/gradcheck.hpp"
#include "kare/lexicon.hpp"
#include "kare/model.hpp"
#include "kare/text.hpp"

#include <string>
#include <vector>

namespace kare::testing {

// n <= 6, d = 8, d_p = 2, M = {2, 3}, f_c = 3, d_a = 4, L = 1, h_b = 8, d_f = 4.
inline ModelConfig tiny_config() {
    ModelConfig c;
    c.embed_dim = 8;
    c.embed_trainable = true;
    c.position_dim = 2;
    c.clip = 3;
    c.windows = {2, 3};
    c.filters = 3;
    c.attn_dim = 4;
    c.fusion_dim = 4;
    c.surrogate.layers = 1;
    c.surrogate.heads = 1;
    c.surrogate.hidden = 8;
    c.surrogate.ff = 8;
    c.surrogate.max_len = 8;
    return c;
}

inline Lexicon tiny_lexicon() {
    Lexicon lex;
    lex.add("cbd oil", EntityClass::Cannabis, "cbd");
    lex.add("weed", EntityClass::Cannabis, "marijuana");
    lex.add("depressed", EntityClass::Depression, "depression");
    lex.add("anxiety", EntityClass::Depression, "anxiety");
    return lex;
}

inline std::vector<std::string> tiny_words() { return {"helps", "my", "the", "with", "for", "making", "me"}; }

struct TinySetup {
    Model model;
    std::vector<EncodedExample> batch;
};

inline TinySetup tiny_setup(const ModelConfig& cfg, std::uint64_t seed = 7) {
    Rng rng(seed);
    auto table = EmbeddingTable::random(tiny_words(), cfg.embed_dim, rng);
    TinySetup s{Model::initialized(cfg, table, rng), {}};
    const Lexicon lex = tiny_lexicon();
    const std::vector<std::pair<std::string, RelationLabel>> texts = {
        {"cbd oil helps my anxiety", RelationLabel::Reason},
        {"weed making me depressed", RelationLabel::Effect},
        {"depressed with the weed !", RelationLabel::Addiction},
        {"anxiety , cbd oil for me", RelationLabel::Ambiguous},
    };
    for (std::size_t i = 0; i < texts.size(); ++i) {
        auto masked = locate_and_mask(tokenize(texts[i].first), lex, MatcherConfig{});
        s.batch.push_back(s.model.encode(masked, "t" + std::to_string(i), texts[i].second));
    }
    return s;
}

}  // namespace kare::testing

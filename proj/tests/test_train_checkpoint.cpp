#include "kare/kare.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

using namespace kare;

namespace {

RunConfig small_run() {
    RunConfig c;
    for (const char* kv : {"embedding.dim=12", "embedding.trainable=true", "position.dim=4", "position.clip=10",
                           "conv.windows=2,3", "conv.filters=6", "attention.dim=8", "context.layers=2",
                           "context.heads=2", "context.hidden=8", "context.ff=16", "context.max_len=32",
                           "model.fusion_dim=8", "train.epochs=40", "train.batch=8", "train.lr=0.01",
                           "train.context_lr=0.01", "train.patience=0", "seed=3"}) {
        c.set_assignment(kv);
    }
    return c;
}

const Lexicon& lexicon() {
    static const Lexicon lex = kare::testing::tiny_lexicon();
    return lex;
}

Corpus synthetic(std::size_t n, std::uint64_t seed) {
    SynthOptions o;
    o.ratios = {1, 1, 1, 1};
    return generate_synthetic(n, seed, lexicon(), o);
}

std::string serialize(const Checkpoint& ck) {
    std::ostringstream out;
    write_checkpoint(out, ck.config, ck.meta, ck.lexicon, ck.model);
    return out.str();
}

class Quiet : public ::testing::Test {
    ScopedWarningSink sink_{[](std::string_view) {}};
};

using Training = Quiet;
using CheckpointIo = Quiet;

}  // namespace

TEST_F(Training, OverfitsThirtyTwoExamples) {
    const Corpus data = synthetic(32, 5);
    const auto result = train(small_run(), data, data, lexicon());
    EXPECT_DOUBLE_EQ(result.checkpoint.meta.best_dev_f1, 100.0);
    ASSERT_GE(result.history.size(), 2u);
    EXPECT_LT(result.history.back().train_loss, result.history.front().train_loss);
    EXPECT_TRUE(result.skipped_train.empty());
}

TEST_F(Training, SameSeedSameBytes) {
    const Corpus data = synthetic(24, 8);
    auto cfg = small_run();
    cfg.set("train.epochs", "3");
    const auto a = serialize(train(cfg, data, data, lexicon()).checkpoint);
    const auto b = serialize(train(cfg, data, data, lexicon()).checkpoint);
    EXPECT_EQ(a, b);
    cfg.set("seed", "4");
    EXPECT_NE(a, serialize(train(cfg, data, data, lexicon()).checkpoint));
}

TEST_F(Training, EmptyDevFallsBackToTrainF1) {
    std::vector<std::string> seen;
    ScopedWarningSink sink([&](std::string_view m) { seen.emplace_back(m); });
    auto cfg = small_run();
    cfg.set("train.epochs", "1");
    const auto r = train(cfg, synthetic(8, 1), Corpus{}, lexicon());
    EXPECT_EQ(r.history.size(), 1u);
    EXPECT_TRUE(std::any_of(seen.begin(), seen.end(), [](const std::string& s) { return s.find("dev set is empty") != std::string::npos; }));
    EXPECT_THROW(train(cfg, Corpus{}, Corpus{}, lexicon()), Error);
}

TEST_F(Training, SkipsExamplesWithoutBothEntities) {
    Corpus data = synthetic(8, 2);
    data.add({"bare", "nothing relevant here", RelationLabel::Reason, std::nullopt});
    auto cfg = small_run();
    cfg.set("train.epochs", "1");
    const auto r = train(cfg, data, Corpus{}, lexicon());
    ASSERT_EQ(r.skipped_train.size(), 1u);
    EXPECT_EQ(r.skipped_train[0].id, "bare");
}

TEST(Optimizer, ZeroLearningRateLeavesParameters) {
    auto s = kare::testing::tiny_setup(kare::testing::tiny_config());
    TrainConfig t;
    t.lr = 0.0;
    t.context_lr = 0.0;
    Adam adam(s.model, t);
    const ModelParams before = s.model.params();
    ModelParams g = s.model.zero_gradients();
    for (const auto& ex : s.batch) s.model.accumulate_gradients(ex, ex.label, 0.25, g);
    adam.step(s.model, g);
    EXPECT_EQ(adam.steps(), 1u);
    ModelParams::for_each([](const std::string& name, const auto& a, const auto& b) { EXPECT_EQ(a, b) << name; },
                          s.model.params(), before);
}

TEST(Optimizer, FirstStepMovesByLearningRate) {
    auto s = kare::testing::tiny_setup(kare::testing::tiny_config());
    TrainConfig t;
    t.lr = 0.01;
    t.context_lr = 0.002;
    Adam adam(s.model, t);
    const ModelParams before = s.model.params();
    ModelParams g = s.model.zero_gradients();
    for (const auto& ex : s.batch) s.model.accumulate_gradients(ex, ex.label, 0.25, g);
    adam.step(s.model, g);
    ModelParams::for_each(
        [](const std::string& name, const auto& after, const auto& prior, const auto& grad) {
            const double lr = name.rfind("ctx.", 0) == 0 ? 0.002 : 0.01;
            for (Eigen::Index k = 0; k < grad.size(); ++k) {
                if (std::abs(grad.data()[k]) < 1e-6) continue;
                EXPECT_NEAR(std::abs(after.data()[k] - prior.data()[k]), lr, lr * 1e-2) << name;
            }
        },
        s.model.params(), before, g);
}

TEST(Fusion, GatedAndConcatDiffer) {
    auto cfg = kare::testing::tiny_config();
    const auto gated = kare::testing::tiny_setup(cfg);
    cfg.fusion = FusionKind::Concat;
    const auto concat = kare::testing::tiny_setup(cfg);
    bool differ = false;
    for (std::size_t i = 0; i < gated.batch.size(); ++i) {
        differ |= !gated.model.predict(gated.batch[i]).probs.isApprox(concat.model.predict(concat.batch[i]).probs);
    }
    EXPECT_TRUE(differ);
}

TEST_F(CheckpointIo, RoundTripPredictsIdentically) {
    const Corpus data = synthetic(16, 11);
    auto cfg = small_run();
    cfg.set("train.epochs", "2");
    const auto r = train(cfg, data, data, lexicon());
    const std::string bytes = serialize(r.checkpoint);
    std::istringstream in(bytes);
    const Checkpoint back = read_checkpoint(in);
    EXPECT_EQ(serialize(back), bytes);
    EXPECT_EQ(back.meta.best_epoch, r.checkpoint.meta.best_epoch);
    EXPECT_EQ(back.config.canonical(), cfg.canonical());
    for (const auto& ex : data.examples()) {
        const auto a = predict_text(r.checkpoint, ex.text);
        const auto b = predict_text(back, ex.text);
        EXPECT_EQ(a.prediction.label, b.prediction.label);
        for (Eigen::Index k = 0; k < 4; ++k) EXPECT_EQ(a.prediction.probs(k), b.prediction.probs(k));
        EXPECT_EQ(a.trace.alphas, b.trace.alphas);
    }
}

TEST_F(CheckpointIo, RejectsCorruption) {
    auto cfg = small_run();
    cfg.set("train.epochs", "1");
    const std::string bytes = serialize(train(cfg, synthetic(8, 3), Corpus{}, lexicon()).checkpoint);
    std::istringstream truncated(bytes.substr(0, bytes.size() - 9));
    EXPECT_THROW(read_checkpoint(truncated), Error);
    std::string bad = bytes;
    bad[0] = 'X';
    std::istringstream magic(bad);
    EXPECT_THROW(read_checkpoint(magic), Error);
    std::string version = bytes;
    version[4] = 9;
    std::istringstream ver(version);
    EXPECT_THROW(read_checkpoint(ver), Error);
    EXPECT_THROW(load_checkpoint("/nonexistent/model.kare"), Error);
}

TEST_F(CheckpointIo, RejectsMismatchedArchitecture) {
    auto s = kare::testing::tiny_setup(kare::testing::tiny_config());
    RunConfig wrong = small_run();
    std::ostringstream out;
    write_checkpoint(out, wrong, {}, lexicon(), s.model);
    std::istringstream in(out.str());
    EXPECT_THROW(read_checkpoint(in), Error);
}

TEST(Predict, MissingEntityCarriesSpans) {
    auto cfg = small_run();
    cfg.set("train.epochs", "1");
    ScopedWarningSink quiet([](std::string_view) {});
    const auto r = train(cfg, synthetic(8, 3), Corpus{}, lexicon());
    try {
        predict_text(r.checkpoint, "weed is fine today");
        FAIL() << "expected MissingEntityError";
    } catch (const MissingEntityError& e) {
        ASSERT_EQ(e.found().size(), 1u);
        EXPECT_EQ(e.found()[0].cls, EntityClass::Cannabis);
    }
}

TEST(Ablation, CensusDifferences) {
    const RunConfig base = small_run();
    const auto ref = census_for(base, 20);
    auto diff_for = [&](const std::string& name) {
        for (const auto& v : ablation_variants(true))
            if (v.name == name) return census_diff(ref, census_for(apply_variant(base, v), 20));
        throw std::runtime_error("no variant " + name);
    };
    auto has = [](const std::vector<std::string>& names, const std::string& n) {
        return std::find(names.begin(), names.end(), n) != names.end();
    };

    EXPECT_EQ(diff_for("full").parameter_delta, 0);
    const auto no_ctx = diff_for("-context");
    EXPECT_TRUE(has(no_ctx.removed, "ctx.token"));
    EXPECT_TRUE(has(no_ctx.removed, "fuse.W_g"));
    EXPECT_LT(no_ctx.parameter_delta, 0);

    const auto vanilla = diff_for("-position_attention");
    EXPECT_EQ(vanilla.removed, (std::vector<std::string>{"attn.W_c", "attn.W_d"}));
    EXPECT_TRUE(vanilla.added.empty());

    const auto no_pe = diff_for("-position_embedding");
    EXPECT_FALSE(has(no_pe.removed, "position.table"));
    EXPECT_TRUE(has(no_pe.reshaped, "conv.m2.weight"));

    const auto no_cnn = diff_for("-cnn");
    EXPECT_TRUE(has(no_cnn.removed, "conv.m3.weight"));

    const auto concat = diff_for("-gated_fusion");
    EXPECT_TRUE(has(concat.removed, "fuse.W_g"));
    EXPECT_TRUE(has(concat.reshaped, "cls.W"));

    const auto bert = diff_for("bert");
    EXPECT_TRUE(has(bert.removed, "embed.words"));
    EXPECT_TRUE(has(bert.removed, "attn.W_h"));
}

TEST(Ablation, VariantsAreDistinctAndValid) {
    const auto vs = ablation_variants(true);
    EXPECT_EQ(vs.size(), 9u);
    EXPECT_EQ(vs.front().name, "full");
    for (const auto& v : vs) EXPECT_NO_THROW(ModelConfig::from(apply_variant(small_run(), v))) << v.name;
}

TEST(Config, Errors) {
    RunConfig c;
    EXPECT_THROW(c.set("nope", "1"), ConfigError);
    EXPECT_THROW(c.set("train.epochs", "many"), ConfigError);
    EXPECT_THROW(c.set("model.attention", "fancy"), ConfigError);
    EXPECT_THROW(c.set_assignment("seed"), ConfigError);
    c.set("context.hidden", "10");
    c.set("context.heads", "4");
    EXPECT_THROW(ModelConfig::from(c), ConfigError);
    RunConfig d;
    d.set("model.use_context", "false");
    d.set("model.use_cnn", "false");
    d.set("model.entity_source", "none");
    EXPECT_THROW(ModelConfig::from(d), ConfigError);
    try {
        RunConfig::from_text("seed = 1\nbogus line\n", "x.conf");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("x.conf:2"), std::string::npos);
    }
}

TEST(Config, CanonicalRoundTrip) {
    RunConfig c = small_run();
    EXPECT_EQ(RunConfig::from_text(c.canonical()).canonical(), c.canonical());
}

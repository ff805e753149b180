#include "kare/kare.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace kare;

namespace {

struct Globals {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::int64_t> seed;
    bool quiet = false;
};

RunConfig resolve_config(const Globals& g) {
    RunConfig cfg;
    std::string path = g.config_path;
    if (path.empty()) {
        if (const char* env = std::getenv("KARE_CONFIG")) path = env;
    }
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file '" + path + "'");
        cfg.merge(in, path);
    }
    for (const auto& kv : g.overrides) cfg.set_assignment(kv);
    if (g.seed) cfg.set("seed", std::to_string(*g.seed));
    return cfg;
}

Lexicon resolve_lexicon(const std::string& flag, const RunConfig& cfg) {
    const std::string path = flag.empty() ? cfg.get_string("lexicon.path") : flag;
    if (path.empty()) throw ConfigError("no lexicon: pass --lexicon or set lexicon.path");
    return Lexicon::load(path);
}

std::optional<ExternalContext> resolve_context(const std::string& flag, const RunConfig& cfg) {
    const std::string path = flag.empty() ? cfg.get_string("context.path") : flag;
    if (cfg.get_string("context.provider") != "external" || !cfg.get_bool("model.use_context")) return std::nullopt;
    if (path.empty()) throw ConfigError("context.provider=external needs --context or context.path");
    return ExternalContext::load(path);
}

// Returns a stream writing to `path`, or stdout when path is empty or "-".
class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty() && path != "-") {
            file_.open(path, std::ios::binary | std::ios::trunc);
            if (!file_) throw Error("cannot write '" + path + "'");
        }
    }
    std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

private:
    std::ofstream file_;
};

json span_json(const EntitySpan& s) {
    return {{"class", std::string(to_string(s.cls))}, {"start", s.start},      {"end", s.end},
            {"term", s.matched_term},                  {"distance", s.distance}, {"extra", s.extra}};
}

Corpus inputs_from(const std::string& data, const std::string& text) {
    if (!data.empty() && !text.empty()) throw ConfigError("pass either --data or --text, not both");
    if (!data.empty()) return load_dataset(data);
    if (text.empty()) throw ConfigError("pass --data or --text");
    Corpus c;
    c.add({"input", text, RelationLabel::Ambiguous, std::nullopt});
    return c;
}

std::array<double, 3> parse_ratios3(const std::vector<double>& r) {
    if (r.size() != 3) throw ConfigError("--ratios takes three values (train,dev,test)");
    return {r[0], r[1], r[2]};
}

json metrics_json(const Metrics& m, const ConfusionMatrix& cm) {
    json j = to_json(m);
    json rows = json::array();
    for (const auto& row : cm.counts) rows.push_back(row);
    j["confusion"] = rows;
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kare: knowledge-aware relation extraction between cannabis and depression mentions"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "kare 0.1.0");

    Globals g;
    app.add_option("--config", g.config_path, "Config file (section.key = value); defaults to $KARE_CONFIG");
    app.add_option("--set", g.overrides, "Override a config key, key=value (repeatable)");
    app.add_option("--seed", g.seed, "Random seed (overrides the seed key)");
    app.add_flag("-q,--quiet", g.quiet, "Suppress warnings");

    // locate / mask
    std::string lexicon_path, data_path, text, out_path;
    auto* locate = app.add_subcommand("locate", "Find cannabis and depression mentions");
    auto* mask = app.add_subcommand("mask", "Replace located entities with class tokens");
    for (auto* sc : {locate, mask}) {
        sc->add_option("--lexicon", lexicon_path, "Lexicon TSV (term, class[, concept])");
        sc->add_option("--data", data_path, "Dataset JSONL");
        sc->add_option("--text", text, "Single tweet");
        sc->add_option("--out", out_path, "Output JSONL (default stdout)");
    }

    // stats
    std::string stats_path;
    bool stats_json = false;
    auto* stats = app.add_subcommand("stats", "Class distribution of a dataset");
    stats->add_option("data", stats_path, "Dataset JSONL")->required();
    stats->add_flag("--json", stats_json, "Emit JSON");

    // split
    std::string split_path, split_dir;
    std::vector<double> split_ratios;
    auto* split = app.add_subcommand("split", "Stratified train/dev/test split");
    split->add_option("data", split_path, "Dataset JSONL")->required();
    split->add_option("--ratios", split_ratios, "train,dev,test (default split.ratios)")->delimiter(',');
    split->add_option("--out-dir", split_dir, "Directory for train/dev/test.jsonl (default: next to the input)");

    // kappa
    std::vector<std::string> kappa_files;
    bool kappa_list = false;
    auto* kappa = app.add_subcommand("kappa", "Cohen's kappa between annotators (id<TAB>label files)");
    kappa->add_option("files", kappa_files, "Two or more annotation TSVs")->required()->expected(2, -1);
    kappa->add_flag("--disagreements", kappa_list, "List disagreeing ids for each pair");

    // train
    std::string train_dev, context_path;
    auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
    train_cmd->add_option("--data", data_path, "Training JSONL")->required();
    train_cmd->add_option("--dev", train_dev, "Dev JSONL for model selection");
    train_cmd->add_option("--lexicon", lexicon_path, "Lexicon TSV (default lexicon.path)");
    train_cmd->add_option("--context", context_path, "External context vectors JSONL");
    train_cmd->add_option("--out", out_path, "Checkpoint path")->required();

    // eval
    std::string ckpt_path, averaging = "", json_path;
    std::size_t jobs = 1;
    auto* eval = app.add_subcommand("eval", "Score a checkpoint on a labelled dataset");
    eval->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
    eval->add_option("--data", data_path, "Labelled JSONL")->required();
    eval->add_option("--averaging", averaging, "weighted|macro|micro (default eval.averaging)");
    eval->add_option("--json", json_path, "Also write metrics JSON here");
    eval->add_option("--context", context_path, "External context vectors JSONL");
    eval->add_option("--jobs", jobs, "Worker threads");

    // predict
    auto* predict = app.add_subcommand("predict", "Classify one tweet");
    predict->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
    predict->add_option("--text", text, "Tweet text")->required();
    predict->add_option("--lexicon", lexicon_path, "Lexicon TSV (default: the one stored in the checkpoint)");
    predict->add_option("--context", context_path, "External context vectors JSONL (id \"input\")");

    // ablate
    std::string ablate_dev, ablate_test;
    bool baselines = false;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train and compare component-removal variants");
    ablate_cmd->add_option("--data", data_path, "Training JSONL (split by split.ratios when --dev/--test are absent)")
        ->required();
    ablate_cmd->add_option("--dev", ablate_dev, "Dev JSONL");
    ablate_cmd->add_option("--test", ablate_test, "Test JSONL");
    ablate_cmd->add_option("--lexicon", lexicon_path, "Lexicon TSV (default lexicon.path)");
    ablate_cmd->add_option("--context", context_path, "External context vectors JSONL");
    ablate_cmd->add_option("--json", json_path, "Also write the report JSON here");
    ablate_cmd->add_flag("--baselines", baselines, "Add the context-only baselines (bert, bert_pe, bert_pe_pa)");

    // attn-export
    auto* attn = app.add_subcommand("attn-export", "Per-token attention weights as JSONL");
    attn->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
    attn->add_option("--data", data_path, "Dataset JSONL")->required();
    attn->add_option("--out", out_path, "Output JSONL (default stdout)");
    attn->add_option("--context", context_path, "External context vectors JSONL");
    attn->add_option("--jobs", jobs, "Worker threads");

    // synth
    std::size_t synth_n = 0;
    std::vector<double> synth_ratios;
    double distractor_rate = 0.5;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic labelled corpus");
    synth->add_option("--n", synth_n, "Number of examples")->required();
    synth->add_option("--lexicon", lexicon_path, "Lexicon TSV (default lexicon.path)");
    synth->add_option("--ratios", synth_ratios, "Reason,Effect,Addiction,Ambiguous weights")->delimiter(',');
    synth->add_option("--distractor-rate", distractor_rate, "Probability of an off-entity cue clause");
    synth->add_option("--out", out_path, "Output JSONL (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    WarningSink sink = [&](std::string_view msg) {
        if (!g.quiet) std::cerr << "warning: " << msg << '\n';
    };
    ScopedWarningSink scoped(sink);

    try {
        const RunConfig cfg = resolve_config(g);
        const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed"));

        if (locate->parsed() || mask->parsed()) {
            const Lexicon lex = resolve_lexicon(lexicon_path, cfg);
            const MatcherConfig matcher = matcher_config(cfg);
            const Corpus in = inputs_from(data_path, text);
            Output out(out_path);
            int status = 0;
            for (const auto& ex : in) {
                json j;
                j["id"] = ex.id;
                if (locate->parsed()) {
                    const auto tokens = tokenize(ex.text, matcher.case_folding);
                    j["tokens"] = tokens;
                    json spans = json::array();
                    for (const auto& s : locate_entities(tokens, lex, matcher)) spans.push_back(span_json(s));
                    j["spans"] = spans;
                } else {
                    try {
                        const auto m = mask_example(ex, lex, matcher);
                        j["tokens"] = m.tokens;
                        j["cannabis_index"] = m.cannabis_index;
                        j["depression_index"] = m.depression_index;
                    } catch (const MissingEntityError& e) {
                        json spans = json::array();
                        for (const auto& s : e.found()) spans.push_back(span_json(s));
                        j["error"] = e.what();
                        j["spans"] = spans;
                        status = text.empty() ? status : 2;
                    }
                }
                out.stream() << j.dump() << '\n';
            }
            return status;
        }

        if (stats->parsed()) {
            const Corpus c = load_dataset(stats_path);
            const auto counts = class_distribution(c);
            if (stats_json) {
                json j;
                j["total"] = c.size();
                for (std::size_t k = 0; k < kNumLabels; ++k) j[std::string(to_string(label_at(k)))] = counts[k];
                std::cout << j.dump() << '\n';
            } else {
                for (std::size_t k = 0; k < kNumLabels; ++k) {
                    const double share = c.empty() ? 0.0 : 100.0 * static_cast<double>(counts[k]) / static_cast<double>(c.size());
                    std::cout << pad_right(std::string(to_string(label_at(k))), 10) << pad_left(std::to_string(counts[k]), 8)
                              << pad_left(fixed2(share) + "%", 9) << '\n';
                }
                std::cout << pad_right("total", 10) << pad_left(std::to_string(c.size()), 8) << '\n';
            }
            return 0;
        }

        if (split->parsed()) {
            const auto ratios = split_ratios.empty() ? parse_ratios3(cfg.get_real_list("split.ratios"))
                                                     : parse_ratios3(split_ratios);
            const Corpus c = load_dataset(split_path);
            const Split parts = stratified_split(c, ratios, seed);
            const fs::path dir = split_dir.empty() ? fs::path(split_path).parent_path() : fs::path(split_dir);
            if (!dir.empty()) fs::create_directories(dir);
            const std::string stem = fs::path(split_path).stem().string();
            const std::array<std::pair<const char*, const Corpus*>, 3> named = {
                {{"train", &parts.train}, {"dev", &parts.dev}, {"test", &parts.test}}};
            for (const auto& [name, part] : named) {
                const fs::path p = dir / (stem + "." + name + ".jsonl");
                save_dataset(p.string(), *part);
                std::cout << name << '\t' << part->size() << '\t' << p.string() << '\n';
            }
            return 0;
        }

        if (kappa->parsed()) {
            std::vector<Annotations> raters;
            for (const auto& f : kappa_files) raters.push_back(load_annotations(f));
            for (std::size_t i = 0; i < raters.size(); ++i) {
                for (std::size_t j = i + 1; j < raters.size(); ++j) {
                    const auto r = compare_annotations(raters[i], raters[j]);
                    std::cout << kappa_files[i] << '\t' << kappa_files[j] << "\titems=" << r.items
                              << "\tobserved=" << fixed2(100.0 * r.observed) << "%\tkappa=" << detail::format_real(r.kappa)
                              << '\n';
                    if (kappa_list) {
                        for (const auto& id : r.disagreements) std::cout << "  disagree\t" << id << '\n';
                    }
                }
            }
            return 0;
        }

        if (train_cmd->parsed()) {
            const Lexicon lex = resolve_lexicon(lexicon_path, cfg);
            const auto external = resolve_context(context_path, cfg);
            const Corpus tr = load_dataset(data_path);
            const Corpus dv = train_dev.empty() ? Corpus{} : load_dataset(train_dev);
            auto result = train(cfg, tr, dv, lex, external ? &*external : nullptr, [&](const EpochRecord& r) {
                if (!g.quiet) {
                    std::cerr << "epoch " << r.epoch << "  loss " << detail::format_real(r.train_loss) << "  select-F1 "
                              << fixed2(r.dev_f1) << '\n';
                }
            });
            save_checkpoint(out_path, result.checkpoint);
            const auto& meta = result.checkpoint.meta;
            std::cout << "checkpoint\t" << out_path << "\nbest_epoch\t" << meta.best_epoch << "\nbest_f1\t"
                      << fixed2(meta.best_dev_f1) << "\nskipped_train\t" << result.skipped_train.size()
                      << "\nskipped_dev\t" << result.skipped_dev.size() << '\n';
            return 0;
        }

        if (eval->parsed() || attn->parsed()) {
            if (!fs::exists(ckpt_path)) throw Error("checkpoint not found: " + ckpt_path);
            const Checkpoint ck = load_checkpoint(ckpt_path);
            const auto external = resolve_context(context_path, ck.config);
            const Corpus c = load_dataset(data_path);
            const PreparedCorpus prep = prepare(c, ck.lexicon, matcher_config(ck.config));
            for (const auto& s : prep.skipped) warn("skipped '" + s.id + "': " + s.reason);
            const auto examples = encode_all(ck.model, prep.examples, external ? &*external : nullptr);
            if (attn->parsed()) {
                Output out(out_path);
                const auto traces = attention_traces(ck.model, examples, jobs);
                for (std::size_t i = 0; i < traces.size(); ++i) {
                    out.stream() << trace_json(examples[i].id, traces[i]).dump() << '\n';
                }
                return 0;
            }
            const Averaging avg = parse_averaging(averaging.empty() ? cfg.get_string("eval.averaging") : averaging);
            const auto ev = evaluate(ck.model, examples, avg, jobs);
            std::cout << format_metrics(ev.metrics);
            if (!prep.skipped.empty()) std::cout << "skipped\t" << prep.skipped.size() << '\n';
            if (!json_path.empty()) {
                Output out(json_path);
                json j = metrics_json(ev.metrics, ev.confusion);
                j["evaluated"] = examples.size();
                j["skipped"] = prep.skipped.size();
                out.stream() << j.dump(2) << '\n';
            }
            return 0;
        }

        if (predict->parsed()) {
            if (!fs::exists(ckpt_path)) throw Error("checkpoint not found: " + ckpt_path);
            const Checkpoint ck = load_checkpoint(ckpt_path);
            std::optional<Lexicon> lex;
            if (!lexicon_path.empty()) lex = Lexicon::load(lexicon_path);
            const auto external = resolve_context(context_path, ck.config);
            const auto r = predict_text(ck, text, lex ? &*lex : nullptr, external ? &*external : nullptr);
            json j;
            j["label"] = std::string(to_string(r.prediction.label));
            json probs;
            for (std::size_t k = 0; k < kNumLabels; ++k) probs[std::string(to_string(label_at(k)))] = r.prediction.probs(static_cast<Eigen::Index>(k));
            j["probabilities"] = probs;
            j["tokens"] = r.trace.tokens;
            j["alphas"] = r.trace.alphas;
            json spans = json::array();
            for (const auto& s : r.masked.spans) spans.push_back(span_json(s));
            j["spans"] = spans;
            std::cout << j.dump() << '\n';
            return 0;
        }

        if (ablate_cmd->parsed()) {
            const Lexicon lex = resolve_lexicon(lexicon_path, cfg);
            const auto external = resolve_context(context_path, cfg);
            const Corpus all = load_dataset(data_path);
            Corpus tr, dv, te;
            if (ablate_dev.empty() != ablate_test.empty()) throw ConfigError("pass both --dev and --test, or neither");
            if (ablate_dev.empty()) {
                Split parts = stratified_split(all, parse_ratios3(cfg.get_real_list("split.ratios")), seed);
                tr = std::move(parts.train);
                dv = std::move(parts.dev);
                te = std::move(parts.test);
            } else {
                tr = all;
                dv = load_dataset(ablate_dev);
                te = load_dataset(ablate_test);
            }
            const auto result = ablate(cfg, tr, dv, te, lex, baselines, external ? &*external : nullptr,
                                       [&](const std::string& name) {
                                           if (!g.quiet) std::cerr << "training variant " << name << '\n';
                                       });
            std::cout << result.report.text << '\n';
            for (const auto& v : result.variants) {
                std::cout << v.name << ": " << v.census.size() << " tensors";
                if (!v.diff.removed.empty()) std::cout << ", removed " << join(v.diff.removed, " ");
                if (!v.diff.reshaped.empty()) std::cout << ", reshaped " << join(v.diff.reshaped, " ");
                if (!v.diff.added.empty()) std::cout << ", added " << join(v.diff.added, " ");
                std::cout << ", parameter delta " << v.diff.parameter_delta << '\n';
            }
            if (!json_path.empty()) {
                json j = result.report.json;
                for (std::size_t i = 0; i < result.variants.size(); ++i) {
                    const auto& v = result.variants[i];
                    auto& slot = j["variants"][i];
                    slot["removed"] = v.diff.removed;
                    slot["reshaped"] = v.diff.reshaped;
                    slot["added"] = v.diff.added;
                    slot["parameter_delta"] = v.diff.parameter_delta;
                    slot["best_epoch"] = v.best_epoch;
                }
                Output out(json_path);
                out.stream() << j.dump(2) << '\n';
            }
            return 0;
        }

        if (synth->parsed()) {
            const Lexicon lex = resolve_lexicon(lexicon_path, cfg);
            SynthOptions opts;
            if (!synth_ratios.empty()) {
                if (synth_ratios.size() != kNumLabels) throw ConfigError("--ratios takes four values");
                std::copy(synth_ratios.begin(), synth_ratios.end(), opts.ratios.begin());
            }
            opts.distractor_rate = distractor_rate;
            const Corpus c = generate_synthetic(synth_n, seed, lex, opts);
            Output out(out_path);
            write_dataset(out.stream(), c);
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const MissingEntityError& e) {
        json spans = json::array();
        for (const auto& s : e.found()) spans.push_back(span_json(s));
        std::cerr << "error: " << e.what() << "\nfound: " << spans.dump() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

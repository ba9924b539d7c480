// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

// Pipeline driver: one binary, eight subcommands (synth, prepare, train,
// sample-negatives, generate, evaluate, ablate, gradcheck). Every
// subcommand writes a RunManifest before its first output artifact and
// takes all randomness from an explicit --seed.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "clseg/corpus.hpp"
#include "clseg/errors.hpp"
#include "clseg/gradcheck.hpp"
#include "clseg/lexicon.hpp"
#include "clseg/manifest.hpp"
#include "clseg/mas.hpp"
#include "clseg/metrics.hpp"
#include "clseg/model.hpp"
#include "clseg/synth.hpp"
#include "clseg/tokenizer.hpp"
#include "clseg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct ModelDimFlags {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 2;
    int d_ff = 256;
    int max_seq_len = 96;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--d_model", d_model, "model width");
        cmd->add_option("--n_layers", n_layers, "transformer layers");
        cmd->add_option("--n_heads", n_heads, "attention heads");
        cmd->add_option("--d_ff", d_ff, "feed-forward width");
        cmd->add_option("--max_seq_len", max_seq_len, "maximum encoded sequence length");
    }

    clseg::ModelConfig to_config(int vocab_size, std::uint64_t seed) const {
        clseg::ModelConfig c;
        c.vocab_size = vocab_size;
        c.d_model = d_model;
        c.n_layers = n_layers;
        c.n_heads = n_heads;
        c.d_ff = d_ff;
        c.max_seq_len = max_seq_len;
        c.seed = seed;
        c.validate();
        return c;
    }
};

struct HyperFlags {
    double learning_rate = 5e-5;
    int batch_size = 0;  // 0 = auto: 16 below 5,000 training stories, 32 otherwise
    double alpha = 1.0;
    int epochs = 10;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip_norm = 1.0;
    std::string mechanism_mask = "so,cr,rs";

    void add_to(CLI::App* cmd) {
        cmd->add_option("--learning_rate", learning_rate, "Adam learning rate");
        cmd->add_option("--batch_size", batch_size, "batch size (0 = auto)");
        cmd->add_option("--alpha", alpha, "weight of the negative loss term");
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--adam_beta1", adam_beta1, "Adam beta1");
        cmd->add_option("--adam_beta2", adam_beta2, "Adam beta2");
        cmd->add_option("--adam_eps", adam_eps, "Adam epsilon");
        cmd->add_option("--grad_clip_norm", grad_clip_norm, "global gradient-norm clip");
        cmd->add_option("--mechanism_mask", mechanism_mask,
                        "comma list of negative mechanisms (subset of so,cr,rs)");
    }

    clseg::TrainConfig to_config(std::uint64_t seed, std::size_t train_size) const {
        clseg::TrainConfig c;
        c.learning_rate = learning_rate;
        c.batch_size = batch_size == 0 ? (train_size < 5000 ? 16 : 32) : batch_size;
        c.alpha = alpha;
        c.epochs = epochs;
        c.seed = seed;
        c.adam_beta1 = adam_beta1;
        c.adam_beta2 = adam_beta2;
        c.adam_eps = adam_eps;
        c.grad_clip_norm = grad_clip_norm;
        c.mechanism_mask.clear();
        for (const std::string& part : clseg::split_fields(mechanism_mask, ','))
            c.mechanism_mask.push_back(clseg::mechanism_from_name(part));
        c.n_negatives = static_cast<int>(c.mechanism_mask.size());
        c.validate();
        return c;
    }
};

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw clseg::DataError("cannot create directory " + dir + ": " + ec.message());
}

void require_arg(const std::string& value, const std::string& flag) {
    if (value.empty()) throw clseg::UsageError(flag + " is required (flag or config key)");
}

std::string trim_copy(const std::string& s) {
    const std::size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const std::size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

// Flat `key = value` config files. Keys mirror the subcommand's long flag
// names; values given explicitly on the command line win.
void apply_config_file(CLI::App* cmd, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw clseg::DataError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim_copy(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw clseg::UsageError("config line " + std::to_string(lineno) + " is not 'key = value'");
        const std::string key = trim_copy(line.substr(0, eq));
        std::string value = trim_copy(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        if (key == "config") throw clseg::UsageError("config files cannot nest (key 'config')");
        CLI::Option* opt = cmd->get_option_no_throw("--" + key);
        if (opt == nullptr)
            throw clseg::UsageError("unknown config key '" + key + "' at line " + std::to_string(lineno));
        if (opt->count() > 0) continue;  // explicit flag wins
        opt->add_result(value);
        opt->run_callback();
    }
}

ordered_json train_config_json(const clseg::TrainConfig& c) {
    ordered_json j;
    j["learning_rate"] = c.learning_rate;
    j["batch_size"] = c.batch_size;
    j["alpha"] = c.alpha;
    j["n_negatives"] = c.n_negatives;
    j["epochs"] = c.epochs;
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["adam_eps"] = c.adam_eps;
    j["grad_clip_norm"] = c.grad_clip_norm;
    std::string mask;
    for (clseg::Mechanism m : c.mechanism_mask) {
        if (!mask.empty()) mask += ",";
        mask += clseg::mechanism_name(m);
    }
    j["mechanism_mask"] = mask;
    return j;
}

ordered_json model_config_json(const clseg::ModelConfig& c) {
    ordered_json j;
    j["vocab_size"] = c.vocab_size;
    j["d_model"] = c.d_model;
    j["n_layers"] = c.n_layers;
    j["n_heads"] = c.n_heads;
    j["d_ff"] = c.d_ff;
    j["max_seq_len"] = c.max_seq_len;
    j["seed"] = c.seed;
    return j;
}

ordered_json record_json(const clseg::TrainLogRecord& r) {
    ordered_json j;
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["total"] = r.total;
    j["pos"] = r.pos;
    j["neg"] = r.neg;
    ordered_json mech = ordered_json::object();
    for (const auto& [name, v] : r.per_mechanism) mech[name] = v;
    j["per_mechanism"] = mech;
    if (r.dev_metric)
        j["dev_metric"] = *r.dev_metric;
    else
        j["dev_metric"] = nullptr;
    j["wall_seconds"] = r.wall_seconds;
    return j;
}

std::map<std::string, std::string> load_endings_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw clseg::DataError("cannot open endings file: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = clseg::split_fields(line, '\t');
        if (fields.size() != 2)
            throw clseg::DataError("expected 2 tab-separated fields, got " +
                                   std::to_string(fields.size()) + " at line " + std::to_string(lineno) +
                                   " of " + path);
        if (!out.emplace(fields[0], fields[1]).second)
            throw clseg::DataError("duplicate id " + fields[0] + " in " + path);
    }
    return out;
}

// references may be a 2-column endings file or a 6-column story file
std::map<std::string, std::string> load_reference_endings(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw clseg::DataError("cannot open references file: " + path);
    std::string first;
    std::getline(probe, first);
    const std::size_t tabs = static_cast<std::size_t>(std::count(first.begin(), first.end(), '\t'));
    probe.close();
    if (tabs == 5) {
        std::map<std::string, std::string> out;
        for (const clseg::Story& s : clseg::load_stories(path).stories) out[s.id] = s.ending.text;
        return out;
    }
    if (tabs == 1) return load_endings_file(path);
    throw clseg::DataError("references file " + path + " is neither a story file nor an endings file");
}

clseg::Lexicon load_lexicon_opt(const std::string& path) {
    return path.empty() ? clseg::default_lexicon() : clseg::Lexicon::load(path);
}

std::string negatives_to_string(const std::vector<clseg::NegativeSet>& sets) {
    std::ostringstream buf;
    clseg::save_negative_sets(sets, buf);
    return buf.str();
}

// ---------------------------------------------------------------------------
// subcommand drivers
// ---------------------------------------------------------------------------

struct SynthArgs {
    int n = 0;
    std::uint64_t seed = 1;
    std::string out_dir;
    double negation_rate = 0.25;
    std::string config;
};

void run_synth(const SynthArgs& a) {
    if (a.n < 1) throw clseg::UsageError("--n must be at least 1");
    require_arg(a.out_dir, "--out-dir");
    ensure_dir(a.out_dir);
    clseg::RunManifest manifest;
    manifest.subcommand = "synth";
    manifest.seed = a.seed;
    manifest.config = {{"n", a.n}, {"seed", a.seed}, {"negation_rate", a.negation_rate}};
    manifest.started_at = clseg::iso8601_now();
    const std::string mpath = a.out_dir + "/manifest.json";
    manifest.write(mpath);

    clseg::SynthConfig cfg;
    cfg.negation_rate = a.negation_rate;
    clseg::SynthResult res = clseg::synth_corpus(cfg, a.n, a.seed);
    std::ostringstream stories;
    clseg::save_stories(res.corpus, stories);
    clseg::atomic_write_text(a.out_dir + "/stories.tsv", stories.str());
    std::ostringstream meta;
    clseg::save_metadata(res.meta, meta);
    clseg::atomic_write_text(a.out_dir + "/metadata.jsonl", meta.str());

    manifest.finished_at = clseg::iso8601_now();
    manifest.write(mpath);
    std::cout << "synth: wrote " << res.corpus.size() << " stories to " << a.out_dir << "\n";
}

struct PrepareArgs {
    std::string stories, out_dir, ratios = "8,1,1";
    std::uint64_t seed = 1;
    int max_vocab = 2048;
    std::string config;
};

void run_prepare(const PrepareArgs& a) {
    require_arg(a.stories, "--stories");
    require_arg(a.out_dir, "--out-dir");
    clseg::SplitRatios ratios;
    {
        auto parts = clseg::split_fields(a.ratios, ',');
        if (parts.size() != 3) throw clseg::UsageError("--ratios expects three comma-separated integers");
        ratios.train = std::stoi(parts[0]);
        ratios.dev = std::stoi(parts[1]);
        ratios.test = std::stoi(parts[2]);
    }
    ensure_dir(a.out_dir);
    clseg::RunManifest manifest;
    manifest.subcommand = "prepare";
    manifest.seed = a.seed;
    manifest.config = {{"ratios", a.ratios}, {"seed", a.seed}, {"max_vocab", a.max_vocab}};
    manifest.add_input("stories", a.stories);
    manifest.started_at = clseg::iso8601_now();
    const std::string mpath = a.out_dir + "/manifest.json";
    manifest.write(mpath);

    clseg::Corpus corpus = clseg::load_stories(a.stories);
    clseg::SplitResult splits = clseg::split(corpus, ratios, a.seed);
    auto write_split = [&](const clseg::Corpus& c, const std::string& name) {
        std::ostringstream buf;
        clseg::save_stories(c, buf);
        clseg::atomic_write_text(a.out_dir + "/" + name, buf.str());
    };
    write_split(splits.train, "train.tsv");
    write_split(splits.dev, "dev.tsv");
    write_split(splits.test, "test.tsv");
    clseg::Tokenizer tok = clseg::Tokenizer::build(splits.train, a.max_vocab);
    tok.save(a.out_dir + "/vocab.txt");

    manifest.finished_at = clseg::iso8601_now();
    manifest.write(mpath);
    std::cout << "prepare: " << splits.train.size() << "/" << splits.dev.size() << "/"
              << splits.test.size() << " stories, vocab " << tok.vocab_size() << "\n";
}

struct TrainArgs {
    std::string mode, train, dev, vocab, out_dir, run_name = "run";
    std::string init_ckpt, lexicon;
    std::vector<std::string> negatives;
    bool from_scratch = false;
    std::uint64_t seed = 1;
    int max_gen_len = 16;
    HyperFlags hyper;
    ModelDimFlags dims;
    std::string config;
};

void run_train(const TrainArgs& a) {
    require_arg(a.mode, "--mode");
    require_arg(a.train, "--train");
    require_arg(a.dev, "--dev");
    require_arg(a.vocab, "--vocab");
    require_arg(a.out_dir, "--out-dir");
    if (a.mode != "base" && a.mode != "sct" && a.mode != "clseg" && a.mode != "gcl")
        throw clseg::UsageError("--mode must be one of base, sct, clseg, gcl");
    const bool contrastive = a.mode == "clseg" || a.mode == "gcl";
    if (a.mode == "clseg" && a.negatives.empty())
        throw clseg::UsageError("--mode clseg requires at least one --negatives file");
    if (contrastive && a.init_ckpt.empty() && !a.from_scratch)
        throw clseg::UsageError("--mode " + a.mode +
                                " expects --init (base checkpoint); pass --from-scratch to start fresh");

    ensure_dir(a.out_dir);
    clseg::Tokenizer tok = clseg::Tokenizer::load(a.vocab);
    clseg::Corpus train = clseg::load_stories(a.train);
    clseg::Corpus dev = clseg::load_stories(a.dev);
    clseg::TrainConfig cfg = a.hyper.to_config(a.seed, train.size());

    clseg::Parameters<float> init =
        a.init_ckpt.empty() ? clseg::init_params(a.dims.to_config(tok.vocab_size(), a.seed))
                            : clseg::load_checkpoint(a.init_ckpt);

    clseg::RunManifest manifest;
    manifest.subcommand = "train";
    manifest.seed = a.seed;
    manifest.config = train_config_json(cfg);
    manifest.config["mode"] = a.mode;
    manifest.config["run_name"] = a.run_name;
    manifest.config["max_gen_len"] = a.max_gen_len;
    manifest.config["model"] = model_config_json(init.config);
    manifest.add_input("train", a.train);
    manifest.add_input("dev", a.dev);
    manifest.add_input("vocab", a.vocab);
    for (const std::string& n : a.negatives) manifest.add_input("negatives", n);
    if (!a.init_ckpt.empty()) manifest.add_input("init", a.init_ckpt);
    if (!a.lexicon.empty()) manifest.add_input("lexicon", a.lexicon);
    manifest.started_at = clseg::iso8601_now();
    const std::string mpath = a.out_dir + "/" + a.run_name + ".manifest.json";
    manifest.write(mpath);

    std::ofstream log(a.out_dir + "/" + a.run_name + ".log.jsonl", std::ios::binary | std::ios::trunc);
    if (!log) throw clseg::DataError("cannot write train log in " + a.out_dir);
    clseg::TrainSinks sinks;
    sinks.on_record = [&](const clseg::TrainLogRecord& r) { log << record_json(r).dump() << '\n'; };
    sinks.on_epoch_checkpoint = [&](const clseg::Parameters<float>& p, long long step) {
        log.flush();
        clseg::save_checkpoint(p, a.out_dir + "/" + a.run_name + ".step" + std::to_string(step) + ".ckpt");
    };

    clseg::TrainResult result;
    if (a.mode == "base") {
        result = clseg::train_base(train, dev, tok, init, cfg, sinks);
    } else if (a.mode == "sct") {
        clseg::Lexicon lex = load_lexicon_opt(a.lexicon);
        result = clseg::train_sct(train, dev, tok, lex, init, cfg, sinks);
    } else {
        std::unordered_map<std::string, clseg::NegativeSet> negs;
        if (a.mode == "clseg") {
            std::vector<clseg::NegativeSet> all;
            for (const std::string& path : a.negatives) {
                auto part = clseg::load_negative_sets(path);
                all.insert(all.end(), part.begin(), part.end());
            }
            negs = clseg::negatives_by_id(all);
        } else {  // gcl: in-memory corruption sets
            clseg::Corpus both = train;
            both.stories.insert(both.stories.end(), dev.stories.begin(), dev.stories.end());
            negs = clseg::negatives_by_id(clseg::build_gcl_sets(both, tok, a.seed));
        }
        result = clseg::train_clseg(init, train, negs, dev, negs, tok, cfg, sinks);
    }

    clseg::save_checkpoint(result.best, a.out_dir + "/" + a.run_name + ".best.ckpt");
    log.flush();
    manifest.finished_at = clseg::iso8601_now();
    manifest.write(mpath);
    std::cout << "train[" << a.mode << "]: init metric " << result.init_metric << ", best metric "
              << result.best_metric << " at step " << result.best_step << " (" << result.steps
              << " steps)\n";
    if (result.diverged)
        throw clseg::NumericError("training diverged (" + result.diverged_msg +
                                  "); last good checkpoint saved as " + a.run_name + ".best.ckpt");
}

struct SampleNegArgs {
    std::string stories, vocab, base_ckpt, sct_ckpt, lexicon, out;
    std::uint64_t seed = 1;
    int max_gen_len = 16;
    std::string config;
};

void run_sample_negatives(const SampleNegArgs& a) {
    require_arg(a.stories, "--stories");
    require_arg(a.vocab, "--vocab");
    require_arg(a.base_ckpt, "--base");
    require_arg(a.sct_ckpt, "--sct");
    require_arg(a.out, "--out");
    clseg::RunManifest manifest;
    manifest.subcommand = "sample-negatives";
    manifest.seed = a.seed;
    manifest.config = {{"seed", a.seed}, {"max_gen_len", a.max_gen_len}};
    manifest.add_input("stories", a.stories);
    manifest.add_input("vocab", a.vocab);
    manifest.add_input("base", a.base_ckpt);
    manifest.add_input("sct", a.sct_ckpt);
    if (!a.lexicon.empty()) manifest.add_input("lexicon", a.lexicon);
    manifest.started_at = clseg::iso8601_now();
    const std::string mpath = a.out + ".manifest.json";
    manifest.write(mpath);

    clseg::Tokenizer tok = clseg::Tokenizer::load(a.vocab);
    clseg::Corpus corpus = clseg::load_stories(a.stories);
    clseg::Parameters<float> base = clseg::load_checkpoint(a.base_ckpt);
    clseg::Parameters<float> sct = clseg::load_checkpoint(a.sct_ckpt);
    clseg::Lexicon lex = load_lexicon_opt(a.lexicon);
    clseg::SamplerSettings settings;
    settings.max_gen_len = a.max_gen_len;
    auto sets = clseg::build_negative_sets(corpus, base, sct, tok, lex, a.seed, settings);
    clseg::atomic_write_text(a.out, negatives_to_string(sets));

    manifest.finished_at = clseg::iso8601_now();
    manifest.write(mpath);
    int fallbacks = 0;
    for (const auto& ns : sets)
        fallbacks += ns.provenance.fallback_so + ns.provenance.fallback_cr + ns.provenance.fallback_rs;
    std::cout << "sample-negatives: " << sets.size() << " sets written to " << a.out << " ("
              << fallbacks << " fallbacks)\n";
}

struct GenerateArgs {
    std::string ckpt, stories, vocab, out;
    int max_len = 16;
    std::string config;
};

void run_generate(const GenerateArgs& a) {
    require_arg(a.ckpt, "--ckpt");
    require_arg(a.stories, "--stories");
    require_arg(a.vocab, "--vocab");
    require_arg(a.out, "--out");
    clseg::RunManifest manifest;
    manifest.subcommand = "generate";
    manifest.seed = 0;
    manifest.config = {{"max_len", a.max_len}};
    manifest.add_input("ckpt", a.ckpt);
    manifest.add_input("stories", a.stories);
    manifest.add_input("vocab", a.vocab);
    manifest.started_at = clseg::iso8601_now();
    const std::string mpath = a.out + ".manifest.json";
    manifest.write(mpath);

    clseg::Tokenizer tok = clseg::Tokenizer::load(a.vocab);
    clseg::Corpus corpus = clseg::load_stories(a.stories);
    clseg::Parameters<float> params = clseg::load_checkpoint(a.ckpt);
    std::ostringstream buf;
    for (const clseg::Story& s : corpus.stories) {
        auto [q, y] = tok.encode_story(s);
        (void)y;
        clseg::TokenSeq gen = clseg::generate_greedy(params, q, a.max_len);
        buf << s.id << '\t' << tok.decode(gen) << '\n';
    }
    clseg::atomic_write_text(a.out, buf.str());

    manifest.finished_at = clseg::iso8601_now();
    manifest.write(mpath);
    std::cout << "generate: wrote " << corpus.size() << " endings to " << a.out << "\n";
}

struct EvaluateArgs {
    std::string outputs, references, outputs_b, out_dir;
    std::string config;
};

void run_evaluate(const EvaluateArgs& a) {
    require_arg(a.outputs, "--outputs");
    require_arg(a.references, "--references");
    require_arg(a.out_dir, "--out-dir");
    ensure_dir(a.out_dir);
    clseg::RunManifest manifest;
    manifest.subcommand = "evaluate";
    manifest.seed = 0;
    manifest.config = ordered_json::object();
    manifest.add_input("outputs", a.outputs);
    manifest.add_input("references", a.references);
    if (!a.outputs_b.empty()) manifest.add_input("outputs_b", a.outputs_b);
    manifest.started_at = clseg::iso8601_now();
    const std::string mpath = a.out_dir + "/manifest.json";
    manifest.write(mpath);

    const auto outputs = load_endings_file(a.outputs);
    const auto references = load_reference_endings(a.references);
    const clseg::SystemEvaluation ev = clseg::evaluate_system_detailed(outputs, references);

    ordered_json j = clseg::metric_report_json(ev.report);
    std::string table = clseg::metric_table_header() + "\n" + clseg::metric_table_row("outputs", ev.report) + "\n";
    std::vector<std::string> warnings;

    if (!a.outputs_b.empty()) {
        const auto outputs_b = load_endings_file(a.outputs_b);
        const clseg::SystemEvaluation evb = clseg::evaluate_system_detailed(outputs_b, references);
        j["system_b"] = clseg::metric_report_json(evb.report);
        table += clseg::metric_table_row("outputs_b", evb.report) + "\n";

        ordered_json sig = ordered_json::object();
        auto run_test = [&](const std::string& name, const std::vector<double>& va,
                            const std::vector<double>& vb) {
            std::vector<std::pair<double, double>> pairs;
            for (std::size_t i = 0; i < va.size(); ++i) pairs.emplace_back(va[i], vb[i]);
            try {
                clseg::SignificanceResult r = clseg::wilcoxon_signed_rank(pairs);
                sig[name] = {{"statistic", r.statistic},
                             {"p_value", r.p_value},
                             {"n_pairs", r.n_pairs},
                             {"n_nonzero", r.n_nonzero}};
            } catch (const clseg::DataError& e) {
                warnings.push_back("wilcoxon(" + name + "): " + e.what());
            }
        };
        if (ev.examples.ids != evb.examples.ids)
            throw clseg::DataError("outputs and outputs_b cover different id sets");
        run_test("bleu", ev.examples.bleu, evb.examples.bleu);
        run_test("r1_f1", ev.examples.r1_f1, evb.examples.r1_f1);
        run_test("r2_f1", ev.examples.r2_f1, evb.examples.r2_f1);
        run_test("rl_f1", ev.examples.rl_f1, evb.examples.rl_f1);
        run_test("meteor", ev.examples.meteor, evb.examples.meteor);
        j["significance"] = sig;
    }
    if (!warnings.empty()) j["warnings"] = warnings;

    clseg::atomic_write_text(a.out_dir + "/report.json", j.dump(2) + "\n");
    clseg::atomic_write_text(a.out_dir + "/report.tsv", table);
    manifest.finished_at = clseg::iso8601_now();
    manifest.write(mpath);
    std::cout << table;
    for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
}

struct AblateArgs {
    std::string train, dev, test, vocab, init_ckpt, out_dir;
    std::vector<std::string> negatives;
    std::uint64_t seed = 1;
    int max_gen_len = 16;
    HyperFlags hyper;
    std::string config;
};

void run_ablate(const AblateArgs& a) {
    require_arg(a.train, "--train");
    require_arg(a.dev, "--dev");
    require_arg(a.test, "--test");
    require_arg(a.vocab, "--vocab");
    require_arg(a.init_ckpt, "--init");
    if (a.negatives.empty()) throw clseg::UsageError("--negatives is required (flag or config key)");
    require_arg(a.out_dir, "--out-dir");
    ensure_dir(a.out_dir);
    clseg::Tokenizer tok = clseg::Tokenizer::load(a.vocab);
    clseg::Corpus train = clseg::load_stories(a.train);
    clseg::Corpus dev = clseg::load_stories(a.dev);
    clseg::Corpus test = clseg::load_stories(a.test);
    clseg::TrainConfig cfg = a.hyper.to_config(a.seed, train.size());

    clseg::RunManifest manifest;
    manifest.subcommand = "ablate";
    manifest.seed = a.seed;
    manifest.config = train_config_json(cfg);
    manifest.config["max_gen_len"] = a.max_gen_len;
    manifest.config["variants"] = {
        {{"label", "full"}, {"mechanism_mask", "so,cr,rs"}, {"seed", a.seed}},
        {{"label", "only SO"}, {"mechanism_mask", "so"}, {"seed", a.seed}},
        {{"label", "only CR"}, {"mechanism_mask", "cr"}, {"seed", a.seed}},
        {{"label", "only RS"}, {"mechanism_mask", "rs"}, {"seed", a.seed}},
    };
    manifest.add_input("train", a.train);
    manifest.add_input("dev", a.dev);
    manifest.add_input("test", a.test);
    manifest.add_input("vocab", a.vocab);
    manifest.add_input("init", a.init_ckpt);
    for (const std::string& n : a.negatives) manifest.add_input("negatives", n);
    manifest.started_at = clseg::iso8601_now();
    const std::string mpath = a.out_dir + "/manifest.json";
    manifest.write(mpath);

    clseg::Parameters<float> base = clseg::load_checkpoint(a.init_ckpt);
    std::vector<clseg::NegativeSet> all;
    for (const std::string& path : a.negatives) {
        auto part = clseg::load_negative_sets(path);
        all.insert(all.end(), part.begin(), part.end());
    }
    auto negs = clseg::negatives_by_id(all);

    auto per_variant = [&](const std::string& label, const clseg::TrainResult& res) {
        std::string slug = label;
        for (char& c : slug)
            if (c == ' ') c = '_';
        clseg::save_checkpoint(res.best, a.out_dir + "/" + slug + ".best.ckpt");
    };
    std::vector<clseg::AblationRow> rows =
        clseg::run_ablation(base, train, dev, test, negs, tok, cfg, a.max_gen_len, per_variant);

    ordered_json j = ordered_json::array();
    std::string table = "model\tBLEU\tR-1-R\tR-2-R\tR-L-R\tMeteor\tmargin\n";
    for (const clseg::AblationRow& r : rows) {
        ordered_json row;
        row["label"] = r.label;
        row["metrics"] = clseg::metric_report_json(r.report);
        row["margin"] = r.margin;
        j.push_back(row);
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.6f\n", r.label.c_str(),
                      clseg::as_pct4(r.report.bleu), clseg::as_pct4(r.report.r1.r),
                      clseg::as_pct4(r.report.r2.r), clseg::as_pct4(r.report.rl.r),
                      clseg::as_pct4(r.report.meteor), r.margin);
        table += buf;
    }
    clseg::atomic_write_text(a.out_dir + "/ablation.json", j.dump(2) + "\n");
    clseg::atomic_write_text(a.out_dir + "/ablation.tsv", table);
    manifest.finished_at = clseg::iso8601_now();
    manifest.write(mpath);
    std::cout << table;
}

struct GradcheckArgs {
    std::uint64_t seed = 7;
    int batches = 20;
    double fd_eps = 1e-4;
    double threshold = 1e-4;
    bool inject_error = false;
    std::string out_dir;
    ModelDimFlags dims{8, 1, 2, 16, 24};
    int vocab_size = 32;
    std::string config;
};

int run_gradcheck_cmd(const GradcheckArgs& a) {
    clseg::GradCheckConfig gc;
    gc.model = a.dims.to_config(a.vocab_size, a.seed);
    gc.n_batches = a.batches;
    gc.fd_eps = a.fd_eps;
    gc.threshold = a.threshold;
    gc.seed = a.seed;
    gc.inject_error = a.inject_error;

    std::string mpath;
    clseg::RunManifest manifest;
    if (!a.out_dir.empty()) {
        ensure_dir(a.out_dir);
        manifest.subcommand = "gradcheck";
        manifest.seed = a.seed;
        manifest.config = model_config_json(gc.model);
        manifest.config["batches"] = a.batches;
        manifest.config["fd_eps"] = a.fd_eps;
        manifest.config["threshold"] = a.threshold;
        manifest.started_at = clseg::iso8601_now();
        mpath = a.out_dir + "/manifest.json";
        manifest.write(mpath);
    }

    const clseg::GradCheckReport rep = clseg::run_gradcheck(gc);
    std::cout << "gradcheck: parameters=" << rep.n_parameters << " batches=" << rep.n_batches
              << " eps=" << a.fd_eps << "\n";
    std::cout << "max relative error = " << rep.max_rel_error << " (threshold " << rep.threshold
              << ")\n";
    std::cout << "worst parameter array: " << rep.worst_array << "\n";
    std::cout << (rep.passed() ? "PASS" : "FAIL") << "\n";

    if (!a.out_dir.empty()) {
        ordered_json j;
        j["n_parameters"] = rep.n_parameters;
        j["n_batches"] = rep.n_batches;
        j["max_rel_error"] = rep.max_rel_error;
        j["worst_array"] = rep.worst_array;
        j["threshold"] = rep.threshold;
        j["passed"] = rep.passed();
        clseg::atomic_write_text(a.out_dir + "/gradcheck.json", j.dump(2) + "\n");
        manifest.finished_at = clseg::iso8601_now();
        manifest.write(mpath);
    }
    return rep.passed() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contrastive story-ending generation pipeline"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic templated story corpus");
    synth->add_option("--n", synth_args.n, "number of stories");
    synth->add_option("--seed", synth_args.seed, "random seed");
    synth->add_option("--out-dir", synth_args.out_dir, "output directory");
    synth->add_option("--negation_rate", synth_args.negation_rate, "fraction of negated mood sentences");
    synth->add_option("--config", synth_args.config, "config file (key = value lines)");

    PrepareArgs prep_args;
    CLI::App* prepare = app.add_subcommand("prepare", "split a story file and build the vocabulary");
    prepare->add_option("--stories", prep_args.stories, "input story file");
    prepare->add_option("--seed", prep_args.seed, "random seed");
    prepare->add_option("--ratios", prep_args.ratios, "split ratios, e.g. 8,1,1");
    prepare->add_option("--max_vocab", prep_args.max_vocab, "vocabulary cap");
    prepare->add_option("--out-dir", prep_args.out_dir, "output directory");
    prepare->add_option("--config", prep_args.config, "config file (key = value lines)");

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "train base/sct/clseg/gcl models");
    train->add_option("--mode", train_args.mode, "base | sct | clseg | gcl");
    train->add_option("--train", train_args.train, "training story file");
    train->add_option("--dev", train_args.dev, "dev story file");
    train->add_option("--vocab", train_args.vocab, "vocabulary file");
    train->add_option("--out-dir", train_args.out_dir, "output directory");
    train->add_option("--run-name", train_args.run_name, "checkpoint/log name prefix");
    train->add_option("--init", train_args.init_ckpt, "initial checkpoint");
    train->add_option("--negatives", train_args.negatives, "negatives JSONL (repeatable)");
    train->add_option("--lexicon", train_args.lexicon, "lexicon file (default: embedded)");
    train->add_flag("--from-scratch", train_args.from_scratch,
                    "allow contrastive training from fresh parameters");
    train->add_option("--seed", train_args.seed, "random seed");
    train->add_option("--max_gen_len", train_args.max_gen_len, "generation cap used by gcl sampling");
    train_args.hyper.add_to(train);
    train_args.dims.add_to(train);
    train->add_option("--config", train_args.config, "config file (key = value lines)");

    SampleNegArgs neg_args;
    CLI::App* negatives = app.add_subcommand("sample-negatives", "build SO/CR/RS negative endings");
    negatives->add_option("--stories", neg_args.stories, "story file");
    negatives->add_option("--vocab", neg_args.vocab, "vocabulary file");
    negatives->add_option("--base", neg_args.base_ckpt, "SEG_BASE checkpoint");
    negatives->add_option("--sct", neg_args.sct_ckpt, "SEG_SCT checkpoint");
    negatives->add_option("--lexicon", neg_args.lexicon, "lexicon file (default: embedded)");
    negatives->add_option("--seed", neg_args.seed, "random seed");
    negatives->add_option("--max_gen_len", neg_args.max_gen_len, "generation cap");
    negatives->add_option("--out", neg_args.out, "output negatives JSONL");
    negatives->add_option("--config", neg_args.config, "config file (key = value lines)");

    GenerateArgs gen_args;
    CLI::App* generate = app.add_subcommand("generate", "greedy-decode endings for a story file");
    generate->add_option("--ckpt", gen_args.ckpt, "model checkpoint");
    generate->add_option("--stories", gen_args.stories, "story file");
    generate->add_option("--vocab", gen_args.vocab, "vocabulary file");
    generate->add_option("--max_len", gen_args.max_len, "maximum generated tokens");
    generate->add_option("--out", gen_args.out, "output endings file");
    generate->add_option("--config", gen_args.config, "config file (key = value lines)");

    EvaluateArgs eval_args;
    CLI::App* evaluate = app.add_subcommand("evaluate", "score generated endings against references");
    evaluate->add_option("--outputs", eval_args.outputs, "endings file (id<TAB>ending)");
    evaluate->add_option("--references", eval_args.references, "story file or endings file");
    evaluate->add_option("--outputs-b", eval_args.outputs_b,
                         "second system for Wilcoxon significance");
    evaluate->add_option("--out-dir", eval_args.out_dir, "output directory");
    evaluate->add_option("--config", eval_args.config, "config file (key = value lines)");

    AblateArgs ablate_args;
    CLI::App* ablate = app.add_subcommand("ablate", "train and score full/only-SO/only-CR/only-RS");
    ablate->add_option("--train", ablate_args.train, "training story file");
    ablate->add_option("--dev", ablate_args.dev, "dev story file");
    ablate->add_option("--test", ablate_args.test, "test story file");
    ablate->add_option("--vocab", ablate_args.vocab, "vocabulary file");
    ablate->add_option("--init", ablate_args.init_ckpt, "SEG_BASE checkpoint");
    ablate->add_option("--negatives", ablate_args.negatives, "negatives JSONL (repeatable)");
    ablate->add_option("--out-dir", ablate_args.out_dir, "output directory");
    ablate->add_option("--seed", ablate_args.seed, "random seed");
    ablate->add_option("--max_gen_len", ablate_args.max_gen_len, "generation cap");
    ablate_args.hyper.add_to(ablate);
    ablate->add_option("--config", ablate_args.config, "config file (key = value lines)");

    GradcheckArgs gc_args;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "analytic gradients vs finite differences");
    gradcheck->add_option("--seed", gc_args.seed, "random seed");
    gradcheck->add_option("--batches", gc_args.batches, "number of random batches");
    gradcheck->add_option("--fd_eps", gc_args.fd_eps, "finite-difference step");
    gradcheck->add_option("--threshold", gc_args.threshold, "maximum allowed relative error");
    gradcheck->add_option("--vocab_size", gc_args.vocab_size, "probe model vocabulary");
    gradcheck->add_option("--out-dir", gc_args.out_dir, "optional report directory");
    gradcheck->add_flag("--inject-error", gc_args.inject_error, "test fixture: corrupt one gradient")
        ->group("");
    gc_args.dims.add_to(gradcheck);
    gradcheck->add_option("--config", gc_args.config, "config file (key = value lines)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*synth) {
            if (!synth_args.config.empty()) apply_config_file(synth, synth_args.config);
            run_synth(synth_args);
        }
        if (*prepare) {
            if (!prep_args.config.empty()) apply_config_file(prepare, prep_args.config);
            run_prepare(prep_args);
        }
        if (*train) {
            if (!train_args.config.empty()) apply_config_file(train, train_args.config);
            run_train(train_args);
        }
        if (*negatives) {
            if (!neg_args.config.empty()) apply_config_file(negatives, neg_args.config);
            run_sample_negatives(neg_args);
        }
        if (*generate) {
            if (!gen_args.config.empty()) apply_config_file(generate, gen_args.config);
            run_generate(gen_args);
        }
        if (*evaluate) {
            if (!eval_args.config.empty()) apply_config_file(evaluate, eval_args.config);
            run_evaluate(eval_args);
        }
        if (*ablate) {
            if (!ablate_args.config.empty()) apply_config_file(ablate, ablate_args.config);
            run_ablate(ablate_args);
        }
        if (*gradcheck) {
            if (!gc_args.config.empty()) apply_config_file(gradcheck, gc_args.config);
            return run_gradcheck_cmd(gc_args);
        }
    } catch (const clseg::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const clseg::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const clseg::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

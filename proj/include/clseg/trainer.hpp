// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "clseg/corpus.hpp"
#include "clseg/errors.hpp"
#include "clseg/lexicon.hpp"
#include "clseg/mas.hpp"
#include "clseg/metrics.hpp"
#include "clseg/model.hpp"
#include "clseg/scloss.hpp"
#include "clseg/tokenizer.hpp"

namespace clseg {

enum class Mechanism { SO, CR, RS };

inline const char* mechanism_name(Mechanism m) {
    switch (m) {
        case Mechanism::SO: return "so";
        case Mechanism::CR: return "cr";
        case Mechanism::RS: return "rs";
    }
    return "?";
}

inline Mechanism mechanism_from_name(const std::string& name) {
    if (name == "so") return Mechanism::SO;
    if (name == "cr") return Mechanism::CR;
    if (name == "rs") return Mechanism::RS;
    throw UsageError("unknown mechanism: " + name + " (expected so, cr or rs)");
}

struct TrainConfig {
    double learning_rate = 5e-5;
    int batch_size = 32;
    double alpha = 1.0;
    int n_negatives = 3;
    int epochs = 10;
    std::uint64_t seed = 1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip_norm = 1.0;
    std::vector<Mechanism> mechanism_mask = {Mechanism::SO, Mechanism::CR, Mechanism::RS};

    void validate() const {
        if (learning_rate <= 0) throw UsageError("learning_rate must be positive");
        if (batch_size < 1) throw UsageError("batch_size must be at least 1");
        if (epochs < 0) throw UsageError("epochs must be non-negative");
        if (mechanism_mask.empty()) throw UsageError("mechanism_mask must not be empty");
        if (n_negatives != static_cast<int>(mechanism_mask.size()))
            throw UsageError("n_negatives (" + std::to_string(n_negatives) +
                             ") must equal the mechanism mask size (" +
                             std::to_string(mechanism_mask.size()) + ")");
    }
};

// ---------------------------------------------------------------------------
// Adam with global-norm gradient clipping
// ---------------------------------------------------------------------------

struct OptimizerState {
    std::vector<Mat<float>> m, v;  // aligned with Parameters::visit order
    long long step = 0;
};

inline OptimizerState make_optimizer_state(const Parameters<float>& params) {
    OptimizerState st;
    params.visit([&](const std::string&, const Mat<float>& w) {
        st.m.emplace_back(w.rows, w.cols);
        st.v.emplace_back(w.rows, w.cols);
    });
    return st;
}

// Scales all gradients so the global L2 norm is at most max_norm; returns
// the pre-clip norm.
inline double clip_global_norm(Parameters<float>& grads, double max_norm) {
    double sq = 0.0;
    grads.visit([&](const std::string&, const Mat<float>& g) {
        for (float v : g.d) sq += static_cast<double>(v) * v;
    });
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const float s = static_cast<float>(max_norm / norm);
        grads.visit([&](const std::string&, Mat<float>& g) {
            for (float& v : g.d) v *= s;
        });
    }
    return norm;
}

// One bias-corrected Adam update for a single array.
inline void adam_update_array(Mat<float>& p, const Mat<float>& g, Mat<float>& m, Mat<float>& v,
                              long long t, const TrainConfig& cfg) {
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.d.size(); ++i) {
        const double gi = static_cast<double>(g.d[i]);
        const double mi = b1 * static_cast<double>(m.d[i]) + (1.0 - b1) * gi;
        const double vi = b2 * static_cast<double>(v.d[i]) + (1.0 - b2) * gi * gi;
        m.d[i] = static_cast<float>(mi);
        v.d[i] = static_cast<float>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        p.d[i] = static_cast<float>(static_cast<double>(p.d[i]) -
                                    cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
}

inline void adam_step(Parameters<float>& params, Parameters<float>& grads, OptimizerState& state,
                      const TrainConfig& cfg) {
    grads.visit([&](const std::string& name, const Mat<float>& g) {
        if (!g.all_finite()) throw NumericError("non-finite gradient in array " + name);
    });
    clip_global_norm(grads, cfg.grad_clip_norm);
    const long long t = ++state.step;
    std::vector<Mat<float>*> param_arrays;
    params.visit([&](const std::string&, Mat<float>& w) { param_arrays.push_back(&w); });
    if (param_arrays.size() != state.m.size())
        throw NumericError("optimizer state does not match parameter shapes");
    std::size_t idx = 0;
    grads.visit([&](const std::string&, Mat<float>& g) {
        adam_update_array(*param_arrays[idx], g, state.m[idx], state.v[idx], t, cfg);
        ++idx;
    });
    params.visit([&](const std::string& name, const Mat<float>& w) {
        if (!w.all_finite()) throw NumericError("non-finite parameters in array " + name + " after update");
    });
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct TrainLogRecord {
    long long step = 0;
    int epoch = 0;
    double total = 0.0, pos = 0.0, neg = 0.0;
    std::map<std::string, double> per_mechanism;
    std::optional<double> dev_metric;
    double wall_seconds = 0.0;
};

struct TrainSinks {
    std::function<void(const TrainLogRecord&)> on_record;
    std::function<void(const Parameters<float>&, long long)> on_epoch_checkpoint;
};

struct TrainResult {
    Parameters<float> best;
    double best_metric = 0.0;
    long long best_step = 0;
    double init_metric = 0.0;
    long long steps = 0;
    bool diverged = false;
    std::string diverged_msg;
    std::vector<TrainLogRecord> records;
};

// Token-weighted dev NLL; exp of it is the dev perplexity.
inline double dev_nll(const Parameters<float>& params, const std::vector<ContrastiveBatch>& items) {
    double total = 0.0;
    long long tokens = 0;
    for (const ContrastiveBatch& it : items) {
        total -= sequence_logprob(params, it.q, it.k_plus);
        tokens += static_cast<long long>(it.k_plus.ids.size());
    }
    if (tokens == 0) throw DataError("dev set has no ending tokens");
    return total / static_cast<double>(tokens);
}

inline double dev_perplexity(const Parameters<float>& params, const std::vector<ContrastiveBatch>& items) {
    return std::exp(dev_nll(params, items));
}

// Mean over stories of: per-token logprob of the right ending minus the
// best per-token logprob among the wrong endings.
inline double consistency_margin(const Parameters<float>& params,
                                 const std::vector<ContrastiveBatch>& items) {
    if (items.empty()) throw DataError("consistency_margin: empty evaluation set");
    double total = 0.0;
    for (const ContrastiveBatch& it : items) {
        const double pos = sequence_logprob(params, it.q, it.k_plus) /
                           static_cast<double>(it.k_plus.ids.size());
        double best_neg = -std::numeric_limits<double>::infinity();
        for (const TokenSeq& km : it.k_minus)
            best_neg = std::max(best_neg, sequence_logprob(params, it.q, km) /
                                              static_cast<double>(km.ids.size()));
        total += pos - best_neg;
    }
    return total / static_cast<double>(items.size());
}

inline std::vector<ContrastiveBatch> make_lm_items(
    const Corpus& corpus, const Tokenizer& tokenizer,
    const std::function<std::optional<SentimentTagKind>(const Story&)>& tag_fn = nullptr) {
    std::vector<ContrastiveBatch> items;
    items.reserve(corpus.size());
    for (const Story& s : corpus.stories) {
        ContrastiveBatch b;
        b.story_id = s.id;
        auto [q, y] = tokenizer.encode_story(s, tag_fn ? tag_fn(s) : std::nullopt);
        b.q = std::move(q);
        b.k_plus = std::move(y);
        items.push_back(std::move(b));
    }
    return items;
}

inline std::vector<ContrastiveBatch> make_contrastive_items(
    const Corpus& corpus, const std::unordered_map<std::string, NegativeSet>& negatives,
    const std::vector<Mechanism>& mask, const Tokenizer& tokenizer) {
    std::vector<ContrastiveBatch> items;
    items.reserve(corpus.size());
    for (const Story& s : corpus.stories) {
        auto it = negatives.find(s.id);
        if (it == negatives.end()) throw DataError("missing negative set for story " + s.id);
        ContrastiveBatch b;
        b.story_id = s.id;
        auto [q, y] = tokenizer.encode_story(s);
        b.q = std::move(q);
        b.k_plus = std::move(y);
        for (Mechanism m : mask) {
            const Sentence* neg = nullptr;
            switch (m) {
                case Mechanism::SO: neg = &it->second.so; break;
                case Mechanism::CR: neg = &it->second.cr; break;
                case Mechanism::RS: neg = &it->second.rs; break;
            }
            TokenSeq km = tokenizer.encode(neg->text);
            km.ids.push_back(kEos);
            b.k_minus.push_back(std::move(km));
            b.negative_labels.emplace_back(mechanism_name(m));
        }
        b.validate();
        items.push_back(std::move(b));
    }
    return items;
}

inline std::unordered_map<std::string, NegativeSet> negatives_by_id(const std::vector<NegativeSet>& sets) {
    std::unordered_map<std::string, NegativeSet> map;
    for (const NegativeSet& ns : sets)
        if (!map.emplace(ns.story_id, ns).second)
            throw DataError("duplicate negative set for story " + ns.story_id);
    return map;
}

namespace detail {

struct MetricRule {
    // returns true when `candidate` improves on `incumbent`
    std::function<bool(double candidate, double incumbent)> better;
};

inline TrainResult run_training(std::vector<ContrastiveBatch> items, const Parameters<float>& init,
                                const LossSpec& loss_spec, const TrainConfig& cfg,
                                const std::function<double(const Parameters<float>&)>& eval_metric,
                                const MetricRule& rule, const TrainSinks& sinks) {
    cfg.validate();
    if (items.empty()) throw DataError("training set is empty");

    TrainResult result;
    Parameters<float> params = init;
    OptimizerState state = make_optimizer_state(params);
    result.init_metric = eval_metric(params);
    result.best = params;
    result.best_metric = result.init_metric;
    result.best_step = 0;

    const auto t_start = std::chrono::steady_clock::now();
    auto wall = [&]() {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };

    try {
        for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
            std::vector<std::size_t> order(items.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            Rng shuffle_rng(cfg.seed ^ (0xe7037ed1a0b428dbULL * static_cast<std::uint64_t>(epoch)));
            shuffle_rng.shuffle(order);

            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
                const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
                const float inv = 1.0f / static_cast<float>(end - start);
                Parameters<float> grads = params.zeros_like();
                TrainLogRecord rec;
                std::map<std::string, int> mech_counts;
                for (std::size_t k = start; k < end; ++k) {
                    const ContrastiveBatch& b = items[order[k]];
                    LossBreakdown lb = loss_and_grads(params, b, loss_spec, grads, inv);
                    rec.total += lb.total * inv;
                    rec.pos += lb.pos_term * inv;
                    rec.neg += lb.neg_term * inv;
                    for (std::size_t j = 0; j < lb.per_negative.size(); ++j) {
                        rec.per_mechanism[b.negative_labels[j]] += lb.per_negative[j];
                        ++mech_counts[b.negative_labels[j]];
                    }
                }
                for (auto& [name, sum] : rec.per_mechanism) sum /= mech_counts[name];
                adam_step(params, grads, state, cfg);
                rec.step = state.step;
                rec.epoch = epoch;
                const bool last_of_epoch = end == order.size();
                if (last_of_epoch) {
                    const double metric = eval_metric(params);
                    rec.dev_metric = metric;
                    if (rule.better(metric, result.best_metric)) {
                        result.best = params;
                        result.best_metric = metric;
                        result.best_step = state.step;
                    }
                }
                rec.wall_seconds = wall();
                if (sinks.on_record) sinks.on_record(rec);
                result.records.push_back(std::move(rec));
                if (last_of_epoch && sinks.on_epoch_checkpoint) sinks.on_epoch_checkpoint(params, state.step);
            }
        }
    } catch (const NumericError& e) {
        result.diverged = true;
        result.diverged_msg = e.what();
    }
    result.steps = state.step;
    return result;
}

}  // namespace detail

// Base LM fine-tuning: minimize the NLL of true endings given contexts;
// best checkpoint by dev NLL (the initial parameters participate in the
// selection).
inline TrainResult train_base(const Corpus& train, const Corpus& dev, const Tokenizer& tokenizer,
                              const Parameters<float>& init, const TrainConfig& cfg,
                              const TrainSinks& sinks = {}) {
    auto train_items = make_lm_items(train, tokenizer);
    auto dev_items = make_lm_items(dev, tokenizer);
    LossSpec spec{LossKind::LmNll, cfg.alpha, kNegProbClamp};
    detail::MetricRule rule{[](double c, double i) { return c < i; }};
    return detail::run_training(std::move(train_items), init, spec, cfg,
                                [&](const Parameters<float>& p) { return dev_nll(p, dev_items); }, rule,
                                sinks);
}

// Sentiment-conditioned fine-tuning: every query carries the story's own
// control token, labeled by the lexicon classifier on the ending.
inline TrainResult train_sct(const Corpus& train, const Corpus& dev, const Tokenizer& tokenizer,
                             const Lexicon& lexicon, const Parameters<float>& init,
                             const TrainConfig& cfg, const TrainSinks& sinks = {}) {
    auto tag_fn = [&lexicon](const Story& s) -> std::optional<SentimentTagKind> {
        return lexicon.classify(s.ending);
    };
    auto train_items = make_lm_items(train, tokenizer, tag_fn);
    auto dev_items = make_lm_items(dev, tokenizer, tag_fn);
    LossSpec spec{LossKind::LmNll, cfg.alpha, kNegProbClamp};
    detail::MetricRule rule{[](double c, double i) { return c < i; }};
    return detail::run_training(std::move(train_items), init, spec, cfg,
                                [&](const Parameters<float>& p) { return dev_nll(p, dev_items); }, rule,
                                sinks);
}

// Story-specific contrastive training over q / k+ / {k-}; best checkpoint
// by dev consistency margin.
inline TrainResult train_clseg(const Parameters<float>& init, const Corpus& train,
                               const std::unordered_map<std::string, NegativeSet>& train_negatives,
                               const Corpus& dev,
                               const std::unordered_map<std::string, NegativeSet>& dev_negatives,
                               const Tokenizer& tokenizer, const TrainConfig& cfg,
                               const TrainSinks& sinks = {}) {
    auto train_items = make_contrastive_items(train, train_negatives, cfg.mechanism_mask, tokenizer);
    auto dev_items = make_contrastive_items(dev, dev_negatives, cfg.mechanism_mask, tokenizer);
    LossSpec spec{LossKind::Scl, cfg.alpha, kNegProbClamp};
    detail::MetricRule rule{[](double c, double i) { return c > i; }};
    return detail::run_training(std::move(train_items), init, spec, cfg,
                                [&](const Parameters<float>& p) { return consistency_margin(p, dev_items); },
                                rule, sinks);
}

// ---------------------------------------------------------------------------
// Ablation harness: full, only-SO, only-CR, only-RS with identical seeds
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string label;
    MetricReport report;
    double margin = 0.0;
};

inline std::map<std::string, std::string> generate_endings(const Parameters<float>& params,
                                                           const Corpus& stories,
                                                           const Tokenizer& tokenizer, int max_len) {
    std::map<std::string, std::string> out;
    for (const Story& s : stories.stories) {
        auto [q, y] = tokenizer.encode_story(s);
        (void)y;
        TokenSeq gen = generate_greedy(params, q, max_len);
        out[s.id] = tokenizer.decode(gen);
    }
    return out;
}

inline std::vector<AblationRow> run_ablation(
    const Parameters<float>& base, const Corpus& train, const Corpus& dev, const Corpus& test,
    const std::unordered_map<std::string, NegativeSet>& negatives, const Tokenizer& tokenizer,
    const TrainConfig& cfg, int max_gen_len,
    const std::function<void(const std::string&, const TrainResult&)>& per_variant = nullptr) {
    const std::vector<std::pair<std::string, std::vector<Mechanism>>> variants = {
        {"full", {Mechanism::SO, Mechanism::CR, Mechanism::RS}},
        {"only SO", {Mechanism::SO}},
        {"only CR", {Mechanism::CR}},
        {"only RS", {Mechanism::RS}},
    };
    std::map<std::string, std::string> references;
    for (const Story& s : test.stories) references[s.id] = s.ending.text;

    std::vector<AblationRow> rows;
    for (const auto& [label, mask] : variants) {
        TrainConfig vcfg = cfg;
        vcfg.mechanism_mask = mask;
        vcfg.n_negatives = static_cast<int>(mask.size());
        TrainResult res = train_clseg(base, train, negatives, dev, negatives, tokenizer, vcfg);
        if (res.diverged) throw NumericError("ablation variant '" + label + "' diverged: " + res.diverged_msg);
        if (per_variant) per_variant(label, res);
        AblationRow row;
        row.label = label;
        row.report = evaluate_system(generate_endings(res.best, test, tokenizer, max_gen_len), references);
        auto test_items = make_contrastive_items(test, negatives, vcfg.mechanism_mask, tokenizer);
        row.margin = consistency_margin(res.best, test_items);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace clseg

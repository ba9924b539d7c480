// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "clseg/errors.hpp"
#include "clseg/tokenizer.hpp"

namespace clseg {

inline constexpr double kNegProbClamp = 1e-6;

// Query, right ending and wrong endings of one story, as token sequences.
// Labels tag each negative with the mechanism that produced it.
struct ContrastiveBatch {
    std::string story_id;
    TokenSeq q;
    TokenSeq k_plus;
    std::vector<TokenSeq> k_minus;
    std::vector<std::string> negative_labels;

    void validate() const {
        if (q.ids.empty() || k_plus.ids.empty())
            throw DataError("contrastive batch for story " + story_id + " has an empty sequence");
        for (const TokenSeq& km : k_minus) {
            if (km.ids.empty())
                throw DataError("contrastive batch for story " + story_id + " has an empty negative");
            if (km.ids == k_plus.ids)
                throw DataError("negative equals the true ending for story " + story_id);
        }
    }
};

// The two summands of the story-specific contrastive objective plus their
// sum. total = pos_term + alpha * neg_term holds exactly by construction.
struct LossBreakdown {
    double pos_term = 0.0;
    double neg_term = 0.0;
    double total = 0.0;
    std::vector<double> per_negative;
};

// Per-token mean of -log p over the right ending. Written per timestep in
// the objective; the cross-timestep reduction is a mean so sequences of
// different lengths weigh equally.
inline double positive_term(std::span<const double> pos_logprobs) {
    if (pos_logprobs.empty()) throw DataError("positive_term: empty sequence");
    double s = 0.0;
    for (double lp : pos_logprobs) s -= lp;
    return s / static_cast<double>(pos_logprobs.size());
}

// For each negative: per-token mean of -log(1 - min(p, 1 - eps)). Returns
// the average over negatives and the per-negative values.
inline std::pair<double, std::vector<double>> negative_term(
    const std::vector<std::vector<double>>& neg_probs, double eps = kNegProbClamp) {
    if (neg_probs.empty()) throw DataError("negative_term: no negatives");
    std::vector<double> per;
    per.reserve(neg_probs.size());
    for (const auto& probs : neg_probs) {
        if (probs.empty()) throw DataError("negative_term: empty negative sequence");
        double s = 0.0;
        for (double p : probs) {
            const double clamped = std::min(p, 1.0 - eps);
            s -= std::log1p(-clamped);
        }
        per.push_back(s / static_cast<double>(probs.size()));
    }
    double mean = 0.0;
    for (double v : per) mean += v;
    mean /= static_cast<double>(per.size());
    return {mean, per};
}

inline LossBreakdown scl_loss(std::span<const double> pos_logprobs,
                              const std::vector<std::vector<double>>& neg_probs, double alpha,
                              double eps = kNegProbClamp) {
    LossBreakdown out;
    out.pos_term = positive_term(pos_logprobs);
    auto [neg, per] = negative_term(neg_probs, eps);
    out.neg_term = neg;
    out.per_negative = std::move(per);
    out.total = out.pos_term + alpha * out.neg_term;
    return out;
}

// The plain LM objective used for base fine-tuning; identical to
// positive_term, exposed under its own name so that code path reads as
// what it is.
inline double lm_nll(std::span<const double> pos_logprobs) { return positive_term(pos_logprobs); }

}  // namespace clseg

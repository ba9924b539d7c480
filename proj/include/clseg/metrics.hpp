// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "clseg/errors.hpp"
#include "clseg/text.hpp"

namespace clseg {

using Tokens = std::vector<std::string>;

struct RougeScore {
    double p = 0.0, r = 0.0, f1 = 0.0;
};

struct MetricReport {
    double bleu = 0.0;
    RougeScore r1, r2, rl;
    double meteor = 0.0;
    int n_examples = 0;
};

struct SignificanceResult {
    double statistic = 0.0;
    double p_value = 1.0;
    int n_pairs = 0;
    int n_nonzero = 0;
};

namespace detail {

// n-gram multiset as joined-string keys (tokens cannot contain \x1f)
inline std::map<std::string, int> ngram_counts(const Tokens& toks, int n) {
    std::map<std::string, int> counts;
    if (static_cast<int>(toks.size()) < n) return counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i) {
        std::string key = toks[i];
        for (int j = 1; j < n; ++j) {
            key.push_back('\x1f');
            key += toks[i + static_cast<std::size_t>(j)];
        }
        ++counts[key];
    }
    return counts;
}

inline long long clipped_overlap(const Tokens& cand, const Tokens& ref, int n) {
    const auto cc = ngram_counts(cand, n);
    const auto rc = ngram_counts(ref, n);
    long long overlap = 0;
    for (const auto& [key, count] : cc) {
        auto it = rc.find(key);
        if (it != rc.end()) overlap += std::min(count, it->second);
    }
    return overlap;
}

}  // namespace detail

// Sentence BLEU: brevity penalty times the geometric mean of clipped
// 1..4-gram precisions. A zero precision is smoothed to
// 1 / (2 * |candidate n-grams|). Orders where the candidate has no
// n-grams at all are vacuous and drop out of the geometric mean, which
// keeps bleu(x, x) = 1 for candidates shorter than max_n tokens. Corpus
// scores are the mean of sentence scores.
inline double bleu(const Tokens& cand, const Tokens& ref, int max_n = 4) {
    if (cand.empty()) return 0.0;
    double log_sum = 0.0;
    int orders = 0;
    for (int n = 1; n <= max_n; ++n) {
        const long long cand_count =
            std::max<long long>(0, static_cast<long long>(cand.size()) - n + 1);
        if (cand_count == 0) continue;
        const long long overlap = detail::clipped_overlap(cand, ref, n);
        const double p = overlap > 0
                             ? static_cast<double>(overlap) / static_cast<double>(cand_count)
                             : 1.0 / (2.0 * static_cast<double>(cand_count));
        log_sum += std::log(p);
        ++orders;
    }
    const double geo = std::exp(log_sum / orders);
    double bp = 1.0;
    if (cand.size() < ref.size())
        bp = std::exp(1.0 - static_cast<double>(ref.size()) / static_cast<double>(cand.size()));
    return bp * geo;
}

inline RougeScore rouge_n(const Tokens& cand, const Tokens& ref, int n) {
    if (n < 1) throw UsageError("rouge_n requires n >= 1");
    const long long cand_count = std::max<long long>(0, static_cast<long long>(cand.size()) - n + 1);
    const long long ref_count = std::max<long long>(0, static_cast<long long>(ref.size()) - n + 1);
    const long long overlap = detail::clipped_overlap(cand, ref, n);
    RougeScore s;
    s.p = cand_count > 0 ? static_cast<double>(overlap) / static_cast<double>(cand_count) : 0.0;
    s.r = ref_count > 0 ? static_cast<double>(overlap) / static_cast<double>(ref_count) : 0.0;
    s.f1 = (s.p + s.r) > 0.0 ? 2.0 * s.p * s.r / (s.p + s.r) : 0.0;
    return s;
}

namespace detail {

inline int lcs_length(const Tokens& a, const Tokens& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace detail

inline RougeScore rouge_l(const Tokens& cand, const Tokens& ref) {
    const int l = detail::lcs_length(cand, ref);
    RougeScore s;
    s.p = cand.empty() ? 0.0 : static_cast<double>(l) / static_cast<double>(cand.size());
    s.r = ref.empty() ? 0.0 : static_cast<double>(l) / static_cast<double>(ref.size());
    s.f1 = (s.p + s.r) > 0.0 ? 2.0 * s.p * s.r / (s.p + s.r) : 0.0;
    return s;
}

// Simplified Meteor: exact-match greedy left-to-right alignment, harmonic
// mean with recall weighted 9:1, cubic fragmentation penalty.
inline double meteor(const Tokens& cand, const Tokens& ref) {
    if (cand.empty() || ref.empty()) return 0.0;
    std::vector<bool> used(ref.size(), false);
    std::vector<std::pair<int, int>> alignment;  // (cand index, ref index)
    for (std::size_t ci = 0; ci < cand.size(); ++ci) {
        for (std::size_t rj = 0; rj < ref.size(); ++rj) {
            if (!used[rj] && cand[ci] == ref[rj]) {
                used[rj] = true;
                alignment.emplace_back(static_cast<int>(ci), static_cast<int>(rj));
                break;
            }
        }
    }
    const double m = static_cast<double>(alignment.size());
    if (alignment.empty()) return 0.0;
    const double p = m / static_cast<double>(cand.size());
    const double r = m / static_cast<double>(ref.size());
    const double f = p * r / (0.9 * p + 0.1 * r);
    int chunks = 1;
    for (std::size_t k = 1; k < alignment.size(); ++k) {
        if (alignment[k].first != alignment[k - 1].first + 1 ||
            alignment[k].second != alignment[k - 1].second + 1)
            ++chunks;
    }
    const double penalty = 0.5 * std::pow(static_cast<double>(chunks) / m, 3.0);
    return f * (1.0 - penalty);
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test, two-sided. Zero differences are dropped;
// absolute differences ranked with average ranks for ties. Exact p-value
// by sign enumeration (as a rank-sum distribution) for n <= 20, normal
// approximation with tie correction above.
// ---------------------------------------------------------------------------

namespace detail {

// ranks scaled by 2 so tie-averaged ranks stay integral
inline std::vector<long long> scaled_ranks(const std::vector<double>& abs_diffs) {
    std::vector<std::size_t> order(abs_diffs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return abs_diffs[a] < abs_diffs[b]; });
    std::vector<long long> ranks2(abs_diffs.size(), 0);
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && abs_diffs[order[j + 1]] == abs_diffs[order[i]]) ++j;
        // positions i+1 .. j+1 share the average rank
        const long long avg2 = static_cast<long long>(i + 1 + j + 1);  // 2 * average rank
        for (std::size_t k = i; k <= j; ++k) ranks2[order[k]] = avg2;
        i = j + 1;
    }
    return ranks2;
}

inline std::vector<double> wilcoxon_exact_distribution(const std::vector<long long>& ranks2) {
    long long total = 0;
    for (long long r : ranks2) total += r;
    std::vector<double> dist(static_cast<std::size_t>(total) + 1, 0.0);
    dist[0] = 1.0;
    long long reach = 0;
    for (long long r : ranks2) {
        for (long long w = reach; w >= 0; --w) {
            const double p = dist[static_cast<std::size_t>(w)] * 0.5;
            dist[static_cast<std::size_t>(w)] = p;
            dist[static_cast<std::size_t>(w + r)] += p;
        }
        reach += r;
    }
    return dist;
}

inline double wilcoxon_exact_p(const std::vector<long long>& ranks2, double w_plus) {
    const auto dist = wilcoxon_exact_distribution(ranks2);
    long long total = 0;
    for (long long r : ranks2) total += r;
    const double w_minus = static_cast<double>(total) / 2.0 - w_plus;  // in unscaled units w+ + w- = total/2
    const double w_min2 = 2.0 * std::min(w_plus, w_minus);
    double p = 0.0;
    for (long long w = 0; w <= total; ++w) {
        const double dw = static_cast<double>(w);
        if (dw <= w_min2 + 1e-9 || dw >= static_cast<double>(total) - w_min2 - 1e-9)
            p += dist[static_cast<std::size_t>(w)];
    }
    return std::min(p, 1.0);
}

inline double wilcoxon_normal_p(std::size_t n, const std::vector<long long>& ranks2, double w_min) {
    // tie correction from group sizes
    std::map<long long, int> groups;
    for (long long r : ranks2) ++groups[r];
    double tie_term = 0.0;
    for (const auto& [rank, t] : groups)
        tie_term += static_cast<double>(t) * t * t - static_cast<double>(t);
    const double dn = static_cast<double>(n);
    const double mu = dn * (dn + 1.0) / 4.0;
    const double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0 - tie_term / 48.0;
    if (var <= 0.0) throw DataError("wilcoxon: degenerate variance (all ties)");
    const double z = (w_min - mu + 0.5) / std::sqrt(var);  // continuity corrected
    const double phi = 0.5 * std::erfc(-z / std::sqrt(2.0));
    return std::min(1.0, 2.0 * phi);
}

}  // namespace detail

inline constexpr int kWilcoxonExactMax = 20;

inline SignificanceResult wilcoxon_signed_rank(const std::vector<std::pair<double, double>>& pairs) {
    std::vector<double> diffs;
    for (const auto& [a, b] : pairs)
        if (a != b) diffs.push_back(a - b);
    SignificanceResult res;
    res.n_pairs = static_cast<int>(pairs.size());
    res.n_nonzero = static_cast<int>(diffs.size());
    if (diffs.size() < 5)
        throw DataError("insufficient pairs: need at least 5 non-zero differences, have " +
                        std::to_string(diffs.size()));
    std::vector<double> abs_diffs;
    for (double d : diffs) abs_diffs.push_back(std::fabs(d));
    const auto ranks2 = detail::scaled_ranks(abs_diffs);
    double w_plus = 0.0, w_minus = 0.0;
    for (std::size_t i = 0; i < diffs.size(); ++i) {
        if (diffs[i] > 0)
            w_plus += static_cast<double>(ranks2[i]) / 2.0;
        else
            w_minus += static_cast<double>(ranks2[i]) / 2.0;
    }
    res.statistic = std::min(w_plus, w_minus);
    if (diffs.size() <= kWilcoxonExactMax)
        res.p_value = detail::wilcoxon_exact_p(ranks2, w_plus);
    else
        res.p_value = detail::wilcoxon_normal_p(diffs.size(), ranks2, res.statistic);
    return res;
}

// ---------------------------------------------------------------------------
// Corpus-level evaluation
// ---------------------------------------------------------------------------

struct ExampleScores {
    std::vector<std::string> ids;  // sorted
    std::vector<double> bleu, r1_f1, r2_f1, rl_f1, meteor;
};

struct SystemEvaluation {
    MetricReport report;
    ExampleScores examples;
};

inline SystemEvaluation evaluate_system_detailed(const std::map<std::string, std::string>& outputs,
                                                 const std::map<std::string, std::string>& references) {
    std::vector<std::string> missing;
    for (const auto& [id, text] : references)
        if (!outputs.count(id)) missing.push_back("output missing for id " + id);
    for (const auto& [id, text] : outputs)
        if (!references.count(id)) missing.push_back("reference missing for id " + id);
    if (!missing.empty()) {
        std::string msg = "id mismatch between outputs and references:";
        for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += " " + missing[i] + ";";
        if (missing.size() > 10) msg += " (+" + std::to_string(missing.size() - 10) + " more)";
        throw DataError(msg);
    }
    if (outputs.empty()) throw DataError("nothing to evaluate: empty output set");

    SystemEvaluation ev;
    MetricReport& rep = ev.report;
    for (const auto& [id, out_text] : outputs) {
        const Tokens cand = normalize_tokens(out_text);
        const Tokens ref = normalize_tokens(references.at(id));
        const double b = bleu(cand, ref);
        const RougeScore s1 = rouge_n(cand, ref, 1);
        const RougeScore s2 = rouge_n(cand, ref, 2);
        const RougeScore sl = rouge_l(cand, ref);
        const double mt = meteor(cand, ref);
        rep.bleu += b;
        rep.r1.p += s1.p, rep.r1.r += s1.r, rep.r1.f1 += s1.f1;
        rep.r2.p += s2.p, rep.r2.r += s2.r, rep.r2.f1 += s2.f1;
        rep.rl.p += sl.p, rep.rl.r += sl.r, rep.rl.f1 += sl.f1;
        rep.meteor += mt;
        ev.examples.ids.push_back(id);
        ev.examples.bleu.push_back(b);
        ev.examples.r1_f1.push_back(s1.f1);
        ev.examples.r2_f1.push_back(s2.f1);
        ev.examples.rl_f1.push_back(sl.f1);
        ev.examples.meteor.push_back(mt);
    }
    const double n = static_cast<double>(outputs.size());
    rep.bleu /= n;
    rep.r1.p /= n, rep.r1.r /= n, rep.r1.f1 /= n;
    rep.r2.p /= n, rep.r2.r /= n, rep.r2.f1 /= n;
    rep.rl.p /= n, rep.rl.r /= n, rep.rl.f1 /= n;
    rep.meteor /= n;
    rep.n_examples = static_cast<int>(outputs.size());
    return ev;
}

inline MetricReport evaluate_system(const std::map<std::string, std::string>& outputs,
                                    const std::map<std::string, std::string>& references) {
    return evaluate_system_detailed(outputs, references).report;
}

// ---------------------------------------------------------------------------
// Report output: values as percentages rounded to 4 decimals, column order
// BLEU, R-1-P/R/F1, R-2-P/R/F1, R-L-P/R/F1, Meteor.
// ---------------------------------------------------------------------------

inline double as_pct4(double v) { return std::round(v * 100.0 * 1e4) / 1e4; }

inline nlohmann::ordered_json metric_report_json(const MetricReport& rep) {
    nlohmann::ordered_json j;
    j["bleu"] = as_pct4(rep.bleu);
    j["r1_p"] = as_pct4(rep.r1.p);
    j["r1_r"] = as_pct4(rep.r1.r);
    j["r1_f1"] = as_pct4(rep.r1.f1);
    j["r2_p"] = as_pct4(rep.r2.p);
    j["r2_r"] = as_pct4(rep.r2.r);
    j["r2_f1"] = as_pct4(rep.r2.f1);
    j["rl_p"] = as_pct4(rep.rl.p);
    j["rl_r"] = as_pct4(rep.rl.r);
    j["rl_f1"] = as_pct4(rep.rl.f1);
    j["meteor"] = as_pct4(rep.meteor);
    j["n_examples"] = rep.n_examples;
    return j;
}

inline std::string metric_table_header() {
    return "system\tBLEU\tR-1-P\tR-1-R\tR-1-F1\tR-2-P\tR-2-R\tR-2-F1\tR-L-P\tR-L-R\tR-L-F1\tMeteor";
}

inline std::string metric_table_row(const std::string& label, const MetricReport& rep) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%s\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f",
                  label.c_str(), as_pct4(rep.bleu), as_pct4(rep.r1.p), as_pct4(rep.r1.r),
                  as_pct4(rep.r1.f1), as_pct4(rep.r2.p), as_pct4(rep.r2.r), as_pct4(rep.r2.f1),
                  as_pct4(rep.rl.p), as_pct4(rep.rl.r), as_pct4(rep.rl.f1), as_pct4(rep.meteor));
    return buf;
}

}  // namespace clseg

// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "clseg/model.hpp"
#include "clseg/rng.hpp"

namespace clseg {

// Verification harness: analytic gradients of the contrastive loss versus
// central finite differences, run entirely in double precision on a tiny
// model so float rounding cannot mask a real math error.

struct GradCheckConfig {
    ModelConfig model;
    int n_batches = 20;
    double fd_eps = 1e-4;
    double threshold = 1e-4;
    std::uint64_t seed = 7;
    bool inject_error = false;  // test fixture: corrupt one analytic gradient

    GradCheckConfig() {
        model.vocab_size = 32;
        model.d_model = 8;
        model.n_layers = 1;
        model.n_heads = 2;
        model.d_ff = 16;
        model.max_seq_len = 24;
        model.seed = 7;
    }
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_array;
    long long n_parameters = 0;
    int n_batches = 0;
    double threshold = 0.0;

    bool passed() const { return max_rel_error < threshold; }
};

namespace detail {

inline ContrastiveBatch random_batch(const ModelConfig& cfg, Rng& rng, int batch_index) {
    auto random_seq = [&](int lo_len, int hi_len) {
        TokenSeq s;
        const int len = rng.next_int(lo_len, hi_len);
        for (int i = 0; i < len; ++i) s.ids.push_back(rng.next_int(kUnk, cfg.vocab_size - 1));
        return s;
    };
    ContrastiveBatch b;
    b.story_id = "gradcheck-" + std::to_string(batch_index);
    b.q = random_seq(4, 8);
    b.k_plus = random_seq(3, 6);
    for (int i = 0; i < 3; ++i) {
        TokenSeq km = random_seq(2, 5);
        while (km.ids == b.k_plus.ids) km = random_seq(2, 5);
        b.k_minus.push_back(std::move(km));
        b.negative_labels.push_back("n" + std::to_string(i));
    }
    return b;
}

}  // namespace detail

inline GradCheckReport run_gradcheck(const GradCheckConfig& gc) {
    Parameters<double> params = init_params_t<double>(gc.model);

    GradCheckReport report;
    report.threshold = gc.threshold;
    report.n_batches = gc.n_batches;
    params.visit([&](const std::string&, const Mat<double>& m) {
        report.n_parameters += static_cast<long long>(m.size());
    });

    const LossSpec spec{LossKind::Scl, 1.0, kNegProbClamp};
    Rng rng(gc.seed);
    for (int b = 0; b < gc.n_batches; ++b) {
        const ContrastiveBatch batch = detail::random_batch(gc.model, rng, b);
        Parameters<double> analytic = params.zeros_like();
        loss_and_grads(params, batch, spec, analytic, 1.0);
        if (gc.inject_error && b == 0) analytic.tok_emb.d[0] += 1e-2;

        // central differences against the same loss evaluation path
        Parameters<double> probe = params;
        std::vector<Mat<double>*> probe_arrays, analytic_arrays;
        std::vector<std::string> names;
        probe.visit([&](const std::string& name, Mat<double>& m) {
            probe_arrays.push_back(&m);
            names.push_back(name);
        });
        analytic.visit([&](const std::string&, Mat<double>& m) { analytic_arrays.push_back(&m); });

        for (std::size_t a = 0; a < probe_arrays.size(); ++a) {
            Mat<double>& arr = *probe_arrays[a];
            for (std::size_t i = 0; i < arr.d.size(); ++i) {
                const double orig = arr.d[i];
                arr.d[i] = orig + gc.fd_eps;
                const double up = loss_value(probe, batch, spec).total;
                arr.d[i] = orig - gc.fd_eps;
                const double down = loss_value(probe, batch, spec).total;
                arr.d[i] = orig;
                const double fd = (up - down) / (2.0 * gc.fd_eps);
                const double an = analytic_arrays[a]->d[i];
                // Central differences at eps=1e-4 carry O(eps^2 * f''')
                // truncation that reaches ~2e-6 absolute on this loss.
                // The denominator floor keeps that noise from dominating
                // small-gradient entries; they are still held to an
                // absolute tolerance of threshold * kDenomFloor = 5e-6,
                // orders of magnitude below any real backward-pass bug.
                constexpr double kDenomFloor = 0.05;
                const double denom = std::max({kDenomFloor, std::fabs(fd), std::fabs(an)});
                const double rel = std::fabs(fd - an) / denom;
                if (rel > report.max_rel_error) {
                    report.max_rel_error = rel;
                    report.worst_array = names[a];
                }
            }
        }
    }
    return report;
}

}  // namespace clseg

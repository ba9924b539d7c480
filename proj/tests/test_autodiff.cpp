// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "clseg/autodiff.hpp"
#include "clseg/rng.hpp"

using namespace clseg;
using Tape = ad::Tape<double>;
using Var = Tape::Var;

namespace {

Mat<double> random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    Mat<double> m(r, c);
    for (auto& v : m.d) v = rng.next_normal() * scale;
    return m;
}

// Central-difference check of d(scalar)/d(leaves) for an arbitrary graph.
void check_graph(const std::vector<Mat<double>>& leaves,
                 const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                 double tol = 1e-6) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& m : leaves) vars.push_back(tape.leaf(m));
    Var out = build(tape, vars);
    REQUIRE(tape.value(out).size() == 1);
    tape.backward(out);

    const double eps = 1e-6;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        for (std::size_t i = 0; i < leaves[li].size(); ++i) {
            auto eval = [&](double delta) {
                std::vector<Mat<double>> bumped = leaves;
                bumped[li].d[i] += delta;
                Tape t2;
                std::vector<Var> v2;
                for (const auto& m : bumped) v2.push_back(t2.leaf(m));
                return t2.value(build(t2, v2))(0, 0);
            };
            const double fd = (eval(eps) - eval(-eps)) / (2 * eps);
            const double an = tape.grad(vars[li]).d[i];
            CHECK(std::fabs(fd - an) < tol * std::max({1.0, std::fabs(fd), std::fabs(an)}));
        }
    }
}

}  // namespace

TEST_CASE("matmul and matmul_bt gradients") {
    Rng rng(1);
    check_graph({random_mat(3, 4, rng), random_mat(4, 2, rng)},
                [](Tape& t, const std::vector<Var>& v) { return t.mean_all(t.matmul(v[0], v[1])); });
    check_graph({random_mat(3, 4, rng), random_mat(5, 4, rng)},
                [](Tape& t, const std::vector<Var>& v) { return t.mean_all(t.matmul_bt(v[0], v[1])); });
}

TEST_CASE("add, add_row, scale, add_scaled gradients") {
    Rng rng(2);
    check_graph({random_mat(3, 4, rng), random_mat(3, 4, rng)},
                [](Tape& t, const std::vector<Var>& v) { return t.mean_all(t.add(v[0], v[1])); });
    check_graph({random_mat(3, 4, rng), random_mat(1, 4, rng)},
                [](Tape& t, const std::vector<Var>& v) { return t.mean_all(t.add_row(v[0], v[1])); });
    check_graph({random_mat(2, 3, rng)},
                [](Tape& t, const std::vector<Var>& v) { return t.mean_all(t.scale(v[0], -2.5)); });
    check_graph({random_mat(2, 3, rng), random_mat(2, 3, rng)}, [](Tape& t, const std::vector<Var>& v) {
        return t.mean_all(t.add_scaled(v[0], v[1], 1.5, -0.75));
    });
}

TEST_CASE("layer_norm gradients for input, gain and bias") {
    Rng rng(3);
    check_graph({random_mat(4, 6, rng), random_mat(1, 6, rng, 0.5), random_mat(1, 6, rng)},
                [](Tape& t, const std::vector<Var>& v) {
                    return t.mean_all(t.layer_norm_rows(v[0], v[1], v[2], 1e-5));
                },
                1e-5);
}

TEST_CASE("gelu gradient") {
    Rng rng(4);
    check_graph({random_mat(3, 5, rng)},
                [](Tape& t, const std::vector<Var>& v) { return t.mean_all(t.gelu(v[0])); });
}

TEST_CASE("causal softmax and log softmax gradients") {
    Rng rng(5);
    check_graph({random_mat(5, 5, rng)},
                [](Tape& t, const std::vector<Var>& v) { return t.mean_all(t.causal_softmax(v[0])); });
    check_graph({random_mat(4, 7, rng)}, [](Tape& t, const std::vector<Var>& v) {
        // weight rows asymmetrically so gradients differ per column
        Var lp = t.log_softmax_rows(v[0]);
        return t.mean_all(t.gather_elems(lp, {{0, 1}, {1, 4}, {2, 0}, {3, 6}}));
    });
}

TEST_CASE("gather, slice, concat gradients") {
    Rng rng(6);
    check_graph({random_mat(6, 3, rng)}, [](Tape& t, const std::vector<Var>& v) {
        return t.mean_all(t.gather_rows(v[0], {2, 2, 0, 5}));  // repeated rows accumulate
    });
    check_graph({random_mat(5, 8, rng)}, [](Tape& t, const std::vector<Var>& v) {
        return t.mean_all(t.slice_cols(v[0], 2, 4));
    });
    check_graph({random_mat(5, 8, rng)}, [](Tape& t, const std::vector<Var>& v) {
        return t.mean_all(t.slice_rows(v[0], 1, 3));
    });
    check_graph({random_mat(4, 2, rng), random_mat(4, 3, rng)}, [](Tape& t, const std::vector<Var>& v) {
        return t.mean_all(t.concat_cols({v[0], v[1]}));
    });
}

TEST_CASE("log1m_exp gradient away from the clamp") {
    Rng rng(7);
    Mat<double> logp(3, 1);
    logp(0, 0) = std::log(0.3);
    logp(1, 0) = std::log(0.01);
    logp(2, 0) = std::log(0.82);
    check_graph({logp}, [](Tape& t, const std::vector<Var>& v) {
        return t.mean_all(t.log1m_exp(v[0], 1e-6));
    });
}

TEST_CASE("log1m_exp clamps p near 1 to a finite value with zero gradient") {
    Tape tape;
    Mat<double> logp(1, 1);
    logp(0, 0) = -1e-9;  // p essentially 1
    Var v = tape.leaf(logp);
    Var out = tape.mean_all(tape.log1m_exp(v, 1e-6));
    CHECK(std::isfinite(tape.value(out)(0, 0)));
    CHECK(tape.value(out)(0, 0) == doctest::Approx(std::log(1e-6)).epsilon(1e-9));
    tape.backward(out);
    CHECK(tape.grad(v)(0, 0) == 0.0);
}

TEST_CASE("constant loss has zero gradients") {
    Tape tape;
    Rng rng(8);
    Var x = tape.leaf(random_mat(3, 3, rng));
    Var c = tape.leaf(Mat<double>(1, 1));  // zero constant, not derived from x
    tape.backward(c);
    for (std::size_t i = 0; i < 9; ++i) CHECK(tape.grad(x).d[i] == 0.0);
}

TEST_CASE("doubling the loss doubles every gradient") {
    Rng rng(9);
    Mat<double> m = random_mat(3, 4, rng);
    auto grads_for = [&](double factor) {
        Tape tape;
        Var x = tape.leaf(m);
        Var loss = tape.scale(tape.mean_all(tape.gelu(x)), factor);
        tape.backward(loss);
        return tape.grad(x);
    };
    Mat<double> g1 = grads_for(1.0);
    Mat<double> g2 = grads_for(2.0);
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2.d[i] == doctest::Approx(2.0 * g1.d[i]));
}

TEST_CASE("causal softmax zeroes the strict upper triangle exactly") {
    Rng rng(10);
    Tape tape;
    Var s = tape.leaf(random_mat(4, 4, rng));
    Var w = tape.causal_softmax(s);
    const Mat<double>& m = tape.value(w);
    for (int i = 0; i < 4; ++i) {
        double row = 0;
        for (int j = 0; j < 4; ++j) {
            if (j > i) CHECK(m(i, j) == 0.0);
            row += m(i, j);
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    }
}

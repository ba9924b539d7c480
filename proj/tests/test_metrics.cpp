// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <fstream>

#include "clseg/corpus.hpp"
#include "clseg/metrics.hpp"
#include "clseg/rng.hpp"
#include "metric_oracles.hpp"

using namespace clseg;

namespace {

Tokens toks(const std::string& s) { return normalize_tokens(s); }

std::string golden_path() {
    // tests run from the build tree; the data file lives in the source tree
    for (const char* p : {"tests/data/metrics_golden.tsv", "../tests/data/metrics_golden.tsv",
                          "../../tests/data/metrics_golden.tsv", "data/metrics_golden.tsv"}) {
        std::ifstream f(p);
        if (f) return p;
    }
    return "tests/data/metrics_golden.tsv";
}

}  // namespace

TEST_CASE("golden file: implementation matches the frozen oracle values to 1e-6") {
    std::ifstream f(golden_path());
    REQUIRE(f);
    std::string line;
    int cases = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto fields = split_fields(line, '\t');
        REQUIRE(fields.size() == 13);
        const Tokens cand = toks(fields[0]);
        const Tokens ref = toks(fields[1]);
        auto want = [&](int i) { return std::stod(fields[static_cast<std::size_t>(i)]); };

        CHECK(bleu(cand, ref) == doctest::Approx(want(2)).epsilon(1e-6));
        const RougeScore r1 = rouge_n(cand, ref, 1);
        CHECK(r1.p == doctest::Approx(want(3)).epsilon(1e-6));
        CHECK(r1.r == doctest::Approx(want(4)).epsilon(1e-6));
        CHECK(r1.f1 == doctest::Approx(want(5)).epsilon(1e-6));
        const RougeScore r2 = rouge_n(cand, ref, 2);
        CHECK(r2.p == doctest::Approx(want(6)).epsilon(1e-6));
        CHECK(r2.r == doctest::Approx(want(7)).epsilon(1e-6));
        CHECK(r2.f1 == doctest::Approx(want(8)).epsilon(1e-6));
        const RougeScore rl = rouge_l(cand, ref);
        CHECK(rl.p == doctest::Approx(want(9)).epsilon(1e-6));
        CHECK(rl.r == doctest::Approx(want(10)).epsilon(1e-6));
        CHECK(rl.f1 == doctest::Approx(want(11)).epsilon(1e-6));
        CHECK(meteor(cand, ref) == doctest::Approx(want(12)).epsilon(1e-6));

        // the oracle agrees with its own frozen output
        CHECK(oracle::bleu(cand, ref) == doctest::Approx(want(2)).epsilon(1e-9));
        CHECK(oracle::meteor(cand, ref) == doctest::Approx(want(12)).epsilon(1e-9));
        ++cases;
    }
    CHECK(cases == 50);
}

TEST_CASE("implementation matches the oracles on 300 random token soups") {
    Rng rng(5150);
    const std::vector<std::string> vocab = {"a", "b", "c", "d", "e", "f", "g", ".", "the", "of"};
    for (int trial = 0; trial < 300; ++trial) {
        Tokens cand, ref;
        const int lc = rng.next_int(0, 14), lr = rng.next_int(1, 14);
        for (int i = 0; i < lc; ++i) cand.push_back(vocab[rng.next_below(vocab.size())]);
        for (int i = 0; i < lr; ++i) ref.push_back(vocab[rng.next_below(vocab.size())]);
        CHECK(bleu(cand, ref) == doctest::Approx(oracle::bleu(cand, ref)).epsilon(1e-9));
        for (int n = 1; n <= 3; ++n) {
            const RougeScore got = rouge_n(cand, ref, n);
            const oracle::PRF want = oracle::rouge_n(cand, ref, n);
            CHECK(got.p == doctest::Approx(want.p).epsilon(1e-12));
            CHECK(got.r == doctest::Approx(want.r).epsilon(1e-12));
            CHECK(got.f1 == doctest::Approx(want.f1).epsilon(1e-12));
        }
        const RougeScore gl = rouge_l(cand, ref);
        const oracle::PRF wl = oracle::rouge_l(cand, ref);
        CHECK(gl.p == doctest::Approx(wl.p).epsilon(1e-12));
        CHECK(gl.f1 == doctest::Approx(wl.f1).epsilon(1e-12));
        CHECK(meteor(cand, ref) == doctest::Approx(oracle::meteor(cand, ref)).epsilon(1e-12));
    }
}

TEST_CASE("rouge_l DP equals exhaustive subsequence search up to length 10") {
    Rng rng(77);
    const std::vector<std::string> vocab = {"p", "q", "r"};
    for (int trial = 0; trial < 400; ++trial) {
        Tokens a, b;
        const int la = rng.next_int(0, 10), lb = rng.next_int(0, 10);
        for (int i = 0; i < la; ++i) a.push_back(vocab[rng.next_below(vocab.size())]);
        for (int i = 0; i < lb; ++i) b.push_back(vocab[rng.next_below(vocab.size())]);
        CHECK(clseg::detail::lcs_length(a, b) == oracle::lcs_exhaustive(a, b));
    }
}

TEST_CASE("metric identities and ranges") {
    Rng rng(88);
    const std::vector<std::string> vocab = {"m", "n", "o", "p"};
    for (int trial = 0; trial < 100; ++trial) {
        Tokens x;
        const int lx = rng.next_int(1, 9);
        for (int i = 0; i < lx; ++i) x.push_back(vocab[rng.next_below(vocab.size())]);
        CHECK(bleu(x, x) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(rouge_n(x, x, 1).f1 == doctest::Approx(1.0));
        CHECK(rouge_l(x, x).f1 == doctest::Approx(1.0));

        Tokens y;
        const int ly = rng.next_int(1, 9);
        for (int i = 0; i < ly; ++i) y.push_back(vocab[rng.next_below(vocab.size())]);
        for (double v : {bleu(x, y), rouge_n(x, y, 2).f1, rouge_l(x, y).p, meteor(x, y)}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("ROUGE-1 is bag-of-words: candidate order does not matter") {
    Rng rng(99);
    Tokens cand = toks("one two three two one four");
    const Tokens ref = toks("two four six eight one");
    const RougeScore base = rouge_n(cand, ref, 1);
    for (int trial = 0; trial < 20; ++trial) {
        rng.shuffle(cand);
        const RougeScore got = rouge_n(cand, ref, 1);
        CHECK(got.p == doctest::Approx(base.p).epsilon(1e-12));
        CHECK(got.r == doctest::Approx(base.r).epsilon(1e-12));
    }
}

TEST_CASE("meteor hand cases") {
    // identical: one chunk, penalty 0.5/m^3
    const Tokens x = toks("a b c d e");
    CHECK(meteor(x, x) == doctest::Approx(1.0 - 0.5 / 125.0).epsilon(1e-12));
    CHECK(meteor(toks("a b"), toks("c d")) == 0.0);
    // single shared token in different positions: P=1/2, R=1/3, one chunk
    const double p = 0.5, r = 1.0 / 3.0;
    const double f = p * r / (0.9 * p + 0.1 * r);
    CHECK(meteor(toks("x shared"), toks("shared y z")) == doctest::Approx(f * 0.5).epsilon(1e-12));
}

TEST_CASE("wilcoxon: all-positive n=5 gives W=0 and exact p=0.0625") {
    std::vector<std::pair<double, double>> pairs = {{2, 1}, {3, 1}, {5, 1}, {9, 1}, {4, 1}};
    SignificanceResult r = wilcoxon_signed_rank(pairs);
    CHECK(r.statistic == 0.0);
    CHECK(r.p_value == doctest::Approx(0.0625).epsilon(1e-12));
    CHECK(r.n_pairs == 5);
    CHECK(r.n_nonzero == 5);
}

TEST_CASE("wilcoxon drops zero differences and requires five non-zero") {
    std::vector<std::pair<double, double>> pairs = {{1, 1}, {2, 2}, {3, 1}, {4, 1}, {5, 1}, {6, 1}, {7, 1}};
    SignificanceResult r = wilcoxon_signed_rank(pairs);
    CHECK(r.n_pairs == 7);
    CHECK(r.n_nonzero == 5);

    std::vector<std::pair<double, double>> same(8, {3.0, 3.0});
    CHECK_THROWS_AS(wilcoxon_signed_rank(same), DataError);
}

TEST_CASE("wilcoxon exact branch matches full sign enumeration up to n=12") {
    Rng rng(31337);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = rng.next_int(5, 12);
        std::vector<std::pair<double, double>> pairs;
        std::vector<double> diffs;
        for (int i = 0; i < n; ++i) {
            // quantized so rank ties occur
            double d = (rng.next_int(0, 6) - 3) * 0.5;
            if (d == 0) d = 0.5;
            if (rng.next_int(0, 1)) d = -d;
            pairs.emplace_back(d, 0.0);
            diffs.push_back(d);
        }
        const SignificanceResult r = wilcoxon_signed_rank(pairs);
        CHECK(r.p_value == doctest::Approx(oracle::wilcoxon_enum_p(diffs)).epsilon(1e-9));
        CHECK(r.p_value > 0.0);
        CHECK(r.p_value <= 1.0);
    }
}

TEST_CASE("wilcoxon exact distribution sums to one") {
    std::vector<double> absd = {1.0, 2.0, 2.0, 3.5, 4.0, 4.0, 4.0, 6.0};
    const auto ranks2 = clseg::detail::scaled_ranks(absd);
    const auto dist = clseg::detail::wilcoxon_exact_distribution(ranks2);
    double total = 0;
    for (double p : dist) total += p;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("wilcoxon exact and normal branches agree within 0.01 at n=20") {
    Rng rng(2718);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<double> diffs;
        std::vector<long long> ranks2;
        std::vector<double> absd;
        double w_plus = 0;
        for (int i = 0; i < 20; ++i) {
            double d = rng.next_normal();
            while (d == 0) d = rng.next_normal();
            diffs.push_back(d);
            absd.push_back(std::fabs(d));
        }
        ranks2 = clseg::detail::scaled_ranks(absd);
        for (std::size_t i = 0; i < diffs.size(); ++i)
            if (diffs[i] > 0) w_plus += static_cast<double>(ranks2[i]) / 2.0;
        double total = 0;
        for (long long r : ranks2) total += static_cast<double>(r) / 2.0;
        const double w_min = std::min(w_plus, total - w_plus);
        const double exact = clseg::detail::wilcoxon_exact_p(ranks2, w_plus);
        const double approx = clseg::detail::wilcoxon_normal_p(20, ranks2, w_min);
        CHECK(std::fabs(exact - approx) < 0.01);
    }
}

TEST_CASE("evaluate_system: identical systems score all ones") {
    std::map<std::string, std::string> refs = {{"a", "alice was happy ."},
                                               {"b", "ben baked the cake ."},
                                               {"c", "carla read the novel ."}};
    MetricReport rep = evaluate_system(refs, refs);
    CHECK(rep.bleu == doctest::Approx(1.0));
    CHECK(rep.r1.f1 == doctest::Approx(1.0));
    CHECK(rep.r2.f1 == doctest::Approx(1.0));
    CHECK(rep.rl.f1 == doctest::Approx(1.0));
    CHECK(rep.n_examples == 3);
}

TEST_CASE("evaluate_system: single example equals its sentence scores") {
    std::map<std::string, std::string> out = {{"x", "the cat sat"}};
    std::map<std::string, std::string> ref = {{"x", "the cat"}};
    MetricReport rep = evaluate_system(out, ref);
    CHECK(rep.bleu == doctest::Approx(bleu(toks("the cat sat"), toks("the cat"))));
    CHECK(rep.r1.p == doctest::Approx(2.0 / 3.0));
    CHECK(rep.r1.r == doctest::Approx(1.0));
    CHECK(rep.r1.f1 == doctest::Approx(0.8));
}

TEST_CASE("evaluate_system: F1 equals the harmonic mean recomputed externally") {
    std::map<std::string, std::string> out = {{"1", "a b c d"}, {"2", "c d e"}};
    std::map<std::string, std::string> ref = {{"1", "a b x y"}, {"2", "c d e"}};
    SystemEvaluation ev = evaluate_system_detailed(out, ref);
    // per-example harmonic means averaged, recomputed here from P/R per example
    double f_sum = 0;
    for (const auto& [id, text] : out) {
        const RougeScore s = rouge_n(toks(text), toks(ref.at(id)), 1);
        f_sum += (s.p + s.r) > 0 ? 2 * s.p * s.r / (s.p + s.r) : 0.0;
    }
    CHECK(ev.report.r1.f1 == doctest::Approx(f_sum / 2.0).epsilon(1e-12));
}

TEST_CASE("evaluate_system rejects mismatched id sets, naming the ids") {
    std::map<std::string, std::string> out = {{"a", "x"}, {"b", "y"}};
    std::map<std::string, std::string> ref = {{"a", "x"}, {"c", "z"}};
    CHECK_THROWS_AS(evaluate_system(out, ref), DataError);
    try {
        evaluate_system(out, ref);
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("b") != std::string::npos);
        CHECK(msg.find("c") != std::string::npos);
    }
}

TEST_CASE("report serialization uses percentage values and the table column order") {
    MetricReport rep;
    rep.bleu = 0.123456789;
    rep.r1 = {0.5, 0.25, 1.0 / 3.0};
    rep.meteor = 0.9999999;
    rep.n_examples = 4;
    auto j = metric_report_json(rep);
    CHECK(j["bleu"].get<double>() == doctest::Approx(12.3457).epsilon(1e-9));
    CHECK(j["r1_f1"].get<double>() == doctest::Approx(33.3333).epsilon(1e-9));
    CHECK(j["meteor"].get<double>() == doctest::Approx(100.0).epsilon(1e-9));
    auto keys = std::vector<std::string>{};
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    CHECK(keys == std::vector<std::string>{"bleu", "r1_p", "r1_r", "r1_f1", "r2_p", "r2_r", "r2_f1",
                                           "rl_p", "rl_r", "rl_f1", "meteor", "n_examples"});
    CHECK(metric_table_header() ==
          "system\tBLEU\tR-1-P\tR-1-R\tR-1-F1\tR-2-P\tR-2-R\tR-2-F1\tR-L-P\tR-L-R\tR-L-F1\tMeteor");
}

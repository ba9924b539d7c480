// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "clseg/gradcheck.hpp"
#include "clseg/model.hpp"
#include "clseg/rng.hpp"

using namespace clseg;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.vocab_size = 32;
    c.d_model = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_ff = 16;
    c.max_seq_len = 24;
    c.seed = 5;
    return c;
}

TokenSeq seq_of(std::initializer_list<int> ids) {
    TokenSeq s;
    s.ids = ids;
    return s;
}

TokenSeq random_seq(Rng& rng, int len, int vocab) {
    TokenSeq s;
    for (int i = 0; i < len; ++i) s.ids.push_back(rng.next_int(kUnk, vocab - 1));
    return s;
}

}  // namespace

TEST_CASE("init is deterministic and bit-identical per seed") {
    Parameters<float> a = init_params(tiny_config());
    Parameters<float> b = init_params(tiny_config());
    bool identical = true;
    a.visit([&](const std::string& name, const Mat<float>& m) {
        const Mat<float>* other = nullptr;
        b.visit([&](const std::string& n2, const Mat<float>& m2) {
            if (n2 == name) other = &m2;
        });
        identical = identical && other && other->d == m.d;
    });
    CHECK(identical);

    ModelConfig c2 = tiny_config();
    c2.seed = 6;
    Parameters<float> c = init_params(c2);
    CHECK(c.tok_emb.d != a.tok_emb.d);
}

TEST_CASE("config validation: head divisibility") {
    ModelConfig c = tiny_config();
    c.d_model = 63;
    CHECK_THROWS_AS(init_params(c), UsageError);
    c.d_model = 64;
    c.n_heads = 2;
    CHECK(64 / c.n_heads == 32);  // head dim
    CHECK_NOTHROW(init_params(c));
}

TEST_CASE("forward rows are normalized distributions") {
    Parameters<float> p = init_params(tiny_config());
    Rng rng(1);
    TokenSeq q = random_seq(rng, 6, 32);
    TokenSeq y = random_seq(rng, 5, 32);
    Mat<float> lp = forward(p, q, y);
    REQUIRE(lp.rows == 5);
    for (int t = 0; t < lp.rows; ++t) {
        double sum = 0;
        for (int j = 0; j < lp.cols; ++j) sum += std::exp(static_cast<double>(lp(t, j)));
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("untrained per-position entropy is near ln(vocab)") {
    Parameters<float> p = init_params(tiny_config());
    Rng rng(2);
    TokenSeq q = random_seq(rng, 8, 32);
    TokenSeq y = random_seq(rng, 6, 32);
    Mat<float> lp = forward(p, q, y);
    const double target = std::log(32.0);
    for (int t = 0; t < lp.rows; ++t) {
        double h = 0;
        for (int j = 0; j < lp.cols; ++j) {
            const double pj = std::exp(static_cast<double>(lp(t, j)));
            if (pj > 0) h -= pj * static_cast<double>(lp(t, j));
        }
        CHECK(h > 0.95 * target);
        CHECK(h < 1.05 * target);
    }
}

TEST_CASE("causality: future tokens cannot change earlier distributions") {
    Parameters<float> p = init_params(tiny_config());
    Rng rng(3);
    TokenSeq q = random_seq(rng, 5, 32);
    for (int trial = 0; trial < 10; ++trial) {
        TokenSeq y = random_seq(rng, 6, 32);
        Mat<float> base = forward(p, q, y);
        const int t = rng.next_int(0, 4);  // positions strictly after t change
        TokenSeq perturbed = y;
        for (std::size_t k = static_cast<std::size_t>(t) + 1; k < perturbed.ids.size(); ++k)
            perturbed.ids[k] = rng.next_int(kUnk, 31);
        Mat<float> changed = forward(p, q, perturbed);
        for (int tt = 0; tt <= t; ++tt)
            for (int j = 0; j < base.cols; ++j) CHECK(base(tt, j) == changed(tt, j));
    }
}

TEST_CASE("sequence too long reports both lengths") {
    Parameters<float> p = init_params(tiny_config());
    Rng rng(4);
    TokenSeq q = random_seq(rng, 20, 32);
    TokenSeq y = random_seq(rng, 10, 32);
    CHECK_THROWS_WITH_AS(forward(p, q, y),
                         "sequence too long: |q|=20 + |y|=10 exceeds max_seq_len=24", DataError);
}

TEST_CASE("sequence_logprob: empty ending gives zero; chain rule additivity") {
    Parameters<float> p = init_params(tiny_config());
    Rng rng(5);
    TokenSeq q = random_seq(rng, 6, 32);
    CHECK(sequence_logprob(p, q, TokenSeq{}) == 0.0);

    TokenSeq y = random_seq(rng, 6, 32);
    TokenSeq prefix, suffix;
    prefix.ids.assign(y.ids.begin(), y.ids.begin() + 3);
    suffix.ids.assign(y.ids.begin() + 3, y.ids.end());
    TokenSeq q_ext = q;
    q_ext.ids.insert(q_ext.ids.end(), prefix.ids.begin(), prefix.ids.end());
    const double whole = sequence_logprob(p, q, y);
    const double parts = sequence_logprob(p, q, prefix) + sequence_logprob(p, q_ext, suffix);
    CHECK(whole == doctest::Approx(parts).epsilon(1e-5));
}

TEST_CASE("uniform-output model scores |y| * ln(1/V)") {
    Parameters<float> p = init_params(tiny_config());
    p.tok_emb.zero();  // tied projection of zeros gives identical logits
    Rng rng(6);
    TokenSeq q = random_seq(rng, 4, 32);
    TokenSeq y = random_seq(rng, 3, 32);
    CHECK(sequence_logprob(p, q, y) == doctest::Approx(3.0 * std::log(1.0 / 32.0)).epsilon(1e-6));
}

TEST_CASE("greedy decoding is deterministic and breaks ties toward low ids") {
    Parameters<float> p = init_params(tiny_config());
    p.tok_emb.zero();  // fully uniform distribution: every token ties
    Rng rng(7);
    TokenSeq q = random_seq(rng, 4, 32);
    TokenSeq out = generate_greedy(p, q, 5);
    // lowest id wins every tie and never equals EOS, so five PAD tokens
    REQUIRE(out.ids.size() == 5);
    for (int id : out.ids) CHECK(id == kPad);

    Parameters<float> p2 = init_params(tiny_config());
    TokenSeq a = generate_greedy(p2, q, 8);
    TokenSeq b = generate_greedy(p2, q, 8);
    CHECK(a.ids == b.ids);
}

TEST_CASE("a model that peaks at EOS generates an empty ending") {
    Parameters<float> p = init_params(tiny_config());
    // push the final hidden state toward a direction only EOS's embedding has
    p.tok_emb.zero();
    p.tok_emb(kEos, 0) = 5.0f;
    p.lnf_b(0, 0) = 5.0f;
    Rng rng(8);
    TokenSeq q = random_seq(rng, 4, 32);
    TokenSeq out = generate_greedy(p, q, 8);
    CHECK(out.ids.empty());
}

TEST_CASE("loss_and_grads matches finite differences on a tiny model") {
    GradCheckConfig gc;
    gc.n_batches = 4;
    GradCheckReport rep = run_gradcheck(gc);
    CHECK(rep.n_parameters <= 5000);
    CHECK(rep.max_rel_error < 1e-4);
    CHECK(rep.passed());
}

TEST_CASE("gradcheck detects an injected gradient error") {
    GradCheckConfig gc;
    gc.n_batches = 1;
    gc.inject_error = true;
    GradCheckReport rep = run_gradcheck(gc);
    CHECK_FALSE(rep.passed());
    CHECK(rep.worst_array == "tok_emb");
}

TEST_CASE("checkpoint save/load round-trips bit-identically") {
    ModelConfig cfg = tiny_config();
    Parameters<float> p = init_params(cfg);
    const std::string path = "test_model_ckpt.ckpt";
    save_checkpoint(p, path);
    Parameters<float> back = load_checkpoint(path);
    CHECK(back.config.vocab_size == cfg.vocab_size);
    CHECK(back.config.seed == cfg.seed);
    bool identical = true;
    std::vector<const Mat<float>*> lhs, rhs;
    p.visit([&](const std::string&, const Mat<float>& m) { lhs.push_back(&m); });
    back.visit([&](const std::string&, const Mat<float>& m) { rhs.push_back(&m); });
    REQUIRE(lhs.size() == rhs.size());
    for (std::size_t i = 0; i < lhs.size(); ++i) identical = identical && lhs[i]->d == rhs[i]->d;
    CHECK(identical);

    // same bytes when saved again
    save_checkpoint(back, path + ".2");
    std::ifstream f1(path, std::ios::binary), f2(path + ".2", std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::remove(path.c_str());
    std::remove((path + ".2").c_str());
}

TEST_CASE("loading a corrupt checkpoint fails cleanly") {
    const std::string path = "test_model_bad.ckpt";
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOTCLSEG\n";
    }
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
    std::remove(path.c_str());
}

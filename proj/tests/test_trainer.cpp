// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "clseg/gradcheck.hpp"
#include "clseg/synth.hpp"
#include "clseg/trainer.hpp"

using namespace clseg;

namespace {

struct Fixture {
    SynthResult synth = synth_corpus(36, 91);
    Corpus train, dev;
    Tokenizer tok;
    ModelConfig mcfg;
    Lexicon lex = default_lexicon();

    Fixture() {
        train.stories.assign(synth.corpus.stories.begin(), synth.corpus.stories.begin() + 24);
        dev.stories.assign(synth.corpus.stories.begin() + 24, synth.corpus.stories.end());
        tok = Tokenizer::build(train, 512);
        mcfg.vocab_size = tok.vocab_size();
        mcfg.d_model = 16;
        mcfg.n_layers = 1;
        mcfg.n_heads = 2;
        mcfg.d_ff = 32;
        mcfg.max_seq_len = 96;
        mcfg.seed = 3;
    }

    TrainConfig tcfg(int epochs, double alpha = 1.0) const {
        TrainConfig c;
        c.learning_rate = 1e-3;
        c.batch_size = 8;
        c.alpha = alpha;
        c.epochs = epochs;
        c.seed = 17;
        return c;
    }
};

bool params_equal(const Parameters<float>& a, const Parameters<float>& b) {
    std::vector<const Mat<float>*> lhs, rhs;
    a.visit([&](const std::string&, const Mat<float>& m) { lhs.push_back(&m); });
    b.visit([&](const std::string&, const Mat<float>& m) { rhs.push_back(&m); });
    if (lhs.size() != rhs.size()) return false;
    for (std::size_t i = 0; i < lhs.size(); ++i)
        if (lhs[i]->d != rhs[i]->d) return false;
    return true;
}

}  // namespace

TEST_CASE("adam first update magnitude is about the learning rate") {
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    Mat<float> p(1, 1), g(1, 1), m(1, 1), v(1, 1);
    p(0, 0) = 1.0f;
    g(0, 0) = 1.0f;

    // independent scalar recurrence as the oracle
    double om = 0, ov = 0, op = 1.0;
    for (long long t = 1; t <= 3; ++t) {
        om = 0.9 * om + 0.1 * 1.0;
        ov = 0.999 * ov + 0.001 * 1.0;
        const double mh = om / (1 - std::pow(0.9, static_cast<double>(t)));
        const double vh = ov / (1 - std::pow(0.999, static_cast<double>(t)));
        op -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
        adam_update_array(p, g, m, v, t, cfg);
        CHECK(static_cast<double>(p(0, 0)) == doctest::Approx(op).epsilon(1e-6));
        if (t == 1)  // bias correction makes the first step size the learning rate
            CHECK(static_cast<double>(p(0, 0)) == doctest::Approx(1.0 - cfg.learning_rate).epsilon(1e-6));
    }
}

TEST_CASE("zero gradients leave parameters unchanged but advance the step") {
    Fixture fx;
    Parameters<float> params = init_params(fx.mcfg);
    Parameters<float> before = params;
    Parameters<float> grads = params.zeros_like();
    OptimizerState st = make_optimizer_state(params);
    TrainConfig cfg = fx.tcfg(1);
    adam_step(params, grads, st, cfg);
    CHECK(st.step == 1);
    CHECK(params_equal(params, before));
}

TEST_CASE("global-norm clipping scales a norm-10 gradient to norm 1") {
    Fixture fx;
    Parameters<float> grads = init_params(fx.mcfg).zeros_like();
    grads.tok_emb(0, 0) = 10.0f;
    const double pre = clip_global_norm(grads, 1.0);
    CHECK(pre == doctest::Approx(10.0));
    double sq = 0;
    grads.visit([&](const std::string&, const Mat<float>& g) {
        for (float x : g.d) sq += static_cast<double>(x) * x;
    });
    CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("scaling the loss leaves the post-clip update unchanged above threshold") {
    Fixture fx;
    Parameters<float> base = init_params(fx.mcfg);
    Rng rng(4);
    Parameters<float> g1 = base.zeros_like();
    g1.visit([&](const std::string&, Mat<float>& m) {
        for (auto& v : m.d) v = static_cast<float>(rng.next_normal());
    });
    Parameters<float> g3 = g1;
    g3.visit([&](const std::string&, Mat<float>& m) {
        for (auto& v : m.d) v *= 3.0f;
    });
    TrainConfig cfg = fx.tcfg(1);
    cfg.grad_clip_norm = 1.0;  // both pre-clip norms far exceed this

    Parameters<float> pa = base, pb = base;
    OptimizerState sa = make_optimizer_state(pa), sb = make_optimizer_state(pb);
    adam_step(pa, g1, sa, cfg);
    adam_step(pb, g3, sb, cfg);
    bool close = true;
    std::vector<const Mat<float>*> la, lb;
    pa.visit([&](const std::string&, const Mat<float>& m) { la.push_back(&m); });
    pb.visit([&](const std::string&, const Mat<float>& m) { lb.push_back(&m); });
    for (std::size_t i = 0; i < la.size(); ++i)
        for (std::size_t k = 0; k < la[i]->d.size(); ++k)
            close = close && std::fabs(la[i]->d[k] - lb[i]->d[k]) < 1e-6f;
    CHECK(close);
}

TEST_CASE("non-finite gradients are rejected with the array name") {
    Fixture fx;
    Parameters<float> params = init_params(fx.mcfg);
    Parameters<float> grads = params.zeros_like();
    grads.pos_emb(0, 0) = std::numeric_limits<float>::quiet_NaN();
    OptimizerState st = make_optimizer_state(params);
    TrainConfig cfg = fx.tcfg(1);
    CHECK_THROWS_WITH_AS(adam_step(params, grads, st, cfg), "non-finite gradient in array pos_emb",
                         NumericError);
}

TEST_CASE("a single small-lr step strictly decreases the same batch's loss") {
    GradCheckConfig gc;
    Parameters<float> params = init_params(gc.model);
    const LossSpec spec{LossKind::Scl, 1.0, kNegProbClamp};
    TrainConfig cfg;
    cfg.learning_rate = 1e-6;
    cfg.grad_clip_norm = 0.0;  // no clipping; probe the raw step
    Rng rng(123);
    for (int trial = 0; trial < 10; ++trial) {
        const ContrastiveBatch batch = clseg::detail::random_batch(gc.model, rng, trial);
        Parameters<float> p = params;
        Parameters<float> grads = p.zeros_like();
        const double before = loss_and_grads(p, batch, spec, grads, 1.0f).total;
        OptimizerState st = make_optimizer_state(p);
        adam_step(p, grads, st, cfg);
        const double after = loss_value(p, batch, spec).total;
        CHECK(after < before);
    }
}

TEST_CASE("train_base: zero epochs returns the initialization") {
    Fixture fx;
    Parameters<float> init = init_params(fx.mcfg);
    TrainResult res = train_base(fx.train, fx.dev, fx.tok, init, fx.tcfg(0));
    CHECK(res.steps == 0);
    CHECK(params_equal(res.best, init));
    CHECK(res.best_metric == res.init_metric);
}

TEST_CASE("train_base improves dev NLL and keeps the best checkpoint") {
    Fixture fx;
    Parameters<float> init = init_params(fx.mcfg);
    TrainResult res = train_base(fx.train, fx.dev, fx.tok, init, fx.tcfg(3));
    CHECK_FALSE(res.diverged);
    CHECK(res.best_metric <= res.init_metric);
    CHECK(res.records.size() == static_cast<std::size_t>(res.steps));
    for (std::size_t i = 0; i < res.records.size(); ++i)
        CHECK(res.records[i].step == static_cast<long long>(i + 1));
}

TEST_CASE("training is deterministic: same seed, same checkpoint bytes") {
    Fixture fx;
    Parameters<float> init = init_params(fx.mcfg);
    TrainResult a = train_base(fx.train, fx.dev, fx.tok, init, fx.tcfg(2));
    TrainResult b = train_base(fx.train, fx.dev, fx.tok, init, fx.tcfg(2));
    save_checkpoint(a.best, "test_trainer_a.ckpt");
    save_checkpoint(b.best, "test_trainer_b.ckpt");
    std::ifstream fa("test_trainer_a.ckpt", std::ios::binary), fb("test_trainer_b.ckpt", std::ios::binary);
    std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);
    std::remove("test_trainer_a.ckpt");
    std::remove("test_trainer_b.ckpt");
}

TEST_CASE("checkpoint round-trip preserves the subsequent training trajectory") {
    Fixture fx;
    Parameters<float> init = init_params(fx.mcfg);
    TrainResult warm = train_base(fx.train, fx.dev, fx.tok, init, fx.tcfg(1));
    save_checkpoint(warm.best, "test_trainer_rt.ckpt");
    Parameters<float> loaded = load_checkpoint("test_trainer_rt.ckpt");
    CHECK(params_equal(loaded, warm.best));
    TrainResult c1 = train_base(fx.train, fx.dev, fx.tok, warm.best, fx.tcfg(1));
    TrainResult c2 = train_base(fx.train, fx.dev, fx.tok, loaded, fx.tcfg(1));
    CHECK(params_equal(c1.best, c2.best));
    for (std::size_t i = 0; i < c1.records.size(); ++i)
        CHECK(c1.records[i].total == c2.records[i].total);
    std::remove("test_trainer_rt.ckpt");
}

TEST_CASE("train_sct queries carry exactly one sentiment tag") {
    Fixture fx;
    auto tag_fn = [&](const Story& s) -> std::optional<SentimentTagKind> {
        return fx.lex.classify(s.ending);
    };
    auto items = make_lm_items(fx.train, fx.tok, tag_fn);
    for (const ContrastiveBatch& b : items) {
        int tags = 0;
        for (int id : b.q.ids) tags += (id == kSentPos || id == kSentNeg) ? 1 : 0;
        CHECK(tags == 1);
        CHECK((b.q.ids[1] == kSentPos || b.q.ids[1] == kSentNeg));
    }
}

TEST_CASE("clseg with alpha=0 reproduces the base-training loss trajectory") {
    Fixture fx;
    Parameters<float> init = init_params(fx.mcfg);
    auto negs = negatives_by_id(build_gcl_sets(fx.synth.corpus, fx.tok, 7));

    TrainConfig cfg = fx.tcfg(2, 0.0);
    TrainResult contrastive = train_clseg(init, fx.train, negs, fx.dev, negs, fx.tok, cfg);
    TrainResult base = train_base(fx.train, fx.dev, fx.tok, init, cfg);
    REQUIRE(contrastive.records.size() == base.records.size());
    for (std::size_t i = 0; i < base.records.size(); ++i)
        CHECK(contrastive.records[i].total == base.records[i].total);
    // contrastive records carry per-mechanism negative losses
    for (const TrainLogRecord& r : contrastive.records) {
        CHECK(r.per_mechanism.count("so") == 1);
        CHECK(r.per_mechanism.count("cr") == 1);
        CHECK(r.per_mechanism.count("rs") == 1);
    }
}

TEST_CASE("train_clseg reports a missing negative set by story id") {
    Fixture fx;
    Parameters<float> init = init_params(fx.mcfg);
    auto negs = negatives_by_id(build_gcl_sets(fx.train, fx.tok, 7));
    negs.erase(fx.train.stories[3].id);
    CHECK_THROWS_WITH_AS(
        train_clseg(init, fx.train, negs, fx.dev, negs, fx.tok, fx.tcfg(1)),
        ("missing negative set for story " + fx.train.stories[3].id).c_str(), DataError);
}

TEST_CASE("train_clseg refuses a negative equal to the true ending") {
    Fixture fx;
    Parameters<float> init = init_params(fx.mcfg);
    auto negs = negatives_by_id(build_gcl_sets(fx.train, fx.tok, 7));
    negs[fx.train.stories[0].id].so = fx.train.stories[0].ending;
    CHECK_THROWS_AS(train_clseg(init, fx.train, negs, fx.dev, negs, fx.tok, fx.tcfg(1)), DataError);
}

TEST_CASE("consistency margin is zero when all endings score identically") {
    Fixture fx;
    Parameters<float> uniform = init_params(fx.mcfg);
    uniform.tok_emb.zero();  // every token gets probability 1/V
    auto negs = negatives_by_id(build_gcl_sets(fx.dev, fx.tok, 7));
    auto items = make_contrastive_items(fx.dev, negs, {Mechanism::SO, Mechanism::CR, Mechanism::RS}, fx.tok);
    CHECK(consistency_margin(uniform, items) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("mechanism mask selects which negatives are consumed") {
    Fixture fx;
    auto negs = negatives_by_id(build_gcl_sets(fx.train, fx.tok, 7));
    auto items = make_contrastive_items(fx.train, negs, {Mechanism::SO}, fx.tok);
    for (const ContrastiveBatch& b : items) {
        CHECK(b.k_minus.size() == 1);
        CHECK(b.negative_labels == std::vector<std::string>{"so"});
    }
    TrainConfig cfg = fx.tcfg(1);
    cfg.mechanism_mask = {Mechanism::SO};
    cfg.n_negatives = 2;
    CHECK_THROWS_AS(cfg.validate(), UsageError);
}

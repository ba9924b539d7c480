// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "clseg/autodiff.hpp"
#include "clseg/errors.hpp"
#include "clseg/mat.hpp"
#include "clseg/rng.hpp"
#include "clseg/scloss.hpp"
#include "clseg/tokenizer.hpp"

namespace clseg {

struct ModelConfig {
    int vocab_size = 2048;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 2;
    int d_ff = 256;
    int max_seq_len = 96;
    std::uint64_t seed = 1;

    void validate() const {
        if (vocab_size < 8) throw UsageError("vocab_size must be at least 8");
        if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || max_seq_len <= 0)
            throw UsageError("model dimensions must be positive");
        if (d_model % n_heads != 0)
            throw UsageError("d_model (" + std::to_string(d_model) + ") not divisible by n_heads (" +
                             std::to_string(n_heads) + ")");
    }
};

// All learnable weights of the tiny causal LM. The output projection is
// tied to tok_emb. visit() enumerates arrays in the declared order; the
// optimizer, the checkpoint format and the gradient check all rely on that
// order being stable.
template <typename T>
struct Parameters {
    ModelConfig config;

    Mat<T> tok_emb;  // [vocab, d_model]
    Mat<T> pos_emb;  // [max_seq_len, d_model]

    struct Layer {
        Mat<T> ln1_g, ln1_b;
        Mat<T> wq, bq, wk, bk, wv, bv, wo, bo;
        Mat<T> ln2_g, ln2_b;
        Mat<T> w1, b1, w2, b2;
    };
    std::vector<Layer> layers;

    Mat<T> lnf_g, lnf_b;

    template <typename F>
    void visit(F&& f) {
        f("tok_emb", tok_emb);
        f("pos_emb", pos_emb);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            Layer& L = layers[l];
            f(p + "ln1_g", L.ln1_g);
            f(p + "ln1_b", L.ln1_b);
            f(p + "wq", L.wq);
            f(p + "bq", L.bq);
            f(p + "wk", L.wk);
            f(p + "bk", L.bk);
            f(p + "wv", L.wv);
            f(p + "bv", L.bv);
            f(p + "wo", L.wo);
            f(p + "bo", L.bo);
            f(p + "ln2_g", L.ln2_g);
            f(p + "ln2_b", L.ln2_b);
            f(p + "w1", L.w1);
            f(p + "b1", L.b1);
            f(p + "w2", L.w2);
            f(p + "b2", L.b2);
        }
        f("final_ln_g", lnf_g);
        f("final_ln_b", lnf_b);
    }

    template <typename F>
    void visit(F&& f) const {
        const_cast<Parameters*>(this)->visit(
            [&](const std::string& name, Mat<T>& m) { f(name, static_cast<const Mat<T>&>(m)); });
    }

    template <typename U>
    Parameters<U> cast() const {
        Parameters<U> out;
        out.config = config;
        out.tok_emb = tok_emb.template cast<U>();
        out.pos_emb = pos_emb.template cast<U>();
        for (const Layer& L : layers) {
            typename Parameters<U>::Layer o;
            o.ln1_g = L.ln1_g.template cast<U>();
            o.ln1_b = L.ln1_b.template cast<U>();
            o.wq = L.wq.template cast<U>();
            o.bq = L.bq.template cast<U>();
            o.wk = L.wk.template cast<U>();
            o.bk = L.bk.template cast<U>();
            o.wv = L.wv.template cast<U>();
            o.bv = L.bv.template cast<U>();
            o.wo = L.wo.template cast<U>();
            o.bo = L.bo.template cast<U>();
            o.ln2_g = L.ln2_g.template cast<U>();
            o.ln2_b = L.ln2_b.template cast<U>();
            o.w1 = L.w1.template cast<U>();
            o.b1 = L.b1.template cast<U>();
            o.w2 = L.w2.template cast<U>();
            o.b2 = L.b2.template cast<U>();
            out.layers.push_back(std::move(o));
        }
        out.lnf_g = lnf_g.template cast<U>();
        out.lnf_b = lnf_b.template cast<U>();
        return out;
    }

    Parameters zeros_like() const {
        Parameters out = *this;
        out.visit([](const std::string&, Mat<T>& m) { m.zero(); });
        return out;
    }

    bool all_finite() const {
        bool ok = true;
        visit([&](const std::string&, const Mat<T>& m) { ok = ok && m.all_finite(); });
        return ok;
    }
};

template <typename T>
Parameters<T> init_params_t(const ModelConfig& config) {
    config.validate();
    Parameters<T> p;
    p.config = config;
    Rng rng(config.seed);
    auto normal_fill = [&](Mat<T>& m, int r, int c, double std) {
        m = Mat<T>(r, c);
        for (auto& v : m.d) v = static_cast<T>(rng.next_normal() * std);
    };
    auto const_fill = [&](Mat<T>& m, int r, int c, T val) {
        m = Mat<T>(r, c);
        std::fill(m.d.begin(), m.d.end(), val);
    };
    const int d = config.d_model;
    normal_fill(p.tok_emb, config.vocab_size, d, 0.02);
    normal_fill(p.pos_emb, config.max_seq_len, d, 0.01);
    for (int l = 0; l < config.n_layers; ++l) {
        typename Parameters<T>::Layer L;
        const_fill(L.ln1_g, 1, d, T(1));
        const_fill(L.ln1_b, 1, d, T(0));
        normal_fill(L.wq, d, d, 0.02);
        const_fill(L.bq, 1, d, T(0));
        normal_fill(L.wk, d, d, 0.02);
        const_fill(L.bk, 1, d, T(0));
        normal_fill(L.wv, d, d, 0.02);
        const_fill(L.bv, 1, d, T(0));
        normal_fill(L.wo, d, d, 0.02);
        const_fill(L.bo, 1, d, T(0));
        const_fill(L.ln2_g, 1, d, T(1));
        const_fill(L.ln2_b, 1, d, T(0));
        normal_fill(L.w1, d, config.d_ff, 0.02);
        const_fill(L.b1, 1, config.d_ff, T(0));
        normal_fill(L.w2, config.d_ff, d, 0.02);
        const_fill(L.b2, 1, d, T(0));
        p.layers.push_back(std::move(L));
    }
    const_fill(p.lnf_g, 1, d, T(1));
    const_fill(p.lnf_b, 1, d, T(0));
    return p;
}

inline Parameters<float> init_params(const ModelConfig& config) { return init_params_t<float>(config); }

namespace detail {

// Parameter leaves on a tape, loaded once per forward/backward episode.
template <typename T>
struct ParamVars {
    using Var = typename ad::Tape<T>::Var;
    Var tok_emb, pos_emb;
    struct Layer {
        Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
    };
    std::vector<Layer> layers;
    Var lnf_g, lnf_b;
};

template <typename T>
ParamVars<T> load_params(ad::Tape<T>& tape, const Parameters<T>& p) {
    ParamVars<T> v;
    v.tok_emb = tape.leaf(p.tok_emb);
    v.pos_emb = tape.leaf(p.pos_emb);
    for (const auto& L : p.layers) {
        typename ParamVars<T>::Layer lv;
        lv.ln1_g = tape.leaf(L.ln1_g);
        lv.ln1_b = tape.leaf(L.ln1_b);
        lv.wq = tape.leaf(L.wq);
        lv.bq = tape.leaf(L.bq);
        lv.wk = tape.leaf(L.wk);
        lv.bk = tape.leaf(L.bk);
        lv.wv = tape.leaf(L.wv);
        lv.bv = tape.leaf(L.bv);
        lv.wo = tape.leaf(L.wo);
        lv.bo = tape.leaf(L.bo);
        lv.ln2_g = tape.leaf(L.ln2_g);
        lv.ln2_b = tape.leaf(L.ln2_b);
        lv.w1 = tape.leaf(L.w1);
        lv.b1 = tape.leaf(L.b1);
        lv.w2 = tape.leaf(L.w2);
        lv.b2 = tape.leaf(L.b2);
        v.layers.push_back(lv);
    }
    v.lnf_g = tape.leaf(p.lnf_g);
    v.lnf_b = tape.leaf(p.lnf_b);
    return v;
}

// Accumulate leaf gradients back into a Parameters-shaped container.
template <typename T>
void accumulate_param_grads(ad::Tape<T>& tape, const ParamVars<T>& v, Parameters<T>& grads, T scale = T(1)) {
    auto acc = [&](typename ad::Tape<T>::Var var, Mat<T>& dst) {
        const Mat<T>& g = tape.grad(var);
        for (std::size_t i = 0; i < dst.size(); ++i) dst.d[i] += scale * g.d[i];
    };
    acc(v.tok_emb, grads.tok_emb);
    acc(v.pos_emb, grads.pos_emb);
    for (std::size_t l = 0; l < v.layers.size(); ++l) {
        const auto& lv = v.layers[l];
        auto& gl = grads.layers[l];
        acc(lv.ln1_g, gl.ln1_g);
        acc(lv.ln1_b, gl.ln1_b);
        acc(lv.wq, gl.wq);
        acc(lv.bq, gl.bq);
        acc(lv.wk, gl.wk);
        acc(lv.bk, gl.bk);
        acc(lv.wv, gl.wv);
        acc(lv.bv, gl.bv);
        acc(lv.wo, gl.wo);
        acc(lv.bo, gl.bo);
        acc(lv.ln2_g, gl.ln2_g);
        acc(lv.ln2_b, gl.ln2_b);
        acc(lv.w1, gl.w1);
        acc(lv.b1, gl.b1);
        acc(lv.w2, gl.w2);
        acc(lv.b2, gl.b2);
    }
    acc(v.lnf_g, grads.lnf_g);
    acc(v.lnf_b, grads.lnf_b);
}

// Pre-norm transformer stack over the full token sequence; returns the
// [T, vocab] log-probability node.
template <typename T>
typename ad::Tape<T>::Var transformer_logprobs(ad::Tape<T>& tape, const ParamVars<T>& pv,
                                               const ModelConfig& cfg, const std::vector<int>& tokens) {
    using Var = typename ad::Tape<T>::Var;
    const int seq = static_cast<int>(tokens.size());
    const int dh = cfg.d_model / cfg.n_heads;

    Var x = tape.add(tape.gather_rows(pv.tok_emb, tokens), tape.slice_rows(pv.pos_emb, 0, seq));
    for (const auto& L : pv.layers) {
        Var a = tape.layer_norm_rows(x, L.ln1_g, L.ln1_b, T(1e-5));
        Var q = tape.add_row(tape.matmul(a, L.wq), L.bq);
        Var k = tape.add_row(tape.matmul(a, L.wk), L.bk);
        Var v = tape.add_row(tape.matmul(a, L.wv), L.bv);
        std::vector<Var> heads;
        for (int h = 0; h < cfg.n_heads; ++h) {
            Var qh = tape.slice_cols(q, h * dh, dh);
            Var kh = tape.slice_cols(k, h * dh, dh);
            Var vh = tape.slice_cols(v, h * dh, dh);
            Var scores = tape.scale(tape.matmul_bt(qh, kh), T(1) / std::sqrt(T(dh)));
            Var attn = tape.causal_softmax(scores);
            heads.push_back(tape.matmul(attn, vh));
        }
        Var o = tape.concat_cols(heads);
        x = tape.add(x, tape.add_row(tape.matmul(o, L.wo), L.bo));
        Var b = tape.layer_norm_rows(x, L.ln2_g, L.ln2_b, T(1e-5));
        Var hmid = tape.gelu(tape.add_row(tape.matmul(b, L.w1), L.b1));
        x = tape.add(x, tape.add_row(tape.matmul(hmid, L.w2), L.b2));
    }
    Var y = tape.layer_norm_rows(x, pv.lnf_g, pv.lnf_b, T(1e-5));
    Var logits = tape.matmul_bt(y, pv.tok_emb);  // tied output projection
    return tape.log_softmax_rows(logits);
}

template <typename T>
void check_lengths(const ModelConfig& cfg, std::size_t qlen, std::size_t ylen) {
    if (qlen + ylen > static_cast<std::size_t>(cfg.max_seq_len))
        throw DataError("sequence too long: |q|=" + std::to_string(qlen) + " + |y|=" + std::to_string(ylen) +
                        " exceeds max_seq_len=" + std::to_string(cfg.max_seq_len));
}

// Positions of the log-prob rows/columns that score y given q.
inline std::vector<std::pair<int, int>> target_positions(const TokenSeq& q, const TokenSeq& y) {
    std::vector<std::pair<int, int>> rc;
    const int qn = static_cast<int>(q.ids.size());
    for (std::size_t t = 0; t < y.ids.size(); ++t)
        rc.emplace_back(qn - 1 + static_cast<int>(t), y.ids[t]);
    return rc;
}

template <typename T>
std::vector<int> full_sequence(const TokenSeq& q, const TokenSeq& y) {
    std::vector<int> ids(q.ids.begin(), q.ids.end());
    ids.insert(ids.end(), y.ids.begin(), y.ids.end());
    return ids;
}

}  // namespace detail

// Per-position distributions for y conditioned on q (row t is the
// distribution of y_t given q and y_<t), as log-probabilities.
template <typename T>
Mat<T> forward_t(const Parameters<T>& params, const TokenSeq& q, const TokenSeq& y) {
    detail::check_lengths<T>(params.config, q.ids.size(), y.ids.size());
    if (q.ids.empty()) throw DataError("forward requires a non-empty query");
    ad::Tape<T> tape;
    auto pv = detail::load_params(tape, params);
    auto lp = detail::transformer_logprobs(tape, pv, params.config, detail::full_sequence<T>(q, y));
    const Mat<T>& all = tape.value(lp);
    Mat<T> out(static_cast<int>(y.ids.size()), params.config.vocab_size);
    const int qn = static_cast<int>(q.ids.size());
    for (int t = 0; t < out.rows; ++t)
        for (int j = 0; j < out.cols; ++j) out(t, j) = all(qn - 1 + t, j);
    return out;
}

inline Mat<float> forward(const Parameters<float>& params, const TokenSeq& q, const TokenSeq& y) {
    return forward_t(params, q, y);
}

// Sum over t of log p(y_t | y_<t, q). Empty y gives 0.
template <typename T>
double sequence_logprob_t(const Parameters<T>& params, const TokenSeq& q, const TokenSeq& y) {
    if (y.ids.empty()) return 0.0;
    Mat<T> lp = forward_t(params, q, y);
    double total = 0.0;
    for (std::size_t t = 0; t < y.ids.size(); ++t) total += static_cast<double>(lp(static_cast<int>(t), y.ids[t]));
    return total;
}

inline double sequence_logprob(const Parameters<float>& params, const TokenSeq& q, const TokenSeq& y) {
    return sequence_logprob_t(params, q, y);
}

// Greedy decoding: repeated argmax with ties broken toward the lowest
// token id, until EOS or max_len generated tokens. EOS is not included in
// the returned sequence.
template <typename T>
TokenSeq generate_greedy_t(const Parameters<T>& params, const TokenSeq& q, int max_len) {
    if (q.ids.empty()) throw DataError("generate requires a non-empty query");
    if (static_cast<int>(q.ids.size()) >= params.config.max_seq_len)
        throw DataError("query length " + std::to_string(q.ids.size()) + " leaves no room to generate (max_seq_len=" +
                        std::to_string(params.config.max_seq_len) + ")");
    std::vector<int> seq(q.ids.begin(), q.ids.end());
    TokenSeq out;
    while (static_cast<int>(out.ids.size()) < max_len &&
           static_cast<int>(seq.size()) < params.config.max_seq_len) {
        ad::Tape<T> tape;
        auto pv = detail::load_params(tape, params);
        auto lp = detail::transformer_logprobs(tape, pv, params.config, seq);
        const Mat<T>& m = tape.value(lp);
        const int last = m.rows - 1;
        int best = 0;
        for (int j = 1; j < m.cols; ++j)
            if (m(last, j) > m(last, best)) best = j;
        if (best == kEos) break;
        out.ids.push_back(best);
        seq.push_back(best);
    }
    return out;
}

inline TokenSeq generate_greedy(const Parameters<float>& params, const TokenSeq& q, int max_len) {
    return generate_greedy_t(params, q, max_len);
}

// ---------------------------------------------------------------------------
// Differentiable losses over a contrastive batch
// ---------------------------------------------------------------------------

enum class LossKind { LmNll, Scl };

struct LossSpec {
    LossKind kind = LossKind::LmNll;
    double alpha = 1.0;
    double eps = kNegProbClamp;
};

namespace detail {

template <typename T>
struct BuiltLoss {
    typename ad::Tape<T>::Var total;
    LossBreakdown breakdown;
};

template <typename T>
BuiltLoss<T> build_loss(ad::Tape<T>& tape, const ParamVars<T>& pv, const Parameters<T>& params,
                        const ContrastiveBatch& batch, const LossSpec& spec) {
    using Var = typename ad::Tape<T>::Var;
    batch.validate();
    check_lengths<T>(params.config, batch.q.ids.size(), batch.k_plus.ids.size());
    for (const TokenSeq& km : batch.k_minus)
        check_lengths<T>(params.config, batch.q.ids.size(), km.ids.size());

    auto picked_logprobs = [&](const TokenSeq& y) {
        auto lp = transformer_logprobs(tape, pv, params.config, full_sequence<T>(batch.q, y));
        return tape.gather_elems(lp, target_positions(batch.q, y));
    };

    Var pos_term = tape.scale(tape.mean_all(picked_logprobs(batch.k_plus)), T(-1));
    Var total = pos_term;
    std::vector<Var> neg_terms;
    Var neg_mean{};
    if (spec.kind == LossKind::Scl) {
        if (batch.k_minus.empty())
            throw DataError("SCL loss requires negatives (story " + batch.story_id + ")");
        for (const TokenSeq& km : batch.k_minus) {
            Var t = tape.scale(tape.mean_all(tape.log1m_exp(picked_logprobs(km), T(spec.eps))), T(-1));
            neg_terms.push_back(t);
        }
        Var neg_sum = neg_terms[0];
        for (std::size_t i = 1; i < neg_terms.size(); ++i)
            neg_sum = tape.add_scaled(neg_sum, neg_terms[i], T(1), T(1));
        neg_mean = tape.scale(neg_sum, T(1) / T(neg_terms.size()));
        total = tape.add_scaled(pos_term, neg_mean, T(1), T(spec.alpha));
    }

    BuiltLoss<T> out;
    out.total = total;
    out.breakdown.pos_term = static_cast<double>(tape.value(pos_term)(0, 0));
    for (Var t : neg_terms)
        out.breakdown.per_negative.push_back(static_cast<double>(tape.value(t)(0, 0)));
    out.breakdown.neg_term =
        neg_terms.empty() ? 0.0 : static_cast<double>(tape.value(neg_mean)(0, 0));
    out.breakdown.total = static_cast<double>(tape.value(total)(0, 0));
    if (!std::isfinite(out.breakdown.total))
        throw NumericError("non-finite loss for batch element " + batch.story_id);
    return out;
}

}  // namespace detail

// Exact reverse-mode gradients of the chosen loss for one batch element,
// accumulated into grad_acc with weight grad_scale. Every term conditions
// on the same query q.
template <typename T>
LossBreakdown loss_and_grads(const Parameters<T>& params, const ContrastiveBatch& batch,
                             const LossSpec& spec, Parameters<T>& grad_acc, T grad_scale) {
    ad::Tape<T> tape;
    auto pv = detail::load_params(tape, params);
    auto built = detail::build_loss(tape, pv, params, batch, spec);
    tape.backward(built.total);
    detail::accumulate_param_grads(tape, pv, grad_acc, grad_scale);
    return built.breakdown;
}

// Loss value only (no backward pass); the finite-difference oracle leans
// on this.
template <typename T>
LossBreakdown loss_value(const Parameters<T>& params, const ContrastiveBatch& batch,
                         const LossSpec& spec) {
    ad::Tape<T> tape;
    auto pv = detail::load_params(tape, params);
    return detail::build_loss(tape, pv, params, batch, spec).breakdown;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "CLSEG1" magic line, the config as key=value lines,
// a tensor count, then per tensor a "name rows cols" line followed by
// row-major little-endian float32 data.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const Parameters<float>& params, const std::string& path) {
    std::ostringstream buf;
    buf << "CLSEG1\n";
    const ModelConfig& c = params.config;
    buf << "vocab_size=" << c.vocab_size << "\n";
    buf << "d_model=" << c.d_model << "\n";
    buf << "n_layers=" << c.n_layers << "\n";
    buf << "n_heads=" << c.n_heads << "\n";
    buf << "d_ff=" << c.d_ff << "\n";
    buf << "max_seq_len=" << c.max_seq_len << "\n";
    buf << "seed=" << c.seed << "\n";
    int count = 0;
    params.visit([&](const std::string&, const Mat<float>&) { ++count; });
    buf << "tensors=" << count << "\n";
    params.visit([&](const std::string& name, const Mat<float>& m) {
        buf << name << " " << m.rows << " " << m.cols << "\n";
        buf.write(reinterpret_cast<const char*>(m.d.data()),
                  static_cast<std::streamsize>(m.d.size() * sizeof(float)));
    });
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write checkpoint: " + path);
        const std::string s = buf.str();
        f.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    std::remove(path.c_str());
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot finalize checkpoint: " + path);
}

inline Parameters<float> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    std::string line;
    auto next_line = [&]() {
        if (!std::getline(f, line)) throw DataError("truncated checkpoint: " + path);
        return line;
    };
    if (next_line() != "CLSEG1") throw DataError("bad checkpoint magic in " + path);
    ModelConfig cfg;
    auto kv = [&](const std::string& key) {
        next_line();
        const std::string prefix = key + "=";
        if (line.rfind(prefix, 0) != 0) throw DataError("checkpoint missing key " + key + " in " + path);
        return line.substr(prefix.size());
    };
    cfg.vocab_size = std::stoi(kv("vocab_size"));
    cfg.d_model = std::stoi(kv("d_model"));
    cfg.n_layers = std::stoi(kv("n_layers"));
    cfg.n_heads = std::stoi(kv("n_heads"));
    cfg.d_ff = std::stoi(kv("d_ff"));
    cfg.max_seq_len = std::stoi(kv("max_seq_len"));
    cfg.seed = std::stoull(kv("seed"));
    const int count = std::stoi(kv("tensors"));
    Parameters<float> params = init_params(cfg);
    int seen = 0;
    params.visit([&](const std::string& name, Mat<float>& m) {
        next_line();
        std::istringstream hdr(line);
        std::string got;
        int rows = 0, cols = 0;
        hdr >> got >> rows >> cols;
        if (got != name || rows != m.rows || cols != m.cols)
            throw DataError("checkpoint tensor mismatch: expected " + name + ", got '" + line + "'");
        f.read(reinterpret_cast<char*>(m.d.data()), static_cast<std::streamsize>(m.d.size() * sizeof(float)));
        if (!f) throw DataError("truncated tensor data for " + name + " in " + path);
        ++seen;
    });
    if (seen != count) throw DataError("checkpoint tensor count mismatch in " + path);
    return params;
}

}  // namespace clseg

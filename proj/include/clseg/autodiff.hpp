// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "clseg/errors.hpp"
#include "clseg/mat.hpp"

namespace clseg::ad {

// Reverse-mode tape over dense matrices. A tape is built per forward pass
// and discarded after backward(); node handles are plain indices so the
// node vector may reallocate while closures are alive.
template <typename T>
class Tape {
  public:
    struct Var {
        int i = -1;
    };

    Var leaf(Mat<T> value) { return push(std::move(value), {}); }

    const Mat<T>& value(Var v) const { return nodes_[v.i].value; }
    Mat<T>& grad(Var v) { return nodes_[v.i].grad; }

    // out[t, :] = emb[ids[t], :]
    Var gather_rows(Var emb, std::vector<int> ids) {
        const Mat<T>& e = value(emb);
        Mat<T> out(static_cast<int>(ids.size()), e.cols);
        for (std::size_t t = 0; t < ids.size(); ++t)
            for (int j = 0; j < e.cols; ++j) out(static_cast<int>(t), j) = e(ids[t], j);
        return push(std::move(out), [src = emb.i, ids](Tape& tp, Node& n) {
            Mat<T>& eg = tp.nodes_[src].grad;
            for (std::size_t t = 0; t < ids.size(); ++t)
                for (int j = 0; j < n.grad.cols; ++j)
                    eg(ids[t], j) += n.grad(static_cast<int>(t), j);
        });
    }

    Var slice_rows(Var a, int r0, int nrows) {
        const Mat<T>& x = value(a);
        Mat<T> out(nrows, x.cols);
        for (int i = 0; i < nrows; ++i)
            for (int j = 0; j < x.cols; ++j) out(i, j) = x(r0 + i, j);
        return push(std::move(out), [src = a.i, r0](Tape& tp, Node& n) {
            Mat<T>& g = tp.nodes_[src].grad;
            for (int i = 0; i < n.grad.rows; ++i)
                for (int j = 0; j < n.grad.cols; ++j) g(r0 + i, j) += n.grad(i, j);
        });
    }

    Var slice_cols(Var a, int c0, int ncols) {
        const Mat<T>& x = value(a);
        Mat<T> out(x.rows, ncols);
        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < ncols; ++j) out(i, j) = x(i, c0 + j);
        return push(std::move(out), [src = a.i, c0](Tape& tp, Node& n) {
            Mat<T>& g = tp.nodes_[src].grad;
            for (int i = 0; i < n.grad.rows; ++i)
                for (int j = 0; j < n.grad.cols; ++j) g(i, c0 + j) += n.grad(i, j);
        });
    }

    Var concat_cols(const std::vector<Var>& parts) {
        int total = 0;
        for (Var p : parts) total += value(p).cols;
        Mat<T> out(value(parts[0]).rows, total);
        int off = 0;
        for (Var p : parts) {
            const Mat<T>& x = value(p);
            for (int i = 0; i < x.rows; ++i)
                for (int j = 0; j < x.cols; ++j) out(i, off + j) = x(i, j);
            off += x.cols;
        }
        std::vector<int> idx;
        for (Var p : parts) idx.push_back(p.i);
        return push(std::move(out), [idx](Tape& tp, Node& n) {
            int off = 0;
            for (int src : idx) {
                Mat<T>& g = tp.nodes_[src].grad;
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) g(i, j) += n.grad(i, off + j);
                off += g.cols;
            }
        });
    }

    Var add(Var a, Var b) {
        const Mat<T>& x = value(a);
        const Mat<T>& y = value(b);
        Mat<T> out = x;
        for (std::size_t i = 0; i < out.size(); ++i) out.d[i] += y.d[i];
        return push(std::move(out), [ai = a.i, bi = b.i](Tape& tp, Node& n) {
            Mat<T>& ga = tp.nodes_[ai].grad;
            Mat<T>& gb = tp.nodes_[bi].grad;
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                ga.d[i] += n.grad.d[i];
                gb.d[i] += n.grad.d[i];
            }
        });
    }

    // broadcast a 1 x cols bias over every row of a
    Var add_row(Var a, Var bias) {
        const Mat<T>& x = value(a);
        const Mat<T>& b = value(bias);
        Mat<T> out = x;
        for (int i = 0; i < out.rows; ++i)
            for (int j = 0; j < out.cols; ++j) out(i, j) += b(0, j);
        return push(std::move(out), [ai = a.i, bi = bias.i](Tape& tp, Node& n) {
            Mat<T>& ga = tp.nodes_[ai].grad;
            Mat<T>& gb = tp.nodes_[bi].grad;
            for (int i = 0; i < n.grad.rows; ++i)
                for (int j = 0; j < n.grad.cols; ++j) {
                    ga(i, j) += n.grad(i, j);
                    gb(0, j) += n.grad(i, j);
                }
        });
    }

    Var matmul(Var a, Var b) {
        Mat<T> out = matmul_nn(value(a), value(b));
        return push(std::move(out), [ai = a.i, bi = b.i](Tape& tp, Node& n) {
            matmul_nt_acc(n.grad, tp.nodes_[bi].value, tp.nodes_[ai].grad);
            matmul_tn_acc(tp.nodes_[ai].value, n.grad, tp.nodes_[bi].grad);
        });
    }

    // A * B^T
    Var matmul_bt(Var a, Var b) {
        Mat<T> out = matmul_nt(value(a), value(b));
        return push(std::move(out), [ai = a.i, bi = b.i](Tape& tp, Node& n) {
            matmul_nn_acc(n.grad, tp.nodes_[bi].value, tp.nodes_[ai].grad);
            matmul_tn_acc(n.grad, tp.nodes_[ai].value, tp.nodes_[bi].grad);
        });
    }

    Var scale(Var a, T c) {
        Mat<T> out = value(a);
        for (auto& v : out.d) v *= c;
        return push(std::move(out), [ai = a.i, c](Tape& tp, Node& n) {
            Mat<T>& g = tp.nodes_[ai].grad;
            for (std::size_t i = 0; i < n.grad.size(); ++i) g.d[i] += c * n.grad.d[i];
        });
    }

    Var layer_norm_rows(Var x, Var gain, Var bias, T eps) {
        const Mat<T>& in = value(x);
        Mat<T> out(in.rows, in.cols);
        const int n = in.cols;
        for (int i = 0; i < in.rows; ++i) {
            T mu = T(0);
            for (int j = 0; j < n; ++j) mu += in(i, j);
            mu /= T(n);
            T var = T(0);
            for (int j = 0; j < n; ++j) {
                const T dij = in(i, j) - mu;
                var += dij * dij;
            }
            var /= T(n);
            const T inv = T(1) / std::sqrt(var + eps);
            for (int j = 0; j < n; ++j)
                out(i, j) = (in(i, j) - mu) * inv * value(gain)(0, j) + value(bias)(0, j);
        }
        return push(std::move(out), [xi = x.i, gi = gain.i, bi = bias.i, eps](Tape& tp, Node& nd) {
            const Mat<T>& in = tp.nodes_[xi].value;
            const Mat<T>& gn = tp.nodes_[gi].value;
            Mat<T>& gx = tp.nodes_[xi].grad;
            Mat<T>& gg = tp.nodes_[gi].grad;
            Mat<T>& gb = tp.nodes_[bi].grad;
            const int n = in.cols;
            for (int i = 0; i < in.rows; ++i) {
                T mu = T(0);
                for (int j = 0; j < n; ++j) mu += in(i, j);
                mu /= T(n);
                T var = T(0);
                for (int j = 0; j < n; ++j) {
                    const T dij = in(i, j) - mu;
                    var += dij * dij;
                }
                var /= T(n);
                const T inv = T(1) / std::sqrt(var + eps);
                T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                for (int j = 0; j < n; ++j) {
                    const T xhat = (in(i, j) - mu) * inv;
                    const T dxhat = nd.grad(i, j) * gn(0, j);
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    gg(0, j) += nd.grad(i, j) * xhat;
                    gb(0, j) += nd.grad(i, j);
                }
                for (int j = 0; j < n; ++j) {
                    const T xhat = (in(i, j) - mu) * inv;
                    const T dxhat = nd.grad(i, j) * gn(0, j);
                    gx(i, j) += inv * (dxhat - sum_dxhat / T(n) - xhat * sum_dxhat_xhat / T(n));
                }
            }
        });
    }

    Var gelu(Var a) {
        static constexpr double kC = 0.7978845608028653558798921198687;  // sqrt(2/pi)
        static constexpr double kA = 0.044715;
        const Mat<T>& x = value(a);
        Mat<T> out(x.rows, x.cols);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const T v = x.d[i];
            const T u = T(kC) * (v + T(kA) * v * v * v);
            out.d[i] = T(0.5) * v * (T(1) + std::tanh(u));
        }
        return push(std::move(out), [ai = a.i](Tape& tp, Node& n) {
            const Mat<T>& x = tp.nodes_[ai].value;
            Mat<T>& g = tp.nodes_[ai].grad;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const T v = x.d[i];
                const T u = T(kC) * (v + T(kA) * v * v * v);
                const T th = std::tanh(u);
                const T du = T(kC) * (T(1) + T(3) * T(kA) * v * v);
                const T dy = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
                g.d[i] += n.grad.d[i] * dy;
            }
        });
    }

    // Row-wise softmax over a square score matrix with entries j > i masked
    // out. Masked entries come out exactly zero, so later positions cannot
    // leak into earlier ones even at the bit level.
    Var causal_softmax(Var a) {
        const Mat<T>& s = value(a);
        Mat<T> out(s.rows, s.cols);
        for (int i = 0; i < s.rows; ++i) {
            T mx = s(i, 0);
            for (int j = 1; j <= i; ++j) mx = std::max(mx, s(i, j));
            T denom = T(0);
            for (int j = 0; j <= i; ++j) {
                out(i, j) = std::exp(s(i, j) - mx);
                denom += out(i, j);
            }
            for (int j = 0; j <= i; ++j) out(i, j) /= denom;
            for (int j = i + 1; j < s.cols; ++j) out(i, j) = T(0);
        }
        return push(std::move(out), [ai = a.i](Tape& tp, Node& n) {
            const Mat<T>& w = n.value;
            Mat<T>& g = tp.nodes_[ai].grad;
            for (int i = 0; i < w.rows; ++i) {
                T dot = T(0);
                for (int j = 0; j <= i; ++j) dot += w(i, j) * n.grad(i, j);
                for (int j = 0; j <= i; ++j) g(i, j) += w(i, j) * (n.grad(i, j) - dot);
            }
        });
    }

    Var log_softmax_rows(Var a) {
        const Mat<T>& x = value(a);
        Mat<T> out(x.rows, x.cols);
        for (int i = 0; i < x.rows; ++i) {
            T mx = x(i, 0);
            for (int j = 1; j < x.cols; ++j) mx = std::max(mx, x(i, j));
            T denom = T(0);
            for (int j = 0; j < x.cols; ++j) denom += std::exp(x(i, j) - mx);
            const T lse = mx + std::log(denom);
            for (int j = 0; j < x.cols; ++j) out(i, j) = x(i, j) - lse;
        }
        return push(std::move(out), [ai = a.i](Tape& tp, Node& n) {
            Mat<T>& g = tp.nodes_[ai].grad;
            for (int i = 0; i < n.value.rows; ++i) {
                T gsum = T(0);
                for (int j = 0; j < n.value.cols; ++j) gsum += n.grad(i, j);
                for (int j = 0; j < n.value.cols; ++j)
                    g(i, j) += n.grad(i, j) - std::exp(n.value(i, j)) * gsum;
            }
        });
    }

    // out[k] = x(rc[k].first, rc[k].second), as an n x 1 column
    Var gather_elems(Var a, std::vector<std::pair<int, int>> rc) {
        const Mat<T>& x = value(a);
        Mat<T> out(static_cast<int>(rc.size()), 1);
        for (std::size_t k = 0; k < rc.size(); ++k) out(static_cast<int>(k), 0) = x(rc[k].first, rc[k].second);
        return push(std::move(out), [ai = a.i, rc](Tape& tp, Node& n) {
            Mat<T>& g = tp.nodes_[ai].grad;
            for (std::size_t k = 0; k < rc.size(); ++k)
                g(rc[k].first, rc[k].second) += n.grad(static_cast<int>(k), 0);
        });
    }

    // Elementwise log(1 - p) with p = exp(x) clamped to at most 1 - eps.
    // The clamp keeps the loss finite as p -> 1; its gradient is zero in
    // the clamped region.
    Var log1m_exp(Var a, T eps) {
        const Mat<T>& x = value(a);
        const T logcap = std::log(T(1) - eps);
        Mat<T> out(x.rows, x.cols);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const T v = std::min(x.d[i], logcap);
            out.d[i] = std::log1p(-std::exp(v));
        }
        return push(std::move(out), [ai = a.i, logcap](Tape& tp, Node& n) {
            const Mat<T>& x = tp.nodes_[ai].value;
            Mat<T>& g = tp.nodes_[ai].grad;
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (x.d[i] >= logcap) continue;
                const T p = std::exp(x.d[i]);
                g.d[i] += n.grad.d[i] * (-p / (T(1) - p));
            }
        });
    }

    Var mean_all(Var a) {
        const Mat<T>& x = value(a);
        Mat<T> out(1, 1);
        T s = T(0);
        for (T v : x.d) s += v;
        out(0, 0) = s / T(x.size());
        return push(std::move(out), [ai = a.i](Tape& tp, Node& n) {
            Mat<T>& g = tp.nodes_[ai].grad;
            const T w = n.grad(0, 0) / T(g.size());
            for (auto& v : g.d) v += w;
        });
    }

    // ca*a + cb*b, elementwise over equal shapes (used for scalar algebra)
    Var add_scaled(Var a, Var b, T ca, T cb) {
        const Mat<T>& x = value(a);
        const Mat<T>& y = value(b);
        Mat<T> out(x.rows, x.cols);
        for (std::size_t i = 0; i < x.size(); ++i) out.d[i] = ca * x.d[i] + cb * y.d[i];
        return push(std::move(out), [ai = a.i, bi = b.i, ca, cb](Tape& tp, Node& n) {
            Mat<T>& ga = tp.nodes_[ai].grad;
            Mat<T>& gb = tp.nodes_[bi].grad;
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                ga.d[i] += ca * n.grad.d[i];
                gb.d[i] += cb * n.grad.d[i];
            }
        });
    }

    // Seeds d(out)/d(out) = 1 and sweeps the tape in reverse.
    void backward(Var out) {
        if (value(out).size() != 1) throw NumericError("backward requires a scalar output");
        grad(out)(0, 0) = T(1);
        for (int i = out.i; i >= 0; --i)
            if (nodes_[i].backward) nodes_[i].backward(*this, nodes_[i]);
    }

    std::size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Mat<T> value;
        Mat<T> grad;
        std::function<void(Tape&, Node&)> backward;
    };

    Var push(Mat<T> value, std::function<void(Tape&, Node&)> bw) {
        Node n;
        n.grad = Mat<T>(value.rows, value.cols);
        n.value = std::move(value);
        n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
};

}  // namespace clseg::ad

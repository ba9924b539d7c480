// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace clseg {

// Dense row-major matrix. Vectors are 1 x n or n x 1. Templated on the
// scalar so the training path runs in float and the gradient-check harness
// runs the same code in double.
template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> d;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), d(static_cast<std::size_t>(r) * c, T(0)) {}

    T& operator()(int r, int c) { return d[static_cast<std::size_t>(r) * cols + c]; }
    const T& operator()(int r, int c) const { return d[static_cast<std::size_t>(r) * cols + c]; }

    T* row(int r) { return d.data() + static_cast<std::size_t>(r) * cols; }
    const T* row(int r) const { return d.data() + static_cast<std::size_t>(r) * cols; }

    std::size_t size() const { return d.size(); }

    void zero() { std::fill(d.begin(), d.end(), T(0)); }

    bool all_finite() const {
        for (T v : d)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Mat<U> cast() const {
        Mat<U> m(rows, cols);
        for (std::size_t i = 0; i < d.size(); ++i) m.d[i] = static_cast<U>(d[i]);
        return m;
    }
};

// C += A * B
template <typename T>
void matmul_nn_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
    assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const T* arow = a.row(i);
        T* crow = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const T aik = arow[k];
            if (aik == T(0)) continue;
            const T* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
}

// C += A * B^T  (rows of both operands are contiguous dot products)
template <typename T>
void matmul_nt_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
    assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const T* arow = a.row(i);
        T* crow = c.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const T* brow = b.row(j);
            T acc = T(0);
            for (int k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            crow[j] += acc;
        }
    }
}

// C += A^T * B
template <typename T>
void matmul_tn_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
    assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
    for (int k = 0; k < a.rows; ++k) {
        const T* arow = a.row(k);
        const T* brow = b.row(k);
        for (int i = 0; i < a.cols; ++i) {
            const T aki = arow[i];
            if (aki == T(0)) continue;
            T* crow = c.row(i);
            for (int j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
        }
    }
}

template <typename T>
Mat<T> matmul_nn(const Mat<T>& a, const Mat<T>& b) {
    Mat<T> c(a.rows, b.cols);
    matmul_nn_acc(a, b, c);
    return c;
}

template <typename T>
Mat<T> matmul_nt(const Mat<T>& a, const Mat<T>& b) {
    Mat<T> c(a.rows, b.rows);
    matmul_nt_acc(a, b, c);
    return c;
}

}  // namespace clseg

#pragma once

#include <cstddef>
#include <vector>

#include "mpvad/errors.hpp"

namespace mpvad {

/// Dense row-major matrix. float for training, double for gradient checks.
template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, T(0)) {}

    T* row(int r) { return v.data() + static_cast<std::size_t>(r) * cols; }
    const T* row(int r) const { return v.data() + static_cast<std::size_t>(r) * cols; }
    T& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    T at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
    std::size_t size() const { return v.size(); }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }

    template <typename U>
    Mat<U> cast() const {
        Mat<U> out(rows, cols);
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

using MatF = Mat<float>;
using MatD = Mat<double>;

/// y = W x, W is rows x cols, x has cols entries, y has rows entries.
template <typename T>
inline void matvec(const Mat<T>& w, const T* x, T* y) {
    for (int r = 0; r < w.rows; ++r) {
        const T* wr = w.row(r);
        T acc = T(0);
        for (int c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
        y[r] = acc;
    }
}

/// y += W^T g, accumulating into y (cols entries) from g (rows entries).
template <typename T>
inline void matvec_transposed_acc(const Mat<T>& w, const T* g, T* y) {
    for (int r = 0; r < w.rows; ++r) {
        const T* wr = w.row(r);
        const T gr = g[r];
        for (int c = 0; c < w.cols; ++c) y[c] += wr[c] * gr;
    }
}

/// W += g outer x, g has rows entries, x has cols entries.
template <typename T>
inline void outer_acc(Mat<T>& w, const T* g, const T* x) {
    for (int r = 0; r < w.rows; ++r) {
        T* wr = w.row(r);
        const T gr = g[r];
        for (int c = 0; c < w.cols; ++c) wr[c] += gr * x[c];
    }
}

template <typename T>
inline void check_shape(const Mat<T>& m, int rows, int cols, const char* what) {
    if (m.rows != rows || m.cols != cols)
        throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", got " + std::to_string(m.rows) + "x" +
                         std::to_string(m.cols));
}

}  // namespace mpvad

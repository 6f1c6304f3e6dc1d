#pragma once

// Forward and backward kernels. Every backward takes the upstream gradient
// and returns gradients for the inputs in argument order.

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "gtd/numerics/tensor.hpp"

namespace gtd::num::ops {

namespace detail {
inline void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw ContractError(std::string(op) + ": expected rank 2, got " + dims_string(t.dims()));
}
} // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    if (a.cols() != b.rows())
        throw ContractError("matmul: shape mismatch " + dims_string(a.dims()) + " x " + dims_string(b.dims()));
    Tensor out = Tensor::matrix(a.rows(), b.cols());
    out.mat().noalias() = a.mat() * b.mat();
    return out;
}

inline std::pair<Tensor, Tensor> matmul_backward(const Tensor& a, const Tensor& b, const Tensor& g) {
    Tensor ga = Tensor::matrix(a.rows(), a.cols());
    Tensor gb = Tensor::matrix(b.rows(), b.cols());
    ga.mat().noalias() = g.mat() * b.mat().transpose();
    gb.mat().noalias() = a.mat().transpose() * g.mat();
    return {std::move(ga), std::move(gb)};
}

/// a * b^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "matmul_nt");
    detail::require_rank2(b, "matmul_nt");
    if (a.cols() != b.cols())
        throw ContractError("matmul_nt: shape mismatch " + dims_string(a.dims()) + " x " + dims_string(b.dims()) +
                            "^T");
    Tensor out = Tensor::matrix(a.rows(), b.rows());
    out.mat().noalias() = a.mat() * b.mat().transpose();
    return out;
}

inline std::pair<Tensor, Tensor> matmul_nt_backward(const Tensor& a, const Tensor& b, const Tensor& g) {
    Tensor ga = Tensor::matrix(a.rows(), a.cols());
    Tensor gb = Tensor::matrix(b.rows(), b.cols());
    ga.mat().noalias() = g.mat() * b.mat();
    gb.mat().noalias() = g.mat().transpose() * a.mat();
    return {std::move(ga), std::move(gb)};
}

/// Elementwise sum. `b` may also be a 1 x cols row broadcast over the rows of `a`.
inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.same_shape(b)) {
        Tensor out = a;
        out += b;
        return out;
    }
    if (a.rank() == 2 && b.rank() == 2 && b.rows() == 1 && b.cols() == a.cols()) {
        Tensor out = a;
        out.mat().rowwise() += b.mat().row(0);
        return out;
    }
    throw ContractError("add: shape mismatch " + dims_string(a.dims()) + " vs " + dims_string(b.dims()));
}

inline std::pair<Tensor, Tensor> add_backward(const Tensor& a, const Tensor& b, const Tensor& g) {
    if (a.same_shape(b)) return {g, g};
    Tensor gb = Tensor::matrix(1, b.cols());
    gb.mat() = g.mat().colwise().sum();
    return {g, std::move(gb)};
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (auto& v : out.data()) v *= c;
    return out;
}

inline Tensor relu(const Tensor& a) {
    Tensor out = a;
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

inline Tensor relu_backward(const Tensor& a, const Tensor& g) {
    Tensor out = g;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!(a[i] > 0.0)) out[i] = 0.0;
    return out;
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
    Tensor out = a;
    for (auto& v : out.data()) v = sigmoid(v);
    return out;
}

/// Takes the forward output y = sigmoid(x).
inline Tensor sigmoid_backward(const Tensor& y, const Tensor& g) {
    Tensor out = g;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i] * (1.0 - y[i]);
    return out;
}

/// Row-wise softmax of a rank-2 tensor.
inline Tensor softmax_rows(const Tensor& a) {
    detail::require_rank2(a, "softmax_rows");
    Tensor out = a;
    const auto cols = a.cols();
    for (std::int64_t r = 0; r < a.rows(); ++r) {
        double* row = out.data().data() + r * cols;
        const double m = *std::max_element(row, row + cols);
        double sum = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) sum += (row[c] = std::exp(row[c] - m));
        for (std::int64_t c = 0; c < cols; ++c) row[c] /= sum;
    }
    return out;
}

/// Takes the forward output y = softmax(x).
inline Tensor softmax_rows_backward(const Tensor& y, const Tensor& g) {
    Tensor out = g;
    const auto cols = y.cols();
    for (std::int64_t r = 0; r < y.rows(); ++r) {
        const double* yr = y.data().data() + r * cols;
        const double* gr = g.data().data() + r * cols;
        double dot = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) dot += yr[c] * gr[c];
        double* o = out.data().data() + r * cols;
        for (std::int64_t c = 0; c < cols; ++c) o[c] = yr[c] * (gr[c] - dot);
    }
    return out;
}

inline Tensor mean(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return Tensor::scalar(s / static_cast<double>(a.size()));
}

inline Tensor mean_backward(const Tensor& a, const Tensor& g) {
    return Tensor(a.dims(), g[0] / static_cast<double>(a.size()));
}

inline Tensor concat_rows(const std::vector<const Tensor*>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    const auto cols = parts.front()->cols();
    std::int64_t rows = 0;
    for (const auto* p : parts) {
        if (p->cols() != cols)
            throw ContractError("concat_rows: shape mismatch " + dims_string(parts.front()->dims()) + " vs " +
                                dims_string(p->dims()));
        rows += p->rows();
    }
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(rows * cols));
    for (const auto* p : parts) data.insert(data.end(), p->data().begin(), p->data().end());
    return Tensor({rows, cols}, std::move(data));
}

inline std::vector<Tensor> concat_rows_backward(const std::vector<const Tensor*>& parts, const Tensor& g) {
    std::vector<Tensor> out;
    std::size_t offset = 0;
    for (const auto* p : parts) {
        std::vector<double> d(g.data().begin() + static_cast<std::ptrdiff_t>(offset),
                              g.data().begin() + static_cast<std::ptrdiff_t>(offset + p->size()));
        offset += p->size();
        out.emplace_back(p->dims(), std::move(d));
    }
    return out;
}

} // namespace gtd::num::ops

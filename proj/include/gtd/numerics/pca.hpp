#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "gtd/numerics/tensor.hpp"

namespace gtd::num {

struct EigenPairs {
    std::vector<double> values;  // descending
    Tensor vectors;              // row i is the eigenvector of values[i]
};

/// Cyclic Jacobi rotations on a symmetric matrix. Sweeps until the
/// off-diagonal Frobenius norm drops below tol * ||A||_F.
inline EigenPairs jacobi_eigen(const Tensor& symmetric, double tol = 1e-15, int max_sweeps = 100) {
    const auto n = symmetric.rows();
    if (symmetric.cols() != n) throw ContractError("jacobi_eigen: matrix not square " + dims_string(symmetric.dims()));
    Tensor a = symmetric;
    Tensor v = Tensor::matrix(n, n);
    for (std::int64_t i = 0; i < n; ++i) v.at(i, i) = 1.0;

    double total = 0.0;
    for (double x : a.data()) total += x * x;
    const double stop = tol * std::sqrt(total);

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::int64_t p = 0; p < n; ++p)
            for (std::int64_t q = p + 1; q < n; ++q) off += 2.0 * a.at(p, q) * a.at(p, q);
        if (std::sqrt(off) <= stop) break;

        for (std::int64_t p = 0; p < n - 1; ++p) {
            for (std::int64_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (apq == 0.0) continue;
                const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::int64_t k = 0; k < n; ++k) {
                    const double akp = a.at(k, p), akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (std::int64_t k = 0; k < n; ++k) {
                    const double apk = a.at(p, k), aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
                for (std::int64_t k = 0; k < n; ++k) {
                    const double vkp = v.at(k, p), vkq = v.at(k, q);
                    v.at(k, p) = c * vkp - s * vkq;
                    v.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return a.at(i, i) > a.at(j, j); });

    EigenPairs out{{}, Tensor::matrix(n, n)};
    for (std::int64_t r = 0; r < n; ++r) {
        const auto col = order[static_cast<std::size_t>(r)];
        out.values.push_back(a.at(col, col));
        for (std::int64_t k = 0; k < n; ++k) out.vectors.at(r, k) = v.at(k, col);
    }
    return out;
}

struct PcaModel {
    Tensor components;               // k x D, orthonormal rows
    std::vector<double> means;       // D
    std::vector<double> variances;   // eigenvalue per kept component
    double total_variance = 0.0;
    std::string warning;             // set when fewer than k components are available

    std::size_t k() const { return variances.size(); }
    std::size_t dim() const { return means.size(); }

    /// components * (x - mean)
    std::vector<double> project(const double* x) const {
        std::vector<double> out(k(), 0.0);
        for (std::size_t i = 0; i < k(); ++i)
            for (std::size_t d = 0; d < dim(); ++d)
                out[i] += components.at(static_cast<std::int64_t>(i), static_cast<std::int64_t>(d)) * (x[d] - means[d]);
        return out;
    }
};

/// Sign convention: the largest-magnitude entry of every component is positive
/// (first such entry on ties).
inline void fix_component_signs(Tensor& comps) {
    for (std::int64_t r = 0; r < comps.rows(); ++r) {
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < comps.cols(); ++c)
            if (std::abs(comps.at(r, c)) > std::abs(comps.at(r, best))) best = c;
        if (comps.at(r, best) < 0.0)
            for (std::int64_t c = 0; c < comps.cols(); ++c) comps.at(r, c) = -comps.at(r, c);
    }
}

/// Fits k principal components of an n x D sample matrix (covariance with n-1).
/// When the covariance has rank < k, only the available components are returned
/// and `warning` explains why.
inline PcaModel pca_fit(const Tensor& samples, std::size_t k) {
    const auto n = samples.rows();
    const auto d = samples.cols();
    if (n < 2) throw ContractError("pca_fit: need n >= 2 samples, got " + std::to_string(n));
    if (k == 0 || static_cast<std::int64_t>(k) > std::min(n, d))
        throw ContractError("pca_fit: k=" + std::to_string(k) + " exceeds min(n, D)=" + std::to_string(std::min(n, d)));

    PcaModel model;
    model.means.assign(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) model.means[static_cast<std::size_t>(j)] += samples.at(i, j);
    for (auto& m : model.means) m /= static_cast<double>(n);

    Tensor centered = samples;
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) centered.at(i, j) -= model.means[static_cast<std::size_t>(j)];
    Tensor cov = Tensor::matrix(d, d);
    cov.mat().noalias() = centered.mat().transpose() * centered.mat();
    for (auto& v : cov.data()) v /= static_cast<double>(n - 1);
    for (std::int64_t i = 0; i < d; ++i) model.total_variance += cov.at(i, i);

    const auto eig = jacobi_eigen(cov);
    const double floor = 1e-12 * std::max(eig.values.front(), 1e-300);
    std::size_t kept = 0;
    while (kept < k && eig.values[kept] > floor) ++kept;
    if (kept < k)
        model.warning = "covariance rank " + std::to_string(kept) + " < requested k=" + std::to_string(k) +
                        "; returning " + std::to_string(kept) + " components";
    if (kept == 0) {
        model.components = Tensor();
        return model;
    }
    model.components = Tensor::matrix(static_cast<std::int64_t>(kept), d);
    for (std::size_t i = 0; i < kept; ++i) {
        model.variances.push_back(eig.values[i]);
        for (std::int64_t j = 0; j < d; ++j)
            model.components.at(static_cast<std::int64_t>(i), j) = eig.vectors.at(static_cast<std::int64_t>(i), j);
    }
    fix_component_signs(model.components);
    return model;
}

} // namespace gtd::num

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "gtd/error.hpp"

namespace gtd::num {

using Dims = std::vector<std::int64_t>;

inline std::string dims_string(const Dims& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
    os << ']';
    return os.str();
}

inline std::int64_t dims_volume(const Dims& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::int64_t{1}, std::multiplies<>());
}

/// Dense row-major tensor of doubles. Most of the library works with rank 2.
class Tensor {
public:
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    Tensor() = default;

    explicit Tensor(Dims dims, double fill = 0.0) : dims_(std::move(dims)) {
        check_dims(dims_);
        data_.assign(static_cast<std::size_t>(dims_volume(dims_)), fill);
    }

    Tensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
        check_dims(dims_);
        if (static_cast<std::int64_t>(data_.size()) != dims_volume(dims_))
            throw ContractError("tensor data length " + std::to_string(data_.size()) +
                                " does not match dims " + dims_string(dims_));
    }

    static Tensor matrix(std::int64_t rows, std::int64_t cols, double fill = 0.0) {
        return Tensor({rows, cols}, fill);
    }

    static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const auto r = static_cast<std::int64_t>(rows.size());
        const auto c = r ? static_cast<std::int64_t>(rows.begin()->size()) : 0;
        std::vector<double> data;
        for (const auto& row : rows) {
            if (static_cast<std::int64_t>(row.size()) != c) throw ContractError("ragged rows");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data));
    }

    const Dims& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t size() const { return data_.size(); }

    std::int64_t rows() const { return require_rank2(), dims_[0]; }
    std::int64_t cols() const { return require_rank2(), dims_[1]; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * dims_[1] + c)]; }
    double at(std::int64_t r, std::int64_t c) const {
        return data_[static_cast<std::size_t>(r * dims_[1] + c)];
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    Eigen::Map<RowMajor> mat() { return {data_.data(), rows(), cols()}; }
    Eigen::Map<const RowMajor> mat() const { return {data_.data(), rows(), cols()}; }

    bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

    /// Exact (bitwise-value) equality of dims and data.
    bool operator==(const Tensor& o) const = default;

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor& operator+=(const Tensor& o) {
        require_same(*this, o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    static void require_same(const Tensor& a, const Tensor& b, const char* op) {
        if (a.dims_ != b.dims_)
            throw ContractError(std::string(op) + ": shape mismatch " + dims_string(a.dims_) + " vs " +
                                dims_string(b.dims_));
    }

private:
    static void check_dims(const Dims& dims) {
        for (auto d : dims)
            if (d <= 0) throw ContractError("tensor dims must be positive, got " + dims_string(dims));
    }
    void require_rank2() const {
        if (dims_.size() != 2) throw ContractError("expected rank-2 tensor, got " + dims_string(dims_));
    }

    Dims dims_;
    std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    Tensor::require_same(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace gtd::num

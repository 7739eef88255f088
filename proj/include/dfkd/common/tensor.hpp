#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include <Eigen/Core>

#include "dfkd/common/errors.hpp"

namespace dfkd {

/// Dense row-major tensor. Shapes are dynamic; data is contiguous.
/// Interop with Eigen is via map views (mat(), vec()) so GEMM-heavy code can
/// stay allocation-free.
template <typename T>
class Tensor {
public:
    using Scalar = T;
    using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapRM = Eigen::Map<MatrixRM>;
    using ConstMapRM = Eigen::Map<const MatrixRM>;
    using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
    using ConstMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), T(0));
    }
    Tensor(std::initializer_list<std::size_t> shape) : Tensor(std::vector<std::size_t>(shape)) {}

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor from(std::vector<std::size_t> shape, std::vector<T> values) {
        if (count(shape) != values.size())
            throw DimensionError("Tensor::from: value count does not match shape");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(values);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    T& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    const T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void set_zero() { fill(T(0)); }

    void reshape(std::vector<std::size_t> shape) {
        if (count(shape) != data_.size())
            throw DimensionError("Tensor::reshape: element count mismatch");
        shape_ = std::move(shape);
    }

    void resize(std::vector<std::size_t> shape) {
        shape_ = std::move(shape);
        data_.assign(count(shape_), T(0));
    }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// 2-D Eigen view; the tensor must be rank 2 (or pass explicit rows/cols).
    MapRM mat() {
        require_rank2();
        return MapRM(data_.data(), static_cast<Eigen::Index>(shape_[0]),
                     static_cast<Eigen::Index>(shape_[1]));
    }
    ConstMapRM mat() const {
        require_rank2();
        return ConstMapRM(data_.data(), static_cast<Eigen::Index>(shape_[0]),
                          static_cast<Eigen::Index>(shape_[1]));
    }

    MapVec vec() { return MapVec(data_.data(), static_cast<Eigen::Index>(data_.size())); }
    ConstMapVec vec() const {
        return ConstMapVec(data_.data(), static_cast<Eigen::Index>(data_.size()));
    }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t(1),
                               std::multiplies<std::size_t>());
    }

private:
    void require_rank2() const {
        if (shape_.size() != 2) throw DimensionError("Tensor: rank-2 view on non-matrix");
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace dfkd

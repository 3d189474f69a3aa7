#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace clvae {

// Dense row-major tensor of doubles with a runtime shape. Value semantics;
// everything numeric in this library flows through it. Deliberately minimal:
// shape bookkeeping plus flat storage, no views, no broadcasting.
class NdArray {
public:
    NdArray() = default;
    explicit NdArray(std::vector<std::size_t> shape, double fill = 0.0);
    static NdArray from(std::vector<std::size_t> shape, std::vector<double> data);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const;
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t flat) { return data_[flat]; }
    double operator[](std::size_t flat) const { return data_[flat]; }

    // Multi-index accessors; slow path, intended for tests and setup code.
    double& at(std::initializer_list<std::size_t> idx);
    double at(std::initializer_list<std::size_t> idx) const;

    // Flat offset of a multi-index; no bounds check beyond rank.
    std::size_t offset(std::initializer_list<std::size_t> idx) const;

    // Reinterprets the buffer under a new shape of identical element count.
    NdArray reshaped(std::vector<std::size_t> shape) const&;
    NdArray reshaped(std::vector<std::size_t> shape) &&;

    bool same_shape(const NdArray& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    static std::string shape_string(const std::vector<std::size_t>& shape);
    std::string shape_string() const { return shape_string(shape_); }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

}  // namespace clvae

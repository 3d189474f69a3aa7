#include "clvae/ndarray.hpp"

#include <cmath>
#include <stdexcept>

namespace clvae {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

NdArray::NdArray(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

NdArray NdArray::from(std::vector<std::size_t> shape, std::vector<double> data) {
    if (shape_product(shape) != data.size())
        throw std::invalid_argument("NdArray::from: shape " + shape_string(shape) +
                                    " does not match " + std::to_string(data.size()) +
                                    " elements");
    NdArray a;
    a.shape_ = std::move(shape);
    a.data_ = std::move(data);
    return a;
}

std::size_t NdArray::dim(std::size_t axis) const {
    if (axis >= shape_.size())
        throw std::out_of_range("NdArray::dim: axis " + std::to_string(axis) +
                                " out of rank " + std::to_string(shape_.size()));
    return shape_[axis];
}

std::size_t NdArray::offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size())
        throw std::invalid_argument("NdArray::offset: index rank mismatch");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
        if (i >= shape_[axis])
            throw std::out_of_range("NdArray::offset: index " + std::to_string(i) +
                                    " out of bounds for axis " + std::to_string(axis));
        flat = flat * shape_[axis] + i;
        ++axis;
    }
    return flat;
}

double& NdArray::at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
double NdArray::at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

NdArray NdArray::reshaped(std::vector<std::size_t> shape) const& {
    if (shape_product(shape) != data_.size())
        throw std::invalid_argument("NdArray::reshaped: new shape " + shape_string(shape) +
                                    " incompatible with size " + std::to_string(data_.size()));
    NdArray a;
    a.shape_ = std::move(shape);
    a.data_ = data_;
    return a;
}

NdArray NdArray::reshaped(std::vector<std::size_t> shape) && {
    if (shape_product(shape) != data_.size())
        throw std::invalid_argument("NdArray::reshaped: new shape " + shape_string(shape) +
                                    " incompatible with size " + std::to_string(data_.size()));
    NdArray a;
    a.shape_ = std::move(shape);
    a.data_ = std::move(data_);
    return a;
}

bool NdArray::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string NdArray::shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace clvae

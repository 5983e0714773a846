#include "xraygan/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace xraygan {

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

bool shapes_equal(const Shape& a, const Shape& b) {
    return a == b;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    Shape out(std::max(a.size(), b.size()));
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        std::int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            throw std::invalid_argument("broadcast mismatch: " + shape_str(a) + " vs " + shape_str(b));
        }
        out[out.size() - 1 - i] = std::max(da, db);
    }
    return out;
}

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), 0.0) {
    for (auto d : shape_) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape_));
    }
}

Tensor::Tensor(Shape shape, double fill) : Tensor(std::move(shape)) {
    for (auto& v : data_) v = fill;
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw std::invalid_argument("data size does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::scalar(double v) {
    Tensor t{Shape{}};
    t.data_[0] = v;
    return t;
}

namespace {

std::int64_t flat_index(const Shape& shape, std::initializer_list<std::int64_t> idx) {
    if (idx.size() != shape.size()) {
        throw std::invalid_argument("index rank mismatch for shape " + shape_str(shape));
    }
    std::int64_t off = 0;
    std::size_t k = 0;
    for (auto i : idx) {
        off = off * shape[k] + i;
        ++k;
    }
    return off;
}

}  // namespace

double& Tensor::at(std::initializer_list<std::int64_t> idx) {
    return data_[static_cast<std::size_t>(flat_index(shape_, idx))];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
    return data_[static_cast<std::size_t>(flat_index(shape_, idx))];
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw std::logic_error("item() on tensor with numel " + std::to_string(data_.size()));
    }
    return data_[0];
}

Tensor Tensor::reshaped(Shape s) const {
    if (shape_numel(s) != numel()) {
        throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    }
    Tensor out;
    out.shape_ = std::move(s);
    out.data_ = data_;
    return out;
}

}  // namespace xraygan

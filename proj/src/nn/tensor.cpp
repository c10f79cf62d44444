#include "fedmark/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "fedmark/error.hpp"

namespace fedmark {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), values_(element_count(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (element_count(shape_) != values_.size()) {
        throw ShapeError("tensor of shape " + shape_string() + " cannot hold " +
                         std::to_string(values_.size()) + " values");
    }
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    if (rows.size() == 0) throw ShapeError("from_rows needs at least one row");
    const std::size_t cols = rows.begin()->size();
    std::vector<double> values;
    values.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        if (r.size() != cols) throw ShapeError("ragged rows in from_rows");
        values.insert(values.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(values));
}

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

std::size_t Tensor::rows() const {
    require_rank2(*this, "rows()");
    return shape_[0];
}

std::size_t Tensor::cols() const {
    require_rank2(*this, "cols()");
    return shape_[1];
}

std::span<double> Tensor::row(std::size_t r) {
    return std::span<double>(values_).subspan(r * shape_[1], shape_[1]);
}

std::span<const double> Tensor::row(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * shape_[1], shape_[1]);
}

bool Tensor::all_finite() const {
    for (double v : values_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
    require_rank2(*this, "gather_rows");
    const std::size_t c = shape_[1];
    std::vector<double> out;
    out.reserve(indices.size() * c);
    for (std::size_t i : indices) {
        if (i >= shape_[0]) throw ShapeError("gather_rows index out of range");
        auto r = row(i);
        out.insert(out.end(), r.begin(), r.end());
    }
    return Tensor({indices.size(), c}, std::move(out));
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ']';
    return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape " + a.shape_string() + " vs " +
                         b.shape_string());
    }
}

void require_rank2(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(what) + ": expected a 2-D tensor, got " + t.shape_string());
    }
}

}  // namespace fedmark

#include "wmsteer/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace wmsteer {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
        require(d >= 0, "negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(numel_of(shape_)), fill);
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    require(numel_of(shape) == static_cast<std::int64_t>(values.size()),
            "Tensor::from: " + shape_str(shape) + " does not hold " + std::to_string(values.size()) + " values");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.assign(values.begin(), values.end());
    return t;
}

std::int64_t Tensor::dim(std::int64_t i) const {
    if (i < 0) i += rank();
    require(i >= 0 && i < rank(), "dim index out of range for " + shape_str(shape_));
    return shape_[static_cast<std::size_t>(i)];
}

std::int64_t Tensor::offset(std::initializer_list<std::int64_t> idx) const {
    require(static_cast<std::int64_t>(idx.size()) == rank(),
            "index rank mismatch for " + shape_str(shape_));
    std::int64_t off = 0;
    std::size_t k = 0;
    for (std::int64_t i : idx) {
        off = off * shape_[k] + i;
        ++k;
    }
    return off;
}

Tensor Tensor::reshaped(Shape shape) const {
    require(numel_of(shape) == numel(),
            "reshape " + shape_str(shape_) + " -> " + shape_str(shape) + " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Tensor::mean() const {
    require(numel() > 0, "mean of empty tensor");
    return sum() / static_cast<double>(numel());
}

double Tensor::min() const {
    require(numel() > 0, "min of empty tensor");
    return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
    require(numel() > 0, "max of empty tensor");
    return *std::max_element(data_.begin(), data_.end());
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::describe() const {
    std::ostringstream os;
    os << "Tensor" << shape_str(shape_);
    if (numel() > 0) os << " mean=" << mean() << " min=" << min() << " max=" << max();
    return os.str();
}

namespace {

using MatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MutMatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void check_rank2(const Tensor& t, const char* who) {
    require(t.rank() == 2, std::string(who) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_rank2(a, "matmul");
    check_rank2(b, "matmul");
    require(a.dim(1) == b.dim(0),
            "matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor c(Shape{a.dim(0), b.dim(1)});
    MutMatMap(c.data(), a.dim(0), b.dim(1)).noalias() =
        MatMap(a.data(), a.dim(0), a.dim(1)) * MatMap(b.data(), b.dim(0), b.dim(1));
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    check_rank2(a, "matmul_tn");
    check_rank2(b, "matmul_tn");
    require(a.dim(0) == b.dim(0),
            "matmul_tn: inner dimensions differ, " + shape_str(a.shape()) + "^T x " + shape_str(b.shape()));
    Tensor c(Shape{a.dim(1), b.dim(1)});
    MutMatMap(c.data(), a.dim(1), b.dim(1)).noalias() =
        MatMap(a.data(), a.dim(0), a.dim(1)).transpose() * MatMap(b.data(), b.dim(0), b.dim(1));
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    check_rank2(a, "matmul_nt");
    check_rank2(b, "matmul_nt");
    require(a.dim(1) == b.dim(1),
            "matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
    Tensor c(Shape{a.dim(0), b.dim(0)});
    MutMatMap(c.data(), a.dim(0), b.dim(0)).noalias() =
        MatMap(a.data(), a.dim(0), a.dim(1)) * MatMap(b.data(), b.dim(0), b.dim(1)).transpose();
    return c;
}

}  // namespace wmsteer

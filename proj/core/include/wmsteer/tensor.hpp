#pragma once

/* Dense row-major double tensor.
 *
 * Everything numeric in this project (videos, latents, network activations)
 * flows through this one type.  It is deliberately simple: owning storage,
 * explicit shapes, no views, no broadcasting magic.  Matrix products are
 * delegated to Eigen; every allocation is counted so experiments can report
 * peak working-set sizes.
 */

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "wmsteer/common.hpp"

namespace wmsteer {

namespace memstat {

namespace detail {
inline std::atomic<std::size_t>& current_bytes() {
    static std::atomic<std::size_t> v{0};
    return v;
}
inline std::atomic<std::size_t>& peak_bytes() {
    static std::atomic<std::size_t> v{0};
    return v;
}
}  // namespace detail

inline void on_alloc(std::size_t bytes) {
    std::size_t cur = detail::current_bytes().fetch_add(bytes) + bytes;
    std::size_t peak = detail::peak_bytes().load();
    while (cur > peak && !detail::peak_bytes().compare_exchange_weak(peak, cur)) {
    }
}
inline void on_free(std::size_t bytes) { detail::current_bytes().fetch_sub(bytes); }
inline std::size_t current() { return detail::current_bytes().load(); }
inline std::size_t peak() { return detail::peak_bytes().load(); }
inline void reset_peak() { detail::peak_bytes().store(current()); }

}  // namespace memstat

template <class T>
struct TrackingAllocator {
    using value_type = T;
    TrackingAllocator() = default;
    template <class U>
    TrackingAllocator(const TrackingAllocator<U>&) {}

    T* allocate(std::size_t n) {
        memstat::on_alloc(n * sizeof(T));
        return std::allocator<T>{}.allocate(n);
    }
    void deallocate(T* p, std::size_t n) {
        std::allocator<T>{}.deallocate(p, n);
        memstat::on_free(n * sizeof(T));
    }
    friend bool operator==(const TrackingAllocator&, const TrackingAllocator&) { return true; }
};

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);

class Tensor {
public:
    using Buffer = std::vector<double, TrackingAllocator<double>>;

    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);

    static Tensor scalar(double v) { return Tensor(Shape{}, v); }
    static Tensor from(Shape shape, std::vector<double> values);

    const Shape& shape() const { return shape_; }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t dim(std::int64_t i) const;
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    double& at(std::initializer_list<std::int64_t> idx) { return data_[static_cast<std::size_t>(offset(idx))]; }
    double at(std::initializer_list<std::int64_t> idx) const { return data_[static_cast<std::size_t>(offset(idx))]; }

    // Reinterprets the buffer with a new shape of identical element count.
    Tensor reshaped(Shape shape) const;

    void fill(double v);
    double sum() const;
    double mean() const;
    double min() const;
    double max() const;
    bool all_finite() const;

    std::string describe() const;

private:
    std::int64_t offset(std::initializer_list<std::int64_t> idx) const;

    Shape shape_;
    Buffer data_;
};

std::int64_t numel_of(const Shape& shape);

// C = A @ B for rank-2 tensors, [m,k] x [k,n] -> [m,n].  Uses Eigen.
Tensor matmul(const Tensor& a, const Tensor& b);
// C = A @ B with optional transposes; shapes checked after transposition.
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // A^T @ B
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // A @ B^T

}  // namespace wmsteer

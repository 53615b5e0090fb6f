#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "error.hpp"

namespace spnn {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Deterministic random source. Normal draws use Box-Muller on raw mt19937_64
// output so sequences are identical across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    double uniform();                 // [0, 1)
    double uniform(double lo, double hi);
    double normal();                  // standard normal
    uint64_t integer(uint64_t n);     // [0, n)
    uint64_t raw() { return gen_(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(integer(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Dense row-major tensor of 64-bit floats. Value semantics throughout; a
// rank-0 shape holds exactly one element.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);
    static Tensor scalar(double v);
    static Tensor zeros(Shape shape);
    static Tensor ones(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor normal(Shape shape, Rng& rng, double mean = 0.0, double std = 1.0);
    static Tensor uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0);

    const Shape& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t numel() const { return data_.size(); }
    size_t dim(size_t i) const { return shape_.at(i); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }
    double& at(std::initializer_list<size_t> idx);
    double at(std::initializer_list<size_t> idx) const;

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool equals(const Tensor& o) const;  // bitwise on shape and data

    Tensor reshaped(Shape shape) const;

    // In-place helpers (elementwise, shape-strict).
    Tensor& add_(const Tensor& o);
    Tensor& sub_(const Tensor& o);
    Tensor& mul_(const Tensor& o);
    Tensor& scale_(double c);
    Tensor& shift_(double c);
    Tensor& clamp_(double lo, double hi);
    Tensor& fill_(double v);
    Tensor& map_(const std::function<double(double)>& f);

    double sum() const;
    double min() const;
    double max() const;
    double abs_max() const;
    double l1_norm() const;
    double l2_norm() const;
    bool all_finite() const;

    // Largest index per row of a [rows, cols] tensor; ties resolve to the
    // lowest index.
    std::vector<size_t> argmax_rows() const;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Out-of-place arithmetic with numpy-style trailing broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Shape broadcast_shape(const Shape& a, const Shape& b);
// Sum `t` down to `target` (inverse of broadcasting), used by gradient code.
Tensor reduce_to_shape(const Tensor& t, const Shape& target);

// mm_nn: [m,k]x[k,n]; mm_nt: A[m,k], B[n,k] -> A*B^T; mm_tn: A[k,m], B[k,n] -> A^T*B.
Tensor mm_nn(const Tensor& a, const Tensor& b);
Tensor mm_nt(const Tensor& a, const Tensor& b);
Tensor mm_tn(const Tensor& a, const Tensor& b);

// 2-D convolution, stride 1, zero padding. x [N,C,H,W], w [F,C,kh,kw].
Tensor conv2d_forward(const Tensor& x, const Tensor& w, size_t pad);
Tensor conv2d_grad_input(const Tensor& gout, const Tensor& w, const Shape& x_shape, size_t pad);
Tensor conv2d_grad_weight(const Tensor& gout, const Tensor& x, const Shape& w_shape, size_t pad);

}  // namespace spnn

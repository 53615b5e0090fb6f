#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace spnn {

const char* category_name(ErrorCategory cat) {
    switch (cat) {
        case ErrorCategory::invalid_arg: return "invalid_arg";
        case ErrorCategory::config: return "config";
        case ErrorCategory::io: return "io";
        case ErrorCategory::format: return "format";
        case ErrorCategory::shape: return "shape";
        case ErrorCategory::state: return "state";
        case ErrorCategory::numeric: return "numeric";
        case ErrorCategory::internal: return "internal";
    }
    return "unknown";
}

size_t shape_numel(const Shape& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

double Rng::uniform() {
    // 53 random bits -> [0, 1)
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

uint64_t Rng::integer(uint64_t n) {
    if (n == 0) throw Error::invalid_arg("Rng::integer: n must be positive");
    // rejection sampling keeps the distribution exact
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return x % n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
        throw Error::shape("Tensor: shape " + shape_str(shape_) + " does not match data length " +
                           std::to_string(data_.size()));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    t.fill_(v);
    return t;
}

Tensor Tensor::normal(Shape shape, Rng& rng, double mean, double std) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = mean + std * rng.normal();
    return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = rng.uniform(lo, hi);
    return t;
}

static size_t flat_index(const Shape& shape, std::initializer_list<size_t> idx) {
    if (idx.size() != shape.size()) throw Error::shape("Tensor::at: index rank mismatch");
    size_t flat = 0;
    size_t i = 0;
    for (size_t v : idx) {
        if (v >= shape[i]) throw Error::shape("Tensor::at: index out of range");
        flat = flat * shape[i] + v;
        ++i;
    }
    return flat;
}

double& Tensor::at(std::initializer_list<size_t> idx) { return data_[flat_index(shape_, idx)]; }
double Tensor::at(std::initializer_list<size_t> idx) const { return data_[flat_index(shape_, idx)]; }

bool Tensor::equals(const Tensor& o) const {
    return shape_ == o.shape_ &&
           std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(double)) == 0;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
        throw Error::shape("reshape: " + shape_str(shape_) + " -> " + shape_str(shape) +
                           " changes element count");
    return Tensor(std::move(shape), data_);
}

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw Error::shape(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                           shape_str(b.shape()));
}

Tensor& Tensor::add_(const Tensor& o) {
    check_same_shape(*this, o, "add_");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::sub_(const Tensor& o) {
    check_same_shape(*this, o, "sub_");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Tensor& Tensor::mul_(const Tensor& o) {
    check_same_shape(*this, o, "mul_");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] *= o.data_[i];
    return *this;
}

Tensor& Tensor::scale_(double c) {
    for (double& x : data_) x *= c;
    return *this;
}

Tensor& Tensor::shift_(double c) {
    for (double& x : data_) x += c;
    return *this;
}

Tensor& Tensor::clamp_(double lo, double hi) {
    for (double& x : data_) x = std::min(hi, std::max(lo, x));
    return *this;
}

Tensor& Tensor::fill_(double v) {
    std::fill(data_.begin(), data_.end(), v);
    return *this;
}

Tensor& Tensor::map_(const std::function<double(double)>& f) {
    for (double& x : data_) x = f(x);
    return *this;
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::min() const {
    if (data_.empty()) throw Error::invalid_arg("Tensor::min on empty tensor");
    return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
    if (data_.empty()) throw Error::invalid_arg("Tensor::max on empty tensor");
    return *std::max_element(data_.begin(), data_.end());
}

double Tensor::abs_max() const {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::fabs(x));
    return m;
}

double Tensor::l1_norm() const {
    double s = 0.0;
    for (double x : data_) s += std::fabs(x);
    return s;
}

double Tensor::l2_norm() const {
    double s = 0.0;
    for (double x : data_) s += x * x;
    return std::sqrt(s);
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

std::vector<size_t> Tensor::argmax_rows() const {
    if (rank() != 2) throw Error::shape("argmax_rows: expected rank-2 tensor, got " + shape_str(shape_));
    size_t rows = shape_[0], cols = shape_[1];
    std::vector<size_t> out(rows, 0);
    for (size_t r = 0; r < rows; ++r) {
        const double* p = data_.data() + r * cols;
        size_t best = 0;
        for (size_t c = 1; c < cols; ++c)
            if (p[c] > p[best]) best = c;
        out[r] = best;
    }
    return out;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (size_t i = 0; i < rank; ++i) {
        size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1)
            throw Error::shape("broadcast: incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

namespace {

// Strides of `shape` expanded to broadcast over `out_shape` (0 on broadcast axes).
std::vector<size_t> broadcast_strides(const Shape& shape, const Shape& out_shape) {
    std::vector<size_t> strides(out_shape.size(), 0);
    size_t stride = 1;
    size_t off = out_shape.size() - shape.size();
    for (size_t i = shape.size(); i-- > 0;) {
        if (shape[i] != 1) strides[off + i] = stride;
        stride *= shape[i];
    }
    return strides;
}

template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F f, const char* name) {
    if (a.same_shape(b)) {
        Tensor out(a.shape());
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        for (size_t i = 0; i < a.numel(); ++i) po[i] = f(pa[i], pb[i]);
        return out;
    }
    Shape os;
    try {
        os = broadcast_shape(a.shape(), b.shape());
    } catch (const Error&) {
        throw Error::shape(std::string(name) + ": incompatible shapes " + shape_str(a.shape()) +
                           " vs " + shape_str(b.shape()));
    }
    Tensor out(os);
    auto sa = broadcast_strides(a.shape(), os);
    auto sb = broadcast_strides(b.shape(), os);
    size_t rank = os.size();
    std::vector<size_t> idx(rank, 0);
    size_t ia = 0, ib = 0;
    double* po = out.data();
    const double* pa = a.data();
    const double* pb = b.data();
    for (size_t o = 0; o < out.numel(); ++o) {
        po[o] = f(pa[ia], pb[ib]);
        for (size_t d = rank; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < os[d]) break;
            idx[d] = 0;
            ia -= sa[d] * os[d];
            ib -= sb[d] * os[d];
        }
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return broadcast_binary(a, b, [](double x, double y) { return x + y; }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return broadcast_binary(a, b, [](double x, double y) { return x - y; }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return broadcast_binary(a, b, [](double x, double y) { return x * y; }, "mul");
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    out.scale_(c);
    return out;
}

Tensor reduce_to_shape(const Tensor& t, const Shape& target) {
    if (t.shape() == target) return t;
    size_t rank = t.rank();
    size_t off = rank - target.size();
    Shape tshape = t.shape();
    // Verify target is broadcast-compatible.
    for (size_t i = 0; i < target.size(); ++i)
        if (target[i] != tshape[off + i] && target[i] != 1)
            throw Error::shape("reduce_to_shape: " + shape_str(tshape) + " -> " + shape_str(target));
    Tensor out(target);
    auto strides = broadcast_strides(target, tshape);
    std::vector<size_t> idx(rank, 0);
    size_t io = 0;
    const double* pt = t.data();
    double* po = out.data();
    for (size_t i = 0; i < t.numel(); ++i) {
        po[io] += pt[i];
        for (size_t d = rank; d-- > 0;) {
            ++idx[d];
            io += strides[d];
            if (idx[d] < tshape[d]) break;
            idx[d] = 0;
            io -= strides[d] * tshape[d];
        }
    }
    return out;
}

static void check_mm(const Tensor& a, const Tensor& b, const char* name) {
    if (a.rank() != 2 || b.rank() != 2)
        throw Error::shape(std::string(name) + ": expected rank-2 operands, got " +
                           shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

Tensor mm_nn(const Tensor& a, const Tensor& b) {
    check_mm(a, b, "matmul");
    size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw Error::shape("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                           shape_str(b.shape()));
    Tensor c({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    for (size_t i = 0; i < m; ++i) {
        double* ci = pc + i * n;
        const double* ai = pa + i * k;
        for (size_t kk = 0; kk < k; ++kk) {
            double av = ai[kk];
            if (av == 0.0) continue;
            const double* bk = pb + kk * n;
            for (size_t j = 0; j < n; ++j) ci[j] += av * bk[j];
        }
    }
    return c;
}

Tensor mm_nt(const Tensor& a, const Tensor& b) {
    check_mm(a, b, "matmul_nt");
    size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k)
        throw Error::shape("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                           shape_str(b.shape()) + "^T");
    Tensor c({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    for (size_t i = 0; i < m; ++i) {
        const double* ai = pa + i * k;
        double* ci = pc + i * n;
        for (size_t j = 0; j < n; ++j) {
            const double* bj = pb + j * k;
            double s = 0.0;
            for (size_t kk = 0; kk < k; ++kk) s += ai[kk] * bj[kk];
            ci[j] = s;
        }
    }
    return c;
}

Tensor mm_tn(const Tensor& a, const Tensor& b) {
    check_mm(a, b, "matmul_tn");
    size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw Error::shape("matmul_tn: inner dimensions disagree, " + shape_str(a.shape()) + "^T x " +
                           shape_str(b.shape()));
    Tensor c({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    for (size_t kk = 0; kk < k; ++kk) {
        const double* ak = pa + kk * m;
        const double* bk = pb + kk * n;
        for (size_t i = 0; i < m; ++i) {
            double av = ak[i];
            if (av == 0.0) continue;
            double* ci = pc + i * n;
            for (size_t j = 0; j < n; ++j) ci[j] += av * bk[j];
        }
    }
    return c;
}

static void check_conv_shapes(const Shape& xs, const Shape& ws) {
    if (xs.size() != 4 || ws.size() != 4)
        throw Error::shape("conv2d: expected x [N,C,H,W] and w [F,C,kh,kw], got " + shape_str(xs) +
                           " and " + shape_str(ws));
    if (xs[1] != ws[1])
        throw Error::shape("conv2d: input channels " + std::to_string(xs[1]) +
                           " do not match kernel channels " + std::to_string(ws[1]));
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, size_t pad) {
    check_conv_shapes(x.shape(), w.shape());
    size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    size_t F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (H + 2 * pad < kh || W + 2 * pad < kw)
        throw Error::shape("conv2d: kernel larger than padded input");
    size_t Ho = H + 2 * pad - kh + 1, Wo = W + 2 * pad - kw + 1;
    Tensor out({N, F, Ho, Wo});
    const double* px = x.data();
    const double* pw = w.data();
    double* po = out.data();
    for (size_t n = 0; n < N; ++n) {
        for (size_t f = 0; f < F; ++f) {
            double* o_nf = po + (n * F + f) * Ho * Wo;
            for (size_t c = 0; c < C; ++c) {
                const double* x_nc = px + (n * C + c) * H * W;
                const double* w_fc = pw + (f * C + c) * kh * kw;
                for (size_t ky = 0; ky < kh; ++ky) {
                    for (size_t kx = 0; kx < kw; ++kx) {
                        double wv = w_fc[ky * kw + kx];
                        if (wv == 0.0) continue;
                        for (size_t oy = 0; oy < Ho; ++oy) {
                            // input row = oy + ky - pad
                            long iy = static_cast<long>(oy + ky) - static_cast<long>(pad);
                            if (iy < 0 || iy >= static_cast<long>(H)) continue;
                            const double* xrow = x_nc + iy * W;
                            double* orow = o_nf + oy * Wo;
                            for (size_t ox = 0; ox < Wo; ++ox) {
                                long ix = static_cast<long>(ox + kx) - static_cast<long>(pad);
                                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                orow[ox] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor conv2d_grad_input(const Tensor& gout, const Tensor& w, const Shape& x_shape, size_t pad) {
    size_t N = x_shape[0], C = x_shape[1], H = x_shape[2], W = x_shape[3];
    size_t F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    size_t Ho = gout.dim(2), Wo = gout.dim(3);
    Tensor gx(x_shape);
    const double* pg = gout.data();
    const double* pw = w.data();
    double* px = gx.data();
    for (size_t n = 0; n < N; ++n) {
        for (size_t f = 0; f < F; ++f) {
            const double* g_nf = pg + (n * F + f) * Ho * Wo;
            for (size_t c = 0; c < C; ++c) {
                double* x_nc = px + (n * C + c) * H * W;
                const double* w_fc = pw + (f * C + c) * kh * kw;
                for (size_t ky = 0; ky < kh; ++ky) {
                    for (size_t kx = 0; kx < kw; ++kx) {
                        double wv = w_fc[ky * kw + kx];
                        if (wv == 0.0) continue;
                        for (size_t oy = 0; oy < Ho; ++oy) {
                            long iy = static_cast<long>(oy + ky) - static_cast<long>(pad);
                            if (iy < 0 || iy >= static_cast<long>(H)) continue;
                            const double* grow = g_nf + oy * Wo;
                            double* xrow = x_nc + iy * W;
                            for (size_t ox = 0; ox < Wo; ++ox) {
                                long ix = static_cast<long>(ox + kx) - static_cast<long>(pad);
                                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                xrow[ix] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    return gx;
}

Tensor conv2d_grad_weight(const Tensor& gout, const Tensor& x, const Shape& w_shape, size_t pad) {
    size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    size_t F = w_shape[0], kh = w_shape[2], kw = w_shape[3];
    size_t Ho = gout.dim(2), Wo = gout.dim(3);
    Tensor gw(w_shape);
    const double* pg = gout.data();
    const double* px = x.data();
    double* pw = gw.data();
    for (size_t n = 0; n < N; ++n) {
        for (size_t f = 0; f < F; ++f) {
            const double* g_nf = pg + (n * F + f) * Ho * Wo;
            for (size_t c = 0; c < C; ++c) {
                const double* x_nc = px + (n * C + c) * H * W;
                double* w_fc = pw + (f * C + c) * kh * kw;
                for (size_t ky = 0; ky < kh; ++ky) {
                    for (size_t kx = 0; kx < kw; ++kx) {
                        double s = w_fc[ky * kw + kx];
                        for (size_t oy = 0; oy < Ho; ++oy) {
                            long iy = static_cast<long>(oy + ky) - static_cast<long>(pad);
                            if (iy < 0 || iy >= static_cast<long>(H)) continue;
                            const double* grow = g_nf + oy * Wo;
                            const double* xrow = x_nc + iy * W;
                            for (size_t ox = 0; ox < Wo; ++ox) {
                                long ix = static_cast<long>(ox + kx) - static_cast<long>(pad);
                                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                s += grow[ox] * xrow[ix];
                            }
                        }
                        w_fc[ky * kw + kx] = s;
                    }
                }
            }
        }
    }
    return gw;
}

}  // namespace spnn

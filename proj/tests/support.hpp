#pragma once

// Shared oracles for the test suites. Everything in here is independent of
// the implementation paths it checks: finite differences use forward
// evaluation only, and the dense linear-algebra helpers are self-contained.

#include <cmath>
#include <functional>
#include <vector>

#include "autodiff.hpp"
#include "tensor.hpp"

namespace testsup {

using spnn::Tensor;

// Central finite-difference gradient of a scalar function of one tensor.
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                          double h = 1e-5) {
    Tensor g(x.shape());
    Tensor xp = x;
    for (size_t i = 0; i < x.numel(); ++i) {
        double orig = xp[i];
        xp[i] = orig + h;
        double fp = f(xp);
        xp[i] = orig - h;
        double fm = f(xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Max elementwise error, relative with a floor of 1 so near-zero gradients
// are compared absolutely.
inline double grad_error(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return 1e30;
    double worst = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) {
        double denom = std::max({1.0, std::fabs(a[i]), std::fabs(b[i])});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

// Dense Hessian by second-order central differences of loss values only.
inline std::vector<std::vector<double>> fd_hessian(
    const std::function<double(const std::vector<double>&)>& loss, const std::vector<double>& w,
    double h = 5e-4) {
    size_t n = w.size();
    std::vector<std::vector<double>> H(n, std::vector<double>(n, 0.0));
    std::vector<double> p = w;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < n; ++j) {
            p = w;
            p[i] += h;
            p[j] += h;
            double fpp = loss(p);
            p = w;
            p[i] += h;
            p[j] -= h;
            double fpm = loss(p);
            p = w;
            p[i] -= h;
            p[j] += h;
            double fmp = loss(p);
            p = w;
            p[i] -= h;
            p[j] -= h;
            double fmm = loss(p);
            H[i][j] = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
        }
    }
    return H;
}

// Largest singular value via symmetric Jacobi eigensolver on A^T A.
// Self-contained; used as the SVD oracle for Lipschitz tests.
inline double svd_largest(const std::vector<std::vector<double>>& a) {
    size_t m = a.size();
    size_t n = a.empty() ? 0 : a[0].size();
    std::vector<std::vector<double>> s(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (size_t k = 0; k < m; ++k) acc += a[k][i] * a[k][j];
            s[i][j] = acc;
        }
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = i + 1; j < n; ++j) off += s[i][j] * s[i][j];
        if (off < 1e-24) break;
        for (size_t p = 0; p < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                if (std::fabs(s[p][q]) < 1e-300) continue;
                double theta = (s[q][q] - s[p][p]) / (2.0 * s[p][q]);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double sn = t * c;
                for (size_t k = 0; k < n; ++k) {
                    double skp = s[k][p], skq = s[k][q];
                    s[k][p] = c * skp - sn * skq;
                    s[k][q] = sn * skp + c * skq;
                }
                for (size_t k = 0; k < n; ++k) {
                    double spk = s[p][k], sqk = s[q][k];
                    s[p][k] = c * spk - sn * sqk;
                    s[q][k] = sn * spk + c * sqk;
                }
            }
        }
    }
    double lmax = 0.0;
    for (size_t i = 0; i < n; ++i) lmax = std::max(lmax, s[i][i]);
    return std::sqrt(std::max(0.0, lmax));
}

}  // namespace testsup

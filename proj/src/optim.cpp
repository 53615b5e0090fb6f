#include "optim.hpp"

#include <cmath>

namespace spnn {

Optimizer::Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {
    if (lr <= 0.0) throw Error::invalid_arg("Optimizer: learning rate must be positive");
}

void Optimizer::step(std::vector<Tensor*> params, const std::vector<Tensor>& grads,
                     const std::vector<const Tensor*>& masks) {
    if (params.size() != grads.size())
        throw Error::shape("Optimizer::step: params/grads count mismatch");
    if (!masks.empty() && masks.size() != params.size())
        throw Error::shape("Optimizer::step: params/masks count mismatch");

    if (kind_ == OptimizerKind::adam && m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (Tensor* p : params) {
            m_.push_back(Tensor::zeros(p->shape()));
            v_.push_back(Tensor::zeros(p->shape()));
        }
    }
    if (kind_ == OptimizerKind::adam && m_.size() != params.size())
        throw Error::state("Optimizer::step: parameter list changed between steps");

    ++step_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));

    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        if (!p.same_shape(g))
            throw Error::shape("Optimizer::step: grad shape " + shape_str(g.shape()) +
                               " does not match param shape " + shape_str(p.shape()));
        const Tensor* mask = masks.empty() ? nullptr : masks[i];
        if (mask && !mask->same_shape(p))
            throw Error::shape("Optimizer::step: mask shape mismatch");

        if (kind_ == OptimizerKind::sgd) {
            for (size_t j = 0; j < p.numel(); ++j) {
                double gj = mask ? g[j] * (*mask)[j] : g[j];
                p[j] -= lr_ * gj;
            }
        } else {
            Tensor& m = m_[i];
            Tensor& v = v_[i];
            for (size_t j = 0; j < p.numel(); ++j) {
                double gj = mask ? g[j] * (*mask)[j] : g[j];
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
        if (mask) {
            for (size_t j = 0; j < p.numel(); ++j) {
                if ((*mask)[j] == 0.0) p[j] = 0.0;
            }
        }
    }
}

std::vector<Tensor> Optimizer::state() const {
    std::vector<Tensor> out;
    out.push_back(Tensor::scalar(static_cast<double>(step_)));
    for (const Tensor& t : m_) out.push_back(t);
    for (const Tensor& t : v_) out.push_back(t);
    return out;
}

void Optimizer::set_state(const std::vector<Tensor>& state) {
    if (state.empty()) throw Error::invalid_arg("Optimizer::set_state: empty state");
    step_ = static_cast<size_t>(state[0][0]);
    size_t n = (state.size() - 1) / 2;
    m_.assign(state.begin() + 1, state.begin() + 1 + static_cast<long>(n));
    v_.assign(state.begin() + 1 + static_cast<long>(n), state.end());
}

void Optimizer::reset() {
    step_ = 0;
    m_.clear();
    v_.clear();
}

}  // namespace spnn

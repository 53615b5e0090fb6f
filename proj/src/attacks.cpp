#include "attacks.hpp"

#include <cmath>

namespace spnn::attack {

namespace ops = spnn::ad;

Tensor fgsm(const nn::Model& model, const Tensor& batch, const std::vector<size_t>& labels,
            const AttackSpec& spec) {
    if (labels.empty()) throw Error::invalid_arg("fgsm: labels missing");
    if (labels.size() != batch.dim(0)) throw Error::shape("fgsm: label count mismatch");
    if (spec.epsilon <= 0.0) throw Error::invalid_arg("fgsm: epsilon must be positive");

    ad::Tape tape;
    nn::Model::Bindings b = model.bind(tape, batch, /*input_differentiable=*/true);
    ad::Var loss =
        ops::cross_entropy(b.logits, tape.constant(ad::onehot(labels, model.spec().classes)));
    ad::GradMap grads = tape.backward(loss);
    Tensor g = grads.at(b.input);

    Tensor adv = batch;
    size_t n = batch.dim(0);
    size_t stride = batch.numel() / n;
    if (spec.norm == AttackNorm::linf) {
        for (size_t i = 0; i < adv.numel(); ++i) {
            double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
            adv[i] += spec.epsilon * s;
        }
    } else {
        for (size_t r = 0; r < n; ++r) {
            double* row = adv.data() + r * stride;
            const double* gr = g.data() + r * stride;
            double norm = 0.0;
            for (size_t j = 0; j < stride; ++j) norm += gr[j] * gr[j];
            norm = std::sqrt(norm);
            if (norm == 0.0) continue;  // zero gradient: zero perturbation
            double c = spec.epsilon / norm;
            for (size_t j = 0; j < stride; ++j) row[j] += c * gr[j];
        }
    }
    adv.clamp_(spec.clamp_lo, spec.clamp_hi);
    return adv;
}

}  // namespace spnn::attack

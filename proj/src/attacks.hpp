#pragma once

#include "models.hpp"

namespace spnn::attack {

enum class AttackNorm { linf, l2 };

struct AttackSpec {
    AttackNorm norm = AttackNorm::linf;
    double epsilon = 8.0 / 255.0;  // in the input's value scale
    double clamp_lo = 0.0;
    double clamp_hi = 1.0;
};

// One-step FGSM: linf adds epsilon * sign(input gradient) coordinate-wise
// (sign(0) = 0); l2 adds epsilon * g/||g||_2 with per-sample normalization.
// The result is clamped to the spec's range.
Tensor fgsm(const nn::Model& model, const Tensor& batch, const std::vector<size_t>& labels,
            const AttackSpec& spec);

}  // namespace spnn::attack

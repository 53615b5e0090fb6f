#pragma once

#include "data.hpp"
#include "models.hpp"

namespace spnn::detect {

// Loss whose weight sensitivities w * dL/dw drive the detector. The default
// scores test batches against the model's own argmax predictions so train
// and test scoring stay structurally identical; the KL variant needs no
// labels on either side.
enum class SensLoss { pseudo_label, kl_uniform };

struct SensitivityProfile {
    std::vector<Tensor> mu;     // per-weight mean of w * dL/dw over train batches
    std::vector<Tensor> sigma;  // element-wise sample std over train batches
    size_t batch_size = 0;
    double p = 5.0;
    double sigma_floor = 1e-8;
    SensLoss loss = SensLoss::pseudo_label;
};

// Raw per-weight sensitivities g_i = w_i * dL/dw_i of one batch (signed, no
// absolute value), one tensor per model parameter. With pseudo_label the
// loss is mean-reduced cross-entropy against `labels` when given, else
// against the model's argmax predictions.
std::vector<Tensor> batch_sensitivity(const nn::Model& model, const Tensor& batch,
                                      const std::vector<size_t>* labels, SensLoss loss);

// Accumulates mean and std of batch sensitivities over all full train
// batches (trailing partial batch dropped so the batch size stays fixed).
// Fitting uses the true train labels under pseudo_label.
SensitivityProfile fit_profile(const nn::Model& model, const data::Dataset& train,
                               size_t batch_size, double p = 5.0,
                               SensLoss loss = SensLoss::pseudo_label,
                               double sigma_floor = 1e-8);

// S = || (g - mu) / max(sigma, floor) ||_p over all weights.
double sensnorm_score(const nn::Model& model, const SensitivityProfile& profile,
                      const Tensor& batch);

// Single-sample scoring via an augmented batch: the sample plus K augmented
// copies (rotations 90/180/270, horizontal/vertical flips, then small random
// affines: rotation within +-15 degrees, translation within +-2 pixels).
// The profile should be fitted at batch size K+1.
double sensnorm_single(const nn::Model& model, const SensitivityProfile& profile,
                       const Tensor& sample, size_t augmentations, uint64_t seed);

// The augmented batch itself (exposed for tests and the CLI).
Tensor augment_sample(const Tensor& sample, size_t augmentations, uint64_t seed);

// Per-sample max softmax probability; batch-level score is the mean.
std::vector<double> msp_scores(const Tensor& probabilities);
double msp_batch_score(const Tensor& probabilities);

// L1 norm of the gradient of mean KL(softmax(f(X)), uniform) w.r.t. the
// final dense layer's weights. Higher = more in-distribution.
double gradnorm_score(const nn::Model& model, const Tensor& batch);

}  // namespace spnn::detect

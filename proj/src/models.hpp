#pragma once

#include <string>

#include "autodiff.hpp"
#include "tensor.hpp"

namespace spnn::nn {

enum class LayerKind { dense, conv, relu, pool, flatten };

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
    LayerKind kind;
    size_t units = 0;     // dense: output units
    size_t channels = 0;  // conv: output channels
    size_t kernel = 0;    // conv: square kernel size
    size_t pad = 0;       // conv: zero padding

    static LayerSpec dense(size_t units) { return {LayerKind::dense, units, 0, 0, 0}; }
    static LayerSpec conv(size_t channels, size_t kernel, size_t pad = 0) {
        return {LayerKind::conv, 0, channels, kernel, pad};
    }
    static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0, 0}; }
    static LayerSpec pool() { return {LayerKind::pool, 0, 0, 0, 0}; }
    static LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 0, 0}; }
};

struct ModelSpec {
    Shape input_shape;  // without batch dim, e.g. {784} or {1,28,28}
    std::vector<LayerSpec> layers;
    size_t classes = 0;
    uint64_t init_seed = 0;
    bool bayesian = false;
};

// 784-style flat input -> 300 -> 100 -> classes, relu activations.
ModelSpec mlp3(size_t inputs, size_t classes, uint64_t seed, bool bayesian = false);
// Two conv blocks (conv-relu-pool) followed by two dense layers.
ModelSpec conv_s(const Shape& input_shape, size_t classes, uint64_t seed, bool bayesian = false);

// Throws a shape error naming the first offending layer pair if the spec
// does not compose; returns the per-layer output shapes otherwise.
std::vector<Shape> infer_layer_shapes(const ModelSpec& spec);

struct Param {
    std::string name;
    Tensor value;  // weight, or posterior mean for bayesian models
    Tensor rho;    // bayesian: std = softplus(rho); empty otherwise
    Tensor mask;
    size_t layer = 0;  // index into spec().layers
    bool is_bias = false;
};

// Output-unit grouping of one weight layer, used by structured pruning.
struct UnitGroup {
    size_t weight_param;
    size_t bias_param;
    size_t units;             // rows of a dense weight / out-channels of a conv kernel
    size_t weights_per_unit;  // flat weight elements per unit (excluding bias)
    bool is_output_layer;     // final classifier layer
};

class Model {
public:
    static Model build(const ModelSpec& spec);

    const ModelSpec& spec() const { return spec_; }
    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    size_t param_count() const;
    size_t masked_out_count() const;
    double sparsity() const;  // 1 - kept/total over masks
    std::vector<UnitGroup> unit_groups() const;

    // Zero out weights wherever the mask is zero (mask contract).
    void apply_masks();

    struct Bindings {
        ad::Var input;
        ad::Var logits;
        std::vector<ad::Var> leaves;      // per param, the differentiable leaf
        std::vector<ad::Var> rho_leaves;  // parallel; only bound by bayesian providers
    };

    // Produces the effective weight var for one parameter; used to swap in
    // straight-through masks (edge-popup) or sampled bayesian weights.
    using ParamProvider = std::function<ad::Var(ad::Tape&, size_t param_idx, Bindings&)>;

    Bindings bind(ad::Tape& tape, const Tensor& batch, bool input_differentiable = false,
                  const ParamProvider& provider = {}) const;

    Tensor logits(const Tensor& batch) const;
    Tensor predict(const Tensor& batch) const;  // rows are softmax distributions

    // Monte-Carlo average of n_samples sampled-weight predictions
    // (w = mean + softplus(rho) * eps, masked entries contribute exactly 0).
    Tensor bayesian_predict(const Tensor& batch, size_t n_samples, Rng& rng) const;

    // Variational loss: cross-entropy of one sampled forward pass plus
    // kl_weight * sum over unmasked weights of KL(N(mu, t^2) || N(0, 1)).
    struct LossBinding {
        ad::Var loss;
        Bindings bindings;
    };
    LossBinding bayesian_loss(ad::Tape& tape, const Tensor& batch,
                              const std::vector<size_t>& labels, double kl_weight,
                              Rng& noise_rng) const;

    // Default provider with explicit sampled noise (one tensor per param).
    ParamProvider bayesian_provider(const std::vector<Tensor>& noise) const;

    // Fresh standard-normal noise tensors matching every param.
    std::vector<Tensor> sample_noise(Rng& rng) const;

private:
    ModelSpec spec_;
    std::vector<Param> params_;
    std::vector<Shape> layer_shapes_;
    // param indices per layer: {weight, bias} for weight layers
    std::vector<std::pair<int, int>> layer_params_;
};

double softplus_inverse(double y);

struct EnsembleSpec {
    size_t members = 0;
    std::vector<uint64_t> seeds;
    ModelSpec base;
};

class Ensemble {
public:
    static Ensemble build(const EnsembleSpec& spec);

    std::vector<Model>& members() { return members_; }
    const std::vector<Model>& members() const { return members_; }

    // Arithmetic mean of member probabilities. The reduction sorts each
    // element's contributions first, so the result is exactly invariant to
    // member order.
    Tensor predict(const Tensor& batch) const;

private:
    std::vector<Model> members_;
};

}  // namespace spnn::nn

#pragma once

#include "tensor.hpp"

namespace spnn {

enum class OptimizerKind { sgd, adam };

// SGD or Adam state over a fixed list of parameter tensors. Masked entries
// receive zero gradient and are re-zeroed after every step, so pruned
// weights stay exactly 0 through any amount of training.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double lr);

    OptimizerKind kind() const { return kind_; }
    double learning_rate() const { return lr_; }
    size_t step_count() const { return step_; }

    // params, grads and masks are parallel lists; masks may be empty
    // (treated as all-ones). Updates params in place.
    void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads,
              const std::vector<const Tensor*>& masks = {});

    // Full state as tensors (step counter first, then adam moments), so
    // rewind points can restore the optimizer bitwise.
    std::vector<Tensor> state() const;
    void set_state(const std::vector<Tensor>& state);
    void reset();

private:
    OptimizerKind kind_;
    double lr_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    size_t step_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

}  // namespace spnn

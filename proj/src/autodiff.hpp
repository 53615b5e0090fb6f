#pragma once

#include <functional>
#include <unordered_map>

#include "tensor.hpp"

namespace spnn::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& value() const;
};

// Gradients keyed by differentiable leaf. Leaves unreachable from the loss
// are absent; at() returns a zero tensor of the leaf's shape for them.
class GradMap {
public:
    bool contains(Var v) const { return grads_.count(v.id) > 0; }
    const Tensor& at(Var v) const;

private:
    friend class Tape;
    std::unordered_map<int, Tensor> grads_;
    mutable std::unordered_map<int, Tensor> zero_cache_;
};

using BackwardFn = std::function<void(Tape&, int self, const Tensor& gout)>;

// Recorded computation for reverse-mode differentiation. Nodes are appended
// in execution order, so the list is already topologically sorted. One tape
// per forward pass; single-threaded per instance.
class Tape {
public:
    Var input(Tensor value, bool differentiable = false);
    Var constant(Tensor value) { return input(std::move(value), false); }

    // Record an op. `inputs` must live on this tape.
    Var emit(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward, const char* name);

    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
    bool is_leaf(int id) const { return nodes_[static_cast<size_t>(id)].n_inputs == 0; }
    size_t size() const { return nodes_.size(); }

    // Reverse pass from a scalar loss node. Populates gradients for every
    // differentiable leaf reachable from the loss.
    GradMap backward(Var loss);

    // Accumulate gradient into a node during backward (no-op for nodes that
    // do not require grad).
    void add_grad(int id, const Tensor& g);
    void add_grad(int id, Tensor&& g);

private:
    struct Node {
        Tensor value;
        int inputs[3] = {-1, -1, -1};
        int n_inputs = 0;
        bool requires_grad = false;
        const char* name = "leaf";
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    // scratch used by backward()
    std::vector<Tensor> grads_;
    std::vector<char> has_grad_;
};

// ---- primitive catalog ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var matmul(Var a, Var b);
// Dense-layer product x[N,in] * W^T with W stored [out,in].
Var linear(Var x, Var w);
Var conv2d(Var x, Var w, size_t pad);
Var relu(Var x);
Var abs(Var x);
Var exp(Var x);
Var log(Var x);
Var softplus(Var x);
Var pow_scalar(Var x, double p);
Var maxpool2(Var x);  // 2x2 window, stride 2
Var reshape(Var x, Shape shape);
Var flatten(Var x);  // [N, ...] -> [N, rest]
Var softmax(Var x);      // over last axis
Var log_softmax(Var x);  // over last axis
Var sum(Var x);
Var mean(Var x);
Var select(Var x, size_t flat_index);  // scalar pick
// Mean over rows of -sum_c target * log_softmax(logits); targets are
// probability rows (one-hot or soft).
Var cross_entropy(Var logits, Var targets);
// Mean over rows of sum_c p * (ln p - ln q); p, q probability rows.
Var kl_div(Var p, Var q);
// Forward w.value*mask, backward routes gout*w.value into the scores
// (selection treated as identity) and gout*mask into w.
Var straight_through_mask(Var w, Var scores, const Tensor& mask);

// H*v by central differences of gradients:
//   (grad(w + eps*v) - grad(w - eps*v)) / (2 eps),
// eps = sqrt(2^-52) * (1 + ||w||_2) / max(||v||_2, 1e-12).
using GradFn = std::function<std::vector<Tensor>(const std::vector<Tensor>&)>;
std::vector<Tensor> hvp(const GradFn& grad_fn, const std::vector<Tensor>& params,
                        const std::vector<Tensor>& v);

// One-hot rows from integer labels.
Tensor onehot(const std::vector<size_t>& labels, size_t classes);

}  // namespace spnn::ad

#pragma once

#include "attacks.hpp"
#include "data.hpp"
#include "models.hpp"

namespace spnn::prune {

enum class Criterion { magnitude, snip, grasp, crop, snr };
enum class Scope { global, local };
enum class Granularity { unstructured, structured };
enum class Schedule { before, during, after };

Criterion criterion_from_name(const std::string& name);
const char* criterion_name(Criterion c);

// Per-weight importance scores, parallel to the model's parameter list.
// Already-masked-out weights carry -inf and are never re-selected.
struct ScoreMap {
    std::vector<Tensor> scores;
    Criterion criterion = Criterion::magnitude;
};

struct MaskSet {
    std::vector<Tensor> masks;  // entries in {0,1}, parallel to params
    Granularity granularity = Granularity::unstructured;

    size_t kept() const;
    size_t total() const;
    double sparsity() const;
};

struct PruneConfig {
    Criterion criterion = Criterion::magnitude;
    Scope scope = Scope::global;
    Granularity granularity = Granularity::unstructured;
    Schedule schedule = Schedule::after;
    size_t during_epoch = 0;      // schedule == during
    double sparsity = 0.0;        // target in [0,1)
    size_t score_batches = 10;
    size_t fine_tune_epochs = 0;  // schedule == after
};

// Criterion scores with gradients (and Hessian-gradient products for
// grasp/crop) averaged over the first `n_batches` full batches before the
// formula is applied:
//   magnitude |w|, snip |w g|, grasp -|w (Hg)|, crop |w (Hg)|, snr |mean/std|.
ScoreMap compute_scores(const nn::Model& model, const data::Dataset& data, size_t batch_size,
                        size_t n_batches, Criterion criterion);

// Sum member-weight scores (and the unit's bias score) per output unit and
// expand back to weight shape. Masked-out weights contribute nothing; a unit
// with every weight masked scores -inf.
ScoreMap structure_scores(const ScoreMap& scores, const nn::Model& model);

// Top-score selection at the target sparsity. Keeps ceil((1-s) * total)
// entries globally or ceil((1-s) * layer_size) per layer; ties break by
// (parameter index, flat index) ascending. Structured selection counts
// units instead of weights and never removes final-classifier units.
MaskSet build_mask(const ScoreMap& scores, const nn::Model& model, double sparsity, Scope scope,
                   Granularity granularity);

// Copies masks into the model and zeroes masked weights.
void install_mask(nn::Model& model, const MaskSet& mask, bool zero_weights = true);

// Training hook used by the schedule runners. Implementations must be
// deterministic per epoch index so rewind/retrain replays exactly.
class TrainerBase {
public:
    virtual ~TrainerBase() = default;
    virtual void run(nn::Model& model, size_t first_epoch, size_t last_epoch) = 0;
    virtual std::vector<Tensor> snapshot_optimizer() const = 0;
    virtual void restore_optimizer(const std::vector<Tensor>& state) = 0;
};

// One-shot schedule runner: before (score, mask, train all), during (train to
// e, score, mask, train rest), after (train all, score, mask, optional
// fine-tune).
MaskSet prune(nn::Model& model, const PruneConfig& config, const data::Dataset& data,
              size_t batch_size, TrainerBase& trainer, size_t total_epochs);

// Iterative magnitude pruning with weight (and optimizer) rewind to the
// epoch-k snapshot. Cycle c prunes to cumulative sparsity 1-(1-p)^c.
MaskSet imp(nn::Model& model, const data::Dataset& data, size_t batch_size, size_t cycles,
            double per_cycle_sparsity, size_t rewind_epoch, size_t total_epochs,
            TrainerBase& trainer, Scope scope = Scope::global);

enum class ObjectiveKind { aa, ood, ds };

ObjectiveKind objective_from_name(const std::string& name);
const char* objective_name(ObjectiveKind k);

struct ObjectiveAux {
    double lambda = 6.0;                // aa: KL consistency weight
    attack::AttackSpec attack;          // aa: attack budget
    const Tensor* ood_batch = nullptr;  // ood: auxiliary anomalous batch
    double noise_sigma = 0.0;           // ds: gaussian noise level
};

// Objective losses built on `tape` against the model's current masks:
//   aa:  H(f(X), Y) + lambda * KL(f(X), f(X'))   X' = FGSM(X), fresh each call
//   ood: H(f(X), Y) + H(f(X'), U)                X' = OOD batch, U uniform
//   ds:  H(f(X'), Y)                             X' = X + sigma * noise
ad::Var objective_loss(ad::Tape& tape, const nn::Model& model, ObjectiveKind kind,
                       const Tensor& batch, const std::vector<size_t>& labels,
                       const ObjectiveAux& aux, Rng& rng);

struct EdgePopupConfig {
    ObjectiveKind objective = ObjectiveKind::ood;
    ObjectiveAux aux;
    double sparsity = 0.5;
    size_t epochs = 3;
    size_t batch_size = 128;
    double lr = 2e-3;
    uint64_t seed = 0;
    Scope scope = Scope::local;
    const data::Dataset* ood_source = nullptr;  // cycled for the ood objective
};

// Mask search over frozen weights: per-weight scores start kaiming-normal,
// each step the top-(1-x) scores define the forward subnetwork, gradients
// reach all scores through the straight-through estimator, and only scores
// are updated. Weights are bitwise untouched; the final mask is installed
// without zeroing weights.
MaskSet edge_popup(nn::Model& model, const data::Dataset& train, const EdgePopupConfig& config);

// Physically removes masked output units: weight rows/channels deleted and
// downstream fan-in columns deleted. Output equals the masked model's output
// (same arithmetic, minus exact zeros).
nn::Model shrink_structured(const nn::Model& model, const MaskSet& mask);

}  // namespace spnn::prune

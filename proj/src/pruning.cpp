#include "pruning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "optim.hpp"

namespace spnn::prune {

namespace ops = spnn::ad;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

Criterion criterion_from_name(const std::string& name) {
    if (name == "magnitude") return Criterion::magnitude;
    if (name == "snip") return Criterion::snip;
    if (name == "grasp") return Criterion::grasp;
    if (name == "crop") return Criterion::crop;
    if (name == "snr") return Criterion::snr;
    throw Error::config("unknown pruning criterion: " + name);
}

const char* criterion_name(Criterion c) {
    switch (c) {
        case Criterion::magnitude: return "magnitude";
        case Criterion::snip: return "snip";
        case Criterion::grasp: return "grasp";
        case Criterion::crop: return "crop";
        case Criterion::snr: return "snr";
    }
    return "?";
}

ObjectiveKind objective_from_name(const std::string& name) {
    if (name == "aa") return ObjectiveKind::aa;
    if (name == "ood") return ObjectiveKind::ood;
    if (name == "ds") return ObjectiveKind::ds;
    throw Error::config("unknown edge-popup objective: " + name);
}

const char* objective_name(ObjectiveKind k) {
    switch (k) {
        case ObjectiveKind::aa: return "aa";
        case ObjectiveKind::ood: return "ood";
        case ObjectiveKind::ds: return "ds";
    }
    return "?";
}

size_t MaskSet::kept() const {
    size_t n = 0;
    for (const Tensor& m : masks)
        for (size_t i = 0; i < m.numel(); ++i)
            if (m[i] != 0.0) ++n;
    return n;
}

size_t MaskSet::total() const {
    size_t n = 0;
    for (const Tensor& m : masks) n += m.numel();
    return n;
}

double MaskSet::sparsity() const {
    size_t t = total();
    return t == 0 ? 0.0 : 1.0 - static_cast<double>(kept()) / static_cast<double>(t);
}

namespace {

// Mean gradient of the training cross-entropy over the first n_batches full
// batches, evaluated at the given parameter values.
std::vector<Tensor> mean_gradient(const nn::Model& model, const std::vector<Tensor>& values,
                                  const data::Dataset& data, size_t batch_size, size_t n_batches) {
    nn::Model scratch = model;
    for (size_t i = 0; i < values.size(); ++i) scratch.params()[i].value = values[i];
    std::vector<Tensor> acc;
    for (size_t b = 0; b < n_batches; ++b) {
        Tensor batch = data.batch(b * batch_size, batch_size);
        std::vector<size_t> labels = data.label_slice(b * batch_size, batch_size);
        ad::Tape tape;
        nn::Model::Bindings bind = scratch.bind(tape, batch);
        ad::Var loss = ops::cross_entropy(
            bind.logits, tape.constant(ad::onehot(labels, scratch.spec().classes)));
        ad::GradMap g = tape.backward(loss);
        for (size_t i = 0; i < bind.leaves.size(); ++i) {
            Tensor gi = g.at(bind.leaves[i]);
            if (b == 0)
                acc.push_back(std::move(gi));
            else
                acc[i].add_(gi);
        }
    }
    for (Tensor& t : acc) t.scale_(1.0 / static_cast<double>(n_batches));
    return acc;
}

void mask_out_scores(ScoreMap& sm, const nn::Model& model) {
    const auto& params = model.params();
    for (size_t i = 0; i < params.size(); ++i)
        for (size_t j = 0; j < params[i].mask.numel(); ++j)
            if (params[i].mask[j] == 0.0) sm.scores[i][j] = kNegInf;
}

}  // namespace

ScoreMap compute_scores(const nn::Model& model, const data::Dataset& data, size_t batch_size,
                        size_t n_batches, Criterion criterion) {
    const auto& params = model.params();
    ScoreMap sm;
    sm.criterion = criterion;

    switch (criterion) {
        case Criterion::magnitude: {
            for (const auto& p : params) {
                Tensor s = p.value;
                s.map_([](double v) { return std::fabs(v); });
                sm.scores.push_back(std::move(s));
            }
            break;
        }
        case Criterion::snr: {
            if (!model.spec().bayesian)
                throw Error::state("compute_scores: snr requires a bayesian model");
            for (const auto& p : params) {
                Tensor s(p.value.shape());
                for (size_t i = 0; i < s.numel(); ++i) {
                    double t = std::log1p(std::exp(std::min(p.rho[i], 30.0)));
                    if (p.rho[i] > 30.0) t = p.rho[i];
                    s[i] = std::fabs(p.value[i] / t);
                }
                sm.scores.push_back(std::move(s));
            }
            break;
        }
        case Criterion::snip:
        case Criterion::grasp:
        case Criterion::crop: {
            if (n_batches == 0)
                throw Error::invalid_arg("compute_scores: gradient criterion with zero batches");
            if (data.size() < batch_size * n_batches)
                throw Error::invalid_arg("compute_scores: not enough data for " +
                                         std::to_string(n_batches) + " score batches");
            std::vector<Tensor> values;
            for (const auto& p : params) values.push_back(p.value);
            std::vector<Tensor> g =
                mean_gradient(model, values, data, batch_size, n_batches);
            if (criterion == Criterion::snip) {
                for (size_t i = 0; i < params.size(); ++i) {
                    Tensor s = g[i];
                    s.mul_(params[i].value);
                    s.map_([](double v) { return std::fabs(v); });
                    sm.scores.push_back(std::move(s));
                }
            } else {
                ad::GradFn grad_fn = [&](const std::vector<Tensor>& w) {
                    return mean_gradient(model, w, data, batch_size, n_batches);
                };
                std::vector<Tensor> hg = ops::hvp(grad_fn, values, g);
                double sign = criterion == Criterion::grasp ? -1.0 : 1.0;
                for (size_t i = 0; i < params.size(); ++i) {
                    Tensor s = hg[i];
                    s.mul_(params[i].value);
                    s.map_([sign](double v) { return sign * std::fabs(v); });
                    sm.scores.push_back(std::move(s));
                }
            }
            break;
        }
    }
    mask_out_scores(sm, model);
    return sm;
}

ScoreMap structure_scores(const ScoreMap& scores, const nn::Model& model) {
    const auto& params = model.params();
    if (scores.scores.size() != params.size())
        throw Error::shape("structure_scores: score map does not match model");
    ScoreMap out;
    out.criterion = scores.criterion;
    out.scores.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) out.scores[i] = Tensor::zeros(params[i].value.shape());

    for (const nn::UnitGroup& g : model.unit_groups()) {
        const Tensor& ws = scores.scores[g.weight_param];
        const Tensor& bs = scores.scores[g.bias_param];
        for (size_t u = 0; u < g.units; ++u) {
            double total = 0.0;
            size_t alive = 0;
            for (size_t k = 0; k < g.weights_per_unit; ++k) {
                double v = ws[u * g.weights_per_unit + k];
                if (v != kNegInf) {
                    total += v;
                    ++alive;
                }
            }
            if (bs[u] != kNegInf) {
                total += bs[u];
                ++alive;
            }
            double unit_score = alive == 0 ? kNegInf : total;
            for (size_t k = 0; k < g.weights_per_unit; ++k)
                out.scores[g.weight_param][u * g.weights_per_unit + k] = unit_score;
            out.scores[g.bias_param][u] = unit_score;
        }
    }
    return out;
}

namespace {

struct Entry {
    double score;
    size_t param;
    size_t flat;
};

bool entry_before(const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.param != b.param) return a.param < b.param;
    return a.flat < b.flat;
}

size_t keep_count(double sparsity, size_t total) {
    return static_cast<size_t>(
        std::ceil((1.0 - sparsity) * static_cast<double>(total) - 1e-12));
}

}  // namespace

MaskSet build_mask(const ScoreMap& scores, const nn::Model& model, double sparsity, Scope scope,
                   Granularity granularity) {
    if (sparsity < 0.0 || sparsity >= 1.0)
        throw Error::invalid_arg("build_mask: target sparsity must be in [0,1)");
    const auto& params = model.params();
    if (scores.scores.size() != params.size())
        throw Error::shape("build_mask: score map does not match model");

    MaskSet out;
    out.granularity = granularity;

    if (granularity == Granularity::unstructured) {
        out.masks.reserve(params.size());
        for (const auto& p : params) out.masks.push_back(Tensor::zeros(p.value.shape()));
        if (scope == Scope::global) {
            std::vector<Entry> entries;
            size_t total = 0;
            for (size_t i = 0; i < scores.scores.size(); ++i) total += scores.scores[i].numel();
            entries.reserve(total);
            for (size_t i = 0; i < scores.scores.size(); ++i)
                for (size_t j = 0; j < scores.scores[i].numel(); ++j)
                    entries.push_back({scores.scores[i][j], i, j});
            size_t k = keep_count(sparsity, total);
            std::sort(entries.begin(), entries.end(), entry_before);
            for (size_t e = 0; e < k; ++e) out.masks[entries[e].param][entries[e].flat] = 1.0;
        } else {
            for (size_t i = 0; i < scores.scores.size(); ++i) {
                const Tensor& s = scores.scores[i];
                std::vector<Entry> entries;
                entries.reserve(s.numel());
                for (size_t j = 0; j < s.numel(); ++j) entries.push_back({s[j], i, j});
                size_t k = keep_count(sparsity, s.numel());
                std::sort(entries.begin(), entries.end(), entry_before);
                for (size_t e = 0; e < k; ++e) out.masks[i][entries[e].flat] = 1.0;
            }
        }
        return out;
    }

    // Structured: select output units; classifier-layer units are always kept.
    ScoreMap unit_scores = structure_scores(scores, model);
    out.masks.reserve(params.size());
    for (const auto& p : params) out.masks.push_back(Tensor::zeros(p.value.shape()));

    auto groups = model.unit_groups();
    auto unit_score = [&](const nn::UnitGroup& g, size_t u) {
        return unit_scores.scores[g.bias_param][u];
    };
    auto keep_unit = [&](const nn::UnitGroup& g, size_t u) {
        Tensor& wm = out.masks[g.weight_param];
        for (size_t k = 0; k < g.weights_per_unit; ++k) wm[u * g.weights_per_unit + k] = 1.0;
        out.masks[g.bias_param][u] = 1.0;
    };

    if (scope == Scope::global) {
        std::vector<Entry> entries;  // param = group index, flat = unit
        for (size_t gi = 0; gi < groups.size(); ++gi) {
            if (groups[gi].is_output_layer) continue;
            for (size_t u = 0; u < groups[gi].units; ++u)
                entries.push_back({unit_score(groups[gi], u), gi, u});
        }
        size_t k = keep_count(sparsity, entries.size());
        std::sort(entries.begin(), entries.end(), entry_before);
        for (size_t e = 0; e < k; ++e) keep_unit(groups[entries[e].param], entries[e].flat);
    } else {
        for (size_t gi = 0; gi < groups.size(); ++gi) {
            if (groups[gi].is_output_layer) continue;
            std::vector<Entry> entries;
            for (size_t u = 0; u < groups[gi].units; ++u)
                entries.push_back({unit_score(groups[gi], u), gi, u});
            size_t k = keep_count(sparsity, entries.size());
            std::sort(entries.begin(), entries.end(), entry_before);
            for (size_t e = 0; e < k; ++e) keep_unit(groups[gi], entries[e].flat);
        }
    }
    for (const nn::UnitGroup& g : groups) {
        if (!g.is_output_layer) continue;
        for (size_t u = 0; u < g.units; ++u) keep_unit(g, u);
    }
    return out;
}

void install_mask(nn::Model& model, const MaskSet& mask, bool zero_weights) {
    auto& params = model.params();
    if (mask.masks.size() != params.size())
        throw Error::shape("install_mask: mask does not match model");
    for (size_t i = 0; i < params.size(); ++i) {
        if (!mask.masks[i].same_shape(params[i].value))
            throw Error::shape("install_mask: mask shape mismatch on " + params[i].name);
        params[i].mask = mask.masks[i];
    }
    if (zero_weights) model.apply_masks();
}

MaskSet prune(nn::Model& model, const PruneConfig& config, const data::Dataset& data,
              size_t batch_size, TrainerBase& trainer, size_t total_epochs) {
    if (config.schedule == Schedule::during && config.during_epoch > total_epochs)
        throw Error::state("prune: during-schedule epoch beyond training budget");

    auto score_and_mask = [&]() {
        ScoreMap sm = compute_scores(model, data, batch_size, config.score_batches, config.criterion);
        MaskSet mask = build_mask(sm, model, config.sparsity, config.scope, config.granularity);
        install_mask(model, mask);
        return mask;
    };

    MaskSet mask;
    switch (config.schedule) {
        case Schedule::before:
            mask = score_and_mask();
            trainer.run(model, 0, total_epochs);
            break;
        case Schedule::during:
            trainer.run(model, 0, config.during_epoch);
            mask = score_and_mask();
            trainer.run(model, config.during_epoch, total_epochs);
            break;
        case Schedule::after:
            trainer.run(model, 0, total_epochs);
            mask = score_and_mask();
            if (config.fine_tune_epochs > 0)
                trainer.run(model, total_epochs, total_epochs + config.fine_tune_epochs);
            break;
    }
    return mask;
}

MaskSet imp(nn::Model& model, const data::Dataset& data, size_t batch_size, size_t cycles,
            double per_cycle_sparsity, size_t rewind_epoch, size_t total_epochs,
            TrainerBase& trainer, Scope scope) {
    if (cycles < 1) throw Error::invalid_arg("imp: cycles must be >= 1");
    if (rewind_epoch > total_epochs)
        throw Error::state("imp: rewind epoch beyond the first training phase");
    if (per_cycle_sparsity < 0.0 || per_cycle_sparsity >= 1.0)
        throw Error::invalid_arg("imp: per-cycle sparsity must be in [0,1)");

    // First phase with the rewind snapshot taken at epoch k.
    trainer.run(model, 0, rewind_epoch);
    std::vector<Tensor> snapshot;
    for (const auto& p : model.params()) snapshot.push_back(p.value);
    std::vector<Tensor> opt_snapshot = trainer.snapshot_optimizer();
    trainer.run(model, rewind_epoch, total_epochs);

    MaskSet mask;
    for (size_t c = 1; c <= cycles; ++c) {
        double cumulative = 1.0 - std::pow(1.0 - per_cycle_sparsity, static_cast<double>(c));
        ScoreMap sm = compute_scores(model, data, batch_size, 0, Criterion::magnitude);
        mask = build_mask(sm, model, cumulative, scope, Granularity::unstructured);
        install_mask(model, mask);
        // Rewind surviving weights (and optimizer) to the epoch-k snapshot.
        auto& params = model.params();
        for (size_t i = 0; i < params.size(); ++i) params[i].value = snapshot[i];
        model.apply_masks();
        trainer.restore_optimizer(opt_snapshot);
        trainer.run(model, rewind_epoch, total_epochs);
    }
    return mask;
}

ad::Var objective_loss(ad::Tape& tape, const nn::Model& model, ObjectiveKind kind,
                       const Tensor& batch, const std::vector<size_t>& labels,
                       const ObjectiveAux& aux, Rng& rng) {
    size_t classes = model.spec().classes;
    switch (kind) {
        case ObjectiveKind::aa: {
            Tensor adv = attack::fgsm(model, batch, labels, aux.attack);
            nn::Model::Bindings clean = model.bind(tape, batch);
            nn::Model::Bindings attacked = model.bind(tape, adv);
            ad::Var ce = ops::cross_entropy(clean.logits,
                                            tape.constant(ad::onehot(labels, classes)));
            ad::Var kl = ops::kl_div(ops::softmax(clean.logits), ops::softmax(attacked.logits));
            return ops::add(ce, ops::scale(kl, aux.lambda));
        }
        case ObjectiveKind::ood: {
            if (aux.ood_batch == nullptr)
                throw Error::invalid_arg("objective_loss: ood objective needs an OOD batch");
            nn::Model::Bindings clean = model.bind(tape, batch);
            nn::Model::Bindings ood = model.bind(tape, *aux.ood_batch);
            ad::Var ce = ops::cross_entropy(clean.logits,
                                            tape.constant(ad::onehot(labels, classes)));
            Tensor uniform = Tensor::full({aux.ood_batch->dim(0), classes},
                                          1.0 / static_cast<double>(classes));
            ad::Var uce = ops::cross_entropy(ood.logits, tape.constant(uniform));
            return ops::add(ce, uce);
        }
        case ObjectiveKind::ds: {
            Tensor noisy = batch;
            for (size_t i = 0; i < noisy.numel(); ++i) noisy[i] += aux.noise_sigma * rng.normal();
            nn::Model::Bindings b = model.bind(tape, noisy);
            return ops::cross_entropy(b.logits, tape.constant(ad::onehot(labels, classes)));
        }
    }
    throw Error::internal("objective_loss: unreachable");
}

namespace {

// Local (or global) top-score selection over raw edge-popup scores.
MaskSet scores_to_mask(const std::vector<Tensor>& scores, const nn::Model& model, double sparsity,
                       Scope scope) {
    ScoreMap sm;
    sm.criterion = Criterion::magnitude;  // tag unused here
    sm.scores = scores;
    return build_mask(sm, model, sparsity, scope, Granularity::unstructured);
}

}  // namespace

MaskSet edge_popup(nn::Model& model, const data::Dataset& train, const EdgePopupConfig& config) {
    if (config.objective == ObjectiveKind::ood && config.ood_source == nullptr)
        throw Error::invalid_arg("edge_popup: ood objective needs an ood_source dataset");
    if (config.sparsity < 0.0 || config.sparsity >= 1.0)
        throw Error::invalid_arg("edge_popup: sparsity must be in [0,1)");

    auto& params = model.params();
    auto groups = model.unit_groups();

    // Scores start kaiming-normal with the layer's fan-in.
    Rng rng(config.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<Tensor> scores;
    scores.reserve(params.size());
    std::vector<double> fan_in(params.size(), 1.0);
    for (const nn::UnitGroup& g : groups) {
        fan_in[g.weight_param] = static_cast<double>(g.weights_per_unit);
        fan_in[g.bias_param] = static_cast<double>(g.weights_per_unit);
    }
    for (size_t i = 0; i < params.size(); ++i)
        scores.push_back(
            Tensor::normal(params[i].value.shape(), rng, 0.0, std::sqrt(2.0 / fan_in[i])));

    MaskSet mask = scores_to_mask(scores, model, config.sparsity, config.scope);
    install_mask(model, mask, /*zero_weights=*/false);

    Optimizer opt(OptimizerKind::adam, config.lr);
    Rng order_rng(config.seed ^ 0xc2b2ae3d27d4eb4full);
    Rng noise_rng(config.seed ^ 0x165667b19e3779f9ull);

    size_t n = train.size();
    size_t batches = n / config.batch_size;
    size_t ood_cursor = 0;
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (size_t b = 0; b < batches; ++b) {
            std::vector<size_t> idx(order.begin() + static_cast<long>(b * config.batch_size),
                                    order.begin() + static_cast<long>((b + 1) * config.batch_size));
            Tensor batch = train.rows(idx);
            std::vector<size_t> labels(idx.size());
            for (size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[idx[i]];

            // Subnetwork for this step.
            mask = scores_to_mask(scores, model, config.sparsity, config.scope);
            install_mask(model, mask, /*zero_weights=*/false);

            ObjectiveAux aux = config.aux;
            Tensor ood_batch;
            if (config.objective == ObjectiveKind::ood) {
                size_t m = config.ood_source->size();
                std::vector<size_t> oidx(config.batch_size);
                for (size_t i = 0; i < config.batch_size; ++i)
                    oidx[i] = (ood_cursor + i) % m;
                ood_cursor = (ood_cursor + config.batch_size) % m;
                ood_batch = config.ood_source->rows(oidx);
                aux.ood_batch = &ood_batch;
            }

            ad::Tape tape;
            // Straight-through forward: w*mask forward, gradients land on the
            // score leaves; multiple binds on the same tape share nothing, so
            // per-leaf gradients are summed manually afterwards.
            std::vector<std::vector<ad::Var>> leaf_sets;
            nn::Model::ParamProvider provider = [&](ad::Tape& tp, size_t i,
                                                    nn::Model::Bindings& bd) -> ad::Var {
                ad::Var w = tp.input(params[i].value, false);
                ad::Var s = tp.input(scores[i], true);
                bd.leaves[i] = s;
                return ops::straight_through_mask(w, s, params[i].mask);
            };

            // objective_loss binds internally with the default provider; here
            // the straight-through path must be used instead, so the losses
            // are rebuilt with the provider.
            ad::Var loss;
            switch (config.objective) {
                case ObjectiveKind::aa: {
                    Tensor adv = attack::fgsm(model, batch, labels, aux.attack);
                    nn::Model::Bindings clean = model.bind(tape, batch, false, provider);
                    nn::Model::Bindings attacked = model.bind(tape, adv, false, provider);
                    leaf_sets.push_back(clean.leaves);
                    leaf_sets.push_back(attacked.leaves);
                    ad::Var ce = ops::cross_entropy(
                        clean.logits, tape.constant(ad::onehot(labels, model.spec().classes)));
                    ad::Var kl =
                        ops::kl_div(ops::softmax(clean.logits), ops::softmax(attacked.logits));
                    loss = ops::add(ce, ops::scale(kl, aux.lambda));
                    break;
                }
                case ObjectiveKind::ood: {
                    nn::Model::Bindings clean = model.bind(tape, batch, false, provider);
                    nn::Model::Bindings ood = model.bind(tape, *aux.ood_batch, false, provider);
                    leaf_sets.push_back(clean.leaves);
                    leaf_sets.push_back(ood.leaves);
                    size_t classes = model.spec().classes;
                    ad::Var ce = ops::cross_entropy(
                        clean.logits, tape.constant(ad::onehot(labels, classes)));
                    Tensor uniform = Tensor::full({aux.ood_batch->dim(0), classes},
                                                  1.0 / static_cast<double>(classes));
                    ad::Var uce = ops::cross_entropy(ood.logits, tape.constant(uniform));
                    loss = ops::add(ce, uce);
                    break;
                }
                case ObjectiveKind::ds: {
                    Tensor noisy = batch;
                    for (size_t i = 0; i < noisy.numel(); ++i)
                        noisy[i] += aux.noise_sigma * noise_rng.normal();
                    nn::Model::Bindings b2 = model.bind(tape, noisy, false, provider);
                    leaf_sets.push_back(b2.leaves);
                    loss = ops::cross_entropy(
                        b2.logits, tape.constant(ad::onehot(labels, model.spec().classes)));
                    break;
                }
            }

            ad::GradMap g = tape.backward(loss);
            std::vector<Tensor> grads;
            grads.reserve(params.size());
            for (size_t i = 0; i < params.size(); ++i) {
                Tensor gi = Tensor::zeros(scores[i].shape());
                for (const auto& leaves : leaf_sets)
                    if (leaves[i].valid()) gi.add_(g.at(leaves[i]));
                grads.push_back(std::move(gi));
            }
            std::vector<Tensor*> score_ptrs;
            for (Tensor& s : scores) score_ptrs.push_back(&s);
            opt.step(score_ptrs, grads);
        }
    }

    mask = scores_to_mask(scores, model, config.sparsity, config.scope);
    install_mask(model, mask, /*zero_weights=*/false);
    return mask;
}

nn::Model shrink_structured(const nn::Model& model, const MaskSet& mask) {
    if (mask.granularity != Granularity::structured)
        throw Error::invalid_arg("shrink_structured: unstructured mask supplied");
    const auto& params = model.params();
    if (mask.masks.size() != params.size())
        throw Error::shape("shrink_structured: mask does not match model");

    auto groups = model.unit_groups();
    std::vector<std::vector<size_t>> kept_units(groups.size());
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        const nn::UnitGroup& g = groups[gi];
        const Tensor& wm = mask.masks[g.weight_param];
        const Tensor& bm = mask.masks[g.bias_param];
        for (size_t u = 0; u < g.units; ++u) {
            double first = g.weights_per_unit > 0 ? wm[u * g.weights_per_unit] : bm[u];
            for (size_t k = 0; k < g.weights_per_unit; ++k)
                if (wm[u * g.weights_per_unit + k] != first)
                    throw Error::invalid_arg("shrink_structured: mask not unit-constant in group " +
                                             std::to_string(gi));
            if (bm[u] != first)
                throw Error::invalid_arg("shrink_structured: bias mask disagrees with unit mask");
            if (first != 0.0) kept_units[gi].push_back(u);
        }
        if (g.is_output_layer && kept_units[gi].size() != g.units)
            throw Error::invalid_arg("shrink_structured: classifier units must all be kept");
        if (kept_units[gi].empty())
            throw Error::invalid_arg("shrink_structured: group " + std::to_string(gi) +
                                     " has no surviving units");
    }

    // New spec with reduced unit counts.
    nn::ModelSpec spec = model.spec();
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        size_t layer = params[groups[gi].weight_param].layer;
        if (spec.layers[layer].kind == nn::LayerKind::dense)
            spec.layers[layer].units = kept_units[gi].size();
        else
            spec.layers[layer].channels = kept_units[gi].size();
    }
    nn::Model out = nn::Model::build(spec);

    // Input-feature selection per group, derived from the previous group.
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        const nn::UnitGroup& g = groups[gi];
        const Tensor& w_old = params[g.weight_param].value;
        size_t layer = params[g.weight_param].layer;

        std::vector<size_t> in_sel;  // flat input indices kept
        size_t in_dim = g.weights_per_unit;
        if (gi == 0) {
            for (size_t k = 0; k < in_dim; ++k) in_sel.push_back(k);
        } else {
            const nn::UnitGroup& pg = groups[gi - 1];
            size_t prev_layer = params[pg.weight_param].layer;
            if (spec.layers[layer].kind == nn::LayerKind::conv) {
                // conv after conv: select input-channel slices
                size_t per_channel = w_old.dim(2) * w_old.dim(3);
                for (size_t c : kept_units[gi - 1])
                    for (size_t k = 0; k < per_channel; ++k) in_sel.push_back(c * per_channel + k);
            } else if (model.spec().layers[prev_layer].kind == nn::LayerKind::conv) {
                // dense after conv+flatten: keep spatial blocks of kept channels
                size_t prev_channels = groups[gi - 1].units;
                size_t spatial = in_dim / prev_channels;
                for (size_t c : kept_units[gi - 1])
                    for (size_t k = 0; k < spatial; ++k) in_sel.push_back(c * spatial + k);
            } else {
                in_sel = kept_units[gi - 1];
            }
        }

        auto& w_new = out.params()[g.weight_param];
        auto& b_new = out.params()[g.bias_param];
        const auto& b_old = params[g.bias_param];
        const auto& wm_old = params[g.weight_param].mask;
        const auto& bm_old = params[g.bias_param].mask;
        size_t new_in = in_sel.size();
        for (size_t ui = 0; ui < kept_units[gi].size(); ++ui) {
            size_t u = kept_units[gi][ui];
            for (size_t k = 0; k < new_in; ++k) {
                w_new.value[ui * new_in + k] = w_old[u * in_dim + in_sel[k]];
                w_new.mask[ui * new_in + k] = wm_old[u * in_dim + in_sel[k]];
            }
            b_new.value[ui] = b_old.value[u];
            b_new.mask[ui] = bm_old[u];
            if (model.spec().bayesian) {
                for (size_t k = 0; k < new_in; ++k)
                    w_new.rho[ui * new_in + k] = params[g.weight_param].rho[u * in_dim + in_sel[k]];
                b_new.rho[ui] = params[g.bias_param].rho[u];
            }
        }
    }
    return out;
}

}  // namespace spnn::prune

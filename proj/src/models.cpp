#include "models.hpp"

#include <algorithm>
#include <cmath>

namespace spnn::nn {

namespace ops = spnn::ad;

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv: return "conv";
        case LayerKind::relu: return "relu";
        case LayerKind::pool: return "pool";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

ModelSpec mlp3(size_t inputs, size_t classes, uint64_t seed, bool bayesian) {
    ModelSpec spec;
    spec.input_shape = {inputs};
    spec.layers = {LayerSpec::dense(300), LayerSpec::relu(), LayerSpec::dense(100),
                   LayerSpec::relu(), LayerSpec::dense(classes)};
    spec.classes = classes;
    spec.init_seed = seed;
    spec.bayesian = bayesian;
    return spec;
}

ModelSpec conv_s(const Shape& input_shape, size_t classes, uint64_t seed, bool bayesian) {
    ModelSpec spec;
    spec.input_shape = input_shape;
    spec.layers = {LayerSpec::conv(8, 3, 1),  LayerSpec::relu(), LayerSpec::pool(),
                   LayerSpec::conv(16, 3, 1), LayerSpec::relu(), LayerSpec::pool(),
                   LayerSpec::flatten(),      LayerSpec::dense(64), LayerSpec::relu(),
                   LayerSpec::dense(classes)};
    spec.classes = classes;
    spec.init_seed = seed;
    spec.bayesian = bayesian;
    return spec;
}

std::vector<Shape> infer_layer_shapes(const ModelSpec& spec) {
    auto fail = [&](size_t idx, const std::string& why) {
        std::string prev = idx == 0 ? "input " + shape_str(spec.input_shape)
                                    : "layer " + std::to_string(idx - 1) + " (" +
                                          layer_kind_name(spec.layers[idx - 1].kind) + ")";
        throw Error::shape("model spec: layer " + std::to_string(idx) + " (" +
                           layer_kind_name(spec.layers[idx].kind) + ") does not compose with " +
                           prev + ": " + why);
    };
    if (spec.layers.empty()) throw Error::shape("model spec: no layers");
    std::vector<Shape> out;
    Shape cur = spec.input_shape;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        switch (l.kind) {
            case LayerKind::dense: {
                if (cur.size() != 1) fail(i, "dense needs a flat input, have " + shape_str(cur));
                if (l.units == 0) fail(i, "dense layer with zero units");
                cur = {l.units};
                break;
            }
            case LayerKind::conv: {
                if (cur.size() != 3) fail(i, "conv needs [C,H,W] input, have " + shape_str(cur));
                if (l.channels == 0 || l.kernel == 0) fail(i, "conv layer with zero channels/kernel");
                size_t H = cur[1], W = cur[2];
                if (H + 2 * l.pad < l.kernel || W + 2 * l.pad < l.kernel)
                    fail(i, "kernel larger than padded input");
                cur = {l.channels, H + 2 * l.pad - l.kernel + 1, W + 2 * l.pad - l.kernel + 1};
                break;
            }
            case LayerKind::pool: {
                if (cur.size() != 3) fail(i, "pool needs [C,H,W] input, have " + shape_str(cur));
                if (cur[1] % 2 != 0 || cur[2] % 2 != 0)
                    fail(i, "pool needs even spatial dims, have " + shape_str(cur));
                cur = {cur[0], cur[1] / 2, cur[2] / 2};
                break;
            }
            case LayerKind::flatten:
                cur = {shape_numel(cur)};
                break;
            case LayerKind::relu:
                break;
        }
        out.push_back(cur);
    }
    const LayerSpec& last = spec.layers.back();
    if (last.kind != LayerKind::dense || last.units != spec.classes)
        throw Error::shape("model spec: final layer must be dense with units == classes (" +
                           std::to_string(spec.classes) + ")");
    return out;
}

double softplus_inverse(double y) {
    if (y <= 0.0) throw Error::invalid_arg("softplus_inverse: need y > 0");
    return std::log(std::expm1(y));
}

Model Model::build(const ModelSpec& spec) {
    Model m;
    m.spec_ = spec;
    m.layer_shapes_ = infer_layer_shapes(spec);
    m.layer_params_.assign(spec.layers.size(), {-1, -1});

    Rng rng(spec.init_seed);
    const double rho_init = softplus_inverse(0.05);
    Shape cur = spec.input_shape;
    size_t dense_i = 0, conv_i = 0;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        if (l.kind == LayerKind::dense) {
            size_t fan_in = cur[0];
            double std = std::sqrt(2.0 / static_cast<double>(fan_in));
            std::string base = "dense" + std::to_string(dense_i++);
            Param w;
            w.name = base + ".weight";
            w.value = Tensor::normal({l.units, fan_in}, rng, 0.0, std);
            w.mask = Tensor::ones({l.units, fan_in});
            w.layer = i;
            Param b;
            b.name = base + ".bias";
            b.value = Tensor::normal({l.units}, rng, 0.0, std);
            b.mask = Tensor::ones({l.units});
            b.layer = i;
            b.is_bias = true;
            if (spec.bayesian) {
                w.rho = Tensor::full(w.value.shape(), rho_init);
                b.rho = Tensor::full(b.value.shape(), rho_init);
            }
            m.layer_params_[i] = {static_cast<int>(m.params_.size()),
                                  static_cast<int>(m.params_.size() + 1)};
            m.params_.push_back(std::move(w));
            m.params_.push_back(std::move(b));
        } else if (l.kind == LayerKind::conv) {
            size_t fan_in = cur[0] * l.kernel * l.kernel;
            double std = std::sqrt(2.0 / static_cast<double>(fan_in));
            std::string base = "conv" + std::to_string(conv_i++);
            Param w;
            w.name = base + ".weight";
            w.value = Tensor::normal({l.channels, cur[0], l.kernel, l.kernel}, rng, 0.0, std);
            w.mask = Tensor::ones(w.value.shape());
            w.layer = i;
            Param b;
            b.name = base + ".bias";
            b.value = Tensor::normal({l.channels}, rng, 0.0, std);
            b.mask = Tensor::ones({l.channels});
            b.layer = i;
            b.is_bias = true;
            if (spec.bayesian) {
                w.rho = Tensor::full(w.value.shape(), rho_init);
                b.rho = Tensor::full(b.value.shape(), rho_init);
            }
            m.layer_params_[i] = {static_cast<int>(m.params_.size()),
                                  static_cast<int>(m.params_.size() + 1)};
            m.params_.push_back(std::move(w));
            m.params_.push_back(std::move(b));
        }
        cur = m.layer_shapes_[i];
    }
    return m;
}

size_t Model::param_count() const {
    size_t n = 0;
    for (const Param& p : params_) n += p.value.numel();
    return n;
}

size_t Model::masked_out_count() const {
    size_t n = 0;
    for (const Param& p : params_) {
        for (size_t i = 0; i < p.mask.numel(); ++i)
            if (p.mask[i] == 0.0) ++n;
    }
    return n;
}

double Model::sparsity() const {
    size_t total = param_count();
    return total == 0 ? 0.0 : static_cast<double>(masked_out_count()) / static_cast<double>(total);
}

std::vector<UnitGroup> Model::unit_groups() const {
    std::vector<UnitGroup> out;
    // params_ always holds (weight, bias) pairs in layer order
    for (size_t i = 0; i < params_.size(); i += 2) {
        const Param& w = params_[i];
        UnitGroup g;
        g.weight_param = i;
        g.bias_param = i + 1;
        g.units = w.value.dim(0);
        g.weights_per_unit = w.value.numel() / g.units;
        g.is_output_layer = false;
        out.push_back(g);
    }
    if (!out.empty()) out.back().is_output_layer = true;
    return out;
}

void Model::apply_masks() {
    for (Param& p : params_) {
        for (size_t i = 0; i < p.value.numel(); ++i)
            if (p.mask[i] == 0.0) p.value[i] = 0.0;
    }
}

namespace {

bool all_ones(const Tensor& t) {
    for (size_t i = 0; i < t.numel(); ++i)
        if (t[i] != 1.0) return false;
    return true;
}

}  // namespace

Model::Bindings Model::bind(ad::Tape& tape, const Tensor& batch, bool input_differentiable,
                            const ParamProvider& provider) const {
    bool ok = batch.rank() == spec_.input_shape.size() + 1;
    for (size_t i = 0; ok && i < spec_.input_shape.size(); ++i)
        ok = batch.dim(i + 1) == spec_.input_shape[i];
    if (!ok)
        throw Error::shape("model: batch shape " + shape_str(batch.shape()) +
                           " does not match input shape " + shape_str(spec_.input_shape));

    Bindings b;
    b.leaves.resize(params_.size());
    b.rho_leaves.resize(params_.size());
    b.input = tape.input(batch, input_differentiable);

    auto effective = [&](size_t idx) -> ad::Var {
        if (provider) return provider(tape, idx, b);
        const Param& p = params_[idx];
        ad::Var leaf = tape.input(p.value, true);
        b.leaves[idx] = leaf;
        if (all_ones(p.mask)) return leaf;
        return ops::mul(leaf, tape.constant(p.mask));
    };

    ad::Var x = b.input;
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
        const LayerSpec& l = spec_.layers[i];
        switch (l.kind) {
            case LayerKind::dense: {
                auto [wi, bi] = layer_params_[i];
                ad::Var w = effective(static_cast<size_t>(wi));
                ad::Var bias = effective(static_cast<size_t>(bi));
                x = ops::add(ops::linear(x, w), bias);
                break;
            }
            case LayerKind::conv: {
                auto [wi, bi] = layer_params_[i];
                ad::Var w = effective(static_cast<size_t>(wi));
                ad::Var bias = effective(static_cast<size_t>(bi));
                bias = ops::reshape(bias, {l.channels, 1, 1});
                x = ops::add(ops::conv2d(x, w, l.pad), bias);
                break;
            }
            case LayerKind::relu:
                x = ops::relu(x);
                break;
            case LayerKind::pool:
                x = ops::maxpool2(x);
                break;
            case LayerKind::flatten:
                x = ops::flatten(x);
                break;
        }
    }
    b.logits = x;
    return b;
}

Tensor Model::logits(const Tensor& batch) const {
    ad::Tape tape;
    return bind(tape, batch).logits.value();
}

Tensor Model::predict(const Tensor& batch) const {
    ad::Tape tape;
    Bindings b = bind(tape, batch);
    return ops::softmax(b.logits).value();
}

std::vector<Tensor> Model::sample_noise(Rng& rng) const {
    std::vector<Tensor> noise;
    noise.reserve(params_.size());
    for (const Param& p : params_) noise.push_back(Tensor::normal(p.value.shape(), rng));
    return noise;
}

Model::ParamProvider Model::bayesian_provider(const std::vector<Tensor>& noise) const {
    if (!spec_.bayesian) throw Error::state("bayesian_provider: model is not bayesian");
    return [this, &noise](ad::Tape& tape, size_t idx, Bindings& b) -> ad::Var {
        const Param& p = params_[idx];
        ad::Var mu = tape.input(p.value, true);
        ad::Var rho = tape.input(p.rho, true);
        b.leaves[idx] = mu;
        b.rho_leaves[idx] = rho;
        ad::Var t = ops::softplus(rho);
        ad::Var w = ops::add(mu, ops::mul(t, tape.constant(noise[idx])));
        // mean and noise both masked
        return ops::mul(w, tape.constant(p.mask));
    };
}

Tensor Model::bayesian_predict(const Tensor& batch, size_t n_samples, Rng& rng) const {
    if (!spec_.bayesian) throw Error::state("bayesian_predict: model is not bayesian");
    if (n_samples < 1) throw Error::invalid_arg("bayesian_predict: n_samples must be >= 1");
    Tensor acc;
    for (size_t s = 0; s < n_samples; ++s) {
        std::vector<Tensor> noise = sample_noise(rng);
        ad::Tape tape;
        Bindings b = bind(tape, batch, false, bayesian_provider(noise));
        Tensor probs = ops::softmax(b.logits).value();
        if (s == 0)
            acc = std::move(probs);
        else
            acc.add_(probs);
    }
    acc.scale_(1.0 / static_cast<double>(n_samples));
    return acc;
}

Model::LossBinding Model::bayesian_loss(ad::Tape& tape, const Tensor& batch,
                                        const std::vector<size_t>& labels, double kl_weight,
                                        Rng& noise_rng) const {
    if (!spec_.bayesian) throw Error::state("bayesian_loss: model is not bayesian");
    std::vector<Tensor> noise = sample_noise(noise_rng);
    Bindings b = bind(tape, batch, false, bayesian_provider(noise));
    ad::Var nll = ops::cross_entropy(b.logits, tape.constant(ad::onehot(labels, spec_.classes)));

    // closed-form KL(N(mu, t^2) || N(0,1)) per weight: 0.5 (mu^2 + t^2 - 1) - ln t,
    // masked-out weights contribute nothing.
    ad::Var kl_sum;
    bool first = true;
    for (size_t i = 0; i < params_.size(); ++i) {
        ad::Var mu = b.leaves[i];
        ad::Var rho = b.rho_leaves[i];
        ad::Var t = ops::softplus(rho);
        ad::Var term = ops::add_scalar(
            ops::sub(ops::scale(ops::add(ops::pow_scalar(mu, 2.0), ops::pow_scalar(t, 2.0)), 0.5),
                     ops::log(t)),
            -0.5);
        term = ops::mul(term, tape.constant(params_[i].mask));
        ad::Var s = ops::sum(term);
        kl_sum = first ? s : ops::add(kl_sum, s);
        first = false;
    }
    LossBinding out;
    out.loss = ops::add(nll, ops::scale(kl_sum, kl_weight));
    out.bindings = std::move(b);
    return out;
}

Ensemble Ensemble::build(const EnsembleSpec& spec) {
    if (spec.members < 1) throw Error::invalid_arg("ensemble: need at least one member");
    if (spec.seeds.size() != spec.members)
        throw Error::invalid_arg("ensemble: seed count does not match member count");
    for (size_t i = 0; i < spec.seeds.size(); ++i)
        for (size_t j = i + 1; j < spec.seeds.size(); ++j)
            if (spec.seeds[i] == spec.seeds[j])
                throw Error::invalid_arg("ensemble: member seeds must be distinct");
    Ensemble e;
    for (uint64_t seed : spec.seeds) {
        ModelSpec ms = spec.base;
        ms.init_seed = seed;
        e.members_.push_back(Model::build(ms));
    }
    return e;
}

Tensor Ensemble::predict(const Tensor& batch) const {
    if (members_.empty()) throw Error::state("ensemble: empty");
    std::vector<Tensor> outs;
    outs.reserve(members_.size());
    for (const Model& m : members_) outs.push_back(m.predict(batch));
    Tensor acc(outs[0].shape());
    std::vector<double> vals(members_.size());
    for (size_t i = 0; i < acc.numel(); ++i) {
        for (size_t m = 0; m < outs.size(); ++m) vals[m] = outs[m][i];
        std::sort(vals.begin(), vals.end());
        double s = 0.0;
        for (double v : vals) s += v;
        acc[i] = s / static_cast<double>(members_.size());
    }
    return acc;
}

}  // namespace spnn::nn

#include "detect.hpp"

#include <algorithm>
#include <cmath>

namespace spnn::detect {

namespace ops = spnn::ad;

std::vector<Tensor> batch_sensitivity(const nn::Model& model, const Tensor& batch,
                                      const std::vector<size_t>* labels, SensLoss loss) {
    ad::Tape tape;
    nn::Model::Bindings b = model.bind(tape, batch);
    ad::Var loss_var;
    if (loss == SensLoss::pseudo_label) {
        std::vector<size_t> lab;
        if (labels) {
            lab = *labels;
        } else {
            lab = ops::softmax(b.logits).value().argmax_rows();
        }
        loss_var = ops::cross_entropy(b.logits, tape.constant(ad::onehot(lab, model.spec().classes)));
    } else {
        ad::Var probs = ops::softmax(b.logits);
        size_t c = model.spec().classes;
        Tensor uniform =
            Tensor::full({batch.dim(0), c}, 1.0 / static_cast<double>(c));
        loss_var = ops::kl_div(probs, tape.constant(uniform));
    }
    ad::GradMap g = tape.backward(loss_var);
    const auto& params = model.params();
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor gi = g.at(b.leaves[i]);
        gi.mul_(params[i].value);  // w * dL/dw
        out.push_back(std::move(gi));
    }
    return out;
}

SensitivityProfile fit_profile(const nn::Model& model, const data::Dataset& train,
                               size_t batch_size, double p, SensLoss loss, double sigma_floor) {
    if (batch_size == 0) throw Error::invalid_arg("fit_profile: zero batch size");
    size_t n_batches = train.size() / batch_size;
    if (n_batches < 2)
        throw Error::invalid_arg("fit_profile: need at least 2 full batches, have " +
                                 std::to_string(n_batches));
    if (loss == SensLoss::pseudo_label && !train.labeled())
        throw Error::state("fit_profile: pseudo_label fitting needs train labels");

    SensitivityProfile prof;
    prof.batch_size = batch_size;
    prof.p = p;
    prof.sigma_floor = sigma_floor;
    prof.loss = loss;

    // Welford accumulation per weight across batches.
    std::vector<Tensor> mean, m2;
    for (size_t bi = 0; bi < n_batches; ++bi) {
        Tensor batch = train.batch(bi * batch_size, batch_size);
        std::vector<size_t> labels;
        const std::vector<size_t>* lp = nullptr;
        if (loss == SensLoss::pseudo_label) {
            labels = train.label_slice(bi * batch_size, batch_size);
            lp = &labels;
        }
        std::vector<Tensor> g = batch_sensitivity(model, batch, lp, loss);
        if (bi == 0) {
            mean = g;
            for (const Tensor& t : g) m2.push_back(Tensor::zeros(t.shape()));
            continue;
        }
        double k = static_cast<double>(bi + 1);
        for (size_t t = 0; t < g.size(); ++t) {
            for (size_t i = 0; i < g[t].numel(); ++i) {
                double delta = g[t][i] - mean[t][i];
                mean[t][i] += delta / k;
                m2[t][i] += delta * (g[t][i] - mean[t][i]);
            }
        }
    }
    prof.mu = std::move(mean);
    prof.sigma.reserve(m2.size());
    double denom = static_cast<double>(n_batches - 1);
    for (Tensor& t : m2) {
        t.map_([denom](double v) { return std::sqrt(std::max(0.0, v) / denom); });
        prof.sigma.push_back(std::move(t));
    }
    return prof;
}

double sensnorm_score(const nn::Model& model, const SensitivityProfile& profile,
                      const Tensor& batch) {
    if (profile.mu.size() != model.params().size())
        throw Error::shape("sensnorm_score: profile does not match model parameters");
    std::vector<Tensor> g = batch_sensitivity(model, batch, nullptr, profile.loss);
    double acc = 0.0;
    for (size_t t = 0; t < g.size(); ++t) {
        if (!g[t].same_shape(profile.mu[t]))
            throw Error::shape("sensnorm_score: profile shape mismatch on parameter " +
                               model.params()[t].name);
        for (size_t i = 0; i < g[t].numel(); ++i) {
            double z = (g[t][i] - profile.mu[t][i]) / std::max(profile.sigma[t][i], profile.sigma_floor);
            acc += std::pow(std::fabs(z), profile.p);
        }
    }
    return std::pow(acc, 1.0 / profile.p);
}

namespace {

Tensor rotate90(const Tensor& img, int times) {
    size_t h = img.dim(0), w = img.dim(1);
    times = ((times % 4) + 4) % 4;
    if (times == 0) return img;
    size_t oh = (times % 2 == 0) ? h : w;
    size_t ow = (times % 2 == 0) ? w : h;
    Tensor out({oh, ow});
    for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x) {
            size_t ty, tx;
            switch (times) {
                case 1: ty = x; tx = h - 1 - y; break;           // 90 cw
                case 2: ty = h - 1 - y; tx = w - 1 - x; break;   // 180
                default: ty = w - 1 - x; tx = y; break;          // 270
            }
            out[ty * ow + tx] = img[y * w + x];
        }
    return out;
}

Tensor flip(const Tensor& img, bool horizontal) {
    size_t h = img.dim(0), w = img.dim(1);
    Tensor out({h, w});
    for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x) {
            size_t sy = horizontal ? y : h - 1 - y;
            size_t sx = horizontal ? w - 1 - x : x;
            out[y * w + x] = img[sy * w + sx];
        }
    return out;
}

// Rotation about the center by `deg` plus integer translation, bilinear
// sampling with zero padding.
Tensor affine(const Tensor& img, double deg, double ty, double tx) {
    size_t h = img.dim(0), w = img.dim(1);
    double cy = (static_cast<double>(h) - 1.0) / 2.0;
    double cx = (static_cast<double>(w) - 1.0) / 2.0;
    double rad = deg * M_PI / 180.0;
    double c = std::cos(rad), s = std::sin(rad);
    Tensor out({h, w});
    for (size_t y = 0; y < h; ++y) {
        for (size_t x = 0; x < w; ++x) {
            double dy = static_cast<double>(y) - cy - ty;
            double dx = static_cast<double>(x) - cx - tx;
            double sy = c * dy - s * dx + cy;
            double sx = s * dy + c * dx + cx;
            long y0 = static_cast<long>(std::floor(sy));
            long x0 = static_cast<long>(std::floor(sx));
            double fy = sy - static_cast<double>(y0);
            double fx = sx - static_cast<double>(x0);
            auto sample = [&](long yy, long xx) -> double {
                if (yy < 0 || yy >= static_cast<long>(h) || xx < 0 || xx >= static_cast<long>(w))
                    return 0.0;
                return img[static_cast<size_t>(yy) * w + static_cast<size_t>(xx)];
            };
            out[y * w + x] = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                             fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
        }
    }
    return out;
}

}  // namespace

Tensor augment_sample(const Tensor& sample, size_t augmentations, uint64_t seed) {
    // Accept [H,W], [1,H,W], or flat square [D].
    Tensor img = sample;
    if (img.rank() == 3 && img.dim(0) == 1) img = img.reshaped({img.dim(1), img.dim(2)});
    if (img.rank() == 1) {
        size_t side = static_cast<size_t>(std::lround(std::sqrt(static_cast<double>(img.numel()))));
        if (side * side != img.numel())
            throw Error::invalid_arg("augment_sample: non-image input with augmentations requested");
        img = img.reshaped({side, side});
    }
    if (img.rank() != 2)
        throw Error::invalid_arg("augment_sample: non-image input with augmentations requested, shape " +
                                 shape_str(sample.shape()));
    size_t h = img.dim(0), w = img.dim(1);
    if (h != w && augmentations >= 1)
        throw Error::invalid_arg("augment_sample: rotations need square images");

    std::vector<Tensor> batch;
    batch.push_back(img);
    Rng rng(seed);
    for (size_t k = 0; k < augmentations; ++k) {
        switch (k) {
            case 0: batch.push_back(rotate90(img, 1)); break;
            case 1: batch.push_back(rotate90(img, 2)); break;
            case 2: batch.push_back(rotate90(img, 3)); break;
            case 3: batch.push_back(flip(img, true)); break;
            case 4: batch.push_back(flip(img, false)); break;
            default: {
                double deg = rng.uniform(-15.0, 15.0);
                double ty = rng.uniform(-2.0, 2.0);
                double tx = rng.uniform(-2.0, 2.0);
                batch.push_back(affine(img, deg, ty, tx));
                break;
            }
        }
    }
    Tensor out({batch.size(), h, w});
    for (size_t i = 0; i < batch.size(); ++i)
        std::copy(batch[i].data(), batch[i].data() + h * w, out.data() + i * h * w);
    return out;
}

double sensnorm_single(const nn::Model& model, const SensitivityProfile& profile,
                       const Tensor& sample, size_t augmentations, uint64_t seed) {
    Tensor batch;
    if (augmentations == 0) {
        Shape bshape = sample.shape();
        bshape.insert(bshape.begin(), 1);
        batch = sample.reshaped(bshape);
    } else {
        batch = augment_sample(sample, augmentations, seed);
    }
    // Adapt to the model's input layout when it is flat.
    const Shape& in = model.spec().input_shape;
    if (in.size() == 1 && batch.numel() / batch.dim(0) == in[0])
        batch = batch.reshaped({batch.dim(0), in[0]});
    return sensnorm_score(model, profile, batch);
}

std::vector<double> msp_scores(const Tensor& probabilities) {
    if (probabilities.rank() != 2) throw Error::shape("msp: expected [N, classes]");
    size_t n = probabilities.dim(0), c = probabilities.dim(1);
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) {
        const double* p = probabilities.data() + i * c;
        out[i] = *std::max_element(p, p + c);
    }
    return out;
}

double msp_batch_score(const Tensor& probabilities) {
    std::vector<double> s = msp_scores(probabilities);
    double acc = 0.0;
    for (double v : s) acc += v;
    return acc / static_cast<double>(s.size());
}

double gradnorm_score(const nn::Model& model, const Tensor& batch) {
    auto groups = model.unit_groups();
    if (groups.empty() ||
        model.spec().layers[model.params()[groups.back().weight_param].layer].kind !=
            nn::LayerKind::dense)
        throw Error::state("gradnorm_score: model has no final dense layer");
    size_t final_w = groups.back().weight_param;

    ad::Tape tape;
    nn::Model::Bindings b = model.bind(tape, batch);
    ad::Var probs = ops::softmax(b.logits);
    size_t c = model.spec().classes;
    Tensor uniform = Tensor::full({batch.dim(0), c}, 1.0 / static_cast<double>(c));
    ad::Var loss = ops::kl_div(probs, tape.constant(uniform));
    ad::GradMap g = tape.backward(loss);
    return g.at(b.leaves[final_w]).l1_norm();
}

}  // namespace spnn::detect

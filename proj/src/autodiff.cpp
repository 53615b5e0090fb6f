#include "autodiff.hpp"

#include <cmath>
#include <memory>

namespace spnn::ad {

const Tensor& Var::value() const {
    if (!valid()) throw Error::invalid_arg("Var: unbound handle");
    return tape->value(id);
}

const Tensor& GradMap::at(Var v) const {
    auto it = grads_.find(v.id);
    if (it != grads_.end()) return it->second;
    if (!v.valid() || !v.tape->is_leaf(v.id) || !v.tape->requires_grad(v.id))
        throw Error::invalid_arg("GradMap::at: node is not a differentiable leaf");
    auto [zit, _] = zero_cache_.try_emplace(v.id, Tensor::zeros(v.value().shape()));
    return zit->second;
}

Var Tape::input(Tensor value, bool differentiable) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = differentiable;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::emit(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward,
               const char* name) {
    Node n;
    n.value = std::move(value);
    n.name = name;
    for (Var v : inputs) {
        if (v.tape != this) throw Error::invalid_arg(std::string(name) + ": input from another tape");
        if (n.n_inputs >= 3) throw Error::internal("Tape::emit: too many inputs");
        n.inputs[n.n_inputs++] = v.id;
        n.requires_grad = n.requires_grad || nodes_[static_cast<size_t>(v.id)].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::add_grad(int id, const Tensor& g) {
    auto uid = static_cast<size_t>(id);
    if (!nodes_[uid].requires_grad) return;
    if (!has_grad_[uid]) {
        grads_[uid] = g;
        has_grad_[uid] = 1;
    } else {
        grads_[uid].add_(g);
    }
}

void Tape::add_grad(int id, Tensor&& g) {
    auto uid = static_cast<size_t>(id);
    if (!nodes_[uid].requires_grad) return;
    if (!has_grad_[uid]) {
        grads_[uid] = std::move(g);
        has_grad_[uid] = 1;
    } else {
        grads_[uid].add_(g);
    }
}

GradMap Tape::backward(Var loss) {
    if (loss.tape != this) throw Error::invalid_arg("backward: loss from another tape");
    if (loss.value().numel() != 1)
        throw Error::invalid_arg("backward: loss must be scalar, got shape " +
                                 shape_str(loss.value().shape()));
    grads_.assign(nodes_.size(), Tensor());
    has_grad_.assign(nodes_.size(), 0);

    GradMap out;
    if (!nodes_[static_cast<size_t>(loss.id)].requires_grad) return out;

    add_grad(loss.id, Tensor::full(loss.value().shape(), 1.0));
    for (int id = loss.id; id >= 0; --id) {
        auto uid = static_cast<size_t>(id);
        if (!has_grad_[uid]) continue;
        Node& n = nodes_[uid];
        if (n.n_inputs == 0) {
            if (n.requires_grad) out.grads_.emplace(id, std::move(grads_[uid]));
            continue;
        }
        if (n.backward) n.backward(*this, id, grads_[uid]);
        grads_[uid] = Tensor();  // release intermediate grad early
    }
    grads_.clear();
    has_grad_.clear();
    return out;
}

// ---- binary elementwise ----

Var add(Var a, Var b) {
    Tensor v = spnn::add(a.value(), b.value());
    int ia = a.id, ib = b.id;
    return a.tape->emit(std::move(v), {a, b},
                        [ia, ib](Tape& t, int, const Tensor& g) {
                            t.add_grad(ia, reduce_to_shape(g, t.value(ia).shape()));
                            t.add_grad(ib, reduce_to_shape(g, t.value(ib).shape()));
                        },
                        "add");
}

Var sub(Var a, Var b) {
    Tensor v = spnn::sub(a.value(), b.value());
    int ia = a.id, ib = b.id;
    return a.tape->emit(std::move(v), {a, b},
                        [ia, ib](Tape& t, int, const Tensor& g) {
                            t.add_grad(ia, reduce_to_shape(g, t.value(ia).shape()));
                            Tensor gb = reduce_to_shape(g, t.value(ib).shape());
                            gb.scale_(-1.0);
                            t.add_grad(ib, std::move(gb));
                        },
                        "sub");
}

Var mul(Var a, Var b) {
    Tensor v = spnn::mul(a.value(), b.value());
    int ia = a.id, ib = b.id;
    return a.tape->emit(std::move(v), {a, b},
                        [ia, ib](Tape& t, int, const Tensor& g) {
                            t.add_grad(ia, reduce_to_shape(spnn::mul(g, t.value(ib)), t.value(ia).shape()));
                            t.add_grad(ib, reduce_to_shape(spnn::mul(g, t.value(ia)), t.value(ib).shape()));
                        },
                        "mul");
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double c) {
    Tensor v = spnn::scale(a.value(), c);
    int ia = a.id;
    return a.tape->emit(std::move(v), {a},
                        [ia, c](Tape& t, int, const Tensor& g) {
                            t.add_grad(ia, spnn::scale(g, c));
                        },
                        "scale");
}

Var add_scalar(Var a, double c) {
    Tensor v = a.value();
    v.shift_(c);
    int ia = a.id;
    return a.tape->emit(std::move(v), {a},
                        [ia](Tape& t, int, const Tensor& g) { t.add_grad(ia, g); },
                        "add_scalar");
}

// ---- linear algebra ----

Var matmul(Var a, Var b) {
    Tensor v = mm_nn(a.value(), b.value());
    int ia = a.id, ib = b.id;
    return a.tape->emit(std::move(v), {a, b},
                        [ia, ib](Tape& t, int, const Tensor& g) {
                            t.add_grad(ia, mm_nt(g, t.value(ib)));
                            t.add_grad(ib, mm_tn(t.value(ia), g));
                        },
                        "matmul");
}

Var linear(Var x, Var w) {
    Tensor v = mm_nt(x.value(), w.value());
    int ix = x.id, iw = w.id;
    return x.tape->emit(std::move(v), {x, w},
                        [ix, iw](Tape& t, int, const Tensor& g) {
                            t.add_grad(ix, mm_nn(g, t.value(iw)));
                            t.add_grad(iw, mm_tn(g, t.value(ix)));
                        },
                        "linear");
}

Var conv2d(Var x, Var w, size_t pad) {
    Tensor v = conv2d_forward(x.value(), w.value(), pad);
    int ix = x.id, iw = w.id;
    return x.tape->emit(std::move(v), {x, w},
                        [ix, iw, pad](Tape& t, int, const Tensor& g) {
                            t.add_grad(ix, conv2d_grad_input(g, t.value(iw), t.value(ix).shape(), pad));
                            t.add_grad(iw, conv2d_grad_weight(g, t.value(ix), t.value(iw).shape(), pad));
                        },
                        "conv2d");
}

// ---- elementwise unary ----

namespace {

template <typename Fwd, typename Dx>
Var unary(Var x, Fwd f, Dx dfdx, const char* name) {
    Tensor v = x.value();
    for (size_t i = 0; i < v.numel(); ++i) v[i] = f(v[i]);
    int ix = x.id;
    return x.tape->emit(std::move(v), {x},
                        [ix, dfdx](Tape& t, int, const Tensor& g) {
                            const Tensor& in = t.value(ix);
                            Tensor gx(in.shape());
                            for (size_t i = 0; i < in.numel(); ++i) gx[i] = g[i] * dfdx(in[i]);
                            t.add_grad(ix, std::move(gx));
                        },
                        name);
}

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

Var relu(Var x) {
    return unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; },
        "relu");
}

Var abs(Var x) {
    return unary(
        x, [](double v) { return std::fabs(v); },
        [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }, "abs");
}

Var exp(Var x) {
    return unary(
        x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); }, "exp");
}

Var log(Var x) {
    return unary(
        x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; }, "log");
}

Var softplus(Var x) {
    return unary(
        x, [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
        [](double v) { return sigmoid(v); }, "softplus");
}

Var pow_scalar(Var x, double p) {
    return unary(
        x, [p](double v) { return std::pow(v, p); },
        [p](double v) { return p * std::pow(v, p - 1.0); }, "pow");
}

// ---- pooling / views ----

Var maxpool2(Var x) {
    const Tensor& in = x.value();
    if (in.rank() != 4)
        throw Error::shape("maxpool2: expected [N,C,H,W], got " + shape_str(in.shape()));
    size_t N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw Error::shape("maxpool2: spatial dims must be even, got " + shape_str(in.shape()));
    size_t Ho = H / 2, Wo = W / 2;
    Tensor out({N, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<size_t>>(out.numel());
    const double* p = in.data();
    double* po = out.data();
    size_t o = 0;
    for (size_t nc = 0; nc < N * C; ++nc) {
        const double* plane = p + nc * H * W;
        for (size_t oy = 0; oy < Ho; ++oy) {
            for (size_t ox = 0; ox < Wo; ++ox, ++o) {
                size_t base = (2 * oy) * W + 2 * ox;
                size_t best = base;
                double bv = plane[base];
                for (size_t dy = 0; dy < 2; ++dy)
                    for (size_t dx = 0; dx < 2; ++dx) {
                        size_t i = base + dy * W + dx;
                        if (plane[i] > bv) {
                            bv = plane[i];
                            best = i;
                        }
                    }
                po[o] = bv;
                (*argmax)[o] = nc * H * W + best;
            }
        }
    }
    int ix = x.id;
    return x.tape->emit(std::move(out), {x},
                        [ix, argmax](Tape& t, int, const Tensor& g) {
                            Tensor gx(t.value(ix).shape());
                            for (size_t i = 0; i < g.numel(); ++i) gx[(*argmax)[i]] += g[i];
                            t.add_grad(ix, std::move(gx));
                        },
                        "maxpool2");
}

Var reshape(Var x, Shape shape) {
    Tensor v = x.value().reshaped(std::move(shape));
    int ix = x.id;
    return x.tape->emit(std::move(v), {x},
                        [ix](Tape& t, int, const Tensor& g) {
                            t.add_grad(ix, g.reshaped(t.value(ix).shape()));
                        },
                        "reshape");
}

Var flatten(Var x) {
    const Tensor& v = x.value();
    if (v.rank() < 1) throw Error::shape("flatten: requires rank >= 1");
    return reshape(x, {v.dim(0), v.numel() / v.dim(0)});
}

// ---- softmax family ----

namespace {

struct Rows {
    size_t rows, cols;
};

Rows last_axis_rows(const Tensor& t, const char* name) {
    if (t.rank() < 1) throw Error::shape(std::string(name) + ": requires rank >= 1");
    size_t cols = t.shape().back();
    return {t.numel() / cols, cols};
}

Tensor log_softmax_rows(const Tensor& x) {
    auto [rows, cols] = last_axis_rows(x, "log_softmax");
    Tensor out(x.shape());
    for (size_t r = 0; r < rows; ++r) {
        const double* p = x.data() + r * cols;
        double* q = out.data() + r * cols;
        double mx = p[0];
        for (size_t c = 1; c < cols; ++c) mx = std::max(mx, p[c]);
        double s = 0.0;
        for (size_t c = 0; c < cols; ++c) s += std::exp(p[c] - mx);
        double lse = mx + std::log(s);
        for (size_t c = 0; c < cols; ++c) q[c] = p[c] - lse;
    }
    return out;
}

}  // namespace

Var softmax(Var x) {
    Tensor lsm = log_softmax_rows(x.value());
    Tensor v = lsm;
    v.map_([](double a) { return std::exp(a); });
    auto [rows, cols] = last_axis_rows(v, "softmax");
    size_t R = rows, C = cols;
    int ix = x.id;
    Tensor probs = v;
    return x.tape->emit(std::move(v), {x},
                        [ix, probs, R, C](Tape& t, int, const Tensor& g) {
                            Tensor gx(probs.shape());
                            for (size_t r = 0; r < R; ++r) {
                                const double* pg = g.data() + r * C;
                                const double* pp = probs.data() + r * C;
                                double dot = 0.0;
                                for (size_t c = 0; c < C; ++c) dot += pg[c] * pp[c];
                                double* px = gx.data() + r * C;
                                for (size_t c = 0; c < C; ++c) px[c] = pp[c] * (pg[c] - dot);
                            }
                            t.add_grad(ix, std::move(gx));
                        },
                        "softmax");
}

Var log_softmax(Var x) {
    Tensor v = log_softmax_rows(x.value());
    auto [rows, cols] = last_axis_rows(v, "log_softmax");
    size_t R = rows, C = cols;
    int ix = x.id;
    Tensor lsm = v;
    return x.tape->emit(std::move(v), {x},
                        [ix, lsm, R, C](Tape& t, int, const Tensor& g) {
                            Tensor gx(lsm.shape());
                            for (size_t r = 0; r < R; ++r) {
                                const double* pg = g.data() + r * C;
                                const double* pl = lsm.data() + r * C;
                                double gsum = 0.0;
                                for (size_t c = 0; c < C; ++c) gsum += pg[c];
                                double* px = gx.data() + r * C;
                                for (size_t c = 0; c < C; ++c) px[c] = pg[c] - std::exp(pl[c]) * gsum;
                            }
                            t.add_grad(ix, std::move(gx));
                        },
                        "log_softmax");
}

// ---- reductions ----

Var sum(Var x) {
    Tensor v = Tensor::scalar(x.value().sum());
    int ix = x.id;
    return x.tape->emit(std::move(v), {x},
                        [ix](Tape& t, int, const Tensor& g) {
                            t.add_grad(ix, Tensor::full(t.value(ix).shape(), g[0]));
                        },
                        "sum");
}

Var mean(Var x) {
    size_t n = x.value().numel();
    if (n == 0) throw Error::shape("mean: empty tensor");
    Tensor v = Tensor::scalar(x.value().sum() / static_cast<double>(n));
    int ix = x.id;
    return x.tape->emit(std::move(v), {x},
                        [ix, n](Tape& t, int, const Tensor& g) {
                            t.add_grad(ix, Tensor::full(t.value(ix).shape(), g[0] / static_cast<double>(n)));
                        },
                        "mean");
}

Var select(Var x, size_t flat_index) {
    const Tensor& in = x.value();
    if (flat_index >= in.numel()) throw Error::shape("select: index out of range");
    Tensor v = Tensor::scalar(in[flat_index]);
    int ix = x.id;
    return x.tape->emit(std::move(v), {x},
                        [ix, flat_index](Tape& t, int, const Tensor& g) {
                            Tensor gx(t.value(ix).shape());
                            gx[flat_index] = g[0];
                            t.add_grad(ix, std::move(gx));
                        },
                        "select");
}

// ---- losses ----

Var cross_entropy(Var logits, Var targets) {
    const Tensor& lg = logits.value();
    const Tensor& tg = targets.value();
    if (!lg.same_shape(tg))
        throw Error::shape("cross_entropy: logits " + shape_str(lg.shape()) + " vs targets " +
                           shape_str(tg.shape()));
    if (lg.rank() != 2) throw Error::shape("cross_entropy: expected [rows, classes]");
    Tensor lsm = log_softmax_rows(lg);
    size_t R = lg.dim(0), C = lg.dim(1);
    double loss = 0.0;
    for (size_t i = 0; i < lsm.numel(); ++i) loss -= tg[i] * lsm[i];
    loss /= static_cast<double>(R);
    int il = logits.id, it = targets.id;
    return logits.tape->emit(Tensor::scalar(loss), {logits, targets},
                             [il, it, lsm, R, C](Tape& t, int, const Tensor& g) {
                                 double s = g[0] / static_cast<double>(R);
                                 const Tensor& tg = t.value(it);
                                 Tensor gl(t.value(il).shape());
                                 for (size_t r = 0; r < R; ++r) {
                                     const double* pl = lsm.data() + r * C;
                                     const double* pt = tg.data() + r * C;
                                     double tsum = 0.0;
                                     for (size_t c = 0; c < C; ++c) tsum += pt[c];
                                     double* pg = gl.data() + r * C;
                                     for (size_t c = 0; c < C; ++c)
                                         pg[c] = s * (std::exp(pl[c]) * tsum - pt[c]);
                                 }
                                 t.add_grad(il, std::move(gl));
                                 Tensor gt = lsm;
                                 gt.scale_(-s);
                                 t.add_grad(it, std::move(gt));
                             },
                             "cross_entropy");
}

Var kl_div(Var p, Var q) {
    const Tensor& pv = p.value();
    const Tensor& qv = q.value();
    if (!pv.same_shape(qv))
        throw Error::shape("kl_div: p " + shape_str(pv.shape()) + " vs q " + shape_str(qv.shape()));
    if (pv.rank() != 2) throw Error::shape("kl_div: expected [rows, classes]");
    size_t R = pv.dim(0);
    double loss = 0.0;
    for (size_t i = 0; i < pv.numel(); ++i) {
        if (pv[i] > 0.0) loss += pv[i] * (std::log(pv[i]) - std::log(qv[i]));
    }
    loss /= static_cast<double>(R);
    int ip = p.id, iq = q.id;
    return p.tape->emit(Tensor::scalar(loss), {p, q},
                        [ip, iq, R](Tape& t, int, const Tensor& g) {
                            double s = g[0] / static_cast<double>(R);
                            const Tensor& pv = t.value(ip);
                            const Tensor& qv = t.value(iq);
                            Tensor gp(pv.shape());
                            Tensor gq(qv.shape());
                            for (size_t i = 0; i < pv.numel(); ++i) {
                                gp[i] = pv[i] > 0.0 ? s * (std::log(pv[i]) - std::log(qv[i]) + 1.0) : 0.0;
                                gq[i] = -s * pv[i] / qv[i];
                            }
                            t.add_grad(ip, std::move(gp));
                            t.add_grad(iq, std::move(gq));
                        },
                        "kl_div");
}

Var straight_through_mask(Var w, Var scores, const Tensor& mask) {
    const Tensor& wv = w.value();
    if (!wv.same_shape(scores.value()) || !wv.same_shape(mask))
        throw Error::shape("straight_through_mask: weight/score/mask shapes disagree");
    Tensor v = spnn::mul(wv, mask);
    int iw = w.id, is = scores.id;
    Tensor m = mask;
    return w.tape->emit(std::move(v), {w, scores},
                        [iw, is, m](Tape& t, int, const Tensor& g) {
                            t.add_grad(is, spnn::mul(g, t.value(iw)));
                            t.add_grad(iw, spnn::mul(g, m));
                        },
                        "straight_through_mask");
}

// ---- second order ----

std::vector<Tensor> hvp(const GradFn& grad_fn, const std::vector<Tensor>& params,
                        const std::vector<Tensor>& v) {
    if (params.empty()) throw Error::invalid_arg("hvp: empty parameter list");
    if (params.size() != v.size()) throw Error::shape("hvp: params/v count mismatch");
    double wnorm = 0.0, vnorm = 0.0;
    for (size_t i = 0; i < params.size(); ++i) {
        if (!params[i].same_shape(v[i]))
            throw Error::shape("hvp: v shape " + shape_str(v[i].shape()) +
                               " does not match param shape " + shape_str(params[i].shape()));
        double w2 = params[i].l2_norm();
        double v2 = v[i].l2_norm();
        wnorm += w2 * w2;
        vnorm += v2 * v2;
    }
    wnorm = std::sqrt(wnorm);
    vnorm = std::sqrt(vnorm);
    double eps = std::sqrt(0x1.0p-52) * (1.0 + wnorm) / std::max(vnorm, 1e-12);

    auto shifted = [&](double s) {
        std::vector<Tensor> p = params;
        for (size_t i = 0; i < p.size(); ++i) {
            for (size_t j = 0; j < p[i].numel(); ++j) p[i][j] += s * v[i][j];
        }
        return grad_fn(p);
    };
    std::vector<Tensor> gp = shifted(eps);
    std::vector<Tensor> gm = shifted(-eps);
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor h = gp[i];
        h.sub_(gm[i]);
        h.scale_(1.0 / (2.0 * eps));
        out.push_back(std::move(h));
    }
    return out;
}

Tensor onehot(const std::vector<size_t>& labels, size_t classes) {
    Tensor t({labels.size(), classes});
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes)
            throw Error::invalid_arg("onehot: label " + std::to_string(labels[i]) +
                                     " out of range for " + std::to_string(classes) + " classes");
        t[i * classes + labels[i]] = 1.0;
    }
    return t;
}

}  // namespace spnn::ad

#include "metrics.hpp"

#include <algorithm>
#include <cmath>

namespace spnn::metrics {

namespace {

// Anomalousness view: higher value = more anomalous.
std::vector<double> anomalousness(const std::vector<double>& scores, Orientation o) {
    std::vector<double> a = scores;
    if (o == Orientation::lower_is_anomalous)
        for (double& v : a) v = -v;
    return a;
}

}  // namespace

double auroc(const std::vector<double>& in_scores, const std::vector<double>& anomaly_scores,
             Orientation orientation) {
    if (in_scores.empty() || anomaly_scores.empty())
        throw Error::invalid_arg("auroc: empty score list");
    std::vector<double> in = anomalousness(in_scores, orientation);
    std::vector<double> an = anomalousness(anomaly_scores, orientation);
    std::sort(in.begin(), in.end());
    unsigned long long wins = 0, ties = 0;
    for (double a : an) {
        auto lo = std::lower_bound(in.begin(), in.end(), a);
        auto hi = std::upper_bound(lo, in.end(), a);
        wins += static_cast<unsigned long long>(lo - in.begin());
        ties += static_cast<unsigned long long>(hi - lo);
    }
    unsigned long long pairs = static_cast<unsigned long long>(in.size()) *
                               static_cast<unsigned long long>(an.size());
    return static_cast<double>(2 * wins + ties) / (2.0 * static_cast<double>(pairs));
}

double aupr(const std::vector<double>& in_scores, const std::vector<double>& anomaly_scores,
            Orientation orientation) {
    if (in_scores.empty() || anomaly_scores.empty())
        throw Error::invalid_arg("aupr: empty score list");
    std::vector<double> in = anomalousness(in_scores, orientation);
    std::vector<double> an = anomalousness(anomaly_scores, orientation);

    // Sweep thresholds downward through every distinct score; predict
    // positive (anomalous) when score >= threshold.
    std::vector<double> all = an;
    all.insert(all.end(), in.begin(), in.end());
    std::sort(all.begin(), all.end(), std::greater<>());
    all.erase(std::unique(all.begin(), all.end()), all.end());

    std::sort(in.begin(), in.end(), std::greater<>());
    std::sort(an.begin(), an.end(), std::greater<>());

    double area = 0.0;
    double prev_recall = 0.0;
    size_t ti = 0, ta = 0;
    size_t total_pos = an.size();
    for (double thr : all) {
        while (ta < an.size() && an[ta] >= thr) ++ta;
        while (ti < in.size() && in[ti] >= thr) ++ti;
        size_t tp = ta, fp = ti;
        if (tp + fp == 0) continue;
        double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
        double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return area;
}

double brier(const Tensor& probabilities, const std::vector<size_t>& labels) {
    if (probabilities.rank() != 2)
        throw Error::shape("brier: expected [N, classes] probabilities");
    size_t n = probabilities.dim(0), c = probabilities.dim(1);
    if (labels.size() != n) throw Error::shape("brier: label count mismatch");
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (labels[i] >= c)
            throw Error::invalid_arg("brier: label " + std::to_string(labels[i]) + " out of range");
        const double* p = probabilities.data() + i * c;
        for (size_t j = 0; j < c; ++j) {
            double d = p[j] - (j == labels[i] ? 1.0 : 0.0);
            total += d * d;
        }
    }
    return total / static_cast<double>(n);
}

double accuracy(const Tensor& probabilities, const std::vector<size_t>& labels) {
    std::vector<size_t> pred = probabilities.argmax_rows();
    if (pred.size() != labels.size()) throw Error::shape("accuracy: label count mismatch");
    size_t hits = 0;
    for (size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == labels[i]) ++hits;
    return pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
}

double lipschitz_lower_bound(const nn::Model& model, const Tensor& samples,
                             size_t power_iterations) {
    if (power_iterations == 0) throw Error::invalid_arg("lipschitz: zero power iterations");
    if (samples.rank() < 1 || samples.dim(0) == 0)
        throw Error::invalid_arg("lipschitz: empty sample set");
    size_t n = samples.dim(0);
    size_t d = samples.numel() / n;
    size_t classes = model.spec().classes;

    double best = 0.0;
    Shape sample_shape(samples.shape().begin() + 1, samples.shape().end());
    for (size_t s = 0; s < n; ++s) {
        Shape bshape = sample_shape;
        bshape.insert(bshape.begin(), 1);
        Tensor x(bshape);
        std::copy(samples.data() + s * d, samples.data() + (s + 1) * d, x.data());

        // J rows: gradient of each logit w.r.t. the input.
        std::vector<std::vector<double>> J(classes, std::vector<double>(d, 0.0));
        for (size_t c = 0; c < classes; ++c) {
            ad::Tape tape;
            nn::Model::Bindings b = model.bind(tape, x, true);
            ad::GradMap g = tape.backward(ad::select(b.logits, c));
            Tensor gx = g.at(b.input);
            for (size_t j = 0; j < d; ++j) J[c][j] = gx[j];
        }
        // G = J J^T (classes x classes), power iterate for top eigenvalue.
        std::vector<std::vector<double>> G(classes, std::vector<double>(classes, 0.0));
        for (size_t i = 0; i < classes; ++i)
            for (size_t j = i; j < classes; ++j) {
                double acc = 0.0;
                for (size_t k = 0; k < d; ++k) acc += J[i][k] * J[j][k];
                G[i][j] = G[j][i] = acc;
            }
        std::vector<double> v(classes, 1.0 / std::sqrt(static_cast<double>(classes)));
        double lambda = 0.0;
        for (size_t it = 0; it < power_iterations; ++it) {
            std::vector<double> gv(classes, 0.0);
            for (size_t i = 0; i < classes; ++i)
                for (size_t j = 0; j < classes; ++j) gv[i] += G[i][j] * v[j];
            double norm = 0.0;
            for (double x2 : gv) norm += x2 * x2;
            norm = std::sqrt(norm);
            if (norm == 0.0) {
                lambda = 0.0;
                break;
            }
            for (size_t i = 0; i < classes; ++i) v[i] = gv[i] / norm;
            lambda = 0.0;
            for (size_t i = 0; i < classes; ++i)
                for (size_t j = 0; j < classes; ++j) lambda += v[i] * G[i][j] * v[j];
        }
        best = std::max(best, std::sqrt(std::max(0.0, lambda)));
    }
    return best;
}

double relative_metric(double sparse_value, double dense_value, MetricKind kind) {
    if (kind == MetricKind::higher_better) {
        if (dense_value == 0.0) throw Error::invalid_arg("relative_metric: zero denominator");
        return sparse_value / dense_value;
    }
    if (sparse_value == 0.0) throw Error::invalid_arg("relative_metric: zero denominator");
    return dense_value / sparse_value;
}

}  // namespace spnn::metrics

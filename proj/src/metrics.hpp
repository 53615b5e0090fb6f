#pragma once

#include "models.hpp"
#include "tensor.hpp"

namespace spnn::metrics {

enum class Orientation { lower_is_anomalous, higher_is_anomalous };

// Rank-based AUC-ROC: P(anomaly scored more anomalous than in-dist) with
// ties counted 1/2. Exact integer pair counting, no trapezoids.
double auroc(const std::vector<double>& in_scores, const std::vector<double>& anomaly_scores,
             Orientation orientation);

// Area under the precision-recall curve with anomalies as positives,
// integrated stepwise over all score thresholds.
double aupr(const std::vector<double>& in_scores, const std::vector<double>& anomaly_scores,
            Orientation orientation);

// Mean over samples of sum_c (p_c - onehot_c)^2.
double brier(const Tensor& probabilities, const std::vector<size_t>& labels);

double accuracy(const Tensor& probabilities, const std::vector<size_t>& labels);

// Max over samples of the input->logits Jacobian spectral norm; each sample's
// norm comes from power iteration on J J^T with J assembled row-by-row from
// backward passes. A valid lower bound on the model's Lipschitz constant.
double lipschitz_lower_bound(const nn::Model& model, const Tensor& samples,
                             size_t power_iterations = 20);

enum class MetricKind { higher_better, lower_better };

// sparse/dense for higher_better, dense/sparse for lower_better, so > 1
// always reads "sparse better".
double relative_metric(double sparse_value, double dense_value, MetricKind kind);

}  // namespace spnn::metrics

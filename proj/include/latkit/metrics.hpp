#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "latkit/dataset.hpp"
#include "latkit/model.hpp"

namespace latkit {

enum class MetricKind { accuracy, roc_auc, token_loss, success_rate };

std::string_view to_string(MetricKind kind);
/// Orientation used when metrics become Pareto coordinates.
bool higher_is_better(MetricKind kind);

/// Probability that a random positive outscores a random negative, ties
/// counted one half. Computed from average ranks in O(n log n). Throws
/// ContractError unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Model outputs for every example, evaluated in chunks on a frozen copy.
ad::Tensor predict(const SplitModel& model, const Dataset& data, std::size_t chunk = 256);

/// Fraction of examples whose arg-max class equals the label.
double accuracy(const ad::Tensor& logits, std::span<const int> labels);
/// logit(1) - logit(0) per example of a binary classifier.
std::vector<double> positive_scores(const ad::Tensor& logits);
/// Mean cross-entropy over scored token positions.
double mean_token_loss(const SplitModel& model, const Dataset& data, std::size_t chunk = 256);

/// Headline metric of a task: accuracy for images, ROC-AUC for text
/// classification, mean token loss for generation.
MetricKind task_metric_kind(TaskKind task);
double task_metric(const SplitModel& model, const Dataset& data);

}  // namespace latkit

#include "latkit/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "latkit/error.hpp"

namespace latkit {

std::string_view to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::accuracy: return "accuracy";
    case MetricKind::roc_auc: return "roc-auc";
    case MetricKind::token_loss: return "token-loss";
    case MetricKind::success_rate: return "success-rate";
  }
  return "?";
}

bool higher_is_better(MetricKind kind) { return kind == MetricKind::accuracy || kind == MetricKind::roc_auc; }

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("roc_auc: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(labels.size()) + " labels");
  }
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ContractError("roc_auc labels must be 0 or 1");
    pos += y == 1;
  }
  const auto neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw ContractError("roc_auc needs both positive and negative examples");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of 1-based positive ranks, ties sharing their average rank. Ranks are
  // kept doubled so tie averages stay integral and the result is exact.
  std::size_t doubled_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const std::size_t doubled_avg = i + 1 + j;  // 2 * (i+1 + j) / 2
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) doubled_rank_sum += doubled_avg;
    i = j;
  }
  const double u2 = static_cast<double>(doubled_rank_sum) - static_cast<double>(pos * (pos + 1));
  return u2 / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

ad::Tensor predict(const SplitModel& model, const Dataset& data, std::size_t chunk) {
  if (data.empty()) throw ContractError("predict: empty dataset");
  const SplitModel frozen = model.frozen();
  std::vector<double> out;
  ad::Shape row_shape;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const auto end = std::min(data.size(), begin + chunk);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const auto y = frozen.forward(data.batch(idx).x);
    row_shape.assign(y.shape().begin() + 1, y.shape().end());
    out.insert(out.end(), y.values().begin(), y.values().end());
  }
  row_shape.insert(row_shape.begin(), data.size());
  return ad::Tensor(row_shape, std::move(out));
}

double accuracy(const ad::Tensor& logits, std::span<const int> labels) {
  if (logits.dim() != 2 || logits.size(0) != labels.size()) {
    throw DimensionError("accuracy: logits " + ad::to_string(logits.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ContractError("accuracy of an empty set");
  const auto c = logits.size(1);
  const auto v = logits.values();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = v.subspan(i * c, c);
    hit += std::max_element(row.begin(), row.end()) - row.begin() == labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

std::vector<double> positive_scores(const ad::Tensor& logits) {
  if (logits.dim() != 2 || logits.size(1) != 2) {
    throw DimensionError("positive_scores needs [N,2] logits, got " + ad::to_string(logits.shape()));
  }
  const auto v = logits.values();
  std::vector<double> s(logits.size(0));
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = v[2 * i + 1] - v[2 * i];
  return s;
}

double mean_token_loss(const SplitModel& model, const Dataset& data, std::size_t chunk) {
  if (data.empty()) throw ContractError("mean_token_loss: empty dataset");
  const SplitModel frozen = model.frozen();
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const auto end = std::min(data.size(), begin + chunk);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const auto b = data.batch(idx);
    total += task_loss(frozen.forward(b.x), b.y, ad::Reduction::sum).item();
    counted += static_cast<std::size_t>(std::count_if(b.y.begin(), b.y.end(), [](int y) { return y != ad::kIgnoreLabel; }));
  }
  if (counted == 0) throw ContractError("mean_token_loss: no scored positions");
  return total / static_cast<double>(counted);
}

MetricKind task_metric_kind(TaskKind task) {
  switch (task) {
    case TaskKind::image_cls: return MetricKind::accuracy;
    case TaskKind::text_cls: return MetricKind::roc_auc;
    case TaskKind::text_gen: return MetricKind::token_loss;
  }
  return MetricKind::accuracy;
}

double task_metric(const SplitModel& model, const Dataset& data) {
  switch (data.task) {
    case TaskKind::image_cls: return accuracy(predict(model, data), data.targets);
    case TaskKind::text_cls: return roc_auc(positive_scores(predict(model, data)), data.targets);
    case TaskKind::text_gen: return mean_token_loss(model, data);
  }
  return 0.0;
}

}  // namespace latkit

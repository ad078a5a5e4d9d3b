//
// Copyright 2026 The fedscore Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#ifndef FEDSCORE_METRICS_HPP_
#define FEDSCORE_METRICS_HPP_

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedscore/errors.hpp"
#include "fedscore/model.hpp"

namespace fedscore {

struct MetricReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double rubric_match = 0.0;
  double mae = 0.0;

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

namespace internal {

// Returns the label count k shared by every row.
inline std::size_t CheckShapes(std::span<const LabelVector> preds,
                               std::span<const LabelVector> truth,
                               const char* where) {
  if (preds.empty()) throw UsageError(std::string(where) + ": empty input");
  RequireSameLength(preds.size(), truth.size(), where);
  const std::size_t k = truth.front().size();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].size() != k || truth[i].size() != k) {
      throw DimensionError(std::string(where) + ": ragged label vectors");
    }
  }
  return k;
}

inline double SafeRatio(double num, double den) {
  return den == 0.0 ? 0.0 : num / den;
}

}  // namespace internal

// Fraction of samples whose whole label vector is correct.
inline double ExactMatchAccuracy(std::span<const LabelVector> preds,
                                 std::span<const LabelVector> truth) {
  internal::CheckShapes(preds, truth, "ExactMatchAccuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

struct PrecisionRecallF1 {
  double precision;
  double recall;
  double f1;
};

// Per-label precision, recall and F1 (0 when a denominator is empty),
// averaged over labels.
inline PrecisionRecallF1 MacroPrf(std::span<const LabelVector> preds,
                                  std::span<const LabelVector> truth) {
  const std::size_t k = internal::CheckShapes(preds, truth, "MacroPrf");
  double p_sum = 0.0, r_sum = 0.0, f_sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const bool p = preds[i][j] != 0;
      const bool t = truth[i][j] != 0;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    const double precision = internal::SafeRatio(tp, tp + fp);
    const double recall = internal::SafeRatio(tp, tp + fn);
    p_sum += precision;
    r_sum += recall;
    f_sum += internal::SafeRatio(2.0 * precision * recall, precision + recall);
  }
  const double kd = static_cast<double>(k);
  return {p_sum / kd, r_sum / kd, f_sum / kd};
}

// Fraction of (sample, rubric dimension) cells predicted correctly.
inline double RubricMatch(std::span<const LabelVector> preds,
                          std::span<const LabelVector> truth) {
  const std::size_t k = internal::CheckShapes(preds, truth, "RubricMatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) hits += preds[i][j] == truth[i][j];
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size() * k);
}

// Mean absolute deviation of the total rubric score.
inline double ScoreMae(std::span<const LabelVector> preds,
                       std::span<const LabelVector> truth) {
  internal::CheckShapes(preds, truth, "ScoreMae");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    long diff = 0;
    for (std::size_t j = 0; j < preds[i].size(); ++j) {
      diff += static_cast<long>(preds[i][j]) - static_cast<long>(truth[i][j]);
    }
    total += static_cast<double>(std::labs(diff));
  }
  return total / static_cast<double>(preds.size());
}

inline MetricReport ComputeMetrics(std::span<const LabelVector> preds,
                                   std::span<const LabelVector> truth) {
  const PrecisionRecallF1 prf = MacroPrf(preds, truth);
  return {ExactMatchAccuracy(preds, truth), prf.precision, prf.recall, prf.f1,
          RubricMatch(preds, truth), ScoreMae(preds, truth)};
}

template <LabeledSample Sample>
MetricReport EvaluateScorer(const Scorer& model, std::span<const Sample> data) {
  std::vector<LabelVector> preds;
  std::vector<LabelVector> truth;
  preds.reserve(data.size());
  truth.reserve(data.size());
  for (const Sample& s : data) {
    preds.push_back(model.PredictLabels(s.features));
    truth.push_back(s.rubric_labels);
  }
  return ComputeMetrics(preds, truth);
}

// Global objective: the sample-weighted mean of client losses.
inline double EvaluateGlobalObjective(
    std::span<const std::pair<std::size_t, double>> sizes_and_losses) {
  if (sizes_and_losses.empty()) {
    throw UsageError("EvaluateGlobalObjective: no clients");
  }
  double total = 0.0;
  for (const auto& [n, loss] : sizes_and_losses) {
    if (n == 0) throw UsageError("EvaluateGlobalObjective: n_i must be > 0");
    total += static_cast<double>(n);
  }
  double objective = 0.0;
  for (const auto& [n, loss] : sizes_and_losses) {
    objective += static_cast<double>(n) / total * loss;
  }
  return objective;
}

}  // namespace fedscore

#endif  // FEDSCORE_METRICS_HPP_

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

#ifndef FEDSCORE_AGGREGATOR_HPP_
#define FEDSCORE_AGGREGATOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedscore/errors.hpp"
#include "fedscore/params.hpp"

namespace fedscore {

struct ClientUpdate {
  std::string client_id;
  std::uint64_t round = 0;
  ParameterVector params;
  std::size_t num_samples = 1;
  double val_loss = 0.0;

  friend bool operator==(const ClientUpdate&, const ClientUpdate&) = default;
};

struct AggregationWeights {
  std::vector<std::pair<std::string, double>> weights;

  std::size_t size() const { return weights.size(); }
  double operator[](std::size_t i) const { return weights[i].second; }
  double Sum() const {
    double s = 0.0;
    for (const auto& [id, w] : weights) s += w;
    return s;
  }

  friend bool operator==(const AggregationWeights&,
                         const AggregationWeights&) = default;
};

enum class AggregationStrategy { kAdaptive, kPlainAverage, kSampleWeighted };

inline std::string_view ToString(AggregationStrategy s) {
  switch (s) {
    case AggregationStrategy::kAdaptive: return "adaptive";
    case AggregationStrategy::kPlainAverage: return "plain_average";
    case AggregationStrategy::kSampleWeighted: return "sample_weighted";
  }
  return "unknown";
}

inline AggregationStrategy ParseStrategy(std::string_view name) {
  for (auto s : {AggregationStrategy::kAdaptive,
                 AggregationStrategy::kPlainAverage,
                 AggregationStrategy::kSampleWeighted}) {
    if (ToString(s) == name) return s;
  }
  throw ConfigError("unknown aggregation strategy '" + std::string(name) + "'");
}

struct AggregationConfig {
  AggregationStrategy strategy = AggregationStrategy::kAdaptive;
  double momentum = 1.0;

  void Validate() const {
    if (!(momentum > 0.0 && momentum <= 1.0)) {
      throw UsageError("AggregationConfig: momentum must lie in (0, 1]");
    }
  }
};

namespace internal {

inline void CheckCohort(std::span<const ClientUpdate> updates,
                        const char* where) {
  if (updates.empty()) throw UsageError(std::string(where) + ": no updates");
  for (const ClientUpdate& u : updates) {
    if (u.round != updates.front().round) {
      throw UsageError(std::string(where) + ": updates from different rounds");
    }
    if (u.num_samples == 0) {
      throw UsageError(std::string(where) + ": num_samples must be >= 1");
    }
    if (!std::isfinite(u.val_loss)) {
      throw UsageError(std::string(where) + ": non-finite loss from " +
                       u.client_id);
    }
  }
}

}  // namespace internal

// Weights proportional to (n_i / sum n) * softmax(-F)_i, renormalized to sum
// to one. The softmax is shifted by the smallest loss, so equal losses give
// exactly 1/N and adding a constant to every loss changes nothing.
inline AggregationWeights ComputeAdaptiveWeights(
    std::span<const ClientUpdate> updates) {
  internal::CheckCohort(updates, "ComputeAdaptiveWeights");
  double total_samples = 0.0;
  double min_loss = updates.front().val_loss;
  for (const ClientUpdate& u : updates) {
    total_samples += static_cast<double>(u.num_samples);
    min_loss = std::min(min_loss, u.val_loss);
  }
  std::vector<double> softmax(updates.size());
  double exp_sum = 0.0;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    softmax[i] = std::exp(-(updates[i].val_loss - min_loss));
    exp_sum += softmax[i];
  }
  std::vector<double> raw(updates.size());
  double raw_sum = 0.0;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    raw[i] = static_cast<double>(updates[i].num_samples) / total_samples *
             (softmax[i] / exp_sum);
    raw_sum += raw[i];
  }
  AggregationWeights out;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    out.weights.emplace_back(updates[i].client_id, raw[i] / raw_sum);
  }
  return out;
}

inline AggregationWeights ComputePlainWeights(
    std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw UsageError("ComputePlainWeights: no updates");
  AggregationWeights out;
  const double w = 1.0 / static_cast<double>(updates.size());
  for (const ClientUpdate& u : updates) out.weights.emplace_back(u.client_id, w);
  return out;
}

inline AggregationWeights ComputeSampleWeights(
    std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw UsageError("ComputeSampleWeights: no updates");
  double total = 0.0;
  for (const ClientUpdate& u : updates) {
    if (u.num_samples == 0) {
      throw UsageError("ComputeSampleWeights: num_samples must be >= 1");
    }
    total += static_cast<double>(u.num_samples);
  }
  AggregationWeights out;
  for (const ClientUpdate& u : updates) {
    out.weights.emplace_back(u.client_id,
                             static_cast<double>(u.num_samples) / total);
  }
  return out;
}

inline AggregationWeights ComputeWeights(AggregationStrategy strategy,
                                         std::span<const ClientUpdate> updates) {
  switch (strategy) {
    case AggregationStrategy::kAdaptive: return ComputeAdaptiveWeights(updates);
    case AggregationStrategy::kPlainAverage: return ComputePlainWeights(updates);
    case AggregationStrategy::kSampleWeighted:
      return ComputeSampleWeights(updates);
  }
  throw UsageError("ComputeWeights: unknown strategy");
}

// w_prev + momentum * sum_i alpha_i (w_i - w_prev).
//
// With momentum 1 this is the weighted average sum_i alpha_i w_i; it is then
// evaluated around the first update instead of w_prev, which is the same
// quantity but reproduces a lone update (or a cohort of identical updates)
// bit for bit.
inline ParameterVector GlobalUpdate(const ParameterVector& w_prev,
                                    std::span<const ClientUpdate> updates,
                                    const AggregationWeights& weights,
                                    double momentum) {
  if (updates.empty()) throw UsageError("GlobalUpdate: no updates");
  if (weights.size() != updates.size()) {
    throw DimensionError("GlobalUpdate: weights/updates count mismatch");
  }
  if (!(momentum > 0.0 && momentum <= 1.0)) {
    throw UsageError("GlobalUpdate: momentum must lie in (0, 1]");
  }
  if (std::abs(weights.Sum() - 1.0) > 1e-9) {
    throw UsageError("GlobalUpdate: weights must sum to 1");
  }
  for (const ClientUpdate& u : updates) {
    internal::RequireSameLength(u.params.size(), w_prev.size(), "GlobalUpdate");
  }
  const bool full_step = momentum == 1.0;
  const std::vector<double>& anchor =
      full_step ? updates.front().params.raw() : w_prev.raw();
  std::vector<double> step(w_prev.size(), 0.0);
  for (std::size_t i = 0; i < updates.size(); ++i) {
    const std::vector<double>& w = updates[i].params.raw();
    for (std::size_t c = 0; c < step.size(); ++c) {
      step[c] += weights[i] * (w[c] - anchor[c]);
    }
  }
  std::vector<double> out(anchor);
  for (std::size_t c = 0; c < out.size(); ++c) out[c] += momentum * step[c];
  return ParameterVector(std::move(out));
}

}  // namespace fedscore

#endif  // FEDSCORE_AGGREGATOR_HPP_

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

#ifndef FEDSCORE_MODEL_HPP_
#define FEDSCORE_MODEL_HPP_

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedscore/errors.hpp"
#include "fedscore/params.hpp"
#include "fedscore/rng.hpp"

namespace fedscore {

using LabelVector = std::vector<std::uint8_t>;

// Anything carrying a feature vector and a multi-label target.
template <typename T>
concept LabeledSample = requires(const T& s) {
  { s.features } -> std::convertible_to<const std::vector<double>&>;
  { s.rubric_labels } -> std::convertible_to<const LabelVector&>;
};

struct ScorerConfig {
  std::size_t input_dim = 32;
  std::size_t num_labels = 5;
  std::size_t rank = 5;
  double adapter_scale = 2.0;

  void Validate() const {
    if (input_dim == 0 || num_labels == 0 || rank == 0) {
      throw UsageError("ScorerConfig: dimensions must be positive");
    }
    if (rank > std::min(input_dim, num_labels)) {
      throw UsageError("ScorerConfig: rank must not exceed min(input_dim, "
                       "num_labels)");
    }
    if (!(adapter_scale > 0.0) || !std::isfinite(adapter_scale)) {
      throw UsageError("ScorerConfig: adapter_scale must be positive");
    }
  }

  AdapterDims adapter_dims() const { return {rank, input_dim, num_labels}; }
  std::size_t adapter_parameter_count() const {
    return adapter_dims().ParameterCount();
  }
};

inline double Sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Binary cross-entropy of sigmoid(z) against y, evaluated without forming
// the probability.
inline double BinaryCrossEntropyWithLogit(double z, bool y) {
  return std::max(z, 0.0) - (y ? z : 0.0) + std::log1p(std::exp(-std::abs(z)));
}

// Frozen linear map plus a trainable low-rank adapter:
//   logits = (W_frozen + scale * B * A) x
// The frozen matrix is shared and never written after construction.
class Scorer {
 public:
  Scorer(ScorerConfig config, std::shared_ptr<const Matrix> frozen,
         LowRankAdapter adapter)
      : config_(config), frozen_(std::move(frozen)), adapter_(std::move(adapter)) {
    config_.Validate();
    if (!frozen_ || frozen_->rows != config_.num_labels ||
        frozen_->cols != config_.input_dim) {
      throw DimensionError("Scorer: frozen weights must be num_labels x "
                           "input_dim");
    }
    if (adapter_.dims() != config_.adapter_dims()) {
      throw DimensionError("Scorer: adapter dimensions disagree with config");
    }
  }

  Scorer(ScorerConfig config, std::shared_ptr<const Matrix> frozen,
         const ParameterVector& adapter_params)
      : Scorer(config, frozen,
               UnflattenAdapter(adapter_params, config.adapter_dims(),
                                config.adapter_scale)) {}

  const ScorerConfig& config() const { return config_; }
  const Matrix& frozen_weights() const { return *frozen_; }
  const std::shared_ptr<const Matrix>& shared_frozen() const { return frozen_; }
  const LowRankAdapter& adapter() const { return adapter_; }
  ParameterVector adapter_params() const { return FlattenAdapter(adapter_); }

  Scorer WithParams(const ParameterVector& adapter_params) const {
    return Scorer(config_, frozen_, adapter_params);
  }

  std::vector<double> Forward(std::span<const double> x) const {
    std::vector<double> projected = Project(x);
    return LogitsFromProjection(x, projected);
  }

  LabelVector PredictLabels(std::span<const double> x) const {
    const std::vector<double> logits = Forward(x);
    LabelVector labels(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) labels[j] = logits[j] >= 0.0;
    return labels;
  }

  template <LabeledSample Sample>
  double Loss(std::span<const Sample> batch) const {
    return Evaluate(
        batch.size(), [&](std::size_t i) -> const Sample& { return batch[i]; },
        nullptr);
  }

  struct LossAndGradient {
    double loss;
    ParameterVector gradient;
  };

  // Mean binary cross-entropy over the batch and the labels, with the
  // gradient taken with respect to the flattened adapter only.
  template <LabeledSample Sample>
  LossAndGradient LossAndGrad(std::span<const Sample> batch) const {
    return LossAndGrad(
        batch.size(), [&](std::size_t i) -> const Sample& { return batch[i]; });
  }

  // Same, over `count` samples fetched by index (e.g. a shuffled mini-batch).
  template <typename Get>
  LossAndGradient LossAndGrad(std::size_t count, Get&& get) const {
    std::vector<double> grad(config_.adapter_parameter_count(), 0.0);
    const double loss = Evaluate(count, get, &grad);
    return {loss, ParameterVector(std::move(grad))};
  }

 private:
  // A x
  std::vector<double> Project(std::span<const double> x) const {
    if (x.size() != config_.input_dim) {
      throw DimensionError("Scorer: feature length " + std::to_string(x.size()) +
                           " != input_dim " + std::to_string(config_.input_dim));
    }
    const Matrix& a = adapter_.a;
    std::vector<double> u(a.rows, 0.0);
    for (std::size_t r = 0; r < a.rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < a.cols; ++c) acc += a(r, c) * x[c];
      u[r] = acc;
    }
    return u;
  }

  std::vector<double> LogitsFromProjection(std::span<const double> x,
                                           std::span<const double> u) const {
    const Matrix& w = *frozen_;
    const Matrix& b = adapter_.b;
    std::vector<double> z(config_.num_labels, 0.0);
    for (std::size_t j = 0; j < z.size(); ++j) {
      double base = 0.0;
      for (std::size_t c = 0; c < w.cols; ++c) base += w(j, c) * x[c];
      double low_rank = 0.0;
      for (std::size_t r = 0; r < b.cols; ++r) low_rank += b(j, r) * u[r];
      z[j] = base + adapter_.scale * low_rank;
    }
    return z;
  }

  template <typename Get>
  double Evaluate(std::size_t count, Get&& get,
                  std::vector<double>* grad) const {
    if (count == 0) throw UsageError("Scorer: empty batch");
    const std::size_t k = config_.num_labels;
    const std::size_t rank = config_.rank;
    const std::size_t d = config_.input_dim;
    const double norm = 1.0 / (static_cast<double>(count) *
                               static_cast<double>(k));
    const double s = adapter_.scale;
    const Matrix& b = adapter_.b;
    double total = 0.0;
    std::vector<double> residual(k);
    std::vector<double> back(rank);
    for (std::size_t i = 0; i < count; ++i) {
      const auto& sample = get(i);
      const std::vector<double>& x = sample.features;
      const LabelVector& y = sample.rubric_labels;
      if (y.size() != k) {
        throw DimensionError("Scorer: label length " + std::to_string(y.size()) +
                             " != num_labels " + std::to_string(k));
      }
      const std::vector<double> u = Project(x);
      const std::vector<double> z = LogitsFromProjection(x, u);
      for (std::size_t j = 0; j < k; ++j) {
        total += BinaryCrossEntropyWithLogit(z[j], y[j] != 0);
        residual[j] = (Sigmoid(z[j]) - (y[j] != 0 ? 1.0 : 0.0)) * norm;
      }
      if (grad == nullptr) continue;
      // dL/dA = s * (B^T g) x^T, stored first.
      for (std::size_t r = 0; r < rank; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += b(j, r) * residual[j];
        back[r] = s * acc;
      }
      double* ga = grad->data();
      for (std::size_t r = 0; r < rank; ++r) {
        for (std::size_t c = 0; c < d; ++c) ga[r * d + c] += back[r] * x[c];
      }
      // dL/dB = s * g u^T.
      double* gb = grad->data() + rank * d;
      for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t r = 0; r < rank; ++r) {
          gb[j * rank + r] += s * residual[j] * u[r];
        }
      }
    }
    return total * norm;
  }

  ScorerConfig config_;
  std::shared_ptr<const Matrix> frozen_;
  LowRankAdapter adapter_;
};

// Stand-in for the shared pretrained weights: drawn once from the run seed,
// entries N(0, 1/input_dim).
inline std::shared_ptr<const Matrix> MakeFrozenBase(const ScorerConfig& config,
                                                    std::uint64_t master_seed) {
  config.Validate();
  Rng rng = MakeRng(master_seed, Stream::kFrozenBase);
  std::normal_distribution<double> normal(
      0.0, 1.0 / std::sqrt(static_cast<double>(config.input_dim)));
  auto frozen = std::make_shared<Matrix>(config.num_labels, config.input_dim);
  for (double& v : frozen->data) v = normal(rng);
  return frozen;
}

// Standard LoRA start: A random, B zero, so the adapted map starts exactly at
// the frozen base while both factors receive gradient.
inline ParameterVector InitialAdapterParams(const ScorerConfig& config,
                                            std::uint64_t master_seed) {
  config.Validate();
  Rng rng = MakeRng(master_seed, Stream::kAdapterInit);
  std::normal_distribution<double> normal(
      0.0, 1.0 / std::sqrt(static_cast<double>(config.input_dim)));
  std::vector<double> values(config.adapter_parameter_count(), 0.0);
  const std::size_t a_count = config.rank * config.input_dim;
  for (std::size_t i = 0; i < a_count; ++i) values[i] = normal(rng);
  return ParameterVector(std::move(values));
}

}  // namespace fedscore

#endif  // FEDSCORE_MODEL_HPP_

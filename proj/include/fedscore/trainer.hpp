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

#ifndef FEDSCORE_TRAINER_HPP_
#define FEDSCORE_TRAINER_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "fedscore/errors.hpp"
#include "fedscore/model.hpp"
#include "fedscore/params.hpp"
#include "fedscore/rng.hpp"

namespace fedscore {

struct TrainingConfig {
  double learning_rate = 2e-4;
  std::size_t batch_size = 16;
  std::size_t local_epochs = 5;
  std::size_t patience = 2;
  std::uint64_t rng_seed = 0;

  void Validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw UsageError("TrainingConfig: learning_rate must be positive");
    }
    if (batch_size == 0) throw UsageError("TrainingConfig: batch_size >= 1");
    if (local_epochs == 0) throw UsageError("TrainingConfig: local_epochs >= 1");
    if (patience == 0) throw UsageError("TrainingConfig: patience >= 1");
  }

  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

struct TrainReport {
  ParameterVector final_params;
  double train_loss;
  double val_loss;
  std::size_t epochs_run;
  bool stopped_early;

  friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

// params - learning_rate * grad
inline ParameterVector SgdStep(const ParameterVector& params,
                               const ParameterVector& grad,
                               double learning_rate) {
  if (!(learning_rate > 0.0)) {
    throw UsageError("SgdStep: learning rate must be positive");
  }
  return Axpy(-learning_rate, grad, params);
}

// True once the running minimum has gone `patience` consecutive entries
// without a strict improvement.
inline bool ShouldStop(std::span<const double> val_losses, std::size_t patience) {
  if (patience == 0) throw UsageError("ShouldStop: patience must be >= 1");
  if (val_losses.size() < patience + 1) return false;
  const auto split = val_losses.end() - static_cast<std::ptrdiff_t>(patience);
  const double best_before = *std::min_element(val_losses.begin(), split);
  const double best_recent = *std::min_element(split, val_losses.end());
  return !(best_recent < best_before);
}

// Mini-batch SGD on the adapter parameters, starting from `model`'s current
// adapter. One seeded permutation per epoch; the trailing short batch is
// kept. Validation loss is computed after every epoch and drives early
// stopping.
template <LabeledSample Sample>
TrainReport LocalTrain(const Scorer& model, std::span<const Sample> train,
                       std::span<const Sample> validation,
                       const TrainingConfig& config) {
  config.Validate();
  if (train.empty()) throw UsageError("LocalTrain: empty training set");
  if (validation.empty()) throw UsageError("LocalTrain: empty validation set");

  Rng rng(config.rng_seed);
  Scorer current = model;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> val_history;
  bool stopped_early = false;
  std::size_t epochs_run = 0;

  for (std::size_t epoch = 0; epoch < config.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size();
         start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      auto step = current.LossAndGrad(
          count, [&](std::size_t i) -> const Sample& {
            return train[order[start + i]];
          });
      current = current.WithParams(
          SgdStep(current.adapter_params(), step.gradient, config.learning_rate));
    }
    ++epochs_run;
    val_history.push_back(current.Loss(validation));
    if (ShouldStop(val_history, config.patience)) {
      stopped_early = epochs_run < config.local_epochs;
      break;
    }
  }

  return {current.adapter_params(), current.Loss(train), val_history.back(),
          epochs_run, stopped_early};
}

}  // namespace fedscore

#endif  // FEDSCORE_TRAINER_HPP_

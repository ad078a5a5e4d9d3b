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

#ifndef FEDSCORE_PRIVACY_HPP_
#define FEDSCORE_PRIVACY_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "fedscore/errors.hpp"
#include "fedscore/params.hpp"
#include "fedscore/rng.hpp"

namespace fedscore {

// Classical Gaussian-mechanism calibration for L2 sensitivity C:
//   sigma = C * sqrt(2 ln(1.25 / delta)) / epsilon.
// The bound is proven for epsilon < 1; larger epsilons are accepted and
// simply inherit the same formula.
inline double CalibrateSigma(double epsilon, double delta, double clip_norm) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw UsageError("CalibrateSigma: epsilon must be positive");
  }
  if (!(delta > 0.0 && delta < 1.0)) {
    throw UsageError("CalibrateSigma: delta must lie in (0, 1)");
  }
  if (!(clip_norm > 0.0) || !std::isfinite(clip_norm)) {
    throw UsageError("CalibrateSigma: clip norm must be positive");
  }
  return clip_norm * std::sqrt(2.0 * std::log(1.25 / delta)) / epsilon;
}

struct PrivacyConfig {
  double epsilon = 1.0;
  double delta = 1e-5;
  double clip_norm = 1.0;
  bool enabled = false;

  void Validate() const {
    if (enabled) CalibrateSigma(epsilon, delta, clip_norm);
  }

  // Per-coordinate noise standard deviation; zero when disabled.
  double noise_scale() const {
    return enabled ? CalibrateSigma(epsilon, delta, clip_norm) : 0.0;
  }

  friend bool operator==(const PrivacyConfig&, const PrivacyConfig&) = default;
};

// Basic composition over rounds.
class BudgetLedger {
 public:
  BudgetLedger() = default;
  explicit BudgetLedger(const PrivacyConfig& config)
      : per_round_epsilon_(config.enabled ? config.epsilon : 0.0),
        per_round_delta_(config.enabled ? config.delta : 0.0) {}

  void RecordRound() { ++rounds_run_; }

  std::uint64_t rounds_run() const { return rounds_run_; }
  double per_round_epsilon() const { return per_round_epsilon_; }
  double total_epsilon() const {
    return static_cast<double>(rounds_run_) * per_round_epsilon_;
  }
  double total_delta() const {
    return static_cast<double>(rounds_run_) * per_round_delta_;
  }

 private:
  std::uint64_t rounds_run_ = 0;
  double per_round_epsilon_ = 0.0;
  double per_round_delta_ = 0.0;
};

// Projects onto the L2 ball of radius clip_norm.
inline ParameterVector ClipUpdate(const ParameterVector& v, double clip_norm) {
  if (!(clip_norm > 0.0)) throw UsageError("ClipUpdate: clip norm must be > 0");
  const double norm = L2Norm(v);
  if (norm <= clip_norm) return v;
  ParameterVector clipped = Scale(clip_norm / norm, v);
  // Rounding in the rescale can leave the result an ulp or two outside.
  const double after = L2Norm(clipped);
  if (after > clip_norm) clipped = Scale(clip_norm / after, clipped);
  return clipped;
}

inline ParameterVector AddGaussianNoise(const ParameterVector& v, double sigma,
                                        Rng& rng) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw UsageError("AddGaussianNoise: sigma must be >= 0");
  }
  if (sigma == 0.0) return v;
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<double> out(v.raw());
  for (double& x : out) x += normal(rng);
  return ParameterVector(std::move(out));
}

// Clips the update delta (w_new - w_base) to clip_norm, adds N(0, sigma^2)
// per coordinate and re-anchors at w_base.
inline ParameterVector ProtectUpdate(const ParameterVector& w_new,
                                     const ParameterVector& w_base,
                                     double clip_norm, double sigma, Rng& rng) {
  internal::RequireSameLength(w_new.size(), w_base.size(), "ProtectUpdate");
  const ParameterVector delta = Subtract(w_new, w_base);
  const ParameterVector clipped = ClipUpdate(delta, clip_norm);
  if (sigma == 0.0 && clipped == delta) return w_new;
  return Add(w_base, AddGaussianNoise(clipped, sigma, rng));
}

// Pass-through when the config is disabled.
inline ParameterVector ProtectUpdate(const ParameterVector& w_new,
                                     const ParameterVector& w_base,
                                     const PrivacyConfig& config, Rng& rng) {
  internal::RequireSameLength(w_new.size(), w_base.size(), "ProtectUpdate");
  if (!config.enabled) return w_new;
  return ProtectUpdate(w_new, w_base, config.clip_norm, config.noise_scale(),
                       rng);
}

}  // namespace fedscore

#endif  // FEDSCORE_PRIVACY_HPP_

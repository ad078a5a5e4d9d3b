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

// JSON forms of the configuration structs, shared by the wire protocol and
// the experiment config files. Parsing is strict: unknown keys and wrong
// types raise ConfigError.

#ifndef FEDSCORE_CONFIG_IO_HPP_
#define FEDSCORE_CONFIG_IO_HPP_

#include <initializer_list>
#include <string>
#include <string_view>

#include "fedscore/aggregator.hpp"
#include "fedscore/datapipe.hpp"
#include "fedscore/errors.hpp"
#include "fedscore/model.hpp"
#include "fedscore/privacy.hpp"
#include "fedscore/trainer.hpp"
#include "json.hpp"

namespace fedscore {

using Json = nlohmann::json;

namespace internal {

inline void RequireKnownKeys(const Json& j, std::string_view section,
                             std::initializer_list<std::string_view> known) {
  if (!j.is_object()) {
    throw ConfigError(std::string(section) + ": expected an object");
  }
  for (const auto& [key, value] : j.items()) {
    bool found = false;
    for (std::string_view k : known) found = found || k == key;
    if (!found) {
      throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
    }
  }
}

// Reads j[key] into out when present.
template <typename T>
void ReadOptional(const Json& j, std::string_view section, const char* key,
                  T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(section) + "." + key + ": wrong type");
  }
}

template <typename T>
void ReadRequired(const Json& j, std::string_view section, const char* key,
                  T& out) {
  if (!j.contains(key)) {
    throw ConfigError(std::string(section) + ": missing key '" + key + "'");
  }
  ReadOptional(j, section, key, out);
}

}  // namespace internal

inline Json ToJson(const TrainingConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"local_epochs", c.local_epochs},
          {"patience", c.patience},
          {"rng_seed", c.rng_seed}};
}

inline TrainingConfig TrainingConfigFromJson(const Json& j,
                                             TrainingConfig base = {}) {
  internal::RequireKnownKeys(j, "training", {"learning_rate", "batch_size",
                                             "local_epochs", "patience",
                                             "rng_seed"});
  internal::ReadOptional(j, "training", "learning_rate", base.learning_rate);
  internal::ReadOptional(j, "training", "batch_size", base.batch_size);
  internal::ReadOptional(j, "training", "local_epochs", base.local_epochs);
  internal::ReadOptional(j, "training", "patience", base.patience);
  internal::ReadOptional(j, "training", "rng_seed", base.rng_seed);
  return base;
}

inline Json ToJson(const PrivacyConfig& c) {
  return {{"epsilon", c.epsilon},
          {"delta", c.delta},
          {"clip_norm", c.clip_norm},
          {"enabled", c.enabled}};
}

inline PrivacyConfig PrivacyConfigFromJson(const Json& j,
                                           PrivacyConfig base = {}) {
  internal::RequireKnownKeys(j, "privacy",
                             {"epsilon", "delta", "clip_norm", "enabled"});
  internal::ReadOptional(j, "privacy", "epsilon", base.epsilon);
  internal::ReadOptional(j, "privacy", "delta", base.delta);
  internal::ReadOptional(j, "privacy", "clip_norm", base.clip_norm);
  internal::ReadOptional(j, "privacy", "enabled", base.enabled);
  return base;
}

inline Json ToJson(const ScorerConfig& c) {
  return {{"input_dim", c.input_dim},
          {"num_labels", c.num_labels},
          {"rank", c.rank},
          {"adapter_scale", c.adapter_scale}};
}

inline ScorerConfig ScorerConfigFromJson(const Json& j, ScorerConfig base = {}) {
  internal::RequireKnownKeys(j, "scorer", {"input_dim", "num_labels", "rank",
                                           "adapter_scale", "lora_alpha"});
  internal::ReadOptional(j, "scorer", "input_dim", base.input_dim);
  internal::ReadOptional(j, "scorer", "num_labels", base.num_labels);
  internal::ReadOptional(j, "scorer", "rank", base.rank);
  internal::ReadOptional(j, "scorer", "adapter_scale", base.adapter_scale);
  // LoRA convention: scale = alpha / rank.
  if (j.contains("lora_alpha")) {
    if (j.contains("adapter_scale")) {
      throw ConfigError("scorer: give adapter_scale or lora_alpha, not both");
    }
    double alpha = 0.0;
    internal::ReadOptional(j, "scorer", "lora_alpha", alpha);
    base.adapter_scale = alpha / static_cast<double>(base.rank);
  }
  return base;
}

inline Json ToJson(const AggregationConfig& c) {
  return {{"strategy", std::string(ToString(c.strategy))},
          {"momentum", c.momentum}};
}

inline AggregationConfig AggregationConfigFromJson(const Json& j,
                                                   AggregationConfig base = {}) {
  internal::RequireKnownKeys(j, "aggregation", {"strategy", "momentum"});
  std::string name(ToString(base.strategy));
  internal::ReadOptional(j, "aggregation", "strategy", name);
  base.strategy = ParseStrategy(name);
  internal::ReadOptional(j, "aggregation", "momentum", base.momentum);
  return base;
}

inline Json ToJson(const HeterogeneityProfile& p) {
  return {{"num_clients", p.num_clients},
          {"sizes", p.sizes},
          {"label_skew", p.label_skew},
          {"label_noise_rates", p.label_noise_rates},
          {"num_components", p.num_components},
          {"center_spread", p.center_spread},
          {"margin", p.margin}};
}

// The generator seed is not part of the file form; experiments derive it
// from their master seed.
inline HeterogeneityProfile ProfileFromJson(const Json& j,
                                            HeterogeneityProfile base = {}) {
  internal::RequireKnownKeys(j, "data", {"num_clients", "sizes", "label_skew",
                                         "label_noise_rates",
                                         "num_components", "center_spread",
                                         "margin"});
  internal::ReadOptional(j, "data", "num_clients", base.num_clients);
  internal::ReadOptional(j, "data", "sizes", base.sizes);
  internal::ReadOptional(j, "data", "label_skew", base.label_skew);
  internal::ReadOptional(j, "data", "label_noise_rates", base.label_noise_rates);
  internal::ReadOptional(j, "data", "num_components", base.num_components);
  internal::ReadOptional(j, "data", "center_spread", base.center_spread);
  internal::ReadOptional(j, "data", "margin", base.margin);
  return base;
}

}  // namespace fedscore

#endif  // FEDSCORE_CONFIG_IO_HPP_

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

#ifndef FEDSCORE_DATAPIPE_HPP_
#define FEDSCORE_DATAPIPE_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedscore/errors.hpp"
#include "fedscore/model.hpp"
#include "fedscore/params.hpp"
#include "fedscore/rng.hpp"
#include "json.hpp"

namespace fedscore {

// One student response: the features stand in for the tokenized text.
struct StudentRecord {
  std::string prompt_id;
  std::vector<double> features;
  LabelVector rubric_labels;

  friend bool operator==(const StudentRecord&, const StudentRecord&) = default;
};

using Dataset = std::vector<StudentRecord>;

enum class FieldKind { kRealVector, kBitVector, kStringId };

struct FieldSpec {
  std::string name;
  FieldKind kind;
  std::size_t arity = 1;
};

// Shared record layout; every client in a run must hold the same version.
struct RecordSchema {
  std::string version;
  std::vector<FieldSpec> fields;

  static RecordSchema Make(std::string version, std::size_t input_dim,
                           std::size_t num_labels) {
    return {std::move(version),
            {{"prompt_id", FieldKind::kStringId, 1},
             {"features", FieldKind::kRealVector, input_dim},
             {"rubric_labels", FieldKind::kBitVector, num_labels}}};
  }

  const FieldSpec* Find(const std::string& name) const {
    for (const FieldSpec& f : fields) {
      if (f.name == name) return &f;
    }
    return nullptr;
  }

  std::size_t input_dim() const {
    const FieldSpec* f = Find("features");
    return f ? f->arity : 0;
  }
  std::size_t num_labels() const {
    const FieldSpec* f = Find("rubric_labels");
    return f ? f->arity : 0;
  }
};

enum class ViolationKind { kMissingField, kWrongArity, kNonFinite, kBadLabel };

inline const char* ToString(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::kMissingField: return "missing_field";
    case ViolationKind::kWrongArity: return "wrong_arity";
    case ViolationKind::kNonFinite: return "non_finite";
    case ViolationKind::kBadLabel: return "bad_label";
  }
  return "unknown";
}

struct Violation {
  ViolationKind kind;
  std::string field;
};

struct ValidationResult {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  bool Has(ViolationKind kind) const {
    return std::any_of(violations.begin(), violations.end(),
                       [kind](const Violation& v) { return v.kind == kind; });
  }
};

inline ValidationResult ValidateRecord(const StudentRecord& rec,
                                       const RecordSchema& schema) {
  ValidationResult result;
  for (const FieldSpec& field : schema.fields) {
    auto add = [&](ViolationKind kind) {
      result.violations.push_back({kind, field.name});
    };
    if (field.name == "prompt_id") {
      if (rec.prompt_id.empty()) add(ViolationKind::kMissingField);
    } else if (field.name == "features") {
      if (rec.features.empty()) {
        add(ViolationKind::kMissingField);
      } else if (rec.features.size() != field.arity) {
        add(ViolationKind::kWrongArity);
      }
      if (std::any_of(rec.features.begin(), rec.features.end(),
                      [](double v) { return !std::isfinite(v); })) {
        add(ViolationKind::kNonFinite);
      }
    } else if (field.name == "rubric_labels") {
      if (rec.rubric_labels.empty()) {
        add(ViolationKind::kMissingField);
      } else if (rec.rubric_labels.size() != field.arity) {
        add(ViolationKind::kWrongArity);
      }
      if (std::any_of(rec.rubric_labels.begin(), rec.rubric_labels.end(),
                      [](std::uint8_t v) { return v > 1; })) {
        add(ViolationKind::kBadLabel);
      }
    }
  }
  return result;
}

struct FilterResult {
  Dataset clean;
  std::size_t rejected_count = 0;
};

// Keeps the records that pass validation, in their original order.
inline FilterResult FilterDataset(std::span<const StudentRecord> records,
                                  const RecordSchema& schema) {
  FilterResult out;
  for (const StudentRecord& rec : records) {
    if (ValidateRecord(rec, schema).ok()) {
      out.clean.push_back(rec);
    } else {
      ++out.rejected_count;
    }
  }
  return out;
}

inline constexpr double kNormalizationStdFloor = 1e-8;

struct NormalizationParams {
  std::vector<double> mu;
  std::vector<double> sigma_norm;

  friend bool operator==(const NormalizationParams&,
                         const NormalizationParams&) = default;
};

// Per-coordinate mean and population standard deviation of a calibration
// set, with the deviation floored at kNormalizationStdFloor.
inline NormalizationParams FitNormalization(
    std::span<const StudentRecord> calibration) {
  if (calibration.empty()) {
    throw UsageError("FitNormalization: empty calibration set");
  }
  const std::size_t d = calibration.front().features.size();
  if (d == 0) throw DimensionError("FitNormalization: empty feature vectors");
  const double n = static_cast<double>(calibration.size());
  std::vector<double> mu(d, 0.0);
  for (const StudentRecord& rec : calibration) {
    internal::RequireSameLength(rec.features.size(), d, "FitNormalization");
    for (std::size_t c = 0; c < d; ++c) mu[c] += rec.features[c];
  }
  for (double& m : mu) m /= n;
  std::vector<double> var(d, 0.0);
  for (const StudentRecord& rec : calibration) {
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = rec.features[c] - mu[c];
      var[c] += diff * diff;
    }
  }
  std::vector<double> sigma(d);
  for (std::size_t c = 0; c < d; ++c) {
    sigma[c] = std::max(std::sqrt(var[c] / n), kNormalizationStdFloor);
  }
  return {std::move(mu), std::move(sigma)};
}

inline StudentRecord Normalize(const StudentRecord& rec,
                               const NormalizationParams& params) {
  internal::RequireSameLength(rec.features.size(), params.mu.size(),
                              "Normalize");
  internal::RequireSameLength(rec.features.size(), params.sigma_norm.size(),
                              "Normalize");
  StudentRecord out = rec;
  for (std::size_t c = 0; c < out.features.size(); ++c) {
    out.features[c] = (rec.features[c] - params.mu[c]) / params.sigma_norm[c];
  }
  return out;
}

inline Dataset NormalizeAll(std::span<const StudentRecord> records,
                            const NormalizationParams& params) {
  Dataset out;
  out.reserve(records.size());
  for (const StudentRecord& rec : records) out.push_back(Normalize(rec, params));
  return out;
}

// ---------------------------------------------------------------------------
// Line-delimited record files.

inline nlohmann::json RecordToJson(const StudentRecord& rec) {
  nlohmann::json labels = nlohmann::json::array();
  for (std::uint8_t v : rec.rubric_labels) labels.push_back(static_cast<int>(v));
  return {{"prompt_id", rec.prompt_id},
          {"features", rec.features},
          {"rubric_labels", std::move(labels)}};
}

// Missing or mistyped fields come back empty so that validation flags them;
// std::nullopt only for lines that are not JSON objects at all.
inline std::optional<StudentRecord> RecordFromJsonLine(const std::string& line) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  StudentRecord rec;
  if (auto it = j.find("prompt_id"); it != j.end() && it->is_string()) {
    rec.prompt_id = it->get<std::string>();
  }
  if (auto it = j.find("features"); it != j.end() && it->is_array()) {
    for (const auto& v : *it) {
      rec.features.push_back(v.is_number() ? v.get<double>() : std::nan(""));
    }
  }
  if (auto it = j.find("rubric_labels"); it != j.end() && it->is_array()) {
    for (const auto& v : *it) {
      const int label = v.is_number_integer() ? v.get<int>() : 2;
      rec.rubric_labels.push_back(
          static_cast<std::uint8_t>(std::clamp(label, 0, 2)));
    }
  }
  return rec;
}

inline void WriteRecords(std::ostream& os, std::span<const StudentRecord> recs) {
  for (const StudentRecord& rec : recs) os << RecordToJson(rec).dump() << '\n';
}

struct LoadResult {
  Dataset records;
  std::size_t unparseable_lines = 0;
};

inline LoadResult ReadRecords(std::istream& is) {
  LoadResult out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (auto rec = RecordFromJsonLine(line)) {
      out.records.push_back(std::move(*rec));
    } else {
      ++out.unparseable_lines;
    }
  }
  return out;
}

inline nlohmann::json SchemaToJson(const RecordSchema& schema) {
  return {{"version", schema.version},
          {"d_in", schema.input_dim()},
          {"k", schema.num_labels()}};
}

inline RecordSchema SchemaFromJson(const nlohmann::json& j) {
  try {
    return RecordSchema::Make(j.at("version").get<std::string>(),
                              j.at("d_in").get<std::size_t>(),
                              j.at("k").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
}

// Raised when a client's locked preprocessing configuration differs from the
// coordinator's.
class SchemaMismatch : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

inline void RequireSameSchema(const RecordSchema& coordinator,
                              const RecordSchema& client,
                              const std::string& client_id) {
  if (coordinator.version != client.version ||
      coordinator.input_dim() != client.input_dim() ||
      coordinator.num_labels() != client.num_labels()) {
    throw SchemaMismatch("schema mismatch for client " + client_id +
                         ": coordinator '" + coordinator.version +
                         "', client '" + client.version + "'");
  }
}

// ---------------------------------------------------------------------------
// Data locality instrumentation.
//
// Client-owned records are reachable only through ClientDataset, which
// counts every access made while the calling thread is not inside that
// client's OwnerScope.

class RecordAccessMonitor {
 public:
  static constexpr std::int64_t kNoOwner = -1;

  static std::int64_t CurrentOwner() { return current_owner(); }

  static std::uint64_t foreign_accesses() { return foreign().load(); }
  static std::uint64_t owner_accesses() { return owned().load(); }
  static void Reset() {
    foreign().store(0);
    owned().store(0);
  }

  static void Touch(std::int64_t owner) {
    if (current_owner() == owner) {
      owned().fetch_add(1, std::memory_order_relaxed);
    } else {
      foreign().fetch_add(1, std::memory_order_relaxed);
    }
  }

  class OwnerScope {
   public:
    explicit OwnerScope(std::int64_t owner) : previous_(current_owner()) {
      current_owner() = owner;
    }
    ~OwnerScope() { current_owner() = previous_; }
    OwnerScope(const OwnerScope&) = delete;
    OwnerScope& operator=(const OwnerScope&) = delete;

   private:
    std::int64_t previous_;
  };

 private:
  static std::int64_t& current_owner() {
    thread_local std::int64_t owner = kNoOwner;
    return owner;
  }
  static std::atomic<std::uint64_t>& foreign() {
    static std::atomic<std::uint64_t> count{0};
    return count;
  }
  static std::atomic<std::uint64_t>& owned() {
    static std::atomic<std::uint64_t> count{0};
    return count;
  }
};

class ClientDataset {
 public:
  ClientDataset(std::int64_t owner, Dataset train, Dataset validation)
      : owner_(owner), train_(std::move(train)), validation_(std::move(validation)) {}

  std::int64_t owner() const { return owner_; }
  std::size_t train_size() const { return train_.size(); }
  std::size_t validation_size() const { return validation_.size(); }
  std::size_t total_size() const { return train_.size() + validation_.size(); }

  std::span<const StudentRecord> train() const {
    RecordAccessMonitor::Touch(owner_);
    return train_;
  }
  std::span<const StudentRecord> validation() const {
    RecordAccessMonitor::Touch(owner_);
    return validation_;
  }

 private:
  std::int64_t owner_;
  Dataset train_;
  Dataset validation_;
};

inline constexpr double kValidationFraction = 0.2;

// Seeded shuffle followed by a split; at least one record lands on each side
// when there are two or more.
inline std::pair<Dataset, Dataset> SplitTrainValidation(Dataset records,
                                                        double val_fraction,
                                                        Rng& rng) {
  if (records.size() < 2) {
    throw UsageError("SplitTrainValidation: need at least two records");
  }
  std::shuffle(records.begin(), records.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(
      std::llround(val_fraction * static_cast<double>(records.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, records.size() - 1);
  Dataset val(records.end() - static_cast<std::ptrdiff_t>(n_val), records.end());
  records.resize(records.size() - n_val);
  return {std::move(records), std::move(val)};
}

// ---------------------------------------------------------------------------
// Synthetic heterogeneous cohort.
//
// Features come from a mixture of Gaussian components (unit covariance,
// centers spread around the origin); each client draws its own mixture
// weights from a symmetric Dirichlet, so small concentrations give strongly
// skewed feature (and therefore label) distributions. Labels follow a hidden
// linear teacher, y_j = 1[teacher_j . x >= 0], and are then flipped with the
// client's noise rate.

struct HeterogeneityProfile {
  std::size_t num_clients = 5;
  std::vector<std::size_t> sizes;        // per client, total (train + val)
  double label_skew = 0.0;               // Dirichlet concentration; <= 0: IID
  std::vector<double> label_noise_rates; // per client, in [0, 0.5]
  std::uint64_t seed = 0;
  std::size_t num_components = 4;
  double center_spread = 1.0;
  // Samples whose normalized teacher score is below this for any label are
  // redrawn; 0 keeps every draw.
  double margin = 0.0;

  void Validate() const {
    if (num_clients == 0) throw UsageError("profile: num_clients must be > 0");
    if (sizes.size() != num_clients) {
      throw UsageError("profile: sizes must list one count per client");
    }
    if (label_noise_rates.size() != num_clients) {
      throw UsageError("profile: label_noise_rates must list one rate per "
                       "client");
    }
    for (std::size_t s : sizes) {
      if (s < 2) throw UsageError("profile: every client needs >= 2 samples");
    }
    for (double r : label_noise_rates) {
      if (!(r >= 0.0 && r <= 0.5)) {
        throw UsageError("profile: label noise rates must lie in [0, 0.5]");
      }
    }
    if (num_components == 0) throw UsageError("profile: num_components > 0");
    if (!(center_spread >= 0.0) || !(margin >= 0.0) || !std::isfinite(margin)) {
      throw UsageError("profile: center_spread and margin must be >= 0");
    }
    if (!std::isfinite(label_skew)) {
      throw UsageError("profile: label_skew must be finite");
    }
  }

  // Clients smaller than two batches see very few SGD steps per epoch.
  std::vector<std::size_t> UndersizedClients(std::size_t batch_size) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (sizes[i] < 2 * batch_size) out.push_back(i);
    }
    return out;
  }
};

// Population-level generator state that every party may know: the teacher
// and the component centers. Neither reveals any client's samples.
struct CohortModel {
  Matrix teacher;                             // k x d_in
  std::vector<std::vector<double>> centers;   // num_components x d_in
};

inline CohortModel MakeCohortModel(const HeterogeneityProfile& profile,
                                   const RecordSchema& schema) {
  const std::size_t d = schema.input_dim();
  const std::size_t k = schema.num_labels();
  if (d == 0 || k == 0) throw UsageError("schema: d_in and k must be positive");
  CohortModel model{Matrix(k, d), {}};
  Rng rng = MakeRng(profile.seed, Stream::kTeacher);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : model.teacher.data) v = normal(rng);
  // Centers are re-centered so the uniform mixture has mean zero.
  model.centers.assign(profile.num_components, std::vector<double>(d));
  std::vector<double> mean(d, 0.0);
  for (auto& center : model.centers) {
    for (std::size_t c = 0; c < d; ++c) {
      center[c] = profile.center_spread * normal(rng);
      mean[c] += center[c];
    }
  }
  for (auto& center : model.centers) {
    for (std::size_t c = 0; c < d; ++c) {
      center[c] -= mean[c] / static_cast<double>(profile.num_components);
    }
  }
  return model;
}

inline LabelVector TeacherLabels(const Matrix& teacher,
                                 std::span<const double> x) {
  LabelVector y(teacher.rows);
  for (std::size_t j = 0; j < teacher.rows; ++j) {
    double acc = 0.0;
    for (std::size_t c = 0; c < teacher.cols; ++c) acc += teacher(j, c) * x[c];
    y[j] = acc >= 0.0;
  }
  return y;
}

namespace internal {

inline std::vector<double> DirichletWeights(double concentration,
                                            std::size_t count, Rng& rng) {
  std::vector<double> w(count, 1.0 / static_cast<double>(count));
  if (concentration <= 0.0) return w;
  std::gamma_distribution<double> gamma(concentration, 1.0);
  double total = 0.0;
  for (double& v : w) {
    v = gamma(rng);
    total += v;
  }
  if (total <= 0.0) {
    // Every draw underflowed; fall back to a single dominant component.
    std::uniform_int_distribution<std::size_t> pick(0, count - 1);
    std::fill(w.begin(), w.end(), 0.0);
    w[pick(rng)] = 1.0;
    return w;
  }
  for (double& v : w) v /= total;
  return w;
}

inline double MinNormalizedScore(const Matrix& teacher,
                                 std::span<const double> x) {
  double min_score = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < teacher.rows; ++j) {
    double dot = 0.0;
    double norm = 0.0;
    for (std::size_t c = 0; c < teacher.cols; ++c) {
      dot += teacher(j, c) * x[c];
      norm += teacher(j, c) * teacher(j, c);
    }
    min_score = std::min(min_score, std::abs(dot) / std::sqrt(norm));
  }
  return min_score;
}

inline Dataset DrawSamples(const CohortModel& model,
                           std::span<const double> mixture, std::size_t count,
                           double noise_rate, double margin,
                           const std::string& id_prefix, Rng& rng) {
  const std::size_t d = model.teacher.cols;
  std::discrete_distribution<std::size_t> component(mixture.begin(),
                                                    mixture.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution flip(noise_rate);
  Dataset out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> x(d);
    do {
      const auto& center = model.centers[component(rng)];
      for (std::size_t c = 0; c < d; ++c) x[c] = center[c] + normal(rng);
    } while (margin > 0.0 && MinNormalizedScore(model.teacher, x) < margin);
    LabelVector y = TeacherLabels(model.teacher, x);
    for (auto& label : y) {
      if (flip(rng)) label = 1 - label;
    }
    out.push_back({id_prefix + std::to_string(i), std::move(x), std::move(y)});
  }
  return out;
}

}  // namespace internal

// Raw (unnormalized) records of one client. Depends only on the profile,
// the schema and the client index, so a client can regenerate its own shard.
inline Dataset GenerateClientShard(const HeterogeneityProfile& profile,
                                   const RecordSchema& schema,
                                   std::size_t client_index) {
  profile.Validate();
  if (client_index >= profile.num_clients) {
    throw UsageError("GenerateClientShard: client index out of range");
  }
  const CohortModel model = MakeCohortModel(profile, schema);
  Rng mix_rng = MakeRng(profile.seed, Stream::kMixture, client_index);
  const std::vector<double> mixture = internal::DirichletWeights(
      profile.label_skew, profile.num_components, mix_rng);
  Rng rng = MakeRng(profile.seed, Stream::kClientData, client_index);
  return internal::DrawSamples(model, mixture, profile.sizes[client_index],
                               profile.label_noise_rates[client_index],
                               profile.margin,
                               "c" + std::to_string(client_index) + "-", rng);
}

struct GeneratedCohort {
  std::vector<Dataset> clients;
  Matrix teacher;
};

inline GeneratedCohort GenerateClients(const HeterogeneityProfile& profile,
                                       const RecordSchema& schema) {
  profile.Validate();
  GeneratedCohort out{{}, MakeCohortModel(profile, schema).teacher};
  for (std::size_t i = 0; i < profile.num_clients; ++i) {
    out.clients.push_back(GenerateClientShard(profile, schema, i));
  }
  return out;
}

// Noise-free samples from the uniform mixture. Used for the server's
// held-out test set and the public calibration set.
inline Dataset GeneratePopulationSamples(const HeterogeneityProfile& profile,
                                         const RecordSchema& schema,
                                         std::size_t count, Stream stream) {
  profile.Validate();
  const CohortModel model = MakeCohortModel(profile, schema);
  const std::vector<double> uniform(
      profile.num_components, 1.0 / static_cast<double>(profile.num_components));
  Rng rng = MakeRng(profile.seed, stream);
  return internal::DrawSamples(model, uniform, count, 0.0, profile.margin,
                               stream == Stream::kTestSet ? "test-" : "cal-",
                               rng);
}

}  // namespace fedscore

#endif  // FEDSCORE_DATAPIPE_HPP_

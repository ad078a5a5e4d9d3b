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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails or overruns its time limit.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fedscore/aggregator.hpp"
#include "fedscore/cli.hpp"
#include "fedscore/metrics.hpp"
#include "fedscore/model.hpp"
#include "fedscore/orchestrator.hpp"
#include "fedscore/privacy.hpp"
#include "fedscore/protocol.hpp"
#include "message_gen.hpp"
#include "oracles.hpp"

namespace fedscore {
namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records the first failure; later checks keep the original message.
  void Check(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

std::string Fmt(const char* fmt, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), fmt, a, b, c);
  return buf;
}

// 1. Adaptive weights against the long-double oracle.
Outcome WeightCorrectness() {
  Outcome out;
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> loss(0.0, 10.0), shift(-50.0, 50.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n_clients = 1 + rng() % 20;
    std::vector<ClientUpdate> updates, shifted;
    std::vector<std::size_t> sizes;
    std::vector<double> losses;
    const double c = shift(rng);
    for (std::size_t i = 0; i < n_clients; ++i) {
      sizes.push_back(1 + rng() % 5000);
      losses.push_back(loss(rng));
      updates.push_back({ClientIdFor(i), 1, ParameterVector::Zeros(1), sizes.back(),
                         losses.back()});
      shifted.push_back(updates.back());
      shifted.back().val_loss += c;
    }
    const AggregationWeights w = ComputeAdaptiveWeights(updates);
    const AggregationWeights ws = ComputeAdaptiveWeights(shifted);
    const std::vector<double> expect = oracle::AdaptiveWeights(sizes, losses);
    worst = std::max(worst, std::abs(w.Sum() - 1.0));
    out.Check(std::abs(w.Sum() - 1.0) <= 1e-12, "weights do not sum to 1");
    for (std::size_t i = 0; i < n_clients; ++i) {
      worst = std::max({worst, std::abs(w[i] - ws[i]), std::abs(w[i] - expect[i])});
      out.Check(std::abs(w[i] - ws[i]) <= 1e-12, "not shift invariant");
      out.Check(std::abs(w[i] - expect[i]) <= 1e-12, "disagrees with oracle");
    }
  }
  if (out.pass) out.detail = Fmt("1000 cohorts, max deviation %.2e", worst);
  return out;
}

// 2. Full-step global update equals the weighted average of client params.
Outcome UpdateConsistency() {
  Outcome out;
  std::mt19937_64 rng(202);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n_clients = 1 + rng() % 12, dim = 1 + rng() % 64;
    std::vector<double> prev(dim);
    for (double& v : prev) v = normal(rng);
    std::vector<ClientUpdate> updates;
    std::vector<std::vector<double>> ws;
    for (std::size_t i = 0; i < n_clients; ++i) {
      std::vector<double> w(dim);
      for (double& v : w) v = normal(rng);
      ws.push_back(w);
      updates.push_back({ClientIdFor(i), 1, ParameterVector(w), 1 + rng() % 900,
                         std::abs(normal(rng))});
    }
    const AggregationWeights alpha = ComputeAdaptiveWeights(updates);
    std::vector<double> a;
    for (std::size_t i = 0; i < alpha.size(); ++i) a.push_back(alpha[i]);
    const ParameterVector got = GlobalUpdate(ParameterVector(prev), updates, alpha, 1.0);
    const std::vector<double> expect = oracle::WeightedAverage(ws, a);
    for (std::size_t c = 0; c < dim; ++c) {
      worst = std::max(worst, std::abs(got[c] - expect[c]));
      out.Check(std::abs(got[c] - expect[c]) <= 1e-12, "mismatch beyond 1e-12");
    }
  }
  if (out.pass) out.detail = Fmt("1000 instances, max deviation %.2e", worst);
  return out;
}

// 3. Analytic adapter gradients against central differences.
Outcome GradientCheck() {
  Outcome out;
  std::mt19937_64 rng(303);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  const int kInstances = 60;
  for (int trial = 0; trial < kInstances; ++trial) {
    const std::size_t d = 1 + rng() % 8, k = 1 + rng() % 5;
    const std::size_t r = 1 + rng() % std::min(d, k);
    const std::size_t n = 1 + rng() % 6;
    ScorerConfig cfg{d, k, r, 0.5 + static_cast<double>(rng() % 4)};
    oracle::TinyScorer tiny{d, k, r, cfg.adapter_scale, std::vector<double>(k * d)};
    for (double& v : tiny.frozen) v = 0.5 * normal(rng);
    std::vector<double> params(cfg.adapter_parameter_count());
    for (double& v : params) v = 0.5 * normal(rng);
    std::vector<StudentRecord> batch(n);
    std::vector<std::vector<double>> xs;
    std::vector<LabelVector> ys;
    for (StudentRecord& s : batch) {
      s.features.resize(d);
      for (double& v : s.features) v = normal(rng);
      s.rubric_labels.resize(k);
      for (auto& v : s.rubric_labels) v = rng() % 2;
      xs.push_back(s.features);
      ys.push_back(s.rubric_labels);
    }
    const Scorer model(cfg, std::make_shared<Matrix>(k, d, tiny.frozen),
                       ParameterVector(params));
    const auto analytic = model.LossAndGrad(std::span<const StudentRecord>(batch));
    const auto fd = oracle::CentralDifferenceGradient(tiny, params, xs, ys, 1e-5);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      num += (analytic.gradient[i] - fd[i]) * (analytic.gradient[i] - fd[i]);
      den += fd[i] * fd[i];
    }
    const double rel = std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
    worst = std::max(worst, rel);
    out.Check(rel < 1e-4, Fmt("relative error %.3e", rel));
  }
  if (out.pass) out.detail = Fmt("%.0f instances, max relative error %.2e", kInstances, worst);
  return out;
}

// 4. Clipping bound, noise calibration, basic composition.
Outcome PrivacyMechanism() {
  Outcome out;
  std::mt19937_64 rng(404);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> log_scale(-3.0, 3.0);
  double worst_excess = -1.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t dim = 1 + rng() % 200;
    const double scale = std::pow(10.0, log_scale(rng));
    const double clip = trial % 2 == 0 ? 1.0 : std::pow(10.0, log_scale(rng));
    std::vector<double> v(dim);
    for (double& x : v) x = scale * normal(rng);
    const double norm = L2Norm(ClipUpdate(ParameterVector(v), clip));
    worst_excess = std::max(worst_excess, norm - clip);
    out.Check(norm <= clip + 1e-12, "clipped norm exceeds the bound");
  }

  const double sigma = CalibrateSigma(1.0, 1e-5, 1.0);
  out.Check(std::abs(sigma - 4.8448) <= 1e-3, Fmt("calibrated sigma %.6f", sigma));
  Rng noise_rng(405);
  const ParameterVector noisy =
      AddGaussianNoise(ParameterVector::Zeros(100000), sigma, noise_rng);
  double mean = 0.0;
  for (double x : noisy.values()) mean += x;
  mean /= 100000.0;
  double var = 0.0;
  for (double x : noisy.values()) var += (x - mean) * (x - mean);
  const double empirical = std::sqrt(var / (100000.0 - 1.0));
  out.Check(std::abs(empirical / sigma - 1.0) <= 0.02,
            Fmt("empirical std %.4f vs %.4f", empirical, sigma));

  std::uniform_real_distribution<double> eps(0.01, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    const double e = eps(rng);
    const std::uint64_t rounds = 1 + rng() % 500;
    BudgetLedger ledger(PrivacyConfig{e, 1e-5, 1.0, true});
    for (std::uint64_t t = 0; t < rounds; ++t) ledger.RecordRound();
    out.Check(ledger.total_epsilon() == static_cast<double>(rounds) * e,
              "ledger total differs from T * epsilon");
  }
  if (out.pass) {
    out.detail = Fmt("sigma %.6f, empirical std ratio %.4f, max clip excess %.1e",
                     sigma, empirical / sigma, worst_excess);
  }
  return out;
}

// 5. IID convergence and the gap to centralized training.
Outcome Convergence() {
  Outcome out;
  ExperimentConfig cfg = *cli::Preset("iid-benchmark");
  const ExperimentResult fl = RunExperimentDetailed(cfg);
  const MetricReport cl = RunCentralizedBaseline(cfg);
  const double acc = fl.final_metrics.accuracy;
  out.Check(fl.history.size() == 30, "did not run 30 rounds");
  out.Check(acc >= 0.95, Fmt("federated accuracy %.4f < 0.95", acc));
  out.Check(acc >= cl.accuracy - 0.02,
            Fmt("federated %.4f more than 0.02 below centralized %.4f", acc, cl.accuracy));
  if (out.pass) out.detail = Fmt("federated %.4f, centralized %.4f", acc, cl.accuracy);
  return out;
}

// 6. Adaptive vs plain averaging on the noisy heterogeneous benchmark.
Outcome AblationDirection() {
  Outcome out;
  const ExperimentConfig base = *cli::Preset("hetero-benchmark");
  double acc_adaptive = 0, acc_plain = 0, mae_adaptive = 0, mae_plain = 0;
  for (std::uint64_t seed : base.ablation_seeds) {
    ExperimentConfig cfg = base;
    cfg.master_seed = seed;
    cfg.aggregation.strategy = AggregationStrategy::kAdaptive;
    const MetricReport a = RunExperimentDetailed(cfg).final_metrics;
    cfg.aggregation.strategy = AggregationStrategy::kPlainAverage;
    const MetricReport p = RunExperimentDetailed(cfg).final_metrics;
    acc_adaptive += a.accuracy;
    acc_plain += p.accuracy;
    mae_adaptive += a.mae;
    mae_plain += p.mae;
  }
  const double n = static_cast<double>(base.ablation_seeds.size());
  out.Check(base.ablation_seeds.size() == 5, "benchmark must use 5 seeds");
  out.Check(acc_adaptive / n > acc_plain / n,
            Fmt("mean accuracy adaptive %.4f <= plain %.4f", acc_adaptive / n,
                acc_plain / n));
  out.Check(mae_adaptive / n <= mae_plain / n,
            Fmt("mean MAE adaptive %.4f > plain %.4f", mae_adaptive / n, mae_plain / n));
  if (out.pass) {
    out.detail = Fmt("mean accuracy adaptive %.4f vs plain %.4f", acc_adaptive / n,
                     acc_plain / n) +
                 Fmt(", MAE %.4f vs %.4f", mae_adaptive / n, mae_plain / n);
  }
  return out;
}

// 7. Codec round trips, tamper detection, authentication, expiry.
Outcome Protocol() {
  using namespace protocol;
  Outcome out;
  testing::MessageGenerator gen(707);
  SessionKey key{};
  for (std::size_t i = 0; i < key.size(); ++i) key[i] = static_cast<std::uint8_t>(i * 7);
  for (int i = 0; i < 10000; ++i) {
    const Message m = gen.Any();
    const Bytes frame = Encode(m, key);
    out.Check(Decode(frame, key) == m, "round trip changed a message");
  }

  std::size_t flips = 0;
  for (int i = 0; i < 40; ++i) {
    const Bytes frame = Encode(gen.SessionBound(), key);
    for (std::size_t byte = 0; byte < frame.size(); ++byte) {
      for (int bit = 0; bit < 8; ++bit) {
        Bytes tampered = frame;
        tampered[byte] ^= static_cast<std::uint8_t>(1u << bit);
        bool rejected = false;
        try {
          Decode(tampered, key);
        } catch (const DecodeError&) {
          rejected = true;
        }
        out.Check(rejected, "a single-bit flip was accepted");
        ++flips;
      }
    }
  }

  AuditLog audit;
  Authenticator server({{"client-0", "right"}}, "v1", audit, 3);
  const auto bad = Handshake("client-0", "wrong", "v1", server, 1);
  out.Check(std::holds_alternative<Reject>(bad), "invalid token was not rejected");
  out.Check(audit.Count(AuditKind::kReject) == 1, "expected exactly one reject event");
  out.Check(audit.Count(AuditKind::kGrant) == 0, "invalid token got a grant");

  const auto good = Handshake("client-0", "right", "v1", server, 1);
  out.Check(std::holds_alternative<Session>(good), "valid token was rejected");
  if (const auto* s = std::get_if<Session>(&good)) {
    const Message ack = UpdateAck{s->session_id, 3};
    out.Check(Authorize(s, ack, 3, 3).allowed(), "session unusable before expiry");
    out.Check(Authorize(s, ack, 4, 4).decision == Decision::kSessionExpired,
              "session still usable after ttl rounds");
    out.Check(Authorize(s, ack, 9, 9).decision == Decision::kSessionExpired,
              "expired session revived");
    const auto again = Handshake("client-0", "right", "v1", server, 4);
    const auto* fresh = std::get_if<Session>(&again);
    out.Check(fresh != nullptr, "re-handshake failed");
    if (fresh != nullptr) {
      out.Check(Authorize(fresh, UpdateAck{fresh->session_id, 4}, 4, 4).allowed(),
                "re-handshaken session unusable");
    }
  }
  if (out.pass) {
    out.detail = "10000 round trips, " + std::to_string(flips) +
                 " single-bit flips rejected, 1 reject event";
  }
  return out;
}

// 8. Loopback sockets reproduce the in-process history bit for bit.
Outcome TransportEquivalence() {
  Outcome out;
  ExperimentConfig cfg = *cli::Preset("hetero-benchmark");
  cfg.num_rounds = 5;
  cfg.session_ttl_rounds = 3;
  const auto local = RunExperiment(cfg);
  cfg.transport = TransportKind::kSocket;
  const auto remote = RunExperiment(cfg);
  out.Check(local.size() == 5 && remote.size() == 5, "wrong number of rounds");
  out.Check(local == remote, "round histories differ");
  if (out.pass) {
    out.detail = "5 clients, 5 rounds, final params " +
                 ParamsHash(remote.back().global_params_after).substr(0, 16);
  }
  return out;
}

// 9. No record access outside the owning client.
Outcome DataLocality() {
  Outcome out;
  ExperimentConfig cfg = *cli::Preset("demo");
  cfg.num_rounds = 5;
  RecordAccessMonitor::Reset();
  RunExperiment(cfg);
  cfg.transport = TransportKind::kSocket;
  RunExperiment(cfg);
  const auto foreign = RecordAccessMonitor::foreign_accesses();
  const auto owned = RecordAccessMonitor::owner_accesses();
  out.Check(owned > 0, "instrumentation saw no accesses at all");
  out.Check(foreign == 0, std::to_string(foreign) + " foreign accesses");
  if (out.pass) {
    out.detail = std::to_string(owned) + " owner accesses, 0 foreign";
  }
  return out;
}

// 10. Metric hand examples and rubric match >= exact match.
Outcome MetricOracles() {
  using Labels = std::vector<LabelVector>;
  Outcome out;
  const Labels truth{{1, 0, 1}, {0, 0, 1}, {1, 1, 1}, {0, 1, 0}};
  Labels complement = truth;
  for (auto& row : complement) {
    for (auto& v : row) v = 1 - v;
  }
  Labels three = truth;
  three[2][0] = 0;
  out.Check(ExactMatchAccuracy(truth, truth) == 1.0, "accuracy of truth");
  out.Check(ExactMatchAccuracy(complement, truth) == 0.0, "accuracy of complement");
  out.Check(ExactMatchAccuracy(three, truth) == 0.75, "3 of 4 exact matches");

  const auto perfect = MacroPrf(Labels{{1, 1}, {0, 1}}, Labels{{1, 1}, {0, 1}});
  out.Check(perfect.precision == 1.0 && perfect.recall == 1.0 && perfect.f1 == 1.0,
            "perfect precision/recall/f1");
  const auto silent = MacroPrf(Labels{{1, 0}}, Labels{{1, 0}});
  out.Check(silent.precision == 0.5 && silent.recall == 0.5 && silent.f1 == 0.5,
            "absent label contributes zeros");
  const auto hand = MacroPrf(Labels{{1, 0}, {0, 1}}, Labels{{1, 0}, {1, 1}});
  out.Check(hand.precision == 1.0, "hand precision");
  out.Check(hand.recall == 0.75, "hand recall");
  out.Check(hand.f1 == (2.0 / 3.0 + 1.0) / 2.0, "hand macro F1 5/6");

  const Labels rubric{{1, 0, 1, 1, 0}, {0, 0, 1, 1, 1}};
  Labels one_wrong = rubric;
  one_wrong[1][4] = 0;
  out.Check(RubricMatch(rubric, rubric) == 1.0, "rubric match perfect");
  out.Check(RubricMatch(one_wrong, rubric) == 0.9, "rubric match 9 of 10");
  Labels all_wrong = rubric;
  for (auto& row : all_wrong) {
    for (auto& v : row) v = 1 - v;
  }
  out.Check(RubricMatch(all_wrong, rubric) == 0.0, "rubric match all wrong");

  out.Check(ScoreMae(Labels{{1, 0, 1}}, Labels{{1, 0, 1}}) == 0.0, "MAE perfect");
  out.Check(ScoreMae(Labels{{1, 1, 1, 0, 0}}, Labels{{1, 1, 1, 1, 1}}) == 2.0,
            "MAE 3 vs 5");
  out.Check(ScoreMae(Labels{{1, 0}, {0, 1}}, Labels{{1, 1}, {1, 0}}) == 0.5,
            "MAE deviations 1 and 0");

  const std::vector<std::pair<std::size_t, double>> single{{7, 0.42}};
  const std::vector<std::pair<std::size_t, double>> equal{{10, 0.2}, {10, 0.4}};
  const std::vector<std::pair<std::size_t, double>> skew{{100, 0.5}, {300, 1.0}};
  out.Check(EvaluateGlobalObjective(single) == 0.42, "objective single client");
  out.Check(std::abs(EvaluateGlobalObjective(equal) - 0.3) <= 1e-15,
            "objective equal sizes");
  out.Check(EvaluateGlobalObjective(skew) == 0.875, "objective 0.875");

  std::mt19937_64 rng(1010);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 50, k = 1 + rng() % 8;
    Labels preds(n, LabelVector(k)), labels(n, LabelVector(k));
    const unsigned bias = 1 + rng() % 6;  // vary how often cells agree
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        labels[i][j] = rng() % 2;
        preds[i][j] = rng() % bias == 0 ? 1 - labels[i][j] : labels[i][j];
      }
    }
    out.Check(RubricMatch(preds, labels) >= ExactMatchAccuracy(preds, labels),
              "rubric match below exact-match accuracy");
  }
  if (out.pass) out.detail = "all hand examples exact; 1000 random sets ordered";
  return out;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
  double limit_seconds;  // 0: no limit
};

}  // namespace
}  // namespace fedscore

int main() {
  using namespace fedscore;
  const std::vector<Criterion> criteria{
      {1, "weight correctness", WeightCorrectness, 1.0},
      {2, "global update consistency", UpdateConsistency, 1.0},
      {3, "gradient check", GradientCheck, 5.0},
      {4, "privacy mechanism", PrivacyMechanism, 5.0},
      {5, "convergence", Convergence, 120.0},
      {6, "ablation direction", AblationDirection, 600.0},
      {7, "protocol", Protocol, 5.0},
      {8, "transport equivalence", TransportEquivalence, 60.0},
      {9, "data locality", DataLocality, 0.0},
      {10, "metric oracles", MetricOracles, 0.0},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.limit_seconds > 0 && seconds >= c.limit_seconds && outcome.pass) {
      outcome = {false, Fmt("took %.2f s, limit %.0f s", seconds, c.limit_seconds)};
    }
    failed += !outcome.pass;
    std::printf("[%s] %2d %-26s %7.2f s  %s\n", outcome.pass ? "PASS" : "FAIL", c.id,
                c.name, seconds, outcome.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n",
              static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}

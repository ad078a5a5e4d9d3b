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

#ifndef FEDSCORE_ORCHESTRATOR_HPP_
#define FEDSCORE_ORCHESTRATOR_HPP_

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <exception>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fedscore/aggregator.hpp"
#include "fedscore/crypto.hpp"
#include "fedscore/datapipe.hpp"
#include "fedscore/errors.hpp"
#include "fedscore/metrics.hpp"
#include "fedscore/model.hpp"
#include "fedscore/params.hpp"
#include "fedscore/privacy.hpp"
#include "fedscore/protocol.hpp"
#include "fedscore/rng.hpp"
#include "fedscore/trainer.hpp"
#include "fedscore/transport.hpp"
#include "json.hpp"

namespace fedscore {

enum class TransportKind { kInProcess, kSocket };

inline std::string_view ToString(TransportKind t) {
  return t == TransportKind::kInProcess ? "in_process" : "socket";
}

inline TransportKind ParseTransport(std::string_view name) {
  if (name == "in_process") return TransportKind::kInProcess;
  if (name == "socket") return TransportKind::kSocket;
  throw ConfigError("unknown transport '" + std::string(name) + "'");
}

struct ExperimentConfig {
  std::size_t num_rounds = 30;
  AggregationConfig aggregation;
  PrivacyConfig privacy;
  TrainingConfig training;
  ScorerConfig scorer;
  HeterogeneityProfile data;
  TransportKind transport = TransportKind::kInProcess;
  std::uint64_t master_seed = 0;

  std::string schema_version = "fedscore-v1";
  std::size_t test_set_size = 1000;
  std::size_t calibration_size = 1000;
  std::uint64_t session_ttl_rounds = protocol::kDefaultSessionTtlRounds;
  // Rounds without improvement of the global objective before the run stops;
  // 0 disables round-level stopping.
  std::size_t global_patience = 0;
  std::int64_t barrier_timeout_ms = 120000;
  // Seeds for ablation runs; empty means master_seed alone.
  std::vector<std::uint64_t> ablation_seeds;

  void Validate() const {
    aggregation.Validate();
    privacy.Validate();
    training.Validate();
    scorer.Validate();
    data.Validate();
    if (schema_version.empty()) throw UsageError("schema_version is empty");
    if (test_set_size == 0) throw UsageError("test_set_size must be >= 1");
    if (calibration_size == 0) throw UsageError("calibration_size must be >= 1");
    if (session_ttl_rounds == 0) throw UsageError("session ttl must be >= 1");
    if (barrier_timeout_ms <= 0) throw UsageError("barrier timeout must be > 0");
  }

  // The data profile with its generator seed taken from the master seed.
  HeterogeneityProfile profile() const {
    HeterogeneityProfile p = data;
    p.seed = master_seed;
    return p;
  }

  RecordSchema schema() const {
    return RecordSchema::Make(schema_version, scorer.input_dim, scorer.num_labels);
  }

  std::chrono::milliseconds barrier_timeout() const {
    return std::chrono::milliseconds(barrier_timeout_ms);
  }
};

inline std::string ClientIdFor(std::size_t index) {
  return "client-" + std::to_string(index);
}

// Inverse of ClientIdFor; nullopt for ids of any other shape.
inline std::optional<std::size_t> ClientIndexOf(const std::string& id) {
  constexpr std::string_view prefix = "client-";
  if (id.size() <= prefix.size() || id.compare(0, prefix.size(), prefix) != 0) {
    return std::nullopt;
  }
  std::size_t value = 0;
  for (std::size_t i = prefix.size(); i < id.size(); ++i) {
    if (id[i] < '0' || id[i] > '9') return std::nullopt;
    value = value * 10 + static_cast<std::size_t>(id[i] - '0');
  }
  return value;
}

// Per (client, round) training seed, derived from the broadcast base seed.
inline std::uint64_t ClientTrainingSeed(std::uint64_t base, std::size_t client,
                                        std::uint64_t round) {
  return DeriveSeed(base, Stream::kTraining, client, round);
}

// Everything the server distributes before round one: the locked schema,
// the normalization fitted on the public calibration set and the frozen
// base. Clients rebuild it from the shared config.
struct SharedSetup {
  RecordSchema schema;
  NormalizationParams normalization;
  std::shared_ptr<const Matrix> frozen;
};

inline SharedSetup MakeSharedSetup(const ExperimentConfig& cfg) {
  const RecordSchema schema = cfg.schema();
  const Dataset calibration = GeneratePopulationSamples(
      cfg.profile(), schema, cfg.calibration_size, Stream::kCalibration);
  return {schema, FitNormalization(calibration),
          MakeFrozenBase(cfg.scorer, cfg.master_seed)};
}

struct RoundTask {
  std::uint64_t round;
  ParameterVector global_params;
  TrainingConfig training;
  PrivacyConfig privacy;
};

// ---------------------------------------------------------------------------
// Client side

class ClientNode {
 public:
  // Generates, filters, normalizes and splits this client's shard. With
  // `private_noise` the privacy noise comes from the OS instead of the
  // master seed, so nobody holding the config can reproduce it.
  ClientNode(const ExperimentConfig& cfg, const SharedSetup& setup,
             std::size_t index, bool private_noise = false)
      : index_(index),
        client_id_(ClientIdFor(index)),
        master_seed_(cfg.master_seed),
        scorer_config_(cfg.scorer),
        frozen_(setup.frozen),
        private_noise_(private_noise),
        data_(MakeData(cfg, setup, index)) {}

  std::size_t index() const { return index_; }
  const std::string& client_id() const { return client_id_; }
  const ClientDataset& dataset() const { return data_; }

  ClientUpdate TrainRound(const RoundTask& task) const {
    RecordAccessMonitor::OwnerScope scope(static_cast<std::int64_t>(index_));
    TrainingConfig training = task.training;
    training.rng_seed = ClientTrainingSeed(task.training.rng_seed, index_, task.round);
    const Scorer start(scorer_config_, frozen_, task.global_params);
    const TrainReport report =
        LocalTrain(start, data_.train(), data_.validation(), training);

    ParameterVector params = report.final_params;
    if (task.privacy.enabled) {
      Rng rng = private_noise_
                    ? Rng(std::random_device{}())
                    : MakeRng(master_seed_, Stream::kPrivacyNoise, index_, task.round);
      params = ProtectUpdate(params, task.global_params, task.privacy, rng);
    }
    return {client_id_, task.round, std::move(params), data_.train_size(),
            report.val_loss};
  }

 private:
  static ClientDataset MakeData(const ExperimentConfig& cfg,
                                const SharedSetup& setup, std::size_t index) {
    const auto owner = static_cast<std::int64_t>(index);
    RecordAccessMonitor::OwnerScope scope(owner);
    const Dataset raw = GenerateClientShard(cfg.profile(), setup.schema, index);
    Dataset clean = FilterDataset(raw, setup.schema).clean;
    if (clean.size() < 2) {
      throw RoundFault(ClientIdFor(index) + ": fewer than two valid records");
    }
    Rng split_rng = MakeRng(cfg.master_seed, Stream::kSplit, index);
    auto [train, val] = SplitTrainValidation(
        NormalizeAll(clean, setup.normalization), kValidationFraction, split_rng);
    return ClientDataset(owner, std::move(train), std::move(val));
  }

  std::size_t index_;
  std::string client_id_;
  std::uint64_t master_seed_;
  ScorerConfig scorer_config_;
  std::shared_ptr<const Matrix> frozen_;
  bool private_noise_;
  ClientDataset data_;
};

// The server's view of the cohort: hand out a task, get back one update per
// registered client in registry order, or throw RoundFault naming the
// clients that did not deliver.
class ClientCohort {
 public:
  virtual ~ClientCohort() = default;
  virtual std::vector<std::string> client_ids() const = 0;
  virtual std::vector<ClientUpdate> Collect(const RoundTask& task) = 0;
};

namespace internal {

inline std::string JoinIds(const std::vector<std::string>& ids) {
  std::string out;
  for (const std::string& id : ids) out += (out.empty() ? "" : ", ") + id;
  return out;
}

inline RoundFault MissingUpdates(std::uint64_t round,
                                 const std::vector<std::string>& absent,
                                 const std::string& cause) {
  return RoundFault("round " + std::to_string(round) + ": no update from " +
                    JoinIds(absent) + (cause.empty() ? "" : " (" + cause + ")"));
}

}  // namespace internal

// Clients living in this process, one thread each per round.
class InProcessCohort : public ClientCohort {
 public:
  explicit InProcessCohort(std::vector<ClientNode> nodes) : nodes_(std::move(nodes)) {}

  InProcessCohort(const ExperimentConfig& cfg, const SharedSetup& setup) {
    for (std::size_t i = 0; i < cfg.data.num_clients; ++i) {
      nodes_.emplace_back(cfg, setup, i);
    }
  }

  const std::vector<ClientNode>& nodes() const { return nodes_; }

  std::vector<std::string> client_ids() const override {
    std::vector<std::string> ids;
    for (const ClientNode& n : nodes_) ids.push_back(n.client_id());
    return ids;
  }

  std::vector<ClientUpdate> Collect(const RoundTask& task) override {
    std::vector<std::future<ClientUpdate>> pending;
    for (const ClientNode& node : nodes_) {
      pending.push_back(std::async(std::launch::async,
                                   [&node, &task] { return node.TrainRound(task); }));
    }
    std::vector<ClientUpdate> updates;
    std::vector<std::string> absent;
    std::string cause;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      try {
        updates.push_back(pending[i].get());
      } catch (const std::exception& e) {
        absent.push_back(nodes_[i].client_id());
        if (cause.empty()) cause = e.what();
      }
    }
    if (!absent.empty()) throw fedscore::internal::MissingUpdates(task.round, absent, cause);
    return updates;
  }

 private:
  std::vector<ClientNode> nodes_;
};

// ---------------------------------------------------------------------------
// Socket transport

namespace internal {

// Server half of the handshake, starting from an already received first
// hello. Sends the grant or the reject; returns the session on success.
inline std::optional<protocol::Session> ServeHandshake(
    transport::FrameStream& stream, protocol::Authenticator& auth,
    const protocol::ClientHello& hello, std::uint64_t round) {
  using namespace protocol;
  auto challenge = auth.Challenge(hello, round);
  if (auto* reject = std::get_if<Reject>(&challenge)) {
    stream.Send(*reject);
    return std::nullopt;
  }
  stream.Send(std::get<ServerChallenge>(challenge));
  const Message reply = stream.Receive();
  const auto* proof = std::get_if<ClientHello>(&reply);
  if (proof == nullptr) {
    auth.audit().Append(AuditKind::kReject, hello.client_id, round,
                        "expected proof hello");
    stream.Send(Reject{RejectReason::kMalformed, "expected proof hello"});
    return std::nullopt;
  }
  auto result = auth.Complete(*proof, round);
  if (auto* reject = std::get_if<Reject>(&result)) {
    stream.Send(*reject);
    return std::nullopt;
  }
  const Session& s = std::get<Session>(result);
  stream.Send(SessionGrant{s.session_id, s.established_round, s.expires_at_round});
  return s;
}

}  // namespace internal

// Server side of the socket transport. Admits the expected clients, then
// runs each round over every connection concurrently.
class SocketCohort : public ClientCohort {
 public:
  SocketCohort(transport::Listener& listener, protocol::Authenticator& auth,
               std::vector<std::string> expected_ids,
               std::chrono::milliseconds timeout)
      : listener_(listener), auth_(auth), timeout_(timeout) {
    for (std::string& id : expected_ids) {
      connections_.push_back(Connection{std::move(id), nullptr, std::nullopt});
    }
  }

  ~SocketCohort() override { Close(); }

  std::vector<std::string> client_ids() const override {
    std::vector<std::string> ids;
    for (const Connection& c : connections_) ids.push_back(c.client_id);
    return ids;
  }

  // Accepts connections until every expected client holds a session.
  // Failed handshakes are audited and dropped without ending admission.
  void Admit(std::uint64_t round) {
    using namespace protocol;
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    while (std::any_of(connections_.begin(), connections_.end(),
                       [](const Connection& c) { return c.stream == nullptr; })) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) {
        std::vector<std::string> absent;
        for (const Connection& c : connections_) {
          if (!c.stream) absent.push_back(c.client_id);
        }
        throw RoundFault("admission timed out; missing " +
                         fedscore::internal::JoinIds(absent));
      }
      std::unique_ptr<transport::FrameStream> stream;
      try {
        stream = std::make_unique<transport::FrameStream>(listener_.Accept(left),
                                                          timeout_);
      } catch (const transport::TimeoutError&) {
        continue;
      }
      try {
        const Message first = stream->Receive();
        const auto* hello = std::get_if<ClientHello>(&first);
        if (hello == nullptr) {
          auth_.audit().Append(AuditKind::kReject, "", round, "expected hello");
          stream->Send(Reject{RejectReason::kMalformed, "expected hello"});
          continue;
        }
        Connection* slot = Find(hello->client_id);
        if (slot == nullptr || slot->stream != nullptr) {
          auth_.audit().Append(AuditKind::kReject, hello->client_id, round,
                               "not an open cohort slot");
          stream->Send(Reject{RejectReason::kUnknownClient, "not an open cohort slot"});
          continue;
        }
        auto session = fedscore::internal::ServeHandshake(*stream, auth_, *hello, round);
        if (!session) continue;
        slot->stream = std::move(stream);
        slot->session = std::move(session);
      } catch (const std::exception& e) {
        auth_.audit().Append(AuditKind::kReject, "", round,
                             std::string("handshake failed: ") + e.what());
      }
    }
  }

  std::vector<ClientUpdate> Collect(const RoundTask& task) override {
    std::vector<std::future<ClientUpdate>> pending;
    for (Connection& c : connections_) {
      pending.push_back(std::async(std::launch::async,
                                   [this, &c, &task] { return ServeRound(c, task); }));
    }
    std::vector<ClientUpdate> updates;
    std::vector<std::string> absent;
    std::string cause;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      try {
        updates.push_back(pending[i].get());
      } catch (const std::exception& e) {
        absent.push_back(connections_[i].client_id);
        if (cause.empty()) cause = e.what();
      }
    }
    if (!absent.empty()) throw fedscore::internal::MissingUpdates(task.round, absent, cause);
    return updates;
  }

  // Ends the run: every client sees a clean end of stream.
  void Close() {
    for (Connection& c : connections_) {
      if (c.stream) {
        c.stream->ShutdownWrite();
        c.stream->Close();
        c.stream.reset();
      }
    }
  }

 private:
  struct Connection {
    std::string client_id;
    std::unique_ptr<transport::FrameStream> stream;
    std::optional<protocol::Session> session;
  };

  Connection* Find(const std::string& id) {
    for (Connection& c : connections_) {
      if (c.client_id == id) return &c;
    }
    return nullptr;
  }

  ClientUpdate ServeRound(Connection& c, const RoundTask& task) {
    using namespace protocol;
    if (!c.stream) throw RoundFault("not connected");
    transport::FrameStream& stream = *c.stream;
    AuditLog& audit = auth_.audit();

    if (!c.session || c.session->ExpiredAt(task.round)) {
      if (c.session) {
        stream.Send(SessionExpired{c.session->session_id}, c.session->key);
        audit.Append(AuditKind::kExpire, c.client_id, task.round,
                     "session " + c.session->session_id);
        auth_.Drop(c.session->session_id);
        c.session.reset();
      }
      const Message first = stream.Receive();
      const auto* hello = std::get_if<ClientHello>(&first);
      if (hello == nullptr || hello->client_id != c.client_id) {
        audit.Append(AuditKind::kReject, c.client_id, task.round,
                     "expected re-handshake");
        stream.Send(Reject{RejectReason::kNoSession, "expected re-handshake"});
        throw RoundFault("re-handshake failed");
      }
      c.session = fedscore::internal::ServeHandshake(stream, auth_, *hello, task.round);
      if (!c.session) throw RoundFault("re-handshake rejected");
    }
    const Session& session = *c.session;

    stream.Send(RoundConfig{session.session_id, task.round,
                            task.global_params.raw(), task.training, task.privacy},
                session.key);
    Message reply;
    try {
      reply = stream.Receive(session.key);
    } catch (const DecodeError& e) {
      audit.Append(AuditKind::kReject, c.client_id, task.round, e.what());
      stream.Send(Reject{RejectReason::kMalformed, e.what()});
      throw;
    }
    const AuthorizationResult verdict =
        Authorize(&session, reply, task.round, task.round);
    const auto* submit = std::get_if<UpdateSubmit>(&reply);
    if (!verdict.allowed() || submit == nullptr) {
      const RejectReason reason = verdict.reason.value_or(RejectReason::kMalformed);
      audit.Append(AuditKind::kReject, c.client_id, task.round,
                   std::string(ToString(reason)));
      stream.Send(Reject{reason, "update refused"});
      throw RoundFault("update refused: " + std::string(ToString(reason)));
    }
    if (submit->update.params.size() != task.global_params.size()) {
      audit.Append(AuditKind::kReject, c.client_id, task.round, "wrong dimension");
      stream.Send(Reject{RejectReason::kMalformed, "wrong dimension"});
      throw RoundFault("update has the wrong dimension");
    }
    audit.Append(AuditKind::kSubmit, c.client_id, task.round,
                 "session " + session.session_id);
    stream.Send(UpdateAck{session.session_id, task.round}, session.key);
    return submit->update;
  }

  transport::Listener& listener_;
  protocol::Authenticator& auth_;
  std::chrono::milliseconds timeout_;
  std::vector<Connection> connections_;
};

struct SocketClientOptions {
  transport::Endpoint server;
  std::string token;
  std::chrono::milliseconds connect_patience{10000};
  // Read timeout while waiting on the server; negative waits forever.
  std::chrono::milliseconds read_timeout{-1};
};

namespace internal {

inline protocol::Session ClientLogin(transport::FrameStream& stream,
                                     const std::string& client_id,
                                     const std::string& token,
                                     const std::string& schema_version) {
  using namespace protocol;
  ClientHandshake hs(client_id, token, schema_version);
  stream.Send(hs.Start());
  auto expect = [&stream]<typename T>(std::type_identity<T>) {
    const Message m = stream.Receive();
    if (const auto* reject = std::get_if<Reject>(&m)) {
      throw AuthenticationError("rejected: " + std::string(ToString(reject->reason)));
    }
    const auto* value = std::get_if<T>(&m);
    if (value == nullptr) throw AuthenticationError("unexpected handshake message");
    return *value;
  };
  const auto challenge = expect(std::type_identity<ServerChallenge>{});
  stream.Send(hs.Respond(challenge));
  return hs.Finish(expect(std::type_identity<SessionGrant>{}));
}

}  // namespace internal

// Client side of the socket transport: log in, answer every RoundConfig,
// re-handshake on expiry. Returns the number of rounds completed once the
// server closes the stream.
inline std::size_t RunSocketClient(const ClientNode& node,
                                   const std::string& schema_version,
                                   const SocketClientOptions& options) {
  using namespace protocol;
  transport::FrameStream stream(
      transport::Connect(options.server, options.connect_patience),
      options.read_timeout);
  Session session =
      fedscore::internal::ClientLogin(stream, node.client_id(), options.token, schema_version);
  std::size_t completed = 0;
  for (;;) {
    Message msg;
    try {
      msg = stream.Receive(session.key);
    } catch (const transport::ConnectionClosed&) {
      return completed;
    }
    if (const auto* cfg = std::get_if<RoundConfig>(&msg)) {
      if (cfg->session_id != session.session_id) {
        throw RoundFault("round config for another session");
      }
      const ClientUpdate update = node.TrainRound(
          {cfg->round, ParameterVector(cfg->global_params), cfg->training,
           cfg->privacy});
      stream.Send(UpdateSubmit{session.session_id, update}, session.key);
      const Message ack = stream.Receive(session.key);
      if (const auto* reject = std::get_if<Reject>(&ack)) {
        throw RoundFault("update rejected: " + std::string(ToString(reject->reason)));
      }
      const auto* a = std::get_if<UpdateAck>(&ack);
      if (a == nullptr || a->round != cfg->round) {
        throw RoundFault("missing acknowledgement for round " +
                         std::to_string(cfg->round));
      }
      ++completed;
    } else if (std::holds_alternative<SessionExpired>(msg)) {
      session = fedscore::internal::ClientLogin(stream, node.client_id(), options.token,
                                      schema_version);
    } else if (const auto* reject = std::get_if<Reject>(&msg)) {
      throw RoundFault("server rejected client: " +
                       std::string(ToString(reject->reason)));
    } else {
      throw RoundFault("unexpected message from server");
    }
  }
}

// ---------------------------------------------------------------------------
// Server round loop

struct RoundRecord {
  std::uint64_t round;
  std::vector<std::string> participating_clients;
  AggregationWeights weights;
  ParameterVector global_params_after;
  double global_objective;
  MetricReport eval_metrics;
  double epsilon_spent;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

// Server state: global model, privacy ledger, held-out test set, history.
// Only the round loop mutates it.
class Coordinator {
 public:
  Coordinator(const ExperimentConfig& cfg, const SharedSetup& setup,
              protocol::AuditLog* audit = nullptr)
      : cfg_(cfg),
        frozen_(setup.frozen),
        test_set_(NormalizeAll(
            GeneratePopulationSamples(cfg.profile(), setup.schema,
                                      cfg.test_set_size, Stream::kTestSet),
            setup.normalization)),
        global_(InitialAdapterParams(cfg.scorer, cfg.master_seed)),
        ledger_(cfg.privacy),
        audit_(audit) {
    cfg_.Validate();
  }

  const ParameterVector& global_params() const { return global_; }
  Scorer global_model() const { return Scorer(cfg_.scorer, frozen_, global_); }
  std::span<const StudentRecord> test_set() const { return test_set_; }
  const std::vector<RoundRecord>& history() const { return history_; }
  const BudgetLedger& ledger() const { return ledger_; }
  std::uint64_t next_round() const { return history_.size() + 1; }

  RoundTask NextTask() const {
    TrainingConfig training = cfg_.training;
    training.rng_seed = cfg_.master_seed;
    return {next_round(), global_, training, cfg_.privacy};
  }

  // One full round: broadcast, barrier, aggregate, evaluate, record.
  const RoundRecord& RunRound(ClientCohort& cohort) {
    const RoundTask task = NextTask();
    Audit(protocol::AuditKind::kRoundBegin, task.round, "");
    const std::vector<ClientUpdate> updates = cohort.Collect(task);
    const std::vector<std::string> expected = cohort.client_ids();
    if (updates.size() != expected.size()) {
      throw RoundFault("round " + std::to_string(task.round) +
                       ": cohort returned a partial update set");
    }

    std::vector<std::string> participants;
    std::vector<std::pair<std::size_t, double>> losses;
    for (std::size_t i = 0; i < updates.size(); ++i) {
      if (updates[i].client_id != expected[i] || updates[i].round != task.round) {
        throw RoundFault("round " + std::to_string(task.round) +
                         ": update from an unexpected client or round");
      }
      participants.push_back(updates[i].client_id);
      losses.emplace_back(updates[i].num_samples, updates[i].val_loss);
    }
    AggregationWeights weights = ComputeWeights(cfg_.aggregation.strategy, updates);
    global_ = GlobalUpdate(global_, updates, weights, cfg_.aggregation.momentum);
    ledger_.RecordRound();

    history_.push_back(RoundRecord{task.round, std::move(participants),
                                   std::move(weights), global_,
                                   EvaluateGlobalObjective(losses),
                                   EvaluateScorer(global_model(), test_set()),
                                   ledger_.total_epsilon()});
    Audit(protocol::AuditKind::kRoundEnd, task.round, "");
    return history_.back();
  }

  // Round-level early stopping on the global objective, when enabled.
  bool Converged() const {
    if (cfg_.global_patience == 0) return false;
    std::vector<double> objectives;
    for (const RoundRecord& r : history_) objectives.push_back(r.global_objective);
    return ShouldStop(objectives, cfg_.global_patience);
  }

  // Rounds until num_rounds or convergence.
  void Run(ClientCohort& cohort) {
    while (history_.size() < cfg_.num_rounds && !Converged()) RunRound(cohort);
  }

 private:
  void Audit(protocol::AuditKind kind, std::uint64_t round, const std::string& detail) {
    if (audit_ != nullptr) audit_->Append(kind, "", round, detail);
  }

  ExperimentConfig cfg_;
  std::shared_ptr<const Matrix> frozen_;
  Dataset test_set_;
  ParameterVector global_;
  BudgetLedger ledger_;
  protocol::AuditLog* audit_;
  std::vector<RoundRecord> history_;
};

struct ExperimentResult {
  std::vector<RoundRecord> history;
  ParameterVector final_params;
  MetricReport final_metrics;
};

namespace internal {

inline ExperimentResult Finish(const Coordinator& coordinator) {
  return {coordinator.history(), coordinator.global_params(),
          EvaluateScorer(coordinator.global_model(), coordinator.test_set())};
}

inline ExperimentResult RunInProcess(const ExperimentConfig& cfg,
                                     const SharedSetup& setup,
                                     protocol::AuditLog* audit) {
  Coordinator coordinator(cfg, setup, audit);
  if (cfg.num_rounds > 0) {
    InProcessCohort cohort(cfg, setup);
    coordinator.Run(cohort);
  }
  return Finish(coordinator);
}

// Server and clients in one process, talking over loopback TCP.
inline ExperimentResult RunOverSockets(const ExperimentConfig& cfg,
                                       const SharedSetup& setup,
                                       protocol::AuditLog* audit) {
  Coordinator coordinator(cfg, setup, audit);
  if (cfg.num_rounds == 0) return Finish(coordinator);

  protocol::AuditLog scratch;
  protocol::AuditLog& log = audit != nullptr ? *audit : scratch;
  protocol::TokenRegistry registry;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < cfg.data.num_clients; ++i) {
    ids.push_back(ClientIdFor(i));
    registry[ids.back()] = crypto::RandomHex(16);
  }
  protocol::Authenticator auth(registry, cfg.schema_version, log,
                               cfg.session_ttl_rounds);
  transport::Listener listener({"127.0.0.1", 0});

  std::vector<std::exception_ptr> client_errors(ids.size());
  std::vector<std::thread> clients;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    clients.emplace_back([&, i] {
      try {
        const ClientNode node(cfg, setup, i);
        RunSocketClient(node, cfg.schema_version,
                        {listener.endpoint(), registry.at(ids[i]),
                         cfg.barrier_timeout(), std::chrono::milliseconds(-1)});
      } catch (...) {
        client_errors[i] = std::current_exception();
      }
    });
  }

  std::exception_ptr server_error;
  {
    SocketCohort cohort(listener, auth, ids, cfg.barrier_timeout());
    try {
      cohort.Admit(1);
      coordinator.Run(cohort);
    } catch (...) {
      server_error = std::current_exception();
    }
  }  // closing the cohort ends every client loop
  for (std::thread& t : clients) t.join();
  if (server_error) std::rethrow_exception(server_error);
  for (const std::exception_ptr& e : client_errors) {
    if (e) std::rethrow_exception(e);
  }
  return Finish(coordinator);
}

}  // namespace internal

inline ExperimentResult RunExperimentDetailed(const ExperimentConfig& cfg,
                                              protocol::AuditLog* audit = nullptr) {
  cfg.Validate();
  const SharedSetup setup = MakeSharedSetup(cfg);
  return cfg.transport == TransportKind::kInProcess
             ? internal::RunInProcess(cfg, setup, audit)
             : internal::RunOverSockets(cfg, setup, audit);
}

// Runs T rounds from the frozen base and returns the round history.
inline std::vector<RoundRecord> RunExperiment(const ExperimentConfig& cfg,
                                              protocol::AuditLog* audit = nullptr) {
  return RunExperimentDetailed(cfg, audit).history;
}

struct CentralizedResult {
  ParameterVector params;
  MetricReport metrics;
  TrainReport report;
};

// Pools every client's records (deliberately crossing the locality
// boundary) and trains one scorer for num_rounds * local_epochs epochs with
// client 0's first-round seed, so a one-client, one-round federation is
// reproduced exactly.
inline CentralizedResult RunCentralizedBaselineDetailed(const ExperimentConfig& cfg) {
  cfg.Validate();
  if (cfg.num_rounds == 0) throw UsageError("centralized baseline needs rounds >= 1");
  const SharedSetup setup = MakeSharedSetup(cfg);
  const Coordinator server(cfg, setup);
  const InProcessCohort cohort(cfg, setup);

  Dataset train;
  Dataset validation;
  for (const ClientNode& node : cohort.nodes()) {
    const auto t = node.dataset().train();
    const auto v = node.dataset().validation();
    train.insert(train.end(), t.begin(), t.end());
    validation.insert(validation.end(), v.begin(), v.end());
  }
  TrainingConfig training = cfg.training;
  training.local_epochs = cfg.num_rounds * cfg.training.local_epochs;
  training.rng_seed = ClientTrainingSeed(cfg.master_seed, 0, 1);
  const Scorer start(cfg.scorer, setup.frozen, server.global_params());
  TrainReport report = LocalTrain(start, std::span<const StudentRecord>(train),
                                  std::span<const StudentRecord>(validation),
                                  training);
  const Scorer trained = start.WithParams(report.final_params);
  return {report.final_params, EvaluateScorer(trained, server.test_set()),
          std::move(report)};
}

inline MetricReport RunCentralizedBaseline(const ExperimentConfig& cfg) {
  return RunCentralizedBaselineDetailed(cfg).metrics;
}

// ---------------------------------------------------------------------------
// Round history export: one JSON object per line.

inline std::string ParamsHash(const ParameterVector& params) {
  std::vector<std::uint8_t> bytes(params.size() * sizeof(double));
  std::memcpy(bytes.data(), params.raw().data(), bytes.size());
  return crypto::ToHex(crypto::Sha256(bytes));
}

inline nlohmann::json MetricsToJson(const MetricReport& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision},
          {"recall", m.recall},     {"f1", m.f1},
          {"rubric_match", m.rubric_match}, {"mae", m.mae}};
}

inline nlohmann::json RoundSummary(const RoundRecord& r) {
  nlohmann::json weights = nlohmann::json::object();
  for (const auto& [id, w] : r.weights.weights) weights[id] = w;
  return {{"round", r.round},
          {"participating_clients", r.participating_clients},
          {"weights", weights},
          {"params_sha256", ParamsHash(r.global_params_after)},
          {"global_objective", r.global_objective},
          {"metrics", MetricsToJson(r.eval_metrics)},
          {"epsilon_spent", r.epsilon_spent}};
}

inline void WriteRoundHistory(std::ostream& os, std::span<const RoundRecord> history) {
  for (const RoundRecord& r : history) os << RoundSummary(r).dump() << '\n';
}

}  // namespace fedscore

#endif  // FEDSCORE_ORCHESTRATOR_HPP_

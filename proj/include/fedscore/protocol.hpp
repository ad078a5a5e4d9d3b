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

// Client-server messaging for federated rounds.
//
// Frame layout (all integers big-endian):
//
//   +----------------+---------+------------------+------------------+
//   | payload length | type    | payload          | integrity tag    |
//   | 4 bytes        | 1 byte  | `length` bytes   | 32 bytes         |
//   +----------------+---------+------------------+------------------+
//
// The payload is canonical JSON (object keys sorted). Session-bound message
// types carry HMAC-SHA256(session_key, type || payload) as their tag; the
// handshake messages that precede a session carry 32 zero bytes.
//
// Confidentiality is not provided here; deployments run the stream inside a
// TLS tunnel.

#ifndef FEDSCORE_PROTOCOL_HPP_
#define FEDSCORE_PROTOCOL_HPP_

#include <algorithm>
#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "fedscore/aggregator.hpp"
#include "fedscore/config_io.hpp"
#include "fedscore/crypto.hpp"
#include "fedscore/errors.hpp"
#include "fedscore/params.hpp"
#include "fedscore/privacy.hpp"
#include "fedscore/trainer.hpp"
#include "json.hpp"

namespace fedscore::protocol {

using Bytes = std::vector<std::uint8_t>;
using SessionKey = crypto::Digest;

inline constexpr std::size_t kHeaderSize = 5;
inline constexpr std::size_t kTagSize = 32;
inline constexpr std::uint32_t kMaxPayload = 64u << 20;

enum class RejectReason {
  kAuthFailed,
  kUnknownClient,
  kReplay,
  kSchemaMismatch,
  kStaleRound,
  kNoSession,
  kSessionMismatch,
  kMalformed,
};

inline std::string_view ToString(RejectReason r) {
  switch (r) {
    case RejectReason::kAuthFailed: return "auth_failed";
    case RejectReason::kUnknownClient: return "unknown_client";
    case RejectReason::kReplay: return "replay";
    case RejectReason::kSchemaMismatch: return "schema_mismatch";
    case RejectReason::kStaleRound: return "stale_round";
    case RejectReason::kNoSession: return "no_session";
    case RejectReason::kSessionMismatch: return "session_mismatch";
    case RejectReason::kMalformed: return "malformed";
  }
  return "unknown";
}

inline std::optional<RejectReason> ParseRejectReason(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(RejectReason::kMalformed); ++i) {
    const auto r = static_cast<RejectReason>(i);
    if (ToString(r) == name) return r;
  }
  return std::nullopt;
}

// First hello has empty `nonce` and `auth_token_proof`; the second echoes
// the server's nonce and proves possession of the client token.
struct ClientHello {
  std::string client_id;
  std::string client_nonce;
  std::string nonce;
  std::string auth_token_proof;
  std::string schema_version;
  friend bool operator==(const ClientHello&, const ClientHello&) = default;
};

// `server_proof` shows the server holds the same token (mutual auth).
struct ServerChallenge {
  std::string nonce;
  std::string server_proof;
  friend bool operator==(const ServerChallenge&, const ServerChallenge&) = default;
};

struct SessionGrant {
  std::string session_id;
  std::uint64_t established_round = 0;
  std::uint64_t expires_at_round = 0;
  friend bool operator==(const SessionGrant&, const SessionGrant&) = default;
};

struct RoundConfig {
  std::string session_id;
  std::uint64_t round = 0;
  std::vector<double> global_params;
  TrainingConfig training;
  PrivacyConfig privacy;
  friend bool operator==(const RoundConfig&, const RoundConfig&) = default;
};

struct UpdateSubmit {
  std::string session_id;
  ClientUpdate update;
  friend bool operator==(const UpdateSubmit&, const UpdateSubmit&) = default;
};

struct UpdateAck {
  std::string session_id;
  std::uint64_t round = 0;
  friend bool operator==(const UpdateAck&, const UpdateAck&) = default;
};

struct SessionExpired {
  std::string session_id;
  friend bool operator==(const SessionExpired&, const SessionExpired&) = default;
};

struct Reject {
  RejectReason reason = RejectReason::kMalformed;
  std::string detail;
  friend bool operator==(const Reject&, const Reject&) = default;
};

using Message = std::variant<ClientHello, ServerChallenge, SessionGrant,
                             RoundConfig, UpdateSubmit, UpdateAck,
                             SessionExpired, Reject>;

// Wire type tags, 1-based in variant order.
inline std::uint8_t TypeTag(const Message& m) {
  return static_cast<std::uint8_t>(m.index() + 1);
}

inline constexpr std::uint8_t kMaxTypeTag = std::variant_size_v<Message>;

inline bool IsSessionBound(std::uint8_t tag) {
  return tag == 4 || tag == 5 || tag == 6 || tag == 7;
}

// Session id carried by a session-bound message, empty otherwise.
inline std::string SessionIdOf(const Message& m) {
  return std::visit(
      [](const auto& v) -> std::string {
        if constexpr (requires { v.session_id; }) {
          if constexpr (std::is_same_v<std::decay_t<decltype(v)>, SessionGrant>) {
            return {};
          } else {
            return v.session_id;
          }
        } else {
          return {};
        }
      },
      m);
}

enum class DecodeErrorCode { kTruncated, kUnknownType, kIntegrity, kMalformed };

inline std::string_view ToString(DecodeErrorCode c) {
  switch (c) {
    case DecodeErrorCode::kTruncated: return "truncated_frame";
    case DecodeErrorCode::kUnknownType: return "unknown_type";
    case DecodeErrorCode::kIntegrity: return "integrity_failure";
    case DecodeErrorCode::kMalformed: return "malformed_payload";
  }
  return "unknown";
}

class DecodeError : public std::runtime_error {
 public:
  DecodeError(DecodeErrorCode code, const std::string& what)
      : std::runtime_error(std::string(ToString(code)) + ": " + what),
        code_(code) {}
  DecodeErrorCode code() const { return code_; }

 private:
  DecodeErrorCode code_;
};

// ---------------------------------------------------------------------------
// Payload <-> JSON

namespace internal {

inline Json ToJson(const ClientUpdate& u) {
  return {{"client_id", u.client_id},
          {"round", u.round},
          {"params", u.params.raw()},
          {"num_samples", u.num_samples},
          {"val_loss", u.val_loss}};
}

inline ClientUpdate UpdateFromJson(const Json& j) {
  return {j.at("client_id").get<std::string>(), j.at("round").get<std::uint64_t>(),
          ParameterVector(j.at("params").get<std::vector<double>>()),
          j.at("num_samples").get<std::size_t>(), j.at("val_loss").get<double>()};
}

inline Json PayloadJson(const Message& m) {
  struct Visitor {
    Json operator()(const ClientHello& v) const {
      return {{"client_id", v.client_id},
              {"client_nonce", v.client_nonce},
              {"nonce", v.nonce},
              {"auth_token_proof", v.auth_token_proof},
              {"schema_version", v.schema_version}};
    }
    Json operator()(const ServerChallenge& v) const {
      return {{"nonce", v.nonce}, {"server_proof", v.server_proof}};
    }
    Json operator()(const SessionGrant& v) const {
      return {{"session_id", v.session_id},
              {"established_round", v.established_round},
              {"expires_at_round", v.expires_at_round}};
    }
    Json operator()(const RoundConfig& v) const {
      return {{"session_id", v.session_id},
              {"round", v.round},
              {"global_params", v.global_params},
              {"training_config", fedscore::ToJson(v.training)},
              {"privacy_config", fedscore::ToJson(v.privacy)}};
    }
    Json operator()(const UpdateSubmit& v) const {
      return {{"session_id", v.session_id}, {"update", ToJson(v.update)}};
    }
    Json operator()(const UpdateAck& v) const {
      return {{"session_id", v.session_id}, {"round", v.round}};
    }
    Json operator()(const SessionExpired& v) const {
      return {{"session_id", v.session_id}};
    }
    Json operator()(const Reject& v) const {
      return {{"reason_code", std::string(ToString(v.reason))},
              {"detail", v.detail}};
    }
  };
  return std::visit(Visitor{}, m);
}

inline Message MessageFromJson(std::uint8_t tag, const Json& j) {
  switch (tag) {
    case 1:
      return ClientHello{j.at("client_id").get<std::string>(),
                         j.at("client_nonce").get<std::string>(),
                         j.at("nonce").get<std::string>(),
                         j.at("auth_token_proof").get<std::string>(),
                         j.at("schema_version").get<std::string>()};
    case 2:
      return ServerChallenge{j.at("nonce").get<std::string>(),
                             j.at("server_proof").get<std::string>()};
    case 3:
      return SessionGrant{j.at("session_id").get<std::string>(),
                          j.at("established_round").get<std::uint64_t>(),
                          j.at("expires_at_round").get<std::uint64_t>()};
    case 4:
      return RoundConfig{j.at("session_id").get<std::string>(),
                         j.at("round").get<std::uint64_t>(),
                         j.at("global_params").get<std::vector<double>>(),
                         TrainingConfigFromJson(j.at("training_config")),
                         PrivacyConfigFromJson(j.at("privacy_config"))};
    case 5:
      return UpdateSubmit{j.at("session_id").get<std::string>(),
                          UpdateFromJson(j.at("update"))};
    case 6:
      return UpdateAck{j.at("session_id").get<std::string>(),
                       j.at("round").get<std::uint64_t>()};
    case 7:
      return SessionExpired{j.at("session_id").get<std::string>()};
    case 8: {
      const auto reason = ParseRejectReason(j.at("reason_code").get<std::string>());
      if (!reason) throw std::invalid_argument("unknown reason code");
      return Reject{*reason, j.at("detail").get<std::string>()};
    }
  }
  throw DecodeError(DecodeErrorCode::kUnknownType, "tag " + std::to_string(tag));
}

inline crypto::Digest FrameTag(const SessionKey& key, std::uint8_t type,
                               std::span<const std::uint8_t> payload) {
  Bytes message;
  message.reserve(payload.size() + 1);
  message.push_back(type);
  message.insert(message.end(), payload.begin(), payload.end());
  return crypto::HmacSha256(key, message);
}

}  // namespace internal

// Serializes one frame. Session-bound messages need the session key.
inline Bytes Encode(const Message& msg,
                    const std::optional<SessionKey>& key = std::nullopt) {
  const std::uint8_t tag = TypeTag(msg);
  const std::string payload = internal::PayloadJson(msg).dump();
  if (payload.size() > kMaxPayload) {
    throw UsageError("Encode: payload exceeds frame limit");
  }
  Bytes out;
  out.reserve(kHeaderSize + payload.size() + kTagSize);
  const auto len = static_cast<std::uint32_t>(payload.size());
  out.push_back(static_cast<std::uint8_t>(len >> 24));
  out.push_back(static_cast<std::uint8_t>(len >> 16));
  out.push_back(static_cast<std::uint8_t>(len >> 8));
  out.push_back(static_cast<std::uint8_t>(len));
  out.push_back(tag);
  out.insert(out.end(), payload.begin(), payload.end());
  crypto::Digest mac{};
  if (IsSessionBound(tag)) {
    if (!key) throw UsageError("Encode: session-bound message needs a key");
    mac = internal::FrameTag(*key, tag, crypto::AsBytes(payload));
  }
  out.insert(out.end(), mac.begin(), mac.end());
  return out;
}

// Total frame size announced by a header, or nullopt if fewer than
// kHeaderSize bytes are available.
inline std::optional<std::size_t> FrameSize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) return std::nullopt;
  const std::uint32_t len = (std::uint32_t{bytes[0]} << 24) |
                            (std::uint32_t{bytes[1]} << 16) |
                            (std::uint32_t{bytes[2]} << 8) | bytes[3];
  if (len > kMaxPayload) {
    throw DecodeError(DecodeErrorCode::kMalformed, "payload length too large");
  }
  return kHeaderSize + len + kTagSize;
}

// Parses exactly one frame. The tag is verified before the payload is
// parsed; for session-bound types a missing key is an integrity failure.
inline Message Decode(std::span<const std::uint8_t> bytes,
                      const std::optional<SessionKey>& key = std::nullopt) {
  const auto total = FrameSize(bytes);
  if (!total || bytes.size() < *total) {
    throw DecodeError(DecodeErrorCode::kTruncated,
                      "have " + std::to_string(bytes.size()) + " bytes");
  }
  if (bytes.size() > *total) {
    throw DecodeError(DecodeErrorCode::kMalformed, "trailing bytes after frame");
  }
  const std::uint8_t tag = bytes[4];
  if (tag == 0 || tag > kMaxTypeTag) {
    throw DecodeError(DecodeErrorCode::kUnknownType,
                      "tag " + std::to_string(tag));
  }
  const auto payload = bytes.subspan(kHeaderSize, *total - kHeaderSize - kTagSize);
  const auto mac = bytes.subspan(*total - kTagSize);
  if (IsSessionBound(tag)) {
    if (!key) throw DecodeError(DecodeErrorCode::kIntegrity, "no session key");
    const crypto::Digest expected = internal::FrameTag(*key, tag, payload);
    if (!crypto::ConstantTimeEqual(expected, mac)) {
      throw DecodeError(DecodeErrorCode::kIntegrity, "tag mismatch");
    }
  } else if (std::any_of(mac.begin(), mac.end(),
                         [](std::uint8_t b) { return b != 0; })) {
    throw DecodeError(DecodeErrorCode::kIntegrity,
                      "pre-session frame with non-zero tag");
  }
  Json j = Json::parse(payload.begin(), payload.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw DecodeError(DecodeErrorCode::kMalformed, "payload is not an object");
  }
  try {
    Message m = internal::MessageFromJson(tag, j);
    // Canonical form only: anything that would not re-encode to the same
    // payload bytes (extra keys, unsorted keys, alternative number spellings)
    // is rejected.
    if (internal::PayloadJson(m).dump() !=
        std::string_view(reinterpret_cast<const char*>(payload.data()),
                         payload.size())) {
      throw DecodeError(DecodeErrorCode::kMalformed, "non-canonical payload");
    }
    return m;
  } catch (const DecodeError&) {
    throw;
  } catch (const std::exception& e) {
    throw DecodeError(DecodeErrorCode::kMalformed, e.what());
  }
}

// ---------------------------------------------------------------------------
// Audit log

enum class AuditKind { kHello, kGrant, kReject, kSubmit, kExpire, kRoundBegin,
                       kRoundEnd };

inline std::string_view ToString(AuditKind k) {
  switch (k) {
    case AuditKind::kHello: return "hello";
    case AuditKind::kGrant: return "grant";
    case AuditKind::kReject: return "reject";
    case AuditKind::kSubmit: return "submit";
    case AuditKind::kExpire: return "expire";
    case AuditKind::kRoundBegin: return "round_begin";
    case AuditKind::kRoundEnd: return "round_end";
  }
  return "unknown";
}

inline std::optional<AuditKind> ParseAuditKind(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(AuditKind::kRoundEnd); ++i) {
    const auto k = static_cast<AuditKind>(i);
    if (ToString(k) == name) return k;
  }
  return std::nullopt;
}

struct AuditEvent {
  std::uint64_t seq = 0;
  std::int64_t timestamp_ms = 0;
  AuditKind kind = AuditKind::kHello;
  std::string client_id;
  std::uint64_t round = 0;
  std::string detail;
};

inline Json ToJson(const AuditEvent& e) {
  return {{"seq", e.seq},
          {"timestamp_ms", e.timestamp_ms},
          {"event", std::string(ToString(e.kind))},
          {"client_id", e.client_id},
          {"round", e.round},
          {"detail", e.detail}};
}

inline AuditEvent AuditEventFromJson(const Json& j) {
  const auto kind = ParseAuditKind(j.at("event").get<std::string>());
  if (!kind) throw ConfigError("audit: unknown event kind");
  return {j.at("seq").get<std::uint64_t>(), j.at("timestamp_ms").get<std::int64_t>(),
          *kind, j.at("client_id").get<std::string>(),
          j.at("round").get<std::uint64_t>(), j.at("detail").get<std::string>()};
}

// Append-only and internally serialized. When a path is given every event
// is also written (and flushed) as one JSON line.
class AuditLog {
 public:
  AuditLog() = default;
  explicit AuditLog(const std::string& path)
      : file_(std::make_unique<std::ofstream>(path, std::ios::app)) {
    if (!*file_) throw std::runtime_error("audit log: cannot open " + path);
  }

  AuditEvent Append(AuditKind kind, std::string client_id, std::uint64_t round,
                    std::string detail = {}) {
    std::lock_guard<std::mutex> lock(mu_);
    AuditEvent e{events_.size(),
                 std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::system_clock::now().time_since_epoch())
                     .count(),
                 kind, std::move(client_id), round, std::move(detail)};
    if (file_) {
      *file_ << ToJson(e).dump() << '\n';
      file_->flush();
      if (!*file_) throw std::runtime_error("audit log: write failed");
    }
    events_.push_back(e);
    return e;
  }

  std::vector<AuditEvent> Snapshot() const {
    std::lock_guard<std::mutex> lock(mu_);
    return events_;
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return events_.size();
  }

  std::size_t Count(AuditKind kind) const {
    std::lock_guard<std::mutex> lock(mu_);
    return static_cast<std::size_t>(
        std::count_if(events_.begin(), events_.end(),
                      [kind](const AuditEvent& e) { return e.kind == kind; }));
  }

 private:
  mutable std::mutex mu_;
  std::vector<AuditEvent> events_;
  std::unique_ptr<std::ofstream> file_;
};

inline std::vector<AuditEvent> ReadAuditLog(std::istream& is) {
  std::vector<AuditEvent> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) out.push_back(AuditEventFromJson(Json::parse(line)));
  }
  return out;
}

// True when every accepted submission follows a grant for the same client.
inline bool SubmitsFollowGrants(std::span<const AuditEvent> events) {
  std::set<std::string> granted;
  for (const AuditEvent& e : events) {
    if (e.kind == AuditKind::kGrant) granted.insert(e.client_id);
    if (e.kind == AuditKind::kSubmit && !granted.contains(e.client_id)) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Sessions and the handshake

inline constexpr std::uint64_t kDefaultSessionTtlRounds = 10;

struct Session {
  std::string session_id;
  std::string client_id;
  std::uint64_t established_round = 0;
  std::uint64_t expires_at_round = 0;
  SessionKey key{};

  bool ExpiredAt(std::uint64_t round) const { return round >= expires_at_round; }
};

namespace internal {

inline std::string HexDigest(const crypto::Digest& d) { return crypto::ToHex(d); }

inline std::string ServerProof(const std::string& token, const std::string& client_id,
                               const std::string& client_nonce,
                               const std::string& nonce) {
  return HexDigest(crypto::HmacSha256(
      token, "server|" + client_id + "|" + client_nonce + "|" + nonce));
}

inline std::string ClientProof(const std::string& token, const ClientHello& h) {
  return HexDigest(crypto::HmacSha256(
      token, "client|" + h.client_id + "|" + h.nonce + "|" + h.client_nonce +
                 "|" + h.schema_version));
}

inline SessionKey DeriveSessionKey(const std::string& token,
                                   const std::string& session_id,
                                   const std::string& nonce,
                                   const std::string& client_nonce) {
  return crypto::HmacSha256(
      token, "session|" + session_id + "|" + nonce + "|" + client_nonce);
}

}  // namespace internal

using TokenRegistry = std::map<std::string, std::string>;

// Parses `client_id token` pairs, one per line; blank lines and lines
// starting with '#' are skipped.
inline TokenRegistry ReadTokenRegistry(std::istream& is) {
  TokenRegistry out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::string id, token, extra;
    if (!(fields >> id >> token) || (fields >> extra)) {
      throw ConfigError("token registry line " + std::to_string(line_no) +
                        ": expected 'client_id token'");
    }
    if (!out.emplace(id, token).second) {
      throw ConfigError("token registry: duplicate client '" + id + "'");
    }
  }
  return out;
}

// Server side of authentication plus the live session table. Thread-safe.
class Authenticator {
 public:
  Authenticator(TokenRegistry registry, std::string schema_version,
                AuditLog& audit, std::uint64_t ttl_rounds = kDefaultSessionTtlRounds)
      : registry_(std::move(registry)),
        schema_version_(std::move(schema_version)),
        audit_(audit),
        ttl_rounds_(ttl_rounds) {
    if (ttl_rounds_ == 0) throw UsageError("Authenticator: ttl must be >= 1");
  }

  // Step 1: answer a first hello with a fresh nonce and the server's proof.
  std::variant<ServerChallenge, Reject> Challenge(const ClientHello& hello,
                                                  std::uint64_t round) {
    std::lock_guard<std::mutex> lock(mu_);
    audit_.Append(AuditKind::kHello, hello.client_id, round, "challenge");
    auto it = registry_.find(hello.client_id);
    if (it == registry_.end()) {
      return RejectLocked(hello.client_id, round, RejectReason::kUnknownClient);
    }
    if (hello.client_nonce.empty()) {
      return RejectLocked(hello.client_id, round, RejectReason::kMalformed);
    }
    ServerChallenge challenge{crypto::RandomHex(16), {}};
    challenge.server_proof = internal::ServerProof(
        it->second, hello.client_id, hello.client_nonce, challenge.nonce);
    pending_[challenge.nonce] = hello.client_id;
    return challenge;
  }

  // Step 2: verify the client's proof over the issued nonce and open a
  // session that lives for ttl rounds.
  std::variant<Session, Reject> Complete(const ClientHello& hello,
                                         std::uint64_t round) {
    std::lock_guard<std::mutex> lock(mu_);
    audit_.Append(AuditKind::kHello, hello.client_id, round, "proof");
    auto it = registry_.find(hello.client_id);
    if (it == registry_.end()) {
      return RejectLocked(hello.client_id, round, RejectReason::kUnknownClient);
    }
    if (consumed_.contains(hello.nonce)) {
      return RejectLocked(hello.client_id, round, RejectReason::kReplay);
    }
    auto pending = pending_.find(hello.nonce);
    if (pending == pending_.end() || pending->second != hello.client_id) {
      return RejectLocked(hello.client_id, round, RejectReason::kAuthFailed);
    }
    const std::string expected = internal::ClientProof(it->second, hello);
    if (!crypto::ConstantTimeEqual(crypto::AsBytes(expected),
                                   crypto::AsBytes(hello.auth_token_proof))) {
      return RejectLocked(hello.client_id, round, RejectReason::kAuthFailed);
    }
    pending_.erase(pending);
    consumed_.insert(hello.nonce);
    if (hello.schema_version != schema_version_) {
      return RejectLocked(hello.client_id, round, RejectReason::kSchemaMismatch);
    }
    Session s;
    s.session_id = crypto::RandomHex(16);
    s.client_id = hello.client_id;
    s.established_round = round;
    s.expires_at_round = round + ttl_rounds_;
    s.key = internal::DeriveSessionKey(it->second, s.session_id, hello.nonce,
                                       hello.client_nonce);
    sessions_[s.session_id] = s;
    audit_.Append(AuditKind::kGrant, s.client_id, round,
                  "session " + s.session_id + " expires at round " +
                      std::to_string(s.expires_at_round));
    return s;
  }

  std::optional<Session> Find(const std::string& session_id) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) return std::nullopt;
    return it->second;
  }

  void Drop(const std::string& session_id) {
    std::lock_guard<std::mutex> lock(mu_);
    sessions_.erase(session_id);
  }

  std::uint64_t ttl_rounds() const { return ttl_rounds_; }
  const std::string& schema_version() const { return schema_version_; }
  AuditLog& audit() { return audit_; }

 private:
  Reject RejectLocked(const std::string& client_id, std::uint64_t round,
                      RejectReason reason) {
    audit_.Append(AuditKind::kReject, client_id, round,
                  std::string(ToString(reason)));
    return Reject{reason, std::string(ToString(reason))};
  }

  mutable std::mutex mu_;
  TokenRegistry registry_;
  std::string schema_version_;
  AuditLog& audit_;
  std::uint64_t ttl_rounds_;
  std::map<std::string, std::string> pending_;  // nonce -> client id
  std::set<std::string> consumed_;
  std::map<std::string, Session> sessions_;
};

class AuthenticationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Client side of the handshake.
class ClientHandshake {
 public:
  ClientHandshake(std::string client_id, std::string token,
                  std::string schema_version)
      : client_id_(std::move(client_id)),
        token_(std::move(token)),
        schema_version_(std::move(schema_version)) {}

  ClientHello Start() {
    client_nonce_ = crypto::RandomHex(16);
    return {client_id_, client_nonce_, {}, {}, schema_version_};
  }

  // Proves the client holds the token. The server's proof is checked here
  // but only enforced in Finish, so a bad token still reaches the server and
  // is rejected (and audited) there.
  ClientHello Respond(const ServerChallenge& challenge) {
    const std::string expected = internal::ServerProof(
        token_, client_id_, client_nonce_, challenge.nonce);
    server_verified_ = crypto::ConstantTimeEqual(
        crypto::AsBytes(expected), crypto::AsBytes(challenge.server_proof));
    nonce_ = challenge.nonce;
    ClientHello hello{client_id_, client_nonce_, nonce_, {}, schema_version_};
    hello.auth_token_proof = internal::ClientProof(token_, hello);
    return hello;
  }

  Session Finish(const SessionGrant& grant) const {
    if (nonce_.empty()) throw AuthenticationError("grant before challenge");
    if (!server_verified_) {
      throw AuthenticationError("server failed to prove token possession");
    }
    return {grant.session_id, client_id_, grant.established_round,
            grant.expires_at_round,
            internal::DeriveSessionKey(token_, grant.session_id, nonce_,
                                       client_nonce_)};
  }

 private:
  std::string client_id_;
  std::string token_;
  std::string schema_version_;
  std::string client_nonce_;
  std::string nonce_;
  bool server_verified_ = false;
};

// Runs both sides of the handshake in memory.
inline std::variant<Session, Reject> Handshake(const std::string& client_id,
                                               const std::string& client_token,
                                               const std::string& schema_version,
                                               Authenticator& server,
                                               std::uint64_t round) {
  ClientHandshake client(client_id, client_token, schema_version);
  auto challenge = server.Challenge(client.Start(), round);
  if (auto* reject = std::get_if<Reject>(&challenge)) return *reject;
  const ClientHello proof = client.Respond(std::get<ServerChallenge>(challenge));
  auto result = server.Complete(proof, round);
  if (auto* session = std::get_if<Session>(&result)) {
    try {
      Session mine = client.Finish({session->session_id,
                                    session->established_round,
                                    session->expires_at_round});
      if (mine.key != session->key) {
        return Reject{RejectReason::kAuthFailed, "session key mismatch"};
      }
    } catch (const AuthenticationError& e) {
      return Reject{RejectReason::kAuthFailed, e.what()};
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Access control

enum class Decision { kAllow, kDeny, kSessionExpired };

struct AuthorizationResult {
  Decision decision = Decision::kDeny;
  std::optional<RejectReason> reason;

  bool allowed() const { return decision == Decision::kAllow; }
};

// Decides whether `msg`, arriving while `open_round` is the round accepting
// submissions and `current_round` is the server clock, may be processed.
inline AuthorizationResult Authorize(const Session* session, const Message& msg,
                                     std::uint64_t current_round,
                                     std::uint64_t open_round) {
  if (std::holds_alternative<ClientHello>(msg)) return {Decision::kAllow, {}};
  if (session == nullptr) return {Decision::kDeny, RejectReason::kNoSession};
  if (session->ExpiredAt(current_round)) return {Decision::kSessionExpired, {}};
  if (SessionIdOf(msg) != session->session_id) {
    return {Decision::kDeny, RejectReason::kSessionMismatch};
  }
  if (const auto* submit = std::get_if<UpdateSubmit>(&msg)) {
    if (submit->update.round != open_round) {
      return {Decision::kDeny, RejectReason::kStaleRound};
    }
    if (submit->update.client_id != session->client_id) {
      return {Decision::kDeny, RejectReason::kSessionMismatch};
    }
  }
  return {Decision::kAllow, {}};
}

}  // namespace fedscore::protocol

#endif  // FEDSCORE_PROTOCOL_HPP_

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

#include "fedscore/protocol.hpp"

#include <sstream>
#include <thread>
#include <vector>

#include "fedscore/transport.hpp"
#include "gtest/gtest.h"
#include "message_gen.hpp"

namespace fedscore::protocol {
namespace {

SessionKey Key(std::uint8_t fill) {
  SessionKey k;
  k.fill(fill);
  return k;
}

std::optional<SessionKey> KeyFor(const Message& m) {
  return IsSessionBound(TypeTag(m)) ? std::optional(Key(7)) : std::nullopt;
}

TEST(CodecTest, FrameLayout) {
  const Bytes frame = Encode(UpdateAck{"s", 3}, Key(1));
  const std::string payload = R"({"round":3,"session_id":"s"})";
  ASSERT_EQ(frame.size(), 5 + payload.size() + 32);
  EXPECT_EQ(frame[0], 0);
  EXPECT_EQ(frame[3], payload.size());
  EXPECT_EQ(frame[4], 6);
  EXPECT_EQ(std::string(frame.begin() + 5, frame.end() - 32), payload);
  const Bytes hello = Encode(ClientHello{"c", "n", "", "", "v1"});
  EXPECT_TRUE(std::all_of(hello.end() - 32, hello.end(),
                          [](std::uint8_t b) { return b == 0; }));
}

TEST(CodecTest, RoundTripsRandomMessages) {
  testing::MessageGenerator gen(1);
  for (int i = 0; i < 2000; ++i) {
    const Message m = gen.Any();
    const auto key = KeyFor(m);
    EXPECT_EQ(Decode(Encode(m, key), key), m);
  }
}

TEST(CodecTest, EveryVariantRoundTrips) {
  testing::MessageGenerator gen(2);
  for (std::size_t v = 0; v < kMaxTypeTag; ++v) {
    const Message m = gen.Of(v);
    EXPECT_EQ(m.index(), v);
    EXPECT_EQ(Decode(Encode(m, KeyFor(m)), KeyFor(m)), m);
  }
}

DecodeErrorCode CodeOf(std::span<const std::uint8_t> bytes,
                       const std::optional<SessionKey>& key) {
  try {
    Decode(bytes, key);
  } catch (const DecodeError& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode unexpectedly succeeded";
  return DecodeErrorCode::kMalformed;
}

TEST(CodecTest, ErrorCodes) {
  EXPECT_EQ(CodeOf({}, std::nullopt), DecodeErrorCode::kTruncated);
  const Bytes frame = Encode(UpdateAck{"s", 3}, Key(1));
  EXPECT_EQ(CodeOf(std::span(frame).first(frame.size() - 1), Key(1)),
            DecodeErrorCode::kTruncated);
  Bytes unknown = frame;
  unknown[4] = 42;
  EXPECT_EQ(CodeOf(unknown, Key(1)), DecodeErrorCode::kUnknownType);
  unknown[4] = 0;
  EXPECT_EQ(CodeOf(unknown, Key(1)), DecodeErrorCode::kUnknownType);
  EXPECT_EQ(CodeOf(frame, Key(2)), DecodeErrorCode::kIntegrity);
  EXPECT_EQ(CodeOf(frame, std::nullopt), DecodeErrorCode::kIntegrity);
  Bytes longer = frame;
  longer.push_back(0);
  EXPECT_EQ(CodeOf(longer, Key(1)), DecodeErrorCode::kMalformed);
  // A zero-tagged frame whose payload is not a message.
  Bytes junk{0, 0, 0, 2, 1, '{', '}'};
  junk.resize(junk.size() + 32, 0);
  EXPECT_EQ(CodeOf(junk, std::nullopt), DecodeErrorCode::kMalformed);
  Bytes bad_tag = Encode(ServerChallenge{"n", "p"});
  bad_tag.back() = 1;
  EXPECT_EQ(CodeOf(bad_tag, std::nullopt), DecodeErrorCode::kIntegrity);
}

TEST(CodecTest, SingleBitFlipsInSessionFramesAreRejected) {
  testing::MessageGenerator gen(3);
  for (int i = 0; i < 30; ++i) {
    const Message m = gen.SessionBound();
    const Bytes frame = Encode(m, Key(9));
    for (std::size_t byte = kHeaderSize; byte < frame.size(); ++byte) {
      for (int bit = 0; bit < 8; ++bit) {
        Bytes tampered = frame;
        tampered[byte] ^= static_cast<std::uint8_t>(1u << bit);
        EXPECT_EQ(CodeOf(tampered, Key(9)), DecodeErrorCode::kIntegrity);
      }
    }
  }
}

TEST(CodecTest, RejectsNonCanonicalPayload) {
  const std::string payload = R"({"session_id":"s","round":3})";  // unsorted
  Bytes frame{0, 0, 0, static_cast<std::uint8_t>(payload.size()), 6};
  frame.insert(frame.end(), payload.begin(), payload.end());
  const auto mac = internal::FrameTag(
      Key(1), 6, std::span(frame).subspan(kHeaderSize, payload.size()));
  frame.insert(frame.end(), mac.begin(), mac.end());
  EXPECT_EQ(CodeOf(frame, Key(1)), DecodeErrorCode::kMalformed);
}

TEST(CodecTest, EncodeNeedsKeyForSessionMessages) {
  EXPECT_THROW(Encode(UpdateAck{"s", 1}), UsageError);
}

class HandshakeTest : public ::testing::Test {
 protected:
  AuditLog audit;
  Authenticator server{{{"alice", "tok-a"}, {"bob", "tok-b"}}, "v1", audit, 3};
};

TEST_F(HandshakeTest, GrantsSessionWithTtl) {
  auto result = Handshake("alice", "tok-a", "v1", server, 4);
  ASSERT_TRUE(std::holds_alternative<Session>(result));
  const Session& s = std::get<Session>(result);
  EXPECT_EQ(s.client_id, "alice");
  EXPECT_EQ(s.established_round, 4u);
  EXPECT_EQ(s.expires_at_round, 7u);
  EXPECT_EQ(s.session_id.size(), 32u);
  ASSERT_TRUE(server.Find(s.session_id).has_value());
  EXPECT_EQ(server.Find(s.session_id)->key, s.key);
  EXPECT_EQ(audit.Count(AuditKind::kGrant), 1u);
  EXPECT_EQ(audit.Count(AuditKind::kReject), 0u);
}

TEST_F(HandshakeTest, WrongTokenIsRejectedOnce) {
  auto result = Handshake("alice", "tok-b", "v1", server, 0);
  ASSERT_TRUE(std::holds_alternative<Reject>(result));
  EXPECT_EQ(std::get<Reject>(result).reason, RejectReason::kAuthFailed);
  EXPECT_EQ(audit.Count(AuditKind::kReject), 1u);
  EXPECT_EQ(audit.Count(AuditKind::kGrant), 0u);
}

TEST_F(HandshakeTest, BadClientProofProducesExactlyOneRejectEvent) {
  ClientHandshake impostor("alice", "wrong", "v1");
  auto challenge = server.Challenge(impostor.Start(), 0);
  ServerChallenge c = std::get<ServerChallenge>(challenge);
  ClientHello forged{"alice", "cn", c.nonce, "00ff", "v1"};
  auto result = server.Complete(forged, 0);
  ASSERT_TRUE(std::holds_alternative<Reject>(result));
  EXPECT_EQ(std::get<Reject>(result).reason, RejectReason::kAuthFailed);
  EXPECT_EQ(audit.Count(AuditKind::kReject), 1u);
  EXPECT_EQ(audit.Count(AuditKind::kGrant), 0u);
}

TEST_F(HandshakeTest, UnknownClient) {
  auto result = Handshake("mallory", "x", "v1", server, 0);
  ASSERT_TRUE(std::holds_alternative<Reject>(result));
  EXPECT_EQ(std::get<Reject>(result).reason, RejectReason::kUnknownClient);
  EXPECT_EQ(audit.Count(AuditKind::kReject), 1u);
}

TEST_F(HandshakeTest, ReplayedNonceIsRejected) {
  ClientHandshake client("bob", "tok-b", "v1");
  auto challenge = std::get<ServerChallenge>(server.Challenge(client.Start(), 0));
  const ClientHello proof = client.Respond(challenge);
  ASSERT_TRUE(std::holds_alternative<Session>(server.Complete(proof, 0)));
  auto replay = server.Complete(proof, 1);
  ASSERT_TRUE(std::holds_alternative<Reject>(replay));
  EXPECT_EQ(std::get<Reject>(replay).reason, RejectReason::kReplay);
}

TEST_F(HandshakeTest, ImpersonatedServerIsDetected) {
  ClientHandshake client("bob", "tok-b", "v1");
  client.Start();
  client.Respond(ServerChallenge{"nonce", "deadbeef"});
  EXPECT_THROW(client.Finish(SessionGrant{"sid", 0, 10}), AuthenticationError);
}

TEST_F(HandshakeTest, SchemaMismatch) {
  auto result = Handshake("bob", "tok-b", "v2", server, 0);
  ASSERT_TRUE(std::holds_alternative<Reject>(result));
  EXPECT_EQ(std::get<Reject>(result).reason, RejectReason::kSchemaMismatch);
}

TEST_F(HandshakeTest, AuthorizeRules) {
  const Session s = std::get<Session>(Handshake("alice", "tok-a", "v1", server, 2));
  auto submit = [&](std::uint64_t round) {
    return UpdateSubmit{s.session_id,
                        ClientUpdate{"alice", round, ParameterVector({1.0}), 4, 0.3}};
  };
  EXPECT_TRUE(Authorize(&s, submit(2), 2, 2).allowed());
  auto stale = Authorize(&s, submit(1), 2, 2);
  EXPECT_EQ(stale.decision, Decision::kDeny);
  EXPECT_EQ(stale.reason, RejectReason::kStaleRound);
  EXPECT_EQ(Authorize(nullptr, submit(2), 2, 2).reason, RejectReason::kNoSession);
  EXPECT_TRUE(Authorize(nullptr, ClientHello{}, 2, 2).allowed());
  // ttl 3 from round 2: live through round 4, expired at 5.
  EXPECT_TRUE(Authorize(&s, submit(4), 4, 4).allowed());
  EXPECT_EQ(Authorize(&s, submit(5), 5, 5).decision, Decision::kSessionExpired);
  EXPECT_EQ(Authorize(&s, UpdateAck{s.session_id, 5}, 5, 5).decision,
            Decision::kSessionExpired);
  auto other = UpdateSubmit{"someone-else", submit(2).update};
  EXPECT_EQ(Authorize(&s, other, 2, 2).reason, RejectReason::kSessionMismatch);
  auto spoof = submit(2);
  spoof.update.client_id = "bob";
  EXPECT_EQ(Authorize(&s, spoof, 2, 2).reason, RejectReason::kSessionMismatch);
}

TEST(AuditLogTest, AppendOnlyOrderedAndConcurrent) {
  AuditLog log;
  for (int i = 0; i < 5; ++i) log.Append(AuditKind::kSubmit, "c", i);
  const auto before = log.Snapshot();
  ASSERT_EQ(before.size(), 5u);
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&log, t] {
      for (int i = 0; i < 250; ++i) {
        log.Append(AuditKind::kHello, "t" + std::to_string(t), i);
      }
    });
  }
  for (auto& t : threads) t.join();
  const auto after = log.Snapshot();
  ASSERT_EQ(after.size(), 2005u);
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(after[i].seq, i);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(after[i].round, before[i].round);
  // Each thread's events appear in its own order.
  std::map<std::string, std::uint64_t> next;
  for (std::size_t i = 5; i < after.size(); ++i) {
    EXPECT_EQ(after[i].round, next[after[i].client_id]++);
  }
}

TEST(AuditLogTest, FileSinkAndGrantCheck) {
  const std::string path = ::testing::TempDir() + "/audit_test.log";
  std::remove(path.c_str());
  {
    AuditLog log(path);
    log.Append(AuditKind::kGrant, "a", 0, "g");
    log.Append(AuditKind::kSubmit, "a", 0);
  }
  std::ifstream in(path);
  const auto events = ReadAuditLog(in);
  ASSERT_EQ(events.size(), 2u);
  EXPECT_EQ(events[1].kind, AuditKind::kSubmit);
  EXPECT_TRUE(SubmitsFollowGrants(events));
  std::vector<AuditEvent> bad{{0, 0, AuditKind::kSubmit, "b", 0, ""}};
  EXPECT_FALSE(SubmitsFollowGrants(bad));
}

TEST(TokenRegistryTest, Parse) {
  std::istringstream ok("# comment\nalice tok-a\n\nbob   tok-b\n");
  const auto reg = ReadTokenRegistry(ok);
  EXPECT_EQ(reg.size(), 2u);
  EXPECT_EQ(reg.at("bob"), "tok-b");
  std::istringstream bad("alice\n");
  EXPECT_THROW(ReadTokenRegistry(bad), ConfigError);
  std::istringstream dup("a x\na y\n");
  EXPECT_THROW(ReadTokenRegistry(dup), ConfigError);
}

TEST(TransportTest, FramesCrossALocalSocket) {
  transport::Listener listener({"127.0.0.1", 0});
  const auto ep = listener.endpoint();
  ASSERT_NE(ep.port, 0);
  testing::MessageGenerator gen(4);
  std::vector<Message> sent;
  for (int i = 0; i < 50; ++i) sent.push_back(gen.Any());
  std::thread client([&] {
    transport::FrameStream stream(transport::Connect(ep, std::chrono::seconds(5)));
    for (const auto& m : sent) stream.Send(m, KeyFor(m));
  });
  transport::FrameStream server(listener.Accept(std::chrono::seconds(5)),
                                std::chrono::seconds(5));
  for (const auto& m : sent) EXPECT_EQ(server.Receive(KeyFor(m)), m);
  client.join();
  EXPECT_THROW(server.Receive(), transport::ConnectionClosed);
}

TEST(TransportTest, PortInUse) {
  transport::Listener first({"127.0.0.1", 0});
  EXPECT_THROW(transport::Listener({"127.0.0.1", first.endpoint().port}),
               transport::TransportError);
}

}  // namespace
}  // namespace fedscore::protocol

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

// Randomized protocol messages for round-trip and tamper tests.

#ifndef FEDSCORE_TESTS_MESSAGE_GEN_HPP_
#define FEDSCORE_TESTS_MESSAGE_GEN_HPP_

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "fedscore/protocol.hpp"

namespace fedscore::testing {

class MessageGenerator {
 public:
  explicit MessageGenerator(std::uint64_t seed) : rng_(seed) {}

  protocol::Message Any() { return Of(rng_() % protocol::kMaxTypeTag); }

  protocol::Message SessionBound() {
    static constexpr std::size_t kIndexes[] = {3, 4, 5, 6};
    return Of(kIndexes[rng_() % 4]);
  }

  protocol::Message Of(std::size_t index) {
    using namespace protocol;
    switch (index) {
      case 0: return ClientHello{Str(), Str(), Str(), Str(), Str()};
      case 1: return ServerChallenge{Str(), Str()};
      case 2: return SessionGrant{Str(), U64(), U64()};
      case 3: {
        TrainingConfig t{Real(), 1 + rng_() % 64, 1 + rng_() % 9,
                         1 + rng_() % 4, rng_()};
        PrivacyConfig p{Real(), Real(), Real(), (rng_() & 1) != 0};
        return RoundConfig{Str(), U64(), Reals(), t, p};
      }
      case 4:
        return UpdateSubmit{Str(), ClientUpdate{Str(), U64(),
                                                ParameterVector(Reals(1)),
                                                1 + rng_() % 5000, Real()}};
      case 5: return UpdateAck{Str(), U64()};
      case 6: return SessionExpired{Str()};
      default: {
        const auto reason = static_cast<RejectReason>(
            rng_() % (static_cast<int>(RejectReason::kMalformed) + 1));
        return Reject{reason, Str()};
      }
    }
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::string Str() {
    static constexpr char kChars[] =
        "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_|\"\\/ {}";
    std::string s(rng_() % 24, ' ');
    for (char& c : s) c = kChars[rng_() % (sizeof(kChars) - 1)];
    if (rng_() % 8 == 0) s += "\xc3\xa9\xe2\x82\xac";  // some UTF-8
    return s;
  }

  std::uint64_t U64() {
    return rng_() % 3 == 0 ? rng_() : rng_() % 1000;
  }

  // Mixes magnitudes, signs, subnormals and exact integers.
  double Real() {
    switch (rng_() % 6) {
      case 0: return std::ldexp(std::uniform_real_distribution<double>(-1, 1)(rng_),
                                static_cast<int>(rng_() % 600) - 300);
      case 1: return static_cast<double>(static_cast<int>(rng_() % 2001) - 1000);
      case 2: return 5e-324 * static_cast<double>(rng_() % 100);
      case 3: return -0.0;
      default: return std::normal_distribution<double>(0.0, 1.0)(rng_);
    }
  }

  std::vector<double> Reals(std::size_t min_len = 0) {
    std::vector<double> v(min_len + rng_() % 40);
    for (double& x : v) x = Real();
    return v;
  }

  std::mt19937_64 rng_;
};

}  // namespace fedscore::testing

#endif  // FEDSCORE_TESTS_MESSAGE_GEN_HPP_

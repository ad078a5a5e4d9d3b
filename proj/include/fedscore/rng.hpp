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

#ifndef FEDSCORE_RNG_HPP_
#define FEDSCORE_RNG_HPP_

#include <cstdint>
#include <random>

namespace fedscore {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t MixBits(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Purposes for derived streams. Every random quantity in a run is drawn from
// a stream keyed by (master seed, purpose, index) so clients can regenerate
// their own data without seeing anyone else's.
enum class Stream : std::uint64_t {
  kTeacher = 1,
  kClientData = 2,
  kTestSet = 3,
  kCalibration = 4,
  kFrozenBase = 5,
  kAdapterInit = 6,
  kTraining = 7,
  kPrivacyNoise = 8,
  kMixture = 9,
  kSplit = 10,
};

constexpr std::uint64_t DeriveSeed(std::uint64_t master, Stream purpose,
                                   std::uint64_t index = 0,
                                   std::uint64_t sub = 0) {
  std::uint64_t h = MixBits(master);
  h = MixBits(h ^ static_cast<std::uint64_t>(purpose));
  h = MixBits(h ^ index);
  return MixBits(h ^ sub);
}

inline Rng MakeRng(std::uint64_t master, Stream purpose,
                   std::uint64_t index = 0, std::uint64_t sub = 0) {
  return Rng(DeriveSeed(master, purpose, index, sub));
}

}  // namespace fedscore

#endif  // FEDSCORE_RNG_HPP_

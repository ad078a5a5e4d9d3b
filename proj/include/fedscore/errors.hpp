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

#ifndef FEDSCORE_ERRORS_HPP_
#define FEDSCORE_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace fedscore {

// Operand shapes do not conform (vector lengths, matrix dimensions, arity).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A precondition on caller-supplied values was violated (empty batch,
// out-of-range epsilon, unknown strategy name, ...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Configuration could not be parsed or validated.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A federated round could not complete (missing updates, transport failure).
class RoundFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fedscore

#endif  // FEDSCORE_ERRORS_HPP_

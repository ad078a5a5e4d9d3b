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

#ifndef FEDSCORE_PARAMS_HPP_
#define FEDSCORE_PARAMS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedscore/errors.hpp"

namespace fedscore {

namespace internal {

inline void RequireFinite(std::span<const double> values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw UsageError(std::string(where) + ": non-finite parameter value");
    }
  }
}

inline void RequireSameLength(std::size_t a, std::size_t b, const char* where) {
  if (a != b) {
    throw DimensionError(std::string(where) + ": length mismatch (" +
                         std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

}  // namespace internal

// Flat vector of trainable parameters. The length is fixed at construction
// and every entry is finite; arithmetic produces new vectors.
class ParameterVector {
 public:
  explicit ParameterVector(std::vector<double> values)
      : values_(std::move(values)) {
    if (values_.empty()) {
      throw DimensionError("ParameterVector: length must be positive");
    }
    internal::RequireFinite(values_, "ParameterVector");
  }

  static ParameterVector Zeros(std::size_t length) {
    return ParameterVector(std::vector<double>(length, 0.0));
  }

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }
  const std::vector<double>& raw() const { return values_; }

  friend bool operator==(const ParameterVector&,
                         const ParameterVector&) = default;

 private:
  std::vector<double> values_;
};

// alpha * x + y.
inline ParameterVector Axpy(double alpha, const ParameterVector& x,
                            const ParameterVector& y) {
  internal::RequireSameLength(x.size(), y.size(), "Axpy");
  std::vector<double> out(y.raw());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += alpha * x[i];
  return ParameterVector(std::move(out));
}

inline ParameterVector Scale(double alpha, const ParameterVector& x) {
  std::vector<double> out(x.raw());
  for (double& v : out) v *= alpha;
  return ParameterVector(std::move(out));
}

// x - y.
inline ParameterVector Subtract(const ParameterVector& x,
                                const ParameterVector& y) {
  return Axpy(-1.0, y, x);
}

inline ParameterVector Add(const ParameterVector& x, const ParameterVector& y) {
  return Axpy(1.0, x, y);
}

inline double Dot(const ParameterVector& x, const ParameterVector& y) {
  internal::RequireSameLength(x.size(), y.size(), "Dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

// Euclidean norm, computed with scaling so large entries do not overflow.
inline double L2Norm(const ParameterVector& x) {
  double scale = 0.0;
  for (double v : x.values()) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return 0.0;
  double acc = 0.0;
  for (double v : x.values()) {
    const double r = v / scale;
    acc += r * r;
  }
  return scale * std::sqrt(acc);
}

// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) {
      throw DimensionError("Matrix: expected " + std::to_string(r * c) +
                           " values, got " + std::to_string(data.size()));
    }
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct AdapterDims {
  std::size_t rank = 0;
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;

  std::size_t ParameterCount() const { return rank * (input_dim + output_dim); }

  friend bool operator==(const AdapterDims&, const AdapterDims&) = default;
};

// Trainable low-rank factors: the adapted map is scale * B * A, with
// A of shape rank x input_dim and B of shape output_dim x rank.
struct LowRankAdapter {
  Matrix a;
  Matrix b;
  double scale = 1.0;

  LowRankAdapter() = default;
  LowRankAdapter(Matrix a_matrix, Matrix b_matrix, double s)
      : a(std::move(a_matrix)), b(std::move(b_matrix)), scale(s) {
    if (a.rows == 0 || a.cols == 0 || b.rows == 0) {
      throw DimensionError("LowRankAdapter: dimensions must be positive");
    }
    if (b.cols != a.rows) {
      throw DimensionError("LowRankAdapter: B columns must equal A rows");
    }
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw UsageError("LowRankAdapter: scale must be positive and finite");
    }
  }

  std::size_t rank() const { return a.rows; }
  AdapterDims dims() const { return {a.rows, a.cols, b.rows}; }

  friend bool operator==(const LowRankAdapter&,
                         const LowRankAdapter&) = default;
};

// Layout: A row-major, then B row-major.
inline ParameterVector FlattenAdapter(const LowRankAdapter& adapter) {
  std::vector<double> out;
  out.reserve(adapter.a.data.size() + adapter.b.data.size());
  out.insert(out.end(), adapter.a.data.begin(), adapter.a.data.end());
  out.insert(out.end(), adapter.b.data.begin(), adapter.b.data.end());
  return ParameterVector(std::move(out));
}

inline LowRankAdapter UnflattenAdapter(const ParameterVector& v,
                                       const AdapterDims& dims, double scale) {
  if (dims.rank == 0 || dims.input_dim == 0 || dims.output_dim == 0) {
    throw DimensionError("UnflattenAdapter: dimensions must be positive");
  }
  internal::RequireSameLength(v.size(), dims.ParameterCount(),
                              "UnflattenAdapter");
  const auto split =
      v.raw().begin() + static_cast<std::ptrdiff_t>(dims.rank * dims.input_dim);
  Matrix a(dims.rank, dims.input_dim, std::vector<double>(v.raw().begin(), split));
  Matrix b(dims.output_dim, dims.rank, std::vector<double>(split, v.raw().end()));
  return LowRankAdapter(std::move(a), std::move(b), scale);
}

}  // namespace fedscore

#endif  // FEDSCORE_PARAMS_HPP_

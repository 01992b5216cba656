// Copyright 2026 The tsfed Authors
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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "tsfed/error.hpp"

namespace tsfed {

// Dense row-major tensor of 64-bit floats. Every dimension is >= 1 and a
// scalar is represented with shape (1). Only rank <= 2 is needed by the
// library, but the container itself does not restrict rank.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() : shape_{1}, data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(CheckedSize(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (CheckedSize(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + ShapeToString(shape_));
    }
  }

  static Tensor Scalar(double v) { return Tensor(Shape{1}, {v}); }

  static Tensor Vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }

  static Tensor Matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  // Row/column counts under the rank-2 interpretation; rank-1 tensors are
  // treated as a single row.
  std::size_t rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.back(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  double item() const {
    if (data_.size() != 1) {
      throw ShapeError("item() on non-scalar tensor of shape " +
                       ShapeToString(shape_));
    }
    return data_[0];
  }

  Tensor Reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  bool AllFinite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t CheckedSize(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) {
        throw ShapeError("tensor dimensions must be >= 1, got " +
                         ShapeToString(shape));
      }
      n *= d;
    }
    return n;
  }

  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

inline void RequireSameShape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     ShapeToString(a.shape()) + " vs " +
                     ShapeToString(b.shape()));
  }
}

inline void RequireRank2(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " +
                     ShapeToString(a.shape()));
  }
}

template <typename F>
Tensor Zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  RequireSameShape(a, b, op);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <typename F>
Tensor Map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace detail

// Elementwise and linear-algebra kernels on plain tensors. The autodiff
// engine reuses them both for forward values and for numeric backward passes.

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::Zip(a, b, "add", std::plus<>{});
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::Zip(a, b, "sub", std::minus<>{});
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::Zip(a, b, "mul", std::multiplies<>{});
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::Map(a, [c](double v) { return v * c; });
}

inline Tensor square(const Tensor& a) {
  return detail::Map(a, [](double v) { return v * v; });
}

inline Tensor relu(const Tensor& a) {
  return detail::Map(a, [](double v) { return v > 0.0 ? v : 0.0; });
}

// Heaviside step with step(0) = 0; the derivative mask of relu.
inline Tensor step(const Tensor& a) {
  return detail::Map(a, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::RequireRank2(a, "matmul");
  detail::RequireRank2(b, "matmul");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " +
                     ShapeToString(a.shape()) + " x " +
                     ShapeToString(b.shape()));
  }
  Tensor out({n, m});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += av * brow[j];
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::RequireRank2(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

// (B,n) + (1,n): adds the row vector to every row.
inline Tensor add_row(const Tensor& a, const Tensor& row) {
  detail::RequireRank2(a, "add_row");
  if (row.size() != a.cols() || row.rows() != 1) {
    throw ShapeError("add_row: row shape " + ShapeToString(row.shape()) +
                     " incompatible with " + ShapeToString(a.shape()));
  }
  Tensor out = a;
  const std::size_t c = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += row[j];
  return out;
}

// (B,n) -> (1,n) column sums.
inline Tensor sum_rows(const Tensor& a) {
  detail::RequireRank2(a, "sum_rows");
  const std::size_t c = a.cols();
  Tensor out({1, c});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += a[i * c + j];
  return out;
}

// (1,n) -> (B,n) by repeating the row.
inline Tensor broadcast_rows(const Tensor& row, std::size_t batch) {
  const std::size_t c = row.size();
  Tensor out({batch, c});
  for (std::size_t i = 0; i < batch; ++i)
    std::copy(row.data().begin(), row.data().end(), out.data().begin() + i * c);
  return out;
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::Scalar(s);
}

// Scalar (1) -> tensor of `shape` filled with that value.
inline Tensor broadcast_scalar(const Tensor& s, const Tensor::Shape& shape) {
  return Tensor(shape, s.item());
}

// Contiguous window [offset, offset + prod(shape)) of a flat tensor.
inline Tensor slice(const Tensor& flat, std::size_t offset,
                    const Tensor::Shape& shape) {
  Tensor out(shape);
  if (offset + out.size() > flat.size()) {
    throw ShapeError("slice: window [" + std::to_string(offset) + ", " +
                     std::to_string(offset + out.size()) +
                     ") exceeds tensor of shape " +
                     ShapeToString(flat.shape()));
  }
  std::copy_n(flat.data().begin() + static_cast<std::ptrdiff_t>(offset),
              out.size(), out.data().begin());
  return out;
}

// Inverse of slice: a flat zero tensor of length `total` with `part` written
// at `offset`.
inline Tensor embed(const Tensor& part, std::size_t offset, std::size_t total) {
  Tensor out({total});
  if (offset + part.size() > total) {
    throw ShapeError("embed: part of size " + std::to_string(part.size()) +
                     " at offset " + std::to_string(offset) +
                     " exceeds length " + std::to_string(total));
  }
  std::copy(part.data().begin(), part.data().end(),
            out.data().begin() + static_cast<std::ptrdiff_t>(offset));
  return out;
}

inline Tensor reshape(const Tensor& a, const Tensor::Shape& shape) {
  return a.Reshaped(shape);
}

}  // namespace tsfed

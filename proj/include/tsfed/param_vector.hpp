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

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "tsfed/error.hpp"
#include "tsfed/tensor.hpp"

namespace tsfed {

// A named, shaped window into a flat parameter vector.
struct ParamView {
  std::string name;
  Tensor::Shape shape;
  std::size_t offset = 0;

  std::size_t size() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }

  friend bool operator==(const ParamView&, const ParamView&) = default;
};

using ParamLayout = std::vector<ParamView>;

inline std::size_t LayoutSize(const ParamLayout& layout) {
  std::size_t n = 0;
  for (const auto& v : layout) n += v.size();
  return n;
}

// Model parameters as one flat rank-1 tensor plus the layout describing the
// shaped views. Views are disjoint and tile the flat vector in order, so
// distances, averages and trajectories can all work on `flat()` directly.
class ParamVector {
 public:
  ParamVector() = default;

  ParamVector(ParamLayout layout, Tensor flat)
      : layout_(std::move(layout)), flat_(std::move(flat)) {
    Validate();
  }

  static ParamVector Zeros(ParamLayout layout) {
    const std::size_t n = LayoutSize(layout);
    return ParamVector(std::move(layout), Tensor({n == 0 ? 1 : n}, 0.0));
  }

  const ParamLayout& layout() const { return layout_; }
  const Tensor& flat() const { return flat_; }
  Tensor& flat() { return flat_; }
  std::size_t size() const { return flat_.size(); }

  double operator[](std::size_t i) const { return flat_[i]; }
  double& operator[](std::size_t i) { return flat_[i]; }

  const ParamView& view(const std::string& name) const {
    for (const auto& v : layout_) {
      if (v.name == name) return v;
    }
    throw Error("no parameter view named '" + name + "'");
  }

  Tensor Get(const std::string& name) const {
    const auto& v = view(name);
    return slice(flat_, v.offset, v.shape);
  }

  void Set(const std::string& name, const Tensor& value) {
    const auto& v = view(name);
    if (value.size() != v.size()) {
      throw ShapeError("parameter '" + name + "' expects " +
                       ShapeToString(v.shape) + ", got " +
                       ShapeToString(value.shape()));
    }
    std::copy(value.data().begin(), value.data().end(),
              flat_.data().begin() + static_cast<std::ptrdiff_t>(v.offset));
  }

  bool SameLayout(const ParamVector& other) const {
    return layout_ == other.layout_;
  }

  // A vector with this layout holding `flat`.
  ParamVector WithFlat(Tensor flat) const {
    return ParamVector(layout_, std::move(flat));
  }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  void Validate() const {
    if (flat_.rank() != 1) {
      throw ShapeError("parameter vector must be rank 1, got " +
                       ShapeToString(flat_.shape()));
    }
    std::size_t expect = 0;
    for (const auto& v : layout_) {
      if (v.offset != expect) {
        throw ShapeError("parameter view '" + v.name +
                         "' is not contiguous with its predecessor");
      }
      expect += v.size();
    }
    if (expect != flat_.size()) {
      throw ShapeError("parameter layout covers " + std::to_string(expect) +
                       " values but the flat vector holds " +
                       std::to_string(flat_.size()));
    }
  }

  ParamLayout layout_;
  Tensor flat_;
};

inline void RequireSameLayout(const ParamVector& a, const ParamVector& b,
                              const char* op) {
  if (!a.SameLayout(b)) {
    throw ShapeError(std::string(op) + ": parameter layouts differ (" +
                     std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + " values)");
  }
}

}  // namespace tsfed

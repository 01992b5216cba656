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
#include <cstdint>
#include <string>

#include "tsfed/data.hpp"
#include "tsfed/error.hpp"
#include "tsfed/tensor.hpp"

namespace tsfed {

enum class Provenance { kClientTrajectory, kGlobalTrajectory };

inline const char* ProvenanceTag(Provenance p) {
  return p == Provenance::kClientTrajectory ? "ct" : "gt";
}

inline Provenance ParseProvenance(const std::string& s) {
  if (s == "ct") return Provenance::kClientTrajectory;
  if (s == "gt") return Provenance::kGlobalTrajectory;
  throw ParseError("unknown provenance tag '" + s + "'", 0, 0);
}

// First/second moment buffers of the adaptive-moment optimizer that learns
// the synthetic tensors.
struct AdamState {
  Tensor m;
  Tensor v;
  std::size_t steps = 0;
};

// Learnable (X, Y) pairs produced by trajectory matching. x is (n, L_x), y is
// (n, L_y).
struct SyntheticDataset {
  Provenance provenance = Provenance::kClientTrajectory;
  std::size_t build_round = 0;
  Tensor x;
  Tensor y;
  AdamState x_opt;
  AdamState y_opt;

  // Zero until the tensors are built as matrices.
  std::size_t size() const { return x.rank() >= 2 ? x.rows() : 0; }
  std::size_t input_len() const { return x.cols(); }
  std::size_t output_len() const { return y.cols(); }

  // Payload when shipped to a client: every X and Y value as a 64-bit float.
  std::uint64_t SerializedBytes() const {
    return static_cast<std::uint64_t>(x.size() + y.size()) * sizeof(double);
  }

  WindowDataset ToWindows() const {
    WindowDataset ds(input_len(), output_len());
    for (std::size_t i = 0; i < size(); ++i) {
      ds.Append(x.data().subspan(i * input_len(), input_len()),
                y.data().subspan(i * output_len(), output_len()));
    }
    return ds;
  }

  bool AllFinite() const { return x.AllFinite() && y.AllFinite(); }
};

}  // namespace tsfed

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

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace tsfed {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
inline std::uint64_t Mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a; stable across platforms and runs, unlike std::hash.
inline std::uint64_t HashString(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Sub-seed for a named purpose, e.g. DeriveSeed(seed, "shuffle", {client, t}).
// Every random stream in a run comes from the master seed through here, so a
// run is a pure function of its configuration.
inline std::uint64_t DeriveSeed(std::uint64_t master, std::string_view purpose,
                                std::initializer_list<std::uint64_t> ids = {}) {
  std::uint64_t h = Mix64(master ^ HashString(purpose));
  for (std::uint64_t id : ids) h = Mix64(h ^ Mix64(id + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng MakeRng(std::uint64_t master, std::string_view purpose,
                   std::initializer_list<std::uint64_t> ids = {}) {
  return Rng(DeriveSeed(master, purpose, ids));
}

}  // namespace tsfed

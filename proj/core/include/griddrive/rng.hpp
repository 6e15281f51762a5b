// Copyright 2026 The GridDrive Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace griddrive {

// Self-contained xoshiro256++ with splitmix64 seeding. The standard
// <random> distributions are implementation-defined, so everything that
// must reproduce bit-identically across toolchains goes through this.
//
// Streams are derived by name: child("train", step, i) hashes the tags
// into a fresh, statistically independent generator. All randomness in
// the project flows from one root seed through such named streams.
class Rng {
 public:
  explicit Rng(uint64_t seed) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (int i = 0; i < 4; ++i) s_[i] = splitmix64(x);
    has_spare_ = false;
    spare_ = 0.0;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller; pairs are cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Derived stream: mixes the tags into this generator's seed material
  // without advancing it.
  template <typename... Tags>
  Rng child(Tags... tags) const {
    uint64_t h = 0x9e3779b97f4a7c15ull ^ s_[0];
    h = mix(h, s_[1]);
    (void)std::initializer_list<int>{(h = mix_tag(h, tags), 0)...};
    return Rng(h);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  static uint64_t mix(uint64_t h, uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    uint64_t x = h;
    return splitmix64(x);
  }

  static uint64_t mix_tag(uint64_t h, uint64_t v) { return mix(h, v); }
  static uint64_t mix_tag(uint64_t h, int v) { return mix(h, static_cast<uint64_t>(v)); }
  static uint64_t mix_tag(uint64_t h, std::string_view tag) {
    uint64_t fnv = 0xcbf29ce484222325ull;
    for (char c : tag) {
      fnv ^= static_cast<unsigned char>(c);
      fnv *= 0x100000001b3ull;
    }
    return mix(h, fnv);
  }
  static uint64_t mix_tag(uint64_t h, const char* tag) {
    return mix_tag(h, std::string_view(tag));
  }

  uint64_t s_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace griddrive

// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace qfpred {

// Base class for all library errors. Subclasses tell callers what kind of
// contract was violated; the message carries the specifics.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/extent mismatch; the message names the offending axis.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Scalar argument outside its documented range.
class RangeError : public Error {
 public:
  using Error::Error;
};

// File system / OS-level failure (open, read, write).
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (image decode, checkpoint parse, manifest syntax).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Training diverged (NaN loss) or produced non-finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Number of threads used by the compute kernels (conv/pool GEMM loops).
// Parallel regions are arranged so results are bit-identical for any value.
void set_num_threads(int n);
int num_threads();

// Deterministic 64-bit PRNG (SplitMix64). Small, fast, and fully specified,
// so streams are reproducible across platforms and builds. All randomness in
// the library flows through this type; std:: distributions are avoided
// because their output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Unbiased integer in [0, bound), bound > 0.
  std::uint32_t below(std::uint32_t bound) {
    // Lemire's multiply-shift with rejection.
    std::uint64_t x = next_u64() >> 32;
    std::uint64_t m = x * bound;
    std::uint32_t l = static_cast<std::uint32_t>(m);
    if (l < bound) {
      std::uint32_t t = (0u - bound) % bound;
      while (l < t) {
        x = next_u64() >> 32;
        m = x * bound;
        l = static_cast<std::uint32_t>(m);
      }
    }
    return static_cast<std::uint32_t>(m >> 32);
  }

  // Uniform double in [0, 1), 53 bits of entropy.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller (no cached spare: deterministic stream
  // consumption, two uniforms per draw).
  double normal();

  // Child stream for a named component: the root seed is expanded with a
  // counter-based hash so adding a consumer never perturbs sibling streams.
  Rng child(const std::string& tag, std::uint64_t counter = 0) const;

 private:
  std::uint64_t state_;
};

// FNV-1a, used for stable per-component stream derivation.
std::uint64_t hash_string(const std::string& s);

}  // namespace qfpred

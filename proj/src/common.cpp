// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#include "qfpred/common.hpp"

#include <atomic>
#include <cmath>

namespace qfpred {

namespace {
std::atomic<int> g_threads{1};
}

void set_num_threads(int n) { g_threads.store(n < 1 ? 1 : n); }
int num_threads() { return g_threads.load(); }

double Rng::normal() {
  // Box-Muller; u1 is kept away from 0 so log() is finite.
  double u1 = uniform01();
  double u2 = uniform01();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

Rng Rng::child(const std::string& tag, std::uint64_t counter) const {
  std::uint64_t mix = state_ ^ (hash_string(tag) + 0x9E3779B97F4A7C15ULL * (counter + 1));
  Rng r(mix);
  r.next_u64();  // decorrelate from the raw mix
  return r;
}

std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace qfpred

// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <complex>
#include <vector>

namespace qfpred {

// In-place complex FFT. Power-of-two lengths use iterative radix-2;
// everything else goes through Bluestein's chirp-z reduction, so any n >= 1
// works in O(n log n). inverse applies the 1/n factor.
void fft(std::vector<std::complex<double>>& a, bool inverse);

// 2-D transform over a row-major (h x w) grid: rows then columns.
void fft2d(std::vector<std::complex<double>>& grid, int h, int w, bool inverse);

}  // namespace qfpred

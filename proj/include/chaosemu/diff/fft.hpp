#pragma once

#include <complex>
#include <cstddef>
#include <span>

namespace chaosemu::fft {

using Complex = std::complex<double>;

/// Number of non-redundant coefficients of a length-n real transform.
constexpr std::size_t half_size(std::size_t n) { return n / 2 + 1; }

// Conventions: forward transforms are unnormalised, X_k = sum_n x_n exp(-2 pi i k n / N);
// the inverse real transform carries the 1/N factor so irfft(rfft(x)) == x.
// The imaginary parts of the DC and (for even N) Nyquist inputs to irfft are ignored.

void rfft(std::span<const double> in, std::span<Complex> out);
void irfft(std::span<const Complex> in, std::span<double> out);

/// Unnormalised complex transform, sign -1 (forward) or +1 (backward).
void cfft(std::span<const Complex> in, std::span<Complex> out, int sign);

}  // namespace chaosemu::fft

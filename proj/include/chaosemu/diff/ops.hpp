#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "chaosemu/diff/var.hpp"

// Differentiable primitives. Every op checks operand shapes and throws
// ShapeError naming the primitive and the offending shapes.
namespace chaosemu::diff {

// Elementwise, operands of identical shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var add_scalar(const Var& a, double s);
Var scale(const Var& a, double s);
Var neg(const Var& a);
Var square(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
/// Exact (erf-based) Gaussian error linear unit.
Var gelu(const Var& a);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_axis(const Var& a, std::size_t axis);
Var mean_axis(const Var& a, std::size_t axis);
/// Euclidean norm of all elements.
Var l2_norm(const Var& a);

// Structure.
Var reshape(const Var& a, Shape shape);
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);
/// Selects entries along `axis`; indices may repeat.
Var gather(const Var& a, std::size_t axis, std::span<const std::size_t> indices);
Var concat(std::span<const Var> parts, std::size_t axis);
/// Concatenates along a new axis inserted at `axis`.
Var stack(std::span<const Var> parts, std::size_t axis);

// Linear algebra.
/// [n, k] x [k, m] -> [n, m], or [n, k] x [m, k]^T when `transpose_b`.
Var matmul(const Var& a, const Var& b, bool transpose_b = false);
/// Pointwise channel mixing: x [B, Cin, L], w [Cout, Cin], optional bias [Cout] -> [B, Cout, L].
Var channel_linear(const Var& x, const Var& w, const Var& bias = Var());
/// x [B, Cin, H, W], w [Cout, Cin, kh, kw], bias [Cout] -> [B, Cout, Ho, Wo], zero padding.
Var conv2d(const Var& x, const Var& w, const Var& bias, std::size_t stride, std::size_t pad);
/// x [B, Cin, L], w [Cout, Cin, k], bias [Cout] -> [B, Cout, Lo].
Var conv1d(const Var& x, const Var& w, const Var& bias, std::size_t stride, std::size_t pad);

// Spectral. Complex values are stored as a trailing axis of size 2 (re, im).
/// Real transform along the last axis: [..., n] -> [..., n/2+1, 2], unnormalised.
Var rfft(const Var& a);
/// Inverse of rfft: [..., n/2+1, 2] -> [..., n], carries the 1/n factor.
Var irfft(const Var& a, std::size_t n);
/// Per-mode complex channel mixing: x [B, Cin, m, 2], w [M, Cin, Cout, 2] -> [B, Cout, m, 2].
/// Modes k >= M are zeroed.
Var spectral_mix(const Var& x, const Var& w);
/// Multiplies mode k of x [..., m, 2] by the constant factors[k].
Var complex_scale(const Var& x, std::span<const std::complex<double>> factors);

// Normalisation and similarity.
Var softmax(const Var& a);  // along the last axis
Var cosine_similarity(const Var& a, const Var& b, std::size_t axis);
Var normalize(const Var& a, std::size_t axis);
/// (a - shift[c]) * scale[c] where c indexes the last axis.
Var affine_lastdim(const Var& a, std::span<const double> shift, std::span<const double> scale);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(const Var& a) { return neg(a); }

}  // namespace chaosemu::diff

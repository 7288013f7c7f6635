#include "chaosemu/diff/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "chaosemu/diff/fft.hpp"
#include "chaosemu/error.hpp"

namespace chaosemu::diff {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMat = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b = {}) {
  std::string msg = std::string(op) + ": incompatible shapes " + shape_str(a);
  if (!b.empty()) msg += " and " + shape_str(b);
  throw ShapeError(msg);
}

void require_same(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
}

void require_axis(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                                         " out of range for " + shape_str(s));
}

// View of a shape as [outer, n, inner] around one axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape without_axis(Shape s, std::size_t axis) {
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  return s;
}

template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  Tensor out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
  Tensor y = out;
  return Var::make(std::move(out), {a}, [a, y = std::move(y), df](const Tensor& g, std::span<Tensor* const> gi) {
    const auto& x = a.value();
    Tensor& ga = *gi[0];
    for (std::size_t i = 0; i < x.numel(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  require_same("add", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return Var::make(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> gi) {
    for (Tensor* t : gi) {
      if (!t) continue;
      for (std::size_t i = 0; i < g.numel(); ++i) (*t)[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return Var::make(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i];
    if (gi[1]) for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i] -= g[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same("mul", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return Var::make(std::move(out), {a, b}, [a, b](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i] * b.value()[i];
    if (gi[1]) for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i] += g[i] * a.value()[i];
  });
}

Var div(const Var& a, const Var& b) {
  require_same("div", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] / b.value()[i];
  return Var::make(std::move(out), {a, b}, [a, b](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double bv = b.value()[i];
      if (gi[0]) (*gi[0])[i] += g[i] / bv;
      if (gi[1]) (*gi[1])[i] -= g[i] * a.value()[i] / (bv * bv);
    }
  });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var gelu(const Var& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

// ----------------------------------------------------------------- reductions

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return Var::make(Tensor::scalar(s), {a}, [](const Tensor& g, std::span<Tensor* const> gi) {
    const double gv = g[0];
    for (double& v : gi[0]->data()) v += gv;
  });
}

Var mean(const Var& a) {
  const std::size_t n = a.numel();
  if (n == 0) throw ShapeError("mean: empty operand");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_axis(const Var& a, std::size_t axis) {
  require_axis("sum_axis", a.shape(), axis);
  const AxisSplit s = split(a.shape(), axis);
  Tensor out(without_axis(a.shape(), axis));
  const double* x = a.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += x[(o * s.n + j) * s.inner + i];
  return Var::make(std::move(out), {a}, [s](const Tensor& g, std::span<Tensor* const> gi) {
    double* ga = gi[0]->ptr();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < s.n; ++j)
        for (std::size_t i = 0; i < s.inner; ++i) ga[(o * s.n + j) * s.inner + i] += g[o * s.inner + i];
  });
}

Var mean_axis(const Var& a, std::size_t axis) {
  require_axis("mean_axis", a.shape(), axis);
  if (a.shape()[axis] == 0) throw ShapeError("mean_axis: empty axis");
  return scale(sum_axis(a, axis), 1.0 / static_cast<double>(a.shape()[axis]));
}

Var l2_norm(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  const double nrm = std::sqrt(s);
  return Var::make(Tensor::scalar(nrm), {a}, [a, nrm](const Tensor& g, std::span<Tensor* const> gi) {
    if (nrm == 0.0) return;
    const double f = g[0] / nrm;
    for (std::size_t i = 0; i < a.numel(); ++i) (*gi[0])[i] += f * a.value()[i];
  });
}

// ------------------------------------------------------------------ structure

Var reshape(const Var& a, Shape shape) {
  if (numel_of(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
  return Var::make(a.value().reshaped(std::move(shape)), {a}, [](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i];
  });
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  require_axis("slice", a.shape(), axis);
  if (begin > end || end > a.shape()[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + shape_str(a.shape()) + " axis " + std::to_string(axis));
  }
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  return gather(a, axis, idx);
}

Var gather(const Var& a, std::size_t axis, std::span<const std::size_t> indices) {
  require_axis("gather", a.shape(), axis);
  const AxisSplit s = split(a.shape(), axis);
  for (std::size_t k : indices) {
    if (k >= s.n) throw ShapeError("gather: index " + std::to_string(k) + " out of range for " + shape_str(a.shape()));
  }
  Shape os = a.shape();
  os[axis] = indices.size();
  Tensor out(os);
  const std::size_t m = indices.size();
  const double* x = a.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < m; ++j)
      std::copy_n(x + (o * s.n + indices[j]) * s.inner, s.inner, out.ptr() + (o * m + j) * s.inner);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return Var::make(std::move(out), {a}, [s, idx = std::move(idx)](const Tensor& g, std::span<Tensor* const> gi) {
    double* ga = gi[0]->ptr();
    const std::size_t m = idx.size();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < m; ++j) {
        const double* src = g.ptr() + (o * m + j) * s.inner;
        double* dst = ga + (o * s.n + idx[j]) * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
      }
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& ref = parts[0].shape();
  require_axis("concat", ref, axis);
  Shape os = ref;
  os[axis] = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    Shape a = p.shape(), b = ref;
    if (a.size() != b.size()) shape_fail("concat", a, b);
    a[axis] = b[axis] = 0;
    if (a != b) shape_fail("concat", p.shape(), ref);
    offsets.push_back(os[axis]);
    os[axis] += p.shape()[axis];
  }
  const AxisSplit s = split(os, axis);
  Tensor out(os);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::size_t np = parts[p].shape()[axis];
    const double* x = parts[p].value().ptr();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(x + o * np * s.inner, np * s.inner, out.ptr() + (o * s.n + offsets[p]) * s.inner);
  }
  std::vector<std::size_t> sizes;
  for (const Var& p : parts) sizes.push_back(p.shape()[axis]);
  std::vector<Var> inputs(parts.begin(), parts.end());
  return Var::make(std::move(out), std::move(inputs),
                   [s, offsets, sizes](const Tensor& g, std::span<Tensor* const> gi) {
                     for (std::size_t p = 0; p < gi.size(); ++p) {
                       if (!gi[p]) continue;
                       double* ga = gi[p]->ptr();
                       const std::size_t np = sizes[p];
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         const double* src = g.ptr() + (o * s.n + offsets[p]) * s.inner;
                         double* dst = ga + o * np * s.inner;
                         for (std::size_t i = 0; i < np * s.inner; ++i) dst[i] += src[i];
                       }
                     }
                   });
}

Var stack(std::span<const Var> parts, std::size_t axis) {
  std::vector<Var> expanded;
  expanded.reserve(parts.size());
  for (const Var& p : parts) {
    if (axis > p.shape().size()) throw ShapeError("stack: axis out of range for " + shape_str(p.shape()));
    Shape s = p.shape();
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, axis);
}

// -------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b, bool transpose_b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2) shape_fail("matmul", sa, sb);
  const std::size_t n = sa[0], k = sa[1];
  const std::size_t m = transpose_b ? sb[0] : sb[1];
  if ((transpose_b ? sb[1] : sb[0]) != k) shape_fail("matmul", sa, sb);
  Tensor out({n, m});
  MapC A(a.value().ptr(), n, k);
  MapC B(b.value().ptr(), sb[0], sb[1]);
  Map C(out.ptr(), n, m);
  if (transpose_b) C.noalias() = A * B.transpose();
  else C.noalias() = A * B;
  return Var::make(std::move(out), {a, b}, [a, b, n, k, m, transpose_b](const Tensor& g, std::span<Tensor* const> gi) {
    MapC G(g.ptr(), n, m);
    MapC A(a.value().ptr(), n, k);
    MapC B(b.value().ptr(), b.shape()[0], b.shape()[1]);
    if (gi[0]) {
      Map GA(gi[0]->ptr(), n, k);
      if (transpose_b) GA.noalias() += G * B;
      else GA.noalias() += G * B.transpose();
    }
    if (gi[1]) {
      Map GB(gi[1]->ptr(), b.shape()[0], b.shape()[1]);
      if (transpose_b) GB.noalias() += G.transpose() * A;
      else GB.noalias() += A.transpose() * G;
    }
  });
}

Var channel_linear(const Var& x, const Var& w, const Var& bias) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 3 || sw.size() != 2 || sw[1] != sx[1]) shape_fail("channel_linear", sx, sw);
  const std::size_t batch = sx[0], cin = sx[1], len = sx[2], cout = sw[0];
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{cout}) shape_fail("channel_linear(bias)", bias.shape(), sw);
  Tensor out({batch, cout, len});
  MapC W(w.value().ptr(), cout, cin);
  for (std::size_t b = 0; b < batch; ++b) {
    Map Y(out.ptr() + b * cout * len, cout, len);
    Y.noalias() = W * MapC(x.value().ptr() + b * cin * len, cin, len);
    if (has_bias)
      for (std::size_t o = 0; o < cout; ++o) Y.row(o).array() += bias.value()[o];
  }
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return Var::make(std::move(out), std::move(inputs),
                   [x, w, batch, cin, len, cout](const Tensor& g, std::span<Tensor* const> gi) {
                     MapC W(w.value().ptr(), cout, cin);
                     for (std::size_t b = 0; b < batch; ++b) {
                       MapC G(g.ptr() + b * cout * len, cout, len);
                       if (gi[0]) Map(gi[0]->ptr() + b * cin * len, cin, len).noalias() += W.transpose() * G;
                       if (gi[1])
                         Map(gi[1]->ptr(), cout, cin).noalias() +=
                             G * MapC(x.value().ptr() + b * cin * len, cin, len).transpose();
                       if (gi.size() > 2 && gi[2])
                         for (std::size_t o = 0; o < cout; ++o) (*gi[2])[o] += G.row(o).sum();
                     }
                   });
}

namespace {

struct ConvGeom {
  std::size_t batch, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  std::size_t patch() const { return cin * kh * kw; }
};

// cols [cin*kh*kw, ho*wo] for one batch element.
void im2col(const ConvGeom& c, const double* x, double* cols) {
  for (std::size_t ci = 0; ci < c.cin; ++ci)
    for (std::size_t ky = 0; ky < c.kh; ++ky)
      for (std::size_t kx = 0; kx < c.kw; ++kx) {
        double* row = cols + ((ci * c.kh + ky) * c.kw + kx) * c.ho * c.wo;
        for (std::size_t oy = 0; oy < c.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * c.stride + ky) - static_cast<std::ptrdiff_t>(c.pad);
          for (std::size_t ox = 0; ox < c.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * c.stride + kx) - static_cast<std::ptrdiff_t>(c.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(c.h) &&
                                ix < static_cast<std::ptrdiff_t>(c.w);
            row[oy * c.wo + ox] = inside ? x[(ci * c.h + static_cast<std::size_t>(iy)) * c.w + static_cast<std::size_t>(ix)] : 0.0;
          }
        }
      }
}

void col2im_add(const ConvGeom& c, const double* cols, double* gx) {
  for (std::size_t ci = 0; ci < c.cin; ++ci)
    for (std::size_t ky = 0; ky < c.kh; ++ky)
      for (std::size_t kx = 0; kx < c.kw; ++kx) {
        const double* row = cols + ((ci * c.kh + ky) * c.kw + kx) * c.ho * c.wo;
        for (std::size_t oy = 0; oy < c.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * c.stride + ky) - static_cast<std::ptrdiff_t>(c.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(c.h)) continue;
          for (std::size_t ox = 0; ox < c.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * c.stride + kx) - static_cast<std::ptrdiff_t>(c.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(c.w)) continue;
            gx[(ci * c.h + static_cast<std::size_t>(iy)) * c.w + static_cast<std::size_t>(ix)] += row[oy * c.wo + ox];
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& bias, std::size_t stride, std::size_t pad) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 4 || sw.size() != 4 || sw[1] != sx[1] || stride == 0) shape_fail("conv2d", sx, sw);
  if (sx[2] + 2 * pad < sw[2] || sx[3] + 2 * pad < sw[3]) shape_fail("conv2d", sx, sw);
  ConvGeom c{sx[0], sx[1], sx[2], sx[3], sw[0], sw[2], sw[3], stride, pad, 0, 0};
  c.ho = (c.h + 2 * pad - c.kh) / stride + 1;
  c.wo = (c.w + 2 * pad - c.kw) / stride + 1;
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{c.cout}) shape_fail("conv2d(bias)", bias.shape(), sw);

  Tensor out({c.batch, c.cout, c.ho, c.wo});
  const std::size_t hw = c.ho * c.wo;
  Buffer cols(c.patch() * hw);
  MapC W(w.value().ptr(), c.cout, c.patch());
  for (std::size_t b = 0; b < c.batch; ++b) {
    im2col(c, x.value().ptr() + b * c.cin * c.h * c.w, cols.data());
    Map Y(out.ptr() + b * c.cout * hw, c.cout, hw);
    Y.noalias() = W * MapC(cols.data(), c.patch(), hw);
    if (has_bias)
      for (std::size_t o = 0; o < c.cout; ++o) Y.row(o).array() += bias.value()[o];
  }
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return Var::make(std::move(out), std::move(inputs), [x, w, c](const Tensor& g, std::span<Tensor* const> gi) {
    const std::size_t hw = c.ho * c.wo;
    Buffer cols(c.patch() * hw), gcols(c.patch() * hw);
    MapC W(w.value().ptr(), c.cout, c.patch());
    for (std::size_t b = 0; b < c.batch; ++b) {
      MapC G(g.ptr() + b * c.cout * hw, c.cout, hw);
      if (gi[1]) {
        im2col(c, x.value().ptr() + b * c.cin * c.h * c.w, cols.data());
        Map(gi[1]->ptr(), c.cout, c.patch()).noalias() += G * MapC(cols.data(), c.patch(), hw).transpose();
      }
      if (gi[0]) {
        Map(gcols.data(), c.patch(), hw).noalias() = W.transpose() * G;
        col2im_add(c, gcols.data(), gi[0]->ptr() + b * c.cin * c.h * c.w);
      }
      if (gi.size() > 2 && gi[2])
        for (std::size_t o = 0; o < c.cout; ++o) (*gi[2])[o] += G.row(o).sum();
    }
  });
}

Var conv1d(const Var& x, const Var& w, const Var& bias, std::size_t stride, std::size_t pad) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 3 || sw.size() != 3) shape_fail("conv1d", sx, sw);
  // A 1-D convolution is a 2-D one over a unit-height image; padding only along the length.
  if (sx[2] + 2 * pad < sw[2] || stride == 0 || sw[1] != sx[1]) shape_fail("conv1d", sx, sw);
  const std::size_t lo = (sx[2] + 2 * pad - sw[2]) / stride + 1;
  // Pad explicitly so the unit height axis is not padded.
  Var xp = x;
  if (pad > 0) {
    Var zeros = Var::constant(Tensor({sx[0], sx[1], pad}));
    std::vector<Var> parts{zeros, x, zeros};
    xp = concat(parts, 2);
  }
  Var x4 = reshape(xp, {sx[0], sx[1], 1, sx[2] + 2 * pad});
  Var w4 = reshape(w, {sw[0], sw[1], 1, sw[2]});
  Var y = conv2d(x4, w4, bias, stride, 0);
  return reshape(y, {sx[0], sw[0], lo});
}

// ------------------------------------------------------------------- spectral

Var rfft(const Var& a) {
  const Shape& sa = a.shape();
  if (sa.empty() || sa.back() == 0) shape_fail("rfft", sa);
  const std::size_t n = sa.back(), m = fft::half_size(n), rows = a.numel() / n;
  Shape os = sa;
  os.back() = m;
  os.push_back(2);
  Tensor out(os);
  for (std::size_t r = 0; r < rows; ++r) {
    auto* dst = reinterpret_cast<fft::Complex*>(out.ptr() + r * m * 2);
    fft::rfft({a.value().ptr() + r * n, n}, {dst, m});
  }
  return Var::make(std::move(out), {a}, [n, m, rows](const Tensor& g, std::span<Tensor* const> gi) {
    // d/dx_j of sum_k Re(conj(G_k) X_k) = Re(sum_{k<=n/2} G_k e^{+2 pi i k j / n}).
    std::vector<fft::Complex> full(n), back(n);
    for (std::size_t r = 0; r < rows; ++r) {
      std::fill(full.begin(), full.end(), fft::Complex{});
      const double* gr = g.ptr() + r * m * 2;
      for (std::size_t k = 0; k < m; ++k) full[k] = {gr[2 * k], gr[2 * k + 1]};
      fft::cfft(full, back, +1);
      double* ga = gi[0]->ptr() + r * n;
      for (std::size_t j = 0; j < n; ++j) ga[j] += back[j].real();
    }
  });
}

Var irfft(const Var& a, std::size_t n) {
  const Shape& sa = a.shape();
  if (n == 0 || sa.size() < 2 || sa.back() != 2 || sa[sa.size() - 2] != fft::half_size(n)) {
    throw ShapeError("irfft: shape " + shape_str(sa) + " incompatible with length " + std::to_string(n));
  }
  const std::size_t m = fft::half_size(n), rows = a.numel() / (2 * m);
  Shape os(sa.begin(), sa.end() - 2);
  os.push_back(n);
  Tensor out(os);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto* src = reinterpret_cast<const fft::Complex*>(a.value().ptr() + r * m * 2);
    fft::irfft({src, m}, {out.ptr() + r * n, n});
  }
  return Var::make(std::move(out), {a}, [n, m, rows](const Tensor& g, std::span<Tensor* const> gi) {
    std::vector<fft::Complex> spec(m);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r) {
      fft::rfft({g.ptr() + r * n, n}, spec);
      double* ga = gi[0]->ptr() + r * m * 2;
      for (std::size_t k = 0; k < m; ++k) {
        const bool self_conjugate = k == 0 || (n % 2 == 0 && k == n / 2);
        const double c = (self_conjugate ? 1.0 : 2.0) * inv_n;
        ga[2 * k] += c * spec[k].real();
        ga[2 * k + 1] += c * spec[k].imag();
      }
    }
  });
}

Var spectral_mix(const Var& x, const Var& w) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 4 || sw.size() != 4 || sx[3] != 2 || sw[3] != 2 || sw[1] != sx[1] || sw[0] > sx[2])
    shape_fail("spectral_mix", sx, sw);
  const std::size_t batch = sx[0], cin = sx[1], m = sx[2], modes = sw[0], cout = sw[2];
  Tensor out({batch, cout, m, 2});
  const auto* X = reinterpret_cast<const std::complex<double>*>(x.value().ptr());
  const auto* W = reinterpret_cast<const std::complex<double>*>(w.value().ptr());
  auto* Y = reinterpret_cast<std::complex<double>*>(out.ptr());
  CMat xk(batch, cin), yk(batch, cout);
  for (std::size_t k = 0; k < modes; ++k) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < cin; ++i) xk(b, i) = X[(b * cin + i) * m + k];
    Eigen::Map<const CMat> wk(W + k * cin * cout, cin, cout);
    yk.noalias() = xk * wk;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < cout; ++o) Y[(b * cout + o) * m + k] = yk(b, o);
  }
  return Var::make(std::move(out), {x, w}, [x, w, batch, cin, m, modes, cout](const Tensor& g, std::span<Tensor* const> gi) {
    const auto* X = reinterpret_cast<const std::complex<double>*>(x.value().ptr());
    const auto* W = reinterpret_cast<const std::complex<double>*>(w.value().ptr());
    const auto* G = reinterpret_cast<const std::complex<double>*>(g.ptr());
    CMat xk(batch, cin), gk(batch, cout), gxk(batch, cin);
    for (std::size_t k = 0; k < modes; ++k) {
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < cout; ++o) gk(b, o) = G[(b * cout + o) * m + k];
      if (gi[0]) {
        Eigen::Map<const CMat> wk(W + k * cin * cout, cin, cout);
        gxk.noalias() = gk * wk.adjoint();
        auto* GX = reinterpret_cast<std::complex<double>*>(gi[0]->ptr());
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t i = 0; i < cin; ++i) GX[(b * cin + i) * m + k] += gxk(b, i);
      }
      if (gi[1]) {
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t i = 0; i < cin; ++i) xk(b, i) = X[(b * cin + i) * m + k];
        auto* GW = reinterpret_cast<std::complex<double>*>(gi[1]->ptr());
        Eigen::Map<CMat> gwk(GW + k * cin * cout, cin, cout);
        gwk.noalias() += xk.adjoint() * gk;
      }
    }
  });
}

Var complex_scale(const Var& x, std::span<const std::complex<double>> factors) {
  const Shape& sx = x.shape();
  if (sx.size() < 2 || sx.back() != 2 || sx[sx.size() - 2] != factors.size()) {
    throw ShapeError("complex_scale: shape " + shape_str(sx) + " with " + std::to_string(factors.size()) + " factors");
  }
  const std::size_t m = factors.size(), rows = x.numel() / (2 * m);
  Tensor out(sx);
  const auto* X = reinterpret_cast<const std::complex<double>*>(x.value().ptr());
  auto* Y = reinterpret_cast<std::complex<double>*>(out.ptr());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < m; ++k) Y[r * m + k] = X[r * m + k] * factors[k];
  std::vector<std::complex<double>> f(factors.begin(), factors.end());
  return Var::make(std::move(out), {x}, [f = std::move(f), rows](const Tensor& g, std::span<Tensor* const> gi) {
    const std::size_t m = f.size();
    const auto* G = reinterpret_cast<const std::complex<double>*>(g.ptr());
    auto* GX = reinterpret_cast<std::complex<double>*>(gi[0]->ptr());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < m; ++k) GX[r * m + k] += G[r * m + k] * std::conj(f[k]);
  });
}

// -------------------------------------------------- normalisation & similarity

Var softmax(const Var& a) {
  const Shape& sa = a.shape();
  if (sa.empty() || sa.back() == 0) shape_fail("softmax", sa);
  const std::size_t n = sa.back(), rows = a.numel() / n;
  Tensor out(sa);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.value().ptr() + r * n;
    double* y = out.ptr() + r * n;
    const double mx = *std::max_element(x, x + n);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (y[i] = std::exp(x[i] - mx));
    for (std::size_t i = 0; i < n; ++i) y[i] /= s;
  }
  Tensor y = out;
  return Var::make(std::move(out), {a}, [y = std::move(y), n, rows](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.ptr() + r * n;
      const double* gr = g.ptr() + r * n;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += gr[i] * yr[i];
      double* ga = gi[0]->ptr() + r * n;
      for (std::size_t i = 0; i < n; ++i) ga[i] += yr[i] * (gr[i] - dot);
    }
  });
}

namespace {
constexpr double kNormFloor = 1e-12;
}

Var cosine_similarity(const Var& a, const Var& b, std::size_t axis) {
  require_same("cosine_similarity", a, b);
  require_axis("cosine_similarity", a.shape(), axis);
  const AxisSplit s = split(a.shape(), axis);
  Tensor out(without_axis(a.shape(), axis));
  const double* x = a.value().ptr();
  const double* y = b.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double xy = 0, xx = 0, yy = 0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const std::size_t p = (o * s.n + j) * s.inner + i;
        xy += x[p] * y[p];
        xx += x[p] * x[p];
        yy += y[p] * y[p];
      }
      out[o * s.inner + i] = xy / (std::max(std::sqrt(xx), kNormFloor) * std::max(std::sqrt(yy), kNormFloor));
    }
  return Var::make(std::move(out), {a, b}, [a, b, s](const Tensor& g, std::span<Tensor* const> gi) {
    const double* x = a.value().ptr();
    const double* y = b.value().ptr();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        double xy = 0, xx = 0, yy = 0;
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t p = (o * s.n + j) * s.inner + i;
          xy += x[p] * y[p];
          xx += x[p] * x[p];
          yy += y[p] * y[p];
        }
        const double nx = std::max(std::sqrt(xx), kNormFloor), ny = std::max(std::sqrt(yy), kNormFloor);
        const double c = xy / (nx * ny), gv = g[o * s.inner + i];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t p = (o * s.n + j) * s.inner + i;
          if (gi[0]) (*gi[0])[p] += gv * (y[p] / (nx * ny) - c * x[p] / (nx * nx));
          if (gi[1]) (*gi[1])[p] += gv * (x[p] / (nx * ny) - c * y[p] / (ny * ny));
        }
      }
  });
}

Var normalize(const Var& a, std::size_t axis) {
  require_axis("normalize", a.shape(), axis);
  const AxisSplit s = split(a.shape(), axis);
  Tensor out(a.shape());
  std::vector<double> norms(s.outer * s.inner);
  const double* x = a.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double xx = 0;
      for (std::size_t j = 0; j < s.n; ++j) xx += x[(o * s.n + j) * s.inner + i] * x[(o * s.n + j) * s.inner + i];
      const double nrm = std::max(std::sqrt(xx), kNormFloor);
      norms[o * s.inner + i] = nrm;
      for (std::size_t j = 0; j < s.n; ++j) out[(o * s.n + j) * s.inner + i] = x[(o * s.n + j) * s.inner + i] / nrm;
    }
  Tensor y = out;
  return Var::make(std::move(out), {a}, [y = std::move(y), norms = std::move(norms), s](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        double gy = 0;
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t p = (o * s.n + j) * s.inner + i;
          gy += g[p] * y[p];
        }
        const double nrm = norms[o * s.inner + i];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t p = (o * s.n + j) * s.inner + i;
          (*gi[0])[p] += (g[p] - y[p] * gy) / nrm;
        }
      }
  });
}

Var affine_lastdim(const Var& a, std::span<const double> shift, std::span<const double> scale) {
  const Shape& sa = a.shape();
  if (sa.empty() || shift.size() != sa.back() || scale.size() != sa.back()) {
    throw ShapeError("affine_lastdim: shape " + shape_str(sa) + " with " + std::to_string(shift.size()) +
                     " shifts and " + std::to_string(scale.size()) + " scales");
  }
  const std::size_t c = sa.back(), rows = a.numel() / c;
  Tensor out(sa);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = (a.value()[r * c + j] - shift[j]) * scale[j];
  std::vector<double> sc(scale.begin(), scale.end());
  return Var::make(std::move(out), {a}, [sc = std::move(sc), rows](const Tensor& g, std::span<Tensor* const> gi) {
    const std::size_t c = sc.size();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) (*gi[0])[r * c + j] += g[r * c + j] * sc[j];
  });
}

}  // namespace chaosemu::diff

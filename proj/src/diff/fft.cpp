#include "chaosemu/diff/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include "chaosemu/error.hpp"

namespace chaosemu::fft {
namespace {

enum class Kind { R2C, C2R, C2CForward, C2CBackward };

// Planning is not thread-safe in FFTW; execution through the new-array interface is.
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

fftw_plan get_plan(Kind kind, std::size_t n) {
  static std::map<std::pair<Kind, std::size_t>, fftw_plan> cache;
  std::lock_guard lock(plan_mutex());
  auto key = std::make_pair(kind, n);
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  const int len = static_cast<int>(n);
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  std::vector<double> real(n);
  std::vector<fftw_complex> cplx(n);
  fftw_plan plan = nullptr;
  switch (kind) {
    case Kind::R2C:
      plan = fftw_plan_dft_r2c_1d(len, real.data(), cplx.data(), flags);
      break;
    case Kind::C2R:
      plan = fftw_plan_dft_c2r_1d(len, cplx.data(), real.data(), flags);
      break;
    case Kind::C2CForward:
    case Kind::C2CBackward: {
      std::vector<fftw_complex> out(n);
      plan = fftw_plan_dft_1d(len, cplx.data(), out.data(),
                              kind == Kind::C2CForward ? FFTW_FORWARD : FFTW_BACKWARD, flags);
      break;
    }
  }
  if (!plan) throw Error("fftw: failed to create plan for n=" + std::to_string(n));
  cache.emplace(key, plan);
  return plan;
}

fftw_complex* as_fftw(Complex* p) { return reinterpret_cast<fftw_complex*>(p); }

}  // namespace

void rfft(std::span<const double> in, std::span<Complex> out) {
  const std::size_t n = in.size();
  if (n == 0 || out.size() != half_size(n)) {
    throw ShapeError("rfft: input length " + std::to_string(n) + ", output length " +
                     std::to_string(out.size()));
  }
  std::vector<double> buf(in.begin(), in.end());
  fftw_execute_dft_r2c(get_plan(Kind::R2C, n), buf.data(), as_fftw(out.data()));
}

void irfft(std::span<const Complex> in, std::span<double> out) {
  const std::size_t n = out.size();
  if (n == 0 || in.size() != half_size(n)) {
    throw ShapeError("irfft: input length " + std::to_string(in.size()) + ", output length " +
                     std::to_string(n));
  }
  // c2r overwrites its input.
  std::vector<Complex> buf(in.begin(), in.end());
  fftw_execute_dft_c2r(get_plan(Kind::C2R, n), as_fftw(buf.data()), out.data());
  const double scale = 1.0 / static_cast<double>(n);
  for (double& v : out) v *= scale;
}

void cfft(std::span<const Complex> in, std::span<Complex> out, int sign) {
  const std::size_t n = in.size();
  if (n == 0 || out.size() != n) throw ShapeError("cfft: length mismatch");
  std::vector<Complex> buf(in.begin(), in.end());
  fftw_execute_dft(get_plan(sign < 0 ? Kind::C2CForward : Kind::C2CBackward, n), as_fftw(buf.data()),
                   as_fftw(out.data()));
}

}  // namespace chaosemu::fft

#include "rtsdoa/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cstring>
#include <mutex>
#include <stdexcept>
#include <unordered_map>

namespace rtsdoa::dsp {

namespace {

// FFTW planning is not thread-safe; execution on distinct buffers is. Plans
// are cached per size and reused through the new-array execute interface with
// fftw_malloc'd buffers, which satisfies the alignment requirement.
std::mutex g_plan_mutex;
std::unordered_map<int, fftw_plan> g_r2c_plans;
std::unordered_map<int, fftw_plan> g_c2r_plans;

fftw_plan r2c_plan(int n) {
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  auto it = g_r2c_plans.find(n);
  if (it != g_r2c_plans.end()) return it->second;
  double* in = fftw_alloc_real(static_cast<size_t>(n));
  fftw_complex* out = fftw_alloc_complex(static_cast<size_t>(n / 2 + 1));
  fftw_plan plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  fftw_free(in);
  fftw_free(out);
  g_r2c_plans[n] = plan;
  return plan;
}

fftw_plan c2r_plan(int n) {
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  auto it = g_c2r_plans.find(n);
  if (it != g_c2r_plans.end()) return it->second;
  fftw_complex* in = fftw_alloc_complex(static_cast<size_t>(n / 2 + 1));
  double* out = fftw_alloc_real(static_cast<size_t>(n));
  fftw_plan plan = fftw_plan_dft_c2r_1d(n, in, out, FFTW_ESTIMATE);
  fftw_free(in);
  fftw_free(out);
  g_c2r_plans[n] = plan;
  return plan;
}

struct RealBuf {
  double* p;
  explicit RealBuf(size_t n) : p(fftw_alloc_real(n)) {}
  ~RealBuf() { fftw_free(p); }
};
struct ComplexBuf {
  fftw_complex* p;
  explicit ComplexBuf(size_t n) : p(fftw_alloc_complex(n)) {}
  ~ComplexBuf() { fftw_free(p); }
};

}  // namespace

std::vector<std::complex<double>> rfft(const double* x, long long count, int n) {
  if (n <= 0) throw std::invalid_argument("rfft: non-positive size");
  RealBuf in(static_cast<size_t>(n));
  ComplexBuf out(static_cast<size_t>(n / 2 + 1));
  const long long copy = std::min<long long>(count, n);
  std::memcpy(in.p, x, sizeof(double) * static_cast<size_t>(copy));
  if (copy < n) std::memset(in.p + copy, 0, sizeof(double) * static_cast<size_t>(n - copy));
  fftw_execute_dft_r2c(r2c_plan(n), in.p, out.p);
  std::vector<std::complex<double>> bins(static_cast<size_t>(n / 2 + 1));
  std::memcpy(reinterpret_cast<double*>(bins.data()), out.p,
              sizeof(fftw_complex) * bins.size());
  return bins;
}

std::vector<double> irfft(const std::complex<double>* bins, int n) {
  if (n <= 0) throw std::invalid_argument("irfft: non-positive size");
  ComplexBuf in(static_cast<size_t>(n / 2 + 1));
  RealBuf out(static_cast<size_t>(n));
  std::memcpy(in.p, bins, sizeof(fftw_complex) * static_cast<size_t>(n / 2 + 1));
  fftw_execute_dft_c2r(c2r_plan(n), in.p, out.p);
  std::vector<double> y(static_cast<size_t>(n));
  const double inv = 1.0 / n;
  for (int i = 0; i < n; ++i) y[static_cast<size_t>(i)] = out.p[i] * inv;
  return y;
}

std::vector<double> fft_convolve(const std::vector<double>& a,
                                 const std::vector<double>& b) {
  if (a.empty() || b.empty()) return {};
  const long long full = static_cast<long long>(a.size()) + b.size() - 1;
  int n = 1;
  while (n < full) n <<= 1;
  auto fa = rfft(a.data(), static_cast<long long>(a.size()), n);
  auto fb = rfft(b.data(), static_cast<long long>(b.size()), n);
  for (size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
  auto y = irfft(fa.data(), n);
  y.resize(static_cast<size_t>(full));
  return y;
}

}  // namespace rtsdoa::dsp

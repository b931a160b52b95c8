#pragma once

#include <complex>
#include <vector>

namespace rtsdoa::dsp {

// n-point real-to-complex FFT of x (zero padded / truncated to n).
// Returns n/2 + 1 bins.
std::vector<std::complex<double>> rfft(const double* x, long long count, int n);

// Inverse of rfft, returns n real samples (already scaled by 1/n).
std::vector<double> irfft(const std::complex<double>* bins, int n);

// Full linear convolution, length a.size() + b.size() - 1, via pow2 FFT.
std::vector<double> fft_convolve(const std::vector<double>& a,
                                 const std::vector<double>& b);

}  // namespace rtsdoa::dsp

#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "rtsdoa/tensor.hpp"
#include "rtsdoa/wav.hpp"

namespace rtsdoa::dsp {

// 20 ms periodic Hann window, 10 ms hop, 320-point DFT at 16 kHz -> 161 bins.
constexpr int kWinLen = 320;
constexpr int kHop = 160;
constexpr int kBins = 161;
constexpr int kSampleRate = 16000;

// Single-channel complex spectrogram, row-major (frames, bins).
struct Spectrogram {
  int frames = 0;
  int bins = 0;
  std::vector<std::complex<double>> v;

  std::complex<double>& at(int t, int f) {
    return v[static_cast<size_t>(t) * bins + f];
  }
  const std::complex<double>& at(int t, int f) const {
    return v[static_cast<size_t>(t) * bins + f];
  }
};

// Frames fully inside the signal: floor((n - 320)/160) + 1.
int stft_frame_count(long long samples);

std::vector<double> hann_window();

// Errors if the waveform is shorter than one window or not at 16 kHz.
Spectrogram stft(const Wave& w);

// Weighted overlap-add with a synthesis Hann window, normalized by the summed
// squared window. Interior samples round-trip; the outer hop at each edge sees
// a partial window sum.
Wave istft(const Spectrogram& spec);

// Channel-interleaved real/imag stack: [Re(M1), Im(M1), ..., Re(Mc), Im(Mc)],
// shape (2C, T, F).
template <class S>
core::Tensor<S> stack_features(const std::vector<Spectrogram>& specs);

// Inverse of stack_features.
template <class S>
std::vector<Spectrogram> unstack_features(const core::Tensor<S>& stack);

// |z| per bin, shape (T, F).
core::Tensor<double> magnitude(const Spectrogram& spec);

// Per-mic magnitudes stacked on channels, shape (C, T, F).
template <class S>
core::Tensor<S> stack_magnitude(const std::vector<Spectrogram>& specs);

// Frame voiced iff frame RMS > max frame RMS - 40 dB. All-zero -> all false.
std::vector<uint8_t> vad_frames(const Wave& clean);

// Silence -> 36; voiced frames take the initial class before the switch frame
// (crossfade midpoint) and the second class from it onward.
std::vector<int> doa_frame_labels(const std::vector<uint8_t>& vad, int initial_class,
                                  int second_class, double switch_time, int frames);

constexpr int kSilenceClass = 36;
constexpr int kNumClasses = 37;

}  // namespace rtsdoa::dsp

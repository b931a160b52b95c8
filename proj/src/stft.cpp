#include "rtsdoa/stft.hpp"

#include <cmath>
#include <stdexcept>

#include "rtsdoa/fft.hpp"

namespace rtsdoa::dsp {

int stft_frame_count(long long samples) {
  if (samples < kWinLen) return 0;
  return static_cast<int>((samples - kWinLen) / kHop) + 1;
}

std::vector<double> hann_window() {
  std::vector<double> w(kWinLen);
  for (int n = 0; n < kWinLen; ++n)
    w[static_cast<size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / kWinLen);
  return w;
}

Spectrogram stft(const Wave& w) {
  if (w.sample_rate != kSampleRate)
    throw std::invalid_argument("stft: expected 16 kHz, got " +
                                std::to_string(w.sample_rate));
  const int T = stft_frame_count(static_cast<long long>(w.samples.size()));
  if (T <= 0)
    throw std::invalid_argument("stft: waveform shorter than one window (" +
                                std::to_string(w.samples.size()) + " samples)");
  static const std::vector<double> win = hann_window();
  Spectrogram spec;
  spec.frames = T;
  spec.bins = kBins;
  spec.v.resize(static_cast<size_t>(T) * kBins);
  std::vector<double> frame(kWinLen);
  for (int t = 0; t < T; ++t) {
    const double* x = w.samples.data() + static_cast<long long>(t) * kHop;
    for (int n = 0; n < kWinLen; ++n) frame[static_cast<size_t>(n)] = x[n] * win[static_cast<size_t>(n)];
    auto bins = rfft(frame.data(), kWinLen, kWinLen);
    for (int f = 0; f < kBins; ++f) spec.at(t, f) = bins[static_cast<size_t>(f)];
  }
  return spec;
}

Wave istft(const Spectrogram& spec) {
  if (spec.bins != kBins)
    throw std::invalid_argument("istft: expected " + std::to_string(kBins) +
                                " bins, got " + std::to_string(spec.bins));
  static const std::vector<double> win = hann_window();
  const long long n = static_cast<long long>(spec.frames - 1) * kHop + kWinLen;
  Wave out;
  out.sample_rate = kSampleRate;
  out.samples.assign(static_cast<size_t>(std::max<long long>(n, 0)), 0.0);
  std::vector<double> norm(out.samples.size(), 0.0);
  std::vector<std::complex<double>> bins(kBins);
  for (int t = 0; t < spec.frames; ++t) {
    for (int f = 0; f < kBins; ++f) bins[static_cast<size_t>(f)] = spec.at(t, f);
    auto frame = irfft(bins.data(), kWinLen);
    double* y = out.samples.data() + static_cast<long long>(t) * kHop;
    double* d = norm.data() + static_cast<long long>(t) * kHop;
    for (int i = 0; i < kWinLen; ++i) {
      y[i] += frame[static_cast<size_t>(i)] * win[static_cast<size_t>(i)];
      d[i] += win[static_cast<size_t>(i)] * win[static_cast<size_t>(i)];
    }
  }
  for (size_t i = 0; i < out.samples.size(); ++i)
    if (norm[i] > 1e-10) out.samples[i] /= norm[i];
  return out;
}

template <class S>
core::Tensor<S> stack_features(const std::vector<Spectrogram>& specs) {
  if (specs.empty()) throw std::invalid_argument("stack_features: no channels");
  const int T = specs[0].frames, F = specs[0].bins;
  for (const auto& s : specs)
    if (s.frames != T || s.bins != F)
      throw std::invalid_argument("stack_features: mismatched spectrogram shapes (" +
                                  std::to_string(s.frames) + "x" + std::to_string(s.bins) +
                                  " vs " + std::to_string(T) + "x" + std::to_string(F) + ")");
  const int C = static_cast<int>(specs.size());
  core::Tensor<S> out({2 * C, T, F});
  for (int c = 0; c < C; ++c)
    for (int t = 0; t < T; ++t)
      for (int f = 0; f < F; ++f) {
        out.at(2 * c, t, f) = static_cast<S>(specs[static_cast<size_t>(c)].at(t, f).real());
        out.at(2 * c + 1, t, f) = static_cast<S>(specs[static_cast<size_t>(c)].at(t, f).imag());
      }
  return out;
}

template <class S>
std::vector<Spectrogram> unstack_features(const core::Tensor<S>& stack) {
  if (stack.rank() != 3 || stack.dim(0) % 2 != 0)
    throw std::invalid_argument("unstack_features: expected (2C,T,F), got " +
                                core::shape_str(stack.shape));
  const int C = stack.dim(0) / 2, T = stack.dim(1), F = stack.dim(2);
  std::vector<Spectrogram> specs(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c) {
    auto& s = specs[static_cast<size_t>(c)];
    s.frames = T;
    s.bins = F;
    s.v.resize(static_cast<size_t>(T) * F);
    for (int t = 0; t < T; ++t)
      for (int f = 0; f < F; ++f)
        s.at(t, f) = {static_cast<double>(stack.at(2 * c, t, f)),
                      static_cast<double>(stack.at(2 * c + 1, t, f))};
  }
  return specs;
}

core::Tensor<double> magnitude(const Spectrogram& spec) {
  core::Tensor<double> out({spec.frames, spec.bins});
  for (int t = 0; t < spec.frames; ++t)
    for (int f = 0; f < spec.bins; ++f) out.at(t, f) = std::abs(spec.at(t, f));
  return out;
}

template <class S>
core::Tensor<S> stack_magnitude(const std::vector<Spectrogram>& specs) {
  if (specs.empty()) throw std::invalid_argument("stack_magnitude: no channels");
  const int C = static_cast<int>(specs.size());
  const int T = specs[0].frames, F = specs[0].bins;
  core::Tensor<S> out({C, T, F});
  for (int c = 0; c < C; ++c)
    for (int t = 0; t < T; ++t)
      for (int f = 0; f < F; ++f)
        out.at(c, t, f) = static_cast<S>(std::abs(specs[static_cast<size_t>(c)].at(t, f)));
  return out;
}

std::vector<uint8_t> vad_frames(const Wave& clean) {
  const int T = stft_frame_count(static_cast<long long>(clean.samples.size()));
  std::vector<double> rms(static_cast<size_t>(std::max(T, 0)));
  double max_rms = 0.0;
  for (int t = 0; t < T; ++t) {
    const double* x = clean.samples.data() + static_cast<long long>(t) * kHop;
    double e = 0.0;
    for (int i = 0; i < kWinLen; ++i) e += x[i] * x[i];
    rms[static_cast<size_t>(t)] = std::sqrt(e / kWinLen);
    max_rms = std::max(max_rms, rms[static_cast<size_t>(t)]);
  }
  std::vector<uint8_t> vad(static_cast<size_t>(std::max(T, 0)), 0);
  if (max_rms <= 0.0) return vad;
  const double threshold = max_rms * std::pow(10.0, -40.0 / 20.0);
  for (int t = 0; t < T; ++t) vad[static_cast<size_t>(t)] = rms[static_cast<size_t>(t)] > threshold ? 1 : 0;
  return vad;
}

std::vector<int> doa_frame_labels(const std::vector<uint8_t>& vad, int initial_class,
                                  int second_class, double switch_time, int frames) {
  std::vector<int> labels(static_cast<size_t>(frames), kSilenceClass);
  const int switch_frame =
      static_cast<int>(std::lround(switch_time * kSampleRate / kHop));
  for (int t = 0; t < frames; ++t) {
    const bool voiced = t < static_cast<int>(vad.size()) && vad[static_cast<size_t>(t)];
    if (!voiced) continue;
    labels[static_cast<size_t>(t)] = t < switch_frame ? initial_class : second_class;
  }
  return labels;
}

template core::Tensor<float> stack_features<float>(const std::vector<Spectrogram>&);
template core::Tensor<double> stack_features<double>(const std::vector<Spectrogram>&);
template std::vector<Spectrogram> unstack_features<float>(const core::Tensor<float>&);
template std::vector<Spectrogram> unstack_features<double>(const core::Tensor<double>&);
template core::Tensor<float> stack_magnitude<float>(const std::vector<Spectrogram>&);
template core::Tensor<double> stack_magnitude<double>(const std::vector<Spectrogram>&);

}  // namespace rtsdoa::dsp

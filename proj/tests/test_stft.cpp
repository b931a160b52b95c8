#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rtsdoa/rng.hpp"
#include "rtsdoa/stft.hpp"

using namespace rtsdoa;
using dsp::Spectrogram;
using dsp::Wave;

namespace {

Wave sine(double freq, double seconds, double amp = 1.0) {
  Wave w;
  w.samples.resize(static_cast<size_t>(seconds * dsp::kSampleRate));
  for (size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / dsp::kSampleRate);
  return w;
}

Wave random_wave(int n, uint64_t seed) {
  core::Rng rng(seed);
  Wave w;
  w.samples.resize(static_cast<size_t>(n));
  for (auto& s : w.samples) s = rng.uniform(-0.5, 0.5);
  return w;
}

}  // namespace

TEST_CASE("stft of zero input is all zero") {
  Wave w;
  w.samples.assign(4800, 0.0);
  auto spec = dsp::stft(w);
  CHECK(spec.frames == dsp::stft_frame_count(4800));
  for (const auto& z : spec.v) CHECK(std::abs(z) == 0.0);
}

TEST_CASE("16000 samples give 99 frames") {
  CHECK(dsp::stft_frame_count(16000) == 99);
  auto spec = dsp::stft(random_wave(16000, 5));
  CHECK(spec.frames == 99);
  CHECK(spec.bins == 161);
}

TEST_CASE("stft rejects waveforms shorter than one window") {
  Wave w;
  w.samples.assign(319, 0.1);
  CHECK_THROWS_AS(dsp::stft(w), std::invalid_argument);
}

TEST_CASE("1 kHz tone peaks at bin 20 in every frame") {
  auto spec = dsp::stft(sine(1000.0, 1.0));
  for (int t = 0; t < spec.frames; ++t) {
    int best = 0;
    double best_mag = -1.0;
    for (int f = 0; f < spec.bins; ++f) {
      const double m = std::abs(spec.at(t, f));
      if (m > best_mag) {
        best_mag = m;
        best = f;
      }
    }
    REQUIRE(best == 20);  // 50 Hz bin spacing
  }
}

TEST_CASE("Parseval: windowed frame energy matches spectrum energy") {
  auto w = random_wave(3200, 9);
  auto spec = dsp::stft(w);
  const auto win = dsp::hann_window();
  for (int t = 0; t < spec.frames; ++t) {
    double time_energy = 0.0;
    for (int i = 0; i < dsp::kWinLen; ++i) {
      const double v = w.samples[static_cast<size_t>(t * dsp::kHop + i)] * win[static_cast<size_t>(i)];
      time_energy += v * v;
    }
    double spec_energy = std::norm(spec.at(t, 0)) + std::norm(spec.at(t, 160));
    for (int f = 1; f < 160; ++f) spec_energy += 2.0 * std::norm(spec.at(t, f));
    spec_energy /= dsp::kWinLen;
    CHECK(std::abs(spec_energy - time_energy) <= 1e-6 * std::max(time_energy, 1e-12));
  }
}

TEST_CASE("istft round-trip: interior relative error under 1e-6") {
  auto w = random_wave(4800, 11);
  auto back = dsp::istft(dsp::stft(w));
  REQUIRE(back.samples.size() <= w.samples.size());
  double num = 0.0, den = 0.0;
  for (size_t i = dsp::kHop; i + dsp::kHop < back.samples.size(); ++i) {
    const double d = back.samples[i] - w.samples[i];
    num += d * d;
    den += w.samples[i] * w.samples[i];
  }
  CHECK(std::sqrt(num / den) < 1e-6);
}

TEST_CASE("istft of zero spectrogram is zero; single frame is 320 samples") {
  Spectrogram z;
  z.frames = 4;
  z.bins = 161;
  z.v.assign(4 * 161, {0.0, 0.0});
  auto w = dsp::istft(z);
  for (double s : w.samples) CHECK(s == 0.0);

  auto one = dsp::stft(random_wave(320, 13));
  REQUIRE(one.frames == 1);
  auto seg = dsp::istft(one);
  CHECK(seg.samples.size() == 320);
}

TEST_CASE("stack_features: 6 mics give 12 channels in Re/Im order") {
  auto w = random_wave(1600, 17);
  std::vector<Spectrogram> specs;
  for (int m = 0; m < 6; ++m) specs.push_back(dsp::stft(w));
  auto stack = dsp::stack_features<float>(specs);
  REQUIRE(stack.shape == core::Shape{12, specs[0].frames, 161});
  for (int t = 0; t < specs[0].frames; ++t)
    for (int f = 0; f < 161; ++f) {
      CHECK(stack.at(4, t, f) == static_cast<float>(specs[2].at(t, f).real()));
      CHECK(stack.at(5, t, f) == static_cast<float>(specs[2].at(t, f).imag()));
    }
}

TEST_CASE("stack_features: one mic gives 2 channels; imaginary-only lands on odd") {
  Spectrogram s;
  s.frames = 3;
  s.bins = 161;
  s.v.assign(3 * 161, {0.0, 2.5});
  auto stack = dsp::stack_features<double>({s});
  REQUIRE(stack.shape == core::Shape{2, 3, 161});
  for (int t = 0; t < 3; ++t)
    for (int f = 0; f < 161; ++f) {
      CHECK(stack.at(0, t, f) == 0.0);
      CHECK(stack.at(1, t, f) == 2.5);
    }
}

TEST_CASE("stack then unstack is lossless") {
  auto w = random_wave(1600, 19);
  std::vector<Spectrogram> specs = {dsp::stft(w), dsp::stft(random_wave(1600, 23))};
  auto stack = dsp::stack_features<double>(specs);
  auto back = dsp::unstack_features<double>(stack);
  REQUIRE(back.size() == specs.size());
  for (size_t c = 0; c < specs.size(); ++c)
    for (size_t i = 0; i < specs[c].v.size(); ++i) CHECK(back[c].v[i] == specs[c].v[i]);
}

TEST_CASE("stack_features rejects mismatched shapes") {
  auto a = dsp::stft(random_wave(1600, 29));
  auto b = dsp::stft(random_wave(3200, 31));
  CHECK_THROWS_AS(dsp::stack_features<float>({a, b}), std::invalid_argument);
}

TEST_CASE("magnitude: 3+4i gives 5; matches loop oracle") {
  Spectrogram s;
  s.frames = 2;
  s.bins = 161;
  s.v.assign(2 * 161, {3.0, 4.0});
  auto mag = dsp::magnitude(s);
  for (long long i = 0; i < mag.numel(); ++i) CHECK(mag[i] == 5.0);

  auto w = random_wave(1600, 37);
  auto spec = dsp::stft(w);
  auto m2 = dsp::magnitude(spec);
  for (int t = 0; t < spec.frames; ++t)
    for (int f = 0; f < spec.bins; ++f) {
      const double re = spec.at(t, f).real(), im = spec.at(t, f).imag();
      CHECK(m2.at(t, f) == doctest::Approx(std::sqrt(re * re + im * im)).epsilon(1e-14));
    }
}

TEST_CASE("vad: silence, full-scale tone, and speech-pause-speech") {
  Wave silence;
  silence.samples.assign(3200, 0.0);
  auto v0 = dsp::vad_frames(silence);
  for (auto b : v0) CHECK(b == 0);

  auto tone = sine(440.0, 0.5);
  auto v1 = dsp::vad_frames(tone);
  for (auto b : v1) CHECK(b == 1);

  // 0.5 s tone, 0.5 s digital silence, 0.5 s tone
  Wave gap = sine(440.0, 1.5);
  for (int i = 8000; i < 16000; ++i) gap.samples[static_cast<size_t>(i)] = 0.0;
  auto v2 = dsp::vad_frames(gap);
  // frames fully inside the silent region
  for (int t = 51; t < 98; ++t) CHECK(v2[static_cast<size_t>(t)] == 0);
  CHECK(v2[10] == 1);
  CHECK(v2[120] == 1);
}

TEST_CASE("doa labels: static, all-silent, and mid-clip switch") {
  std::vector<uint8_t> voiced(100, 1);
  auto all9 = dsp::doa_frame_labels(voiced, 9, 9, 0.5, 100);
  for (int lab : all9) CHECK(lab == 9);

  std::vector<uint8_t> silent(100, 0);
  auto all36 = dsp::doa_frame_labels(silent, 9, 18, 0.5, 100);
  for (int lab : all36) CHECK(lab == 36);

  auto sw = dsp::doa_frame_labels(voiced, 0, 18, 0.5, 100);
  for (int t = 0; t < 50; ++t) CHECK(sw[static_cast<size_t>(t)] == 0);
  for (int t = 50; t < 100; ++t) CHECK(sw[static_cast<size_t>(t)] == 18);
}

TEST_CASE("label classes stay in range and silence matches vad") {
  auto w = random_wave(16000, 41);
  for (int i = 4000; i < 8000; ++i) w.samples[static_cast<size_t>(i)] = 0.0;
  auto vad = dsp::vad_frames(w);
  auto labels = dsp::doa_frame_labels(vad, 3, 30, 0.4, static_cast<int>(vad.size()));
  for (size_t t = 0; t < labels.size(); ++t) {
    CHECK(labels[t] >= 0);
    CHECK(labels[t] <= 36);
    CHECK((labels[t] == 36) == (vad[t] == 0));
  }
}

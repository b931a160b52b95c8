#pragma once

#include <string>
#include <vector>

namespace rtsdoa::dsp {

struct Wave {
  int sample_rate = 16000;
  std::vector<double> samples;

  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct MultiWave {
  int sample_rate = 16000;
  std::vector<std::vector<double>> ch;

  int channels() const { return static_cast<int>(ch.size()); }
  long long length() const { return ch.empty() ? 0 : static_cast<long long>(ch[0].size()); }
};

// RIFF/WAVE, 32-bit IEEE float, interleaved. Samples are stored internally as
// double and cast on write, so identical pipelines produce identical files.
void write_wav(const std::string& path, const MultiWave& w);
void write_wav(const std::string& path, const Wave& w);

// Reads 32-bit float or 16-bit PCM.
MultiWave read_wav(const std::string& path);
Wave read_wav_mono(const std::string& path);

}  // namespace rtsdoa::dsp

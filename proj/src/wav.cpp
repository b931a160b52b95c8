#include "rtsdoa/wav.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rtsdoa::dsp {

namespace {

template <class T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void write_wav(const std::string& path, const MultiWave& w) {
  const int C = w.channels();
  if (C == 0) throw std::invalid_argument("write_wav: no channels");
  const long long n = w.length();
  for (const auto& c : w.ch)
    if (static_cast<long long>(c.size()) != n)
      throw std::invalid_argument("write_wav: ragged channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_wav: cannot open " + path);
  const uint32_t data_bytes = static_cast<uint32_t>(n * C * 4);
  os.write("RIFF", 4);
  put<uint32_t>(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put<uint32_t>(os, 16);
  put<uint16_t>(os, 3);  // IEEE float
  put<uint16_t>(os, static_cast<uint16_t>(C));
  put<uint32_t>(os, static_cast<uint32_t>(w.sample_rate));
  put<uint32_t>(os, static_cast<uint32_t>(w.sample_rate * C * 4));
  put<uint16_t>(os, static_cast<uint16_t>(C * 4));
  put<uint16_t>(os, 32);
  os.write("data", 4);
  put<uint32_t>(os, data_bytes);
  for (long long i = 0; i < n; ++i)
    for (int c = 0; c < C; ++c) put<float>(os, static_cast<float>(w.ch[c][i]));
  if (!os) throw std::runtime_error("write_wav: write failed for " + path);
}

void write_wav(const std::string& path, const Wave& w) {
  MultiWave m;
  m.sample_rate = w.sample_rate;
  m.ch.push_back(w.samples);
  write_wav(path, m);
}

MultiWave read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_wav: cannot open " + path);
  char tag[4];
  is.read(tag, 4);
  if (std::memcmp(tag, "RIFF", 4) != 0)
    throw std::runtime_error("read_wav: not a RIFF file: " + path);
  get<uint32_t>(is);
  is.read(tag, 4);
  if (std::memcmp(tag, "WAVE", 4) != 0)
    throw std::runtime_error("read_wav: not a WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  MultiWave out;
  bool got_fmt = false;
  while (is.read(tag, 4)) {
    const uint32_t size = get<uint32_t>(is);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      format = get<uint16_t>(is);
      channels = get<uint16_t>(is);
      rate = get<uint32_t>(is);
      get<uint32_t>(is);
      get<uint16_t>(is);
      bits = get<uint16_t>(is);
      if (size > 16) is.seekg(size - 16, std::ios::cur);
      got_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!got_fmt) throw std::runtime_error("read_wav: data before fmt in " + path);
      if (channels == 0) throw std::runtime_error("read_wav: zero channels in " + path);
      const uint32_t bytes_per = bits / 8;
      const uint32_t frames = size / (channels * bytes_per);
      out.sample_rate = static_cast<int>(rate);
      out.ch.assign(channels, std::vector<double>(frames));
      std::vector<char> raw(size);
      is.read(raw.data(), size);
      if (!is) throw std::runtime_error("read_wav: truncated data in " + path);
      if (format == 3 && bits == 32) {
        const float* p = reinterpret_cast<const float*>(raw.data());
        for (uint32_t i = 0; i < frames; ++i)
          for (uint16_t c = 0; c < channels; ++c) out.ch[c][i] = p[i * channels + c];
      } else if (format == 1 && bits == 16) {
        const int16_t* p = reinterpret_cast<const int16_t*>(raw.data());
        for (uint32_t i = 0; i < frames; ++i)
          for (uint16_t c = 0; c < channels; ++c)
            out.ch[c][i] = p[i * channels + c] / 32768.0;
      } else {
        throw std::runtime_error("read_wav: unsupported format " +
                                 std::to_string(format) + "/" + std::to_string(bits) +
                                 "-bit in " + path);
      }
      return out;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw std::runtime_error("read_wav: no data chunk in " + path);
}

Wave read_wav_mono(const std::string& path) {
  MultiWave m = read_wav(path);
  if (m.channels() != 1)
    throw std::runtime_error("read_wav_mono: expected 1 channel, got " +
                             std::to_string(m.channels()) + " in " + path);
  Wave w;
  w.sample_rate = m.sample_rate;
  w.samples = std::move(m.ch[0]);
  return w;
}

}  // namespace rtsdoa::dsp

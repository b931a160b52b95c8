#include "rtsdoa/scene.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "rtsdoa/fft.hpp"
#include "rtsdoa/rng.hpp"

namespace rtsdoa::sim {

using core::Rng;

SceneSpec sample_scene(uint64_t seed, const SourceCatalog& catalog,
                       const ClipPool& pool, const SceneSamplingOpts& opts) {
  if (pool.speech.empty()) throw std::invalid_argument("sample_scene: empty clip pool");
  Rng rng(seed);
  SceneSpec spec;
  spec.seed = seed;

  // five pairwise-distinct catalog indices via partial Fisher-Yates
  std::vector<int> indices(static_cast<size_t>(catalog.count));
  for (int i = 0; i < catalog.count; ++i) indices[static_cast<size_t>(i)] = i;
  for (int i = 0; i < 5; ++i) {
    const int j = rng.uniform_int(i, catalog.count - 1);
    std::swap(indices[static_cast<size_t>(i)], indices[static_cast<size_t>(j)]);
  }
  spec.target_initial_idx = indices[0];
  spec.target_second_idx = indices[1];
  spec.interferer_idx = indices[2];
  spec.anchor_idx = indices[3];
  spec.noise_idx = indices[4];

  if (!opts.allowed_target_indices.empty()) {
    const auto& allowed = opts.allowed_target_indices;
    spec.target_initial_idx =
        allowed[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(allowed.size()) - 1))];
    spec.target_second_idx =
        allowed[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(allowed.size()) - 1))];
  }
  if (opts.static_target) spec.target_second_idx = spec.target_initial_idx;

  // group clips by speaker; the anchor must be a second utterance of the
  // target speaker
  std::map<std::string, std::vector<size_t>> by_speaker;
  for (size_t i = 0; i < pool.speech.size(); ++i)
    by_speaker[pool.speech[i].speaker].push_back(i);
  std::vector<std::string> multi_utt;
  for (const auto& [spk, utts] : by_speaker)
    if (utts.size() >= 2) multi_utt.push_back(spk);
  if (multi_utt.empty())
    throw std::invalid_argument(
        "sample_scene: no speaker has a second utterance for the anchor");

  const std::string& target_spk =
      multi_utt[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(multi_utt.size()) - 1))];
  const auto& utts = by_speaker[target_spk];
  const int ti = rng.uniform_int(0, static_cast<int>(utts.size()) - 1);
  int ai = rng.uniform_int(0, static_cast<int>(utts.size()) - 2);
  if (ai >= ti) ++ai;
  spec.speaker = target_spk;
  spec.target_clip = pool.speech[utts[static_cast<size_t>(ti)]].path;
  spec.anchor_clip = pool.speech[utts[static_cast<size_t>(ai)]].path;
  const double target_dur = pool.speech[utts[static_cast<size_t>(ti)]].duration;

  // interfering speech from any other speaker
  std::vector<size_t> other;
  for (size_t i = 0; i < pool.speech.size(); ++i)
    if (pool.speech[i].speaker != target_spk) other.push_back(i);
  if (other.empty())
    throw std::invalid_argument("sample_scene: need at least two speakers");
  spec.interferer_clip =
      pool.speech[other[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(other.size()) - 1))]].path;

  if (!pool.noise.empty())
    spec.noise_clip =
        pool.noise[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.noise.size()) - 1))].path;

  spec.switch_time = rng.uniform(0.2 * target_dur, 0.8 * target_dur);
  spec.sir_db = rng.uniform_int(opts.sir_min, opts.sir_max);
  spec.snr_db = rng.uniform_int(opts.snr_min, opts.snr_max);
  spec.t60 = opts.t60_choices[static_cast<size_t>(
      rng.uniform_int(0, static_cast<int>(opts.t60_choices.size()) - 1))];
  return spec;
}

MultiWave render_moving_source(const std::vector<double>& clip, int idx_initial,
                               int idx_second, double switch_time, const RoomSpec& room,
                               const ArrayGeometry& array, const SourceCatalog& catalog,
                               int fs, int max_order) {
  const int rir_len =
      max_order == 0 ? fs / 8 : std::max(fs / 8, static_cast<int>(room.t60 * fs));
  const auto mics = array.mic_positions();
  const long long out_len = static_cast<long long>(clip.size()) + rir_len - 1;

  MultiWave out;
  out.sample_rate = fs;
  out.ch.assign(mics.size(), std::vector<double>());

  const bool moving = idx_second != idx_initial;
  const Point pos_a = catalog.position(idx_initial);
  const Point pos_b = catalog.position(idx_second);

  // 10 ms linear crossfade centered on the switch
  const long long fade_len = fs / 100;
  const long long fade_start = std::llround(switch_time * fs) - fade_len / 2;

#pragma omp parallel for schedule(dynamic)
  for (size_t m = 0; m < mics.size(); ++m) {
    const auto rir_a = image_method_rir(room, pos_a, mics[m], rir_len, fs, max_order);
    auto wet_a = dsp::fft_convolve(clip, rir_a);
    wet_a.resize(static_cast<size_t>(out_len), 0.0);
    if (!moving) {
      out.ch[m] = std::move(wet_a);
      continue;
    }
    const auto rir_b = image_method_rir(room, pos_b, mics[m], rir_len, fs, max_order);
    auto wet_b = dsp::fft_convolve(clip, rir_b);
    wet_b.resize(static_cast<size_t>(out_len), 0.0);
    std::vector<double> mixed(static_cast<size_t>(out_len));
    for (long long i = 0; i < out_len; ++i) {
      double gain;
      if (i < fade_start)
        gain = 0.0;
      else if (i >= fade_start + fade_len)
        gain = 1.0;
      else
        gain = static_cast<double>(i - fade_start + 1) / static_cast<double>(fade_len);
      mixed[static_cast<size_t>(i)] =
          wet_a[static_cast<size_t>(i)] * (1.0 - gain) + wet_b[static_cast<size_t>(i)] * gain;
    }
    out.ch[m] = std::move(mixed);
  }
  return out;
}

namespace {

double power_over_mask(const std::vector<double>& x, const std::vector<double>& mask_src,
                       long long n) {
  double acc = 0.0;
  long long count = 0;
  for (long long i = 0; i < n; ++i) {
    if (i < static_cast<long long>(mask_src.size()) && mask_src[static_cast<size_t>(i)] != 0.0) {
      const double v = i < static_cast<long long>(x.size()) ? x[static_cast<size_t>(i)] : 0.0;
      acc += v * v;
      ++count;
    }
  }
  return count > 0 ? acc / static_cast<double>(count) : 0.0;
}

}  // namespace

MultiWave mix_scene(const MultiWave& target, const MultiWave& interferer,
                    const MultiWave& noise, double sir_db, double snr_db) {
  const int C = target.channels();
  if (C == 0) throw std::invalid_argument("mix_scene: target has no channels");
  for (const MultiWave* w : {&interferer, &noise})
    if (w->channels() != 0 && w->channels() != C)
      throw std::invalid_argument("mix_scene: channel count mismatch (" +
                                  std::to_string(w->channels()) + " vs " +
                                  std::to_string(C) + ")");
  long long n = target.length();
  if (interferer.channels()) n = std::max(n, interferer.length());
  if (noise.channels()) n = std::max(n, noise.length());

  const std::vector<double>& ref = target.ch[0];
  const double p_target = power_over_mask(ref, ref, n);
  if (p_target <= 0.0)
    throw std::invalid_argument("mix_scene: silent target (zero power)");

  double s_int = 0.0, s_noise = 0.0;
  if (interferer.channels()) {
    const double p = power_over_mask(interferer.ch[0], ref, n);
    if (p > 0.0) s_int = std::sqrt(p_target / (p * std::pow(10.0, sir_db / 10.0)));
  }
  if (noise.channels()) {
    const double p = power_over_mask(noise.ch[0], ref, n);
    if (p > 0.0) s_noise = std::sqrt(p_target / (p * std::pow(10.0, snr_db / 10.0)));
  }

  MultiWave out;
  out.sample_rate = target.sample_rate;
  out.ch.assign(static_cast<size_t>(C), std::vector<double>(static_cast<size_t>(n), 0.0));
  for (int c = 0; c < C; ++c) {
    auto& dst = out.ch[static_cast<size_t>(c)];
    const auto& t = target.ch[static_cast<size_t>(c)];
    for (size_t i = 0; i < t.size(); ++i) dst[i] += t[i];
    if (s_int != 0.0) {
      const auto& v = interferer.ch[static_cast<size_t>(c)];
      for (size_t i = 0; i < v.size(); ++i) dst[i] += s_int * v[i];
    }
    if (s_noise != 0.0) {
      const auto& v = noise.ch[static_cast<size_t>(c)];
      for (size_t i = 0; i < v.size(); ++i) dst[i] += s_noise * v[i];
    }
  }
  return out;
}

double measured_ratio_db(const MultiWave& ref, const MultiWave& other) {
  const long long n = std::max(ref.length(), other.length());
  const double pr = power_over_mask(ref.ch[0], ref.ch[0], n);
  const double po = power_over_mask(other.ch[0], ref.ch[0], n);
  if (pr <= 0 || po <= 0)
    throw std::invalid_argument("measured_ratio_db: zero power signal");
  return 10.0 * std::log10(pr / po);
}

}  // namespace rtsdoa::sim

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rtsdoa/room.hpp"
#include "rtsdoa/wav.hpp"

namespace rtsdoa::sim {

using dsp::MultiWave;
using dsp::Wave;

// One sampled acoustic scene: five catalog positions, a movement switch time,
// SIR/SNR targets, reverberation time, and the clips to render.
struct SceneSpec {
  int target_initial_idx = 0;
  int target_second_idx = 0;
  int interferer_idx = 0;
  int anchor_idx = 0;
  int noise_idx = 0;
  double switch_time = 0.0;
  int sir_db = 0;
  int snr_db = 0;
  double t60 = 0.5;
  std::string target_clip, interferer_clip, anchor_clip, noise_clip;
  std::string speaker;
  uint64_t seed = 0;
};

struct ClipPool {
  struct Clip {
    std::string speaker;
    std::string path;
    double duration = 0.0;
  };
  std::vector<Clip> speech;
  std::vector<Clip> noise;
};

struct SceneSamplingOpts {
  std::vector<double> t60_choices = {0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  int sir_min = -5, sir_max = 5;
  int snr_min = -5, snr_max = 5;
  // When non-empty, the target's positions are drawn from this subset of
  // catalog indices (test and overfit configurations).
  std::vector<int> allowed_target_indices;
  // Test-only override: second position equals the initial one.
  bool static_target = false;
};

// Deterministic given (seed, pool contents). The anchor clip is a different
// utterance of the target speaker; errors if no speaker has two utterances.
SceneSpec sample_scene(uint64_t seed, const SourceCatalog& catalog,
                       const ClipPool& pool, const SceneSamplingOpts& opts = {});

// Convolves the clip with image-method RIRs from the initial and second
// positions and joins them with a 10 ms linear crossfade centered on
// switch_time. Output length is clip length + RIR length - 1.
MultiWave render_moving_source(const std::vector<double>& clip, int idx_initial,
                               int idx_second, double switch_time, const RoomSpec& room,
                               const ArrayGeometry& array, const SourceCatalog& catalog,
                               int fs = 16000, int max_order = -1);

// Scales interferer and noise so channel-1 powers over target-active samples
// match the requested SIR/SNR, then sums. Zero-power interferer or noise
// contributes nothing; a silent target is an error.
MultiWave mix_scene(const MultiWave& target, const MultiWave& interferer,
                    const MultiWave& noise, double sir_db, double snr_db);

// Channel-1 power ratio in dB over samples where ref channel 1 is nonzero
// (measurement helper for tests and dataset verification).
double measured_ratio_db(const MultiWave& ref, const MultiWave& other);

}  // namespace rtsdoa::sim

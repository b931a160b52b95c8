#include "rtsdoa/room.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace rtsdoa::sim {

double t60_to_reflection(const RoomSpec& room) {
  if (room.t60 <= 0) throw std::invalid_argument("t60_to_reflection: t60 must be > 0");
  const double alpha = 0.161 * room.volume() / (room.surface() * room.t60);
  if (alpha >= 1.0)
    throw std::invalid_argument("t60_to_reflection: t60 " + std::to_string(room.t60) +
                                " s unreachable in this room (alpha " +
                                std::to_string(alpha) + " >= 1)");
  return std::sqrt(1.0 - alpha);
}

std::vector<double> image_method_rir(const RoomSpec& room, const Point& src,
                                     const Point& mic, int length, int fs,
                                     int max_order) {
  if (!room.inside(src))
    throw std::invalid_argument("image_method_rir: source outside room");
  if (!room.inside(mic))
    throw std::invalid_argument("image_method_rir: microphone outside room");
  if (distance(src, mic) < 0.01)
    throw std::invalid_argument(
        "image_method_rir: source within 1 cm of microphone (singular 1/d)");
  if (length <= 0) throw std::invalid_argument("image_method_rir: empty length");

  const double beta = max_order == 0 ? 0.0 : t60_to_reflection(room);
  const double c = room.speed_of_sound;
  // Image sources beyond this distance land past the requested length.
  const double dmax = c * static_cast<double>(length) / fs + std::max({room.lx, room.ly, room.lz});
  int nx = static_cast<int>(std::ceil(dmax / (2.0 * room.lx))) + 1;
  int ny = static_cast<int>(std::ceil(dmax / (2.0 * room.ly))) + 1;
  int nz = static_cast<int>(std::ceil(dmax / (2.0 * room.lz))) + 1;
  if (max_order >= 0) {
    nx = std::min(nx, max_order);
    ny = std::min(ny, max_order);
    nz = std::min(nz, max_order);
  }

  std::vector<double> rir(static_cast<size_t>(length), 0.0);
  for (int ix = -nx; ix <= nx; ++ix) {
    const int rx0 = std::abs(ix);  // reflections off the x = lx wall
    for (int qx = 0; qx <= 1; ++qx) {
      const double px = (1 - 2 * qx) * src.x + 2.0 * ix * room.lx;
      const int rx = rx0 + std::abs(ix - qx);
      if (max_order >= 0 && rx > max_order) continue;
      for (int iy = -ny; iy <= ny; ++iy) {
        for (int qy = 0; qy <= 1; ++qy) {
          const double py = (1 - 2 * qy) * src.y + 2.0 * iy * room.ly;
          const int ry = std::abs(iy) + std::abs(iy - qy);
          if (max_order >= 0 && rx + ry > max_order) continue;
          for (int iz = -nz; iz <= nz; ++iz) {
            for (int qz = 0; qz <= 1; ++qz) {
              const double pz = (1 - 2 * qz) * src.z + 2.0 * iz * room.lz;
              const int rz = std::abs(iz) + std::abs(iz - qz);
              const int order = rx + ry + rz;
              if (max_order >= 0 && order > max_order) continue;
              const double dx = px - mic.x, dy = py - mic.y, dz = pz - mic.z;
              const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
              const long long tap = std::llround(d / c * fs);
              if (tap >= length) continue;
              const double amp =
                  (order == 0 ? 1.0 : std::pow(beta, order)) / (4.0 * M_PI * d);
              rir[static_cast<size_t>(tap)] += amp;
            }
          }
        }
      }
    }
  }
  return rir;
}

double schroeder_t60(const std::vector<double>& rir, int fs) {
  const size_t n = rir.size();
  if (n == 0) throw std::invalid_argument("schroeder_t60: empty impulse response");
  // backward energy integration
  std::vector<double> energy(n);
  double acc = 0.0;
  for (size_t i = n; i-- > 0;) {
    acc += rir[i] * rir[i];
    energy[i] = acc;
  }
  if (acc <= 0) throw std::invalid_argument("schroeder_t60: silent impulse response");
  // locate the -5 dB and -25 dB crossings relative to the total energy
  long long i5 = -1, i25 = -1;
  for (size_t i = 0; i < n; ++i) {
    const double db = 10.0 * std::log10(energy[i] / acc + 1e-300);
    if (i5 < 0 && db <= -5.0) i5 = static_cast<long long>(i);
    if (db <= -25.0) {
      i25 = static_cast<long long>(i);
      break;
    }
  }
  if (i5 < 0 || i25 <= i5)
    throw std::invalid_argument("schroeder_t60: decay range not reached; "
                                "impulse response too short");
  // least-squares slope of the dB curve over the [-5, -25] dB span
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double count = static_cast<double>(i25 - i5 + 1);
  for (long long i = i5; i <= i25; ++i) {
    const double db = 10.0 * std::log10(energy[static_cast<size_t>(i)] / acc + 1e-300);
    const double x = static_cast<double>(i);
    sx += x;
    sy += db;
    sxx += x * x;
    sxy += x * db;
  }
  const double slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);
  if (slope >= 0) throw std::invalid_argument("schroeder_t60: non-decaying response");
  return -60.0 / slope / fs;
}

}  // namespace rtsdoa::sim

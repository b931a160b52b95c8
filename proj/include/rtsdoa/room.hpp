#pragma once

#include <cmath>
#include <vector>

namespace rtsdoa::sim {

struct Point {
  double x = 0, y = 0, z = 0;
};

inline double distance(const Point& a, const Point& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

struct RoomSpec {
  double lx = 5.0, ly = 6.0, lz = 3.0;
  double t60 = 0.5;
  double speed_of_sound = 343.0;

  double volume() const { return lx * ly * lz; }
  double surface() const { return 2.0 * (lx * ly + lx * lz + ly * lz); }
  bool inside(const Point& p) const {
    return p.x > 0 && p.x < lx && p.y > 0 && p.y < ly && p.z > 0 && p.z < lz;
  }
};

// Circular array of 6 omnidirectional mics, 60 degrees apart, first mic on
// the +x axis.
struct ArrayGeometry {
  Point center{2.5, 3.0, 1.5};
  double radius = 0.05;
  int mics = 6;

  std::vector<Point> mic_positions() const {
    std::vector<Point> out(static_cast<size_t>(mics));
    for (int m = 0; m < mics; ++m) {
      const double a = 2.0 * M_PI * m / mics;
      out[static_cast<size_t>(m)] = {center.x + radius * std::cos(a),
                                     center.y + radius * std::sin(a), center.z};
    }
    return out;
  }
};

// 36 candidate source positions, 10 degrees apart, 1.5 m from the array
// center at array height.
struct SourceCatalog {
  Point center{2.5, 3.0, 1.5};
  double range = 1.5;
  int count = 36;

  Point position(int idx) const {
    const double a = angle_deg(idx) * M_PI / 180.0;
    return {center.x + range * std::cos(a), center.y + range * std::sin(a), center.z};
  }
  double angle_deg(int idx) const { return 10.0 * idx; }
};

// Uniform wall reflection coefficient from Sabine absorption:
// alpha = 0.161 V / (S t60), beta = sqrt(1 - alpha). Errors when the
// requested decay is unreachable (alpha >= 1).
double t60_to_reflection(const RoomSpec& room);

// Allen-Berkeley image method with a uniform reflection coefficient and
// nearest-sample tap placement. max_order < 0 expands images to cover the
// requested length; max_order = 0 keeps only the direct path.
std::vector<double> image_method_rir(const RoomSpec& room, const Point& src,
                                     const Point& mic, int length, int fs = 16000,
                                     int max_order = -1);

// Backward-integration decay estimate fitted between -5 and -25 dB.
double schroeder_t60(const std::vector<double>& rir, int fs);

}  // namespace rtsdoa::sim

#pragma once

// Shared fixtures: scratch directories and synthetic faces whose landmarks are
// known analytically.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "sdn/dataset.hpp"
#include "sdn/network.hpp"

namespace sdn::test {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("sdn_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

// Network small enough for unit tests.
inline NetworkSpec tiny_spec(int side = 16, int n_landmarks = 2, std::uint64_t seed = 7) {
  NetworkSpec s;
  s.input_side = side;
  s.n_landmarks = n_landmarks;
  s.groups = {{3, 2, 2}, {3, 3, 3}, {3, 4, 4}};
  s.fc_hidden = 8;
  s.seed = seed;
  return s;
}

// Mean shape in a unit square: eye corners at indices 0 and 1, the rest spread
// over an ellipse. Fixed for a given n.
inline Eigen::Matrix2Xd template_shape(int n) {
  Eigen::Matrix2Xd p(2, n);
  p.col(0) << 0.32, 0.38;
  if (n > 1) p.col(1) << 0.68, 0.38;
  std::mt19937_64 rng(0x5eed + static_cast<std::uint64_t>(n));
  for (int i = 2; i < n; ++i) {
    const double a = uniform(rng, 0.0, 2 * M_PI), r = std::sqrt(uniform(rng, 0.0, 1.0));
    p.col(i) << 0.5 + 0.3 * r * std::cos(a), 0.55 + 0.28 * r * std::sin(a);
  }
  return p;
}

struct SyntheticFace {
  GrayImage image;
  FaceSample sample;
};

// Renders one Gaussian blob per landmark over a soft gradient. The face is the
// template scaled into `box`, jittered by a small similarity transform.
inline SyntheticFace synthetic_face(std::mt19937_64& rng, int n_landmarks, int width, int height, const BBox& box,
                                    double jitter = 1.0) {
  const Eigen::Matrix2Xd tpl = template_shape(n_landmarks);
  const double angle = jitter * uniform(rng, -0.15, 0.15);
  const double scale = 1.0 + jitter * uniform(rng, -0.08, 0.08);
  const Eigen::Vector2d shift(jitter * uniform(rng, -0.05, 0.05), jitter * uniform(rng, -0.05, 0.05));
  const Eigen::Vector2d c(0.5, 0.5);

  SyntheticFace f;
  f.sample.bbox = box;
  f.sample.landmarks.points.resize(2, n_landmarks);
  const Eigen::Matrix2d r = Eigen::Rotation2Dd(angle).toRotationMatrix() * scale;
  for (int i = 0; i < n_landmarks; ++i) {
    const Eigen::Vector2d u = c + shift + r * (tpl.col(i) - c);
    f.sample.landmarks.points.col(i) << box.x + u.x() * box.w, box.y + u.y() * box.h;
  }

  const double sigma = std::max(1.0, 0.025 * box.w);
  const double gx = uniform(rng, -0.2, 0.2), gy = uniform(rng, -0.2, 0.2);
  f.image.resize(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double v = 0.3 + gx * px / width + gy * py / height;
      for (int i = 0; i < n_landmarks; ++i) {
        const double dx = px - f.sample.landmarks.points(0, i), dy = py - f.sample.landmarks.points(1, i);
        v += (0.35 + 0.3 * (i % 3) / 2.0) * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      }
      f.image(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  f.sample.image = std::make_shared<const GrayImage>(f.image);
  return f;
}

// In-memory manifest of synthetic faces with eyes at 0 and 1.
inline DatasetManifest synthetic_manifest(std::uint64_t seed, int count, int n_landmarks, int side,
                                          double jitter = 1.0) {
  std::mt19937_64 rng(seed);
  DatasetManifest m;
  m.n_landmarks = n_landmarks;
  m.left_eye = 0;
  m.right_eye = 1;
  for (int k = 0; k < count; ++k) {
    SyntheticFace f = synthetic_face(rng, n_landmarks, side, side, {0, 0, double(side), double(side)}, jitter);
    f.sample.id = "f" + std::to_string(k);
    f.sample.image_path = "mem_" + std::to_string(k);
    m.entries.push_back(std::move(f.sample));
  }
  return m;
}

// Same faces written to disk as PGM files next to a manifest.
inline std::filesystem::path write_synthetic_dataset(const std::filesystem::path& dir, std::uint64_t seed, int count,
                                                     int n_landmarks, int side, double jitter = 1.0) {
  DatasetManifest m = synthetic_manifest(seed, count, n_landmarks, side, jitter);
  for (auto& s : m.entries) {
    s.image_path = s.id + ".pgm";
    write_pgm(dir / s.image_path, *s.image);
    s.image.reset();
  }
  const auto path = dir / "data.manifest";
  write_manifest(path, m);
  return path;
}

}  // namespace sdn::test

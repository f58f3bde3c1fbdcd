#pragma once

// Grayscale images as row-major Eigen float matrices with intensities in [0,1].
//
// Continuous pixel coordinates: pixel (row r, col c) covers [c, c+1) x [r, r+1)
// and its center sits at (c + 0.5, r + 0.5).

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>

namespace sdn {

using GrayImage = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ITU-R 601 luma.
constexpr float gray_from_rgb(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

// Reads PGM/PPM (P2, P3, P5, P6). Other formats go through OpenCV when the
// library was built with it. Color input is converted with gray_from_rgb.
GrayImage read_image(const std::filesystem::path& path);

// Binary 8-bit PGM (P5); values are clamped to [0,1] and rounded.
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

// Bilinear sample at a continuous point; outside the frame the nearest edge
// pixel is replicated.
float sample_bilinear(const GrayImage& image, double x, double y);

// Decoded images shared across samples that reference the same file.
class ImageCache {
 public:
  std::shared_ptr<const GrayImage> get(const std::filesystem::path& path);
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const GrayImage>> images_;
};

}  // namespace sdn

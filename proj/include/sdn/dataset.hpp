#pragma once

// Landmark annotations, dataset manifests and normalized network inputs.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sdn/image.hpp"
#include "sdn/tensor.hpp"

namespace sdn {

enum class CoordinateFrame { CropUnit, ImagePixels };

struct LandmarkSet {
  Eigen::Matrix2Xd points;  // one (x, y) column per landmark
  CoordinateFrame frame = CoordinateFrame::ImagePixels;

  int size() const { return static_cast<int>(points.cols()); }
  Eigen::Vector2d point(int i) const { return points.col(i); }

  friend bool operator==(const LandmarkSet& a, const LandmarkSet& b) {
    return a.frame == b.frame && a.points.cols() == b.points.cols() &&
           (a.points.array() == b.points.array()).all();
  }
};

// Axis-aligned box in pixels; (x, y) is the top-left corner.
struct BBox {
  double x = 0, y = 0, w = 0, h = 0;

  Eigen::Vector2d center() const { return {x + w / 2, y + h / 2}; }
  bool strictly_contains(const Eigen::Vector2d& p) const {
    return p.x() > x && p.x() < x + w && p.y() > y && p.y() < y + h;
  }
  bool strictly_contains(const Eigen::Matrix2Xd& points) const {
    for (Eigen::Index i = 0; i < points.cols(); ++i)
      if (!strictly_contains(Eigen::Vector2d(points.col(i)))) return false;
    return true;
  }
  double area() const { return w * h; }

  // "x,y,w,h"; throws ValidationError on malformed text or w, h <= 0.
  static BBox parse(const std::string& text);

  friend bool operator==(const BBox&, const BBox&) = default;
};

// One face: a box and landmarks in the sample's own pixel frame, plus the
// warp that maps that frame onto the stored source image. Source samples have
// an identity warp; augmented samples compose rotations, mirrors and stretches
// into it so no derived image ever needs to be written out.
struct FaceSample {
  std::string id;
  std::string image_path;
  std::shared_ptr<const GrayImage> image;  // in-memory buffer, preferred over image_path
  BBox bbox;
  LandmarkSet landmarks;
  std::string landmark_path;  // pts file; empty means inline in the manifest
  Eigen::Affine2d warp = Eigen::Affine2d::Identity();
  std::map<std::string, std::string> tags;

  Eigen::Matrix2Xd landmarks_in_source() const { return warp * landmarks.points; }

  // Compares everything except the in-memory image buffer.
  friend bool operator==(const FaceSample& a, const FaceSample& b) {
    return a.id == b.id && a.image_path == b.image_path && a.bbox == b.bbox && a.landmarks == b.landmarks &&
           a.landmark_path == b.landmark_path && a.warp.matrix() == b.warp.matrix() && a.tags == b.tags;
  }
};

struct DatasetManifest {
  int n_landmarks = 0;
  int left_eye = 0;
  int right_eye = 1;
  std::vector<int> mirror_perm;  // empty means identity
  std::vector<FaceSample> entries;
  std::filesystem::path base_dir;  // where relative paths resolve; not serialized

  // Throws ValidationError: eye indices, mirror involution, landmark counts, duplicate ids.
  void validate() const;
  std::vector<int> permutation() const;
  std::filesystem::path resolve(const std::string& path) const;

  // Same header, no entries.
  DatasetManifest header_only() const {
    DatasetManifest m = *this;
    m.entries.clear();
    return m;
  }

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.n_landmarks == b.n_landmarks && a.left_eye == b.left_eye && a.right_eye == b.right_eye &&
           a.mirror_perm == b.mirror_perm && a.entries == b.entries;
  }
};

struct NormalizedInput {
  Tensor pixels;  // [1, side, side], zero mean
  float subtracted_mean = 0.0f;
  Eigen::Affine2d crop_transform = Eigen::Affine2d::Identity();  // crop unit square -> source image pixels
};

// 300-W style pts: "version:", "n_points:", then "{", one "x y" per line, "}".
LandmarkSet parse_pts(const std::filesystem::path& path);
void write_pts(const std::filesystem::path& path, const LandmarkSet& landmarks);

// Unit square of `box` (in the sample frame) mapped to source image pixels.
Eigen::Affine2d crop_transform_for(const FaceSample& sample, const BBox& box);

// Crops `box`, resamples it bilinearly to side x side gray pixels (edge
// replication outside the image) and subtracts the crop's own mean.
NormalizedInput load_gray_crop(const FaceSample& sample, const BBox& box, int side = 64);

// Source image pixels <-> crop-relative unit coordinates.
LandmarkSet to_crop_frame(const LandmarkSet& landmarks, const Eigen::Affine2d& crop_transform);
LandmarkSet from_crop_frame(const LandmarkSet& landmarks, const Eigen::Affine2d& crop_transform);

// Landmark bounding box grown by `margin` of its width/height on every side.
// Fallback when a dataset ships without face boxes.
BBox tight_box(const LandmarkSet& landmarks, double margin = 0.05);

struct ManifestReadOptions {
  bool lenient = false;      // drop entries with missing files and report them as warnings
  bool check_images = true;  // require image files to exist
};

// Line format: sample_id TAB image_path TAB x,y,w,h TAB landmark_source TAB tags
// with header lines #n_landmarks=, #left_eye=, #right_eye=, #mirror_perm=.
// landmark_source is a pts path or "inline:x,y;x,y;...". tags is "-" or
// "key=value;key=value"; the warp of an augmented sample is "warp=a,b,c,d,e,f".
DatasetManifest read_manifest(const std::filesystem::path& path, const ManifestReadOptions& options = {},
                              std::vector<std::string>* warnings = nullptr);
// Written to a temporary file and renamed into place.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// Points every entry without an in-memory buffer at a shared decoded image.
void attach_images(DatasetManifest& manifest, ImageCache& cache);

// Shortest text that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& text);

// Left/right swap for the 68-point 300-W markup.
std::vector<int> mirror_permutation_68();

}  // namespace sdn

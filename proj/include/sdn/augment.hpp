#pragma once

// Three-stage geometric augmentation: box expansion scaled by the
// inter-pupil distance, rotation grids, stretching and mirroring, with a
// containment rule that drops any derived box a landmark falls out of, and
// hard-example selection for the last stage.
//
// Transforms never touch pixels. Each one maps the sample frame by an affine
// T: landmarks become T * landmarks and the sample's warp becomes warp * T^-1,
// so the crop loader renders the derived view straight from the source image.

#include <Eigen/Geometry>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdn/dataset.hpp"
#include "sdn/network.hpp"

namespace sdn {

enum class Stage { S1, S2, S3 };

std::string to_string(Stage stage);
Stage parse_stage(const std::string& text);  // "s1"/"S1"/"1", ...

struct Stretch {
  double sx = 1.0;
  double sy = 1.0;
  friend bool operator==(const Stretch&, const Stretch&) = default;
};

struct AugmentStageConfig {
  Stage stage = Stage::S1;
  double ratio_lo = 0.1;  // box expansion, in inter-pupil distances
  double ratio_hi = 0.5;
  int angle_range_deg = 50;  // angles run from -range to +range
  int angle_step_deg = 3;
  bool mirror = true;
  std::vector<Stretch> stretch_factors;  // empty: no stretching
  std::optional<double> hard_threshold;  // S3 only
  std::uint64_t rng_seed = 1;

  // S1: ratios [0.1, 0.5], +/-50 deg step 3.
  // S2: ratios [0.1, 0.3], +/-20 deg step 5, identity + four stretches.
  // S3: ratios [0.1, 0.3], +/-10 deg step 2, hard threshold 0.02.
  static AugmentStageConfig defaults(Stage stage);

  void validate() const;
  std::vector<int> angles() const;
};

double inter_pupil_distance(const LandmarkSet& landmarks, int left_idx, int right_idx);

// Grows every side by ratio * ipd around a fixed center.
BBox expand_box(const BBox& box, double ratio, double ipd);

// Applies T to the sample frame: landmarks <- T * landmarks, warp <- warp * T^-1.
FaceSample transform_sample(const FaceSample& sample, const Eigen::Affine2d& transform);

// All three act about the center of sample.bbox.
FaceSample rotate_sample(const FaceSample& sample, double angle_deg);
FaceSample mirror_sample(const FaceSample& sample, std::span<const int> permutation);
FaceSample stretch_sample(const FaceSample& sample, double sx, double sy);

struct Provenance {
  std::string sample_id;
  std::string source_id;
  double angle = 0.0;
  double ratio = 0.0;
  Stretch stretch;
  bool mirrored = false;
};

struct StageOutput {
  DatasetManifest manifest;
  std::vector<Provenance> provenance;
  std::size_t sources = 0;
  std::size_t discarded = 0;  // derived boxes dropped by the containment rule
  std::vector<std::string> warnings;
};

// Keeps the entries whose NRMSE on their own box exceeds threshold.
DatasetManifest select_hard_examples(const WeightStore& model, const DatasetManifest& manifest, double threshold,
                                     int threads = 1);

// For each source: for every grid angle draw one expansion ratio, expand,
// rotate, emit each stretch variant, drop those failing containment, then add
// the mirror image of every survivor. S3 first narrows the sources to hard
// examples of `model`. Output order follows source order for any thread count.
StageOutput run_stage(const DatasetManifest& manifest, const AugmentStageConfig& config,
                      const WeightStore* model = nullptr, int threads = 1);

// CSV: sample_id,source_id,angle,ratio,sx,sy,mirrored
void write_provenance(const std::filesystem::path& path, const std::vector<Provenance>& provenance);

}  // namespace sdn

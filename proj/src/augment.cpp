#include "sdn/augment.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "parallel.hpp"
#include "sdn/error.hpp"
#include "sdn/evaluator.hpp"

namespace sdn {

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::S1: return "s1";
    case Stage::S2: return "s2";
    case Stage::S3: return "s3";
  }
  return "?";
}

Stage parse_stage(const std::string& text) {
  if (text == "s1" || text == "S1" || text == "1") return Stage::S1;
  if (text == "s2" || text == "S2" || text == "2") return Stage::S2;
  if (text == "s3" || text == "S3" || text == "3") return Stage::S3;
  throw SpecError("unknown stage '" + text + "' (expected s1, s2 or s3)");
}

AugmentStageConfig AugmentStageConfig::defaults(Stage stage) {
  AugmentStageConfig c;
  c.stage = stage;
  switch (stage) {
    case Stage::S1:
      c.ratio_lo = 0.1, c.ratio_hi = 0.5;
      c.angle_range_deg = 50, c.angle_step_deg = 3;
      c.rng_seed = 1;
      break;
    case Stage::S2:
      c.ratio_lo = 0.1, c.ratio_hi = 0.3;
      c.angle_range_deg = 20, c.angle_step_deg = 5;
      c.stretch_factors = {{1.0, 1.0}, {0.85, 1.0}, {1.0, 0.85}, {1.15, 1.0}, {1.0, 1.15}};
      c.rng_seed = 2;
      break;
    case Stage::S3:
      c.ratio_lo = 0.1, c.ratio_hi = 0.3;
      c.angle_range_deg = 10, c.angle_step_deg = 2;
      c.hard_threshold = 0.02;
      c.rng_seed = 3;
      break;
  }
  return c;
}

void AugmentStageConfig::validate() const {
  if (!(ratio_lo >= 0.0) || !(ratio_lo <= ratio_hi))
    throw SpecError("augment: expansion ratio range must satisfy 0 <= lo <= hi");
  if (angle_step_deg < 1) throw SpecError("augment: angle step must be >= 1");
  if (angle_range_deg < 0) throw SpecError("augment: angle range must be >= 0");
  for (const auto& s : stretch_factors)
    if (!(s.sx > 0.0) || !(s.sy > 0.0)) throw SpecError("augment: stretch factors must be > 0");
}

std::vector<int> AugmentStageConfig::angles() const {
  std::vector<int> a;
  for (int deg = -angle_range_deg; deg <= angle_range_deg; deg += angle_step_deg) a.push_back(deg);
  return a;
}

double inter_pupil_distance(const LandmarkSet& landmarks, int left_idx, int right_idx) {
  if (left_idx < 0 || right_idx < 0 || left_idx >= landmarks.size() || right_idx >= landmarks.size())
    throw ValidationError("inter_pupil_distance: eye index out of range");
  const double d = (landmarks.points.col(left_idx) - landmarks.points.col(right_idx)).norm();
  if (!(d > 0.0)) throw ValidationError("inter_pupil_distance: eye points coincide (degenerate face)");
  return d;
}

BBox expand_box(const BBox& box, double ratio, double ipd) {
  const double grow = ratio * ipd;
  return {box.x - grow, box.y - grow, box.w + 2 * grow, box.h + 2 * grow};
}

FaceSample transform_sample(const FaceSample& sample, const Eigen::Affine2d& transform) {
  FaceSample out = sample;
  out.landmarks.points = transform * sample.landmarks.points;
  out.warp = sample.warp * transform.inverse(Eigen::Affine);
  out.landmark_path.clear();
  return out;
}

namespace {

Eigen::Affine2d about_center(const Eigen::Vector2d& c, const Eigen::Matrix2d& linear) {
  Eigen::Affine2d t = Eigen::Affine2d::Identity();
  t.linear() = linear;
  t.translation() = c - linear * c;
  return t;
}

}  // namespace

FaceSample rotate_sample(const FaceSample& sample, double angle_deg) {
  const double rad = angle_deg * std::numbers::pi / 180.0;
  return transform_sample(sample,
                          about_center(sample.bbox.center(), Eigen::Rotation2Dd(rad).toRotationMatrix()));
}

FaceSample mirror_sample(const FaceSample& sample, std::span<const int> permutation) {
  if (static_cast<int>(permutation.size()) != sample.landmarks.size())
    throw ValidationError("mirror_sample: permutation has " + std::to_string(permutation.size()) +
                          " entries, sample has " + std::to_string(sample.landmarks.size()) + " landmarks");
  FaceSample flipped = transform_sample(
      sample, about_center(sample.bbox.center(), Eigen::Vector2d(-1.0, 1.0).asDiagonal().toDenseMatrix()));
  FaceSample out = flipped;
  for (int i = 0; i < sample.landmarks.size(); ++i) {
    const int j = permutation[static_cast<std::size_t>(i)];
    if (j < 0 || j >= sample.landmarks.size()) throw ValidationError("mirror_sample: permutation index out of range");
    out.landmarks.points.col(i) = flipped.landmarks.points.col(j);
  }
  return out;
}

FaceSample stretch_sample(const FaceSample& sample, double sx, double sy) {
  if (!(sx > 0.0) || !(sy > 0.0)) throw ValidationError("stretch_sample: factors must be > 0");
  return transform_sample(sample, about_center(sample.bbox.center(), Eigen::Vector2d(sx, sy).asDiagonal().toDenseMatrix()));
}

DatasetManifest select_hard_examples(const WeightStore& model, const DatasetManifest& manifest, double threshold,
                                     int threads) {
  const std::vector<double> errors = per_image_errors(model, manifest, threads);
  DatasetManifest hard = manifest.header_only();
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (errors[i] > threshold) hard.entries.push_back(manifest.entries[i]);
  return hard;
}

namespace {

struct SourceResult {
  std::vector<FaceSample> samples;
  std::vector<Provenance> provenance;
  std::size_t discarded = 0;
};

std::string angle_tag(int deg) { return (deg < 0 ? "m" : "p") + std::to_string(std::abs(deg)); }

SourceResult augment_source(const DatasetManifest& manifest, const FaceSample& source, std::size_t index,
                            const AugmentStageConfig& cfg, const std::vector<int>& perm) {
  SourceResult r;
  const double ipd = inter_pupil_distance(source.landmarks, manifest.left_eye, manifest.right_eye);

  // Independent stream per source so results do not depend on scheduling.
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.rng_seed), static_cast<std::uint32_t>(cfg.rng_seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(std::uint64_t(index) >> 32)};
  std::mt19937_64 rng(seq);
  auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

  FaceSample base = source;
  if (!base.image_path.empty()) base.image_path = manifest.resolve(base.image_path).string();
  base.landmark_path.clear();
  base.tags["src"] = source.id;

  const std::vector<Stretch> stretches =
      cfg.stretch_factors.empty() ? std::vector<Stretch>{Stretch{}} : cfg.stretch_factors;

  for (int angle : cfg.angles()) {
    const double ratio = cfg.ratio_lo + (cfg.ratio_hi - cfg.ratio_lo) * uniform();
    FaceSample expanded = base;
    expanded.bbox = expand_box(source.bbox, ratio, ipd);
    const FaceSample rotated = rotate_sample(expanded, angle);

    for (std::size_t k = 0; k < stretches.size(); ++k) {
      const Stretch& st = stretches[k];
      FaceSample derived = (st.sx == 1.0 && st.sy == 1.0) ? rotated : stretch_sample(rotated, st.sx, st.sy);
      if (!derived.bbox.strictly_contains(derived.landmarks.points)) {
        ++r.discarded;
        continue;
      }
      const std::string stem = source.id + "_a" + angle_tag(angle) + "_s" + std::to_string(k);
      derived.id = stem + "_m0";
      r.provenance.push_back({derived.id, source.id, double(angle), ratio, st, false});
      if (cfg.mirror) {
        FaceSample mirrored = mirror_sample(derived, perm);
        mirrored.id = stem + "_m1";
        if (mirrored.bbox.strictly_contains(mirrored.landmarks.points)) {
          r.samples.push_back(std::move(derived));
          r.samples.push_back(std::move(mirrored));
          r.provenance.push_back({stem + "_m1", source.id, double(angle), ratio, st, true});
          continue;
        }
        ++r.discarded;
      }
      r.samples.push_back(std::move(derived));
    }
  }
  return r;
}

}  // namespace

StageOutput run_stage(const DatasetManifest& manifest, const AugmentStageConfig& config, const WeightStore* model,
                      int threads) {
  config.validate();
  manifest.validate();

  StageOutput out;
  DatasetManifest sources_manifest = manifest;
  if (config.stage == Stage::S3) {
    if (!model) throw SpecError("stage s3 needs a trained model to select hard examples");
    sources_manifest = select_hard_examples(*model, manifest, config.hard_threshold.value_or(0.02), threads);
  }
  const auto& sources = sources_manifest.entries;
  const std::vector<int> perm = manifest.permutation();

  std::vector<SourceResult> results(sources.size());
  detail::parallel_for(sources.size(), threads, [&](std::size_t i) {
    results[i] = augment_source(sources_manifest, sources[i], i, config, perm);
  });

  out.manifest = manifest.header_only();
  out.sources = sources.size();
  for (auto& r : results) {
    out.discarded += r.discarded;
    for (auto& s : r.samples) out.manifest.entries.push_back(std::move(s));
    for (auto& p : r.provenance) out.provenance.push_back(std::move(p));
  }
  if (out.manifest.entries.empty())
    out.warnings.push_back("stage " + to_string(config.stage) + " produced no samples from " +
                           std::to_string(sources.size()) + " sources");
  return out;
}

void write_provenance(const std::filesystem::path& path, const std::vector<Provenance>& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "sample_id,source_id,angle,ratio,sx,sy,mirrored\n";
  for (const auto& p : provenance)
    out << p.sample_id << "," << p.source_id << "," << format_double(p.angle) << "," << format_double(p.ratio) << ","
        << format_double(p.stretch.sx) << "," << format_double(p.stretch.sy) << "," << (p.mirrored ? 1 : 0) << "\n";
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace sdn

#include "sdn/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "parallel.hpp"
#include "sdn/error.hpp"

namespace sdn {

double nrmse(const LandmarkSet& pred, const LandmarkSet& gt, int left_idx, int right_idx) {
  if (pred.size() != gt.size() || gt.size() < 1)
    throw ShapeError("nrmse: prediction has " + std::to_string(pred.size()) + " points, ground truth " +
                     std::to_string(gt.size()));
  if (left_idx < 0 || right_idx < 0 || left_idx >= gt.size() || right_idx >= gt.size())
    throw ValidationError("nrmse: eye index out of range");
  const double ex = gt.points(0, left_idx) - gt.points(0, right_idx);
  const double ey = gt.points(1, left_idx) - gt.points(1, right_idx);
  const double interocular = std::sqrt(ex * ex + ey * ey);
  if (!(interocular > 0.0)) throw ValidationError("nrmse: ground-truth eye corners coincide");

  double sum = 0.0;
  for (int i = 0; i < gt.size(); ++i) {
    const double dx = pred.points(0, i) - gt.points(0, i);
    const double dy = pred.points(1, i) - gt.points(1, i);
    sum += std::sqrt(dx * dx + dy * dy);
  }
  return sum / gt.size() / interocular;
}

double failure_rate(std::span<const double> errors, double threshold) {
  if (errors.empty()) throw ValidationError("failure_rate: no errors given");
  const auto failures = std::count_if(errors.begin(), errors.end(), [&](double e) { return e > threshold; });
  return 100.0 * static_cast<double>(failures) / static_cast<double>(errors.size());
}

std::vector<CedPoint> ced_curve(std::span<const double> errors, std::span<const double> grid) {
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw ValidationError("ced_curve: grid must be strictly increasing");
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<CedPoint> curve;
  curve.reserve(grid.size());
  for (double t : grid) {
    const auto below = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    curve.push_back({t, sorted.empty() ? 0.0 : static_cast<double>(below) / static_cast<double>(sorted.size())});
  }
  return curve;
}

std::vector<double> default_ced_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 50; ++i) grid.push_back(i * 0.002);
  return grid;
}

TimingStats time_forward(const WeightStore& ws, int n_warmup, int n_runs) {
  if (n_runs < 1) throw SpecError("time_forward: n_runs must be >= 1");
  const int side = ws.spec.input_side;
  Tensor image({1, side, side});
  std::mt19937 rng(1234);
  for (Eigen::Index i = 0; i < image.size(); ++i) image[i] = static_cast<float>(rng() % 256) / 255.0f - 0.5f;

  for (int i = 0; i < n_warmup; ++i) forward_sample(ws, image);
  std::vector<double> ms;
  for (int i = 0; i < n_runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor out = forward_sample(ws, image);
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  TimingStats stats;
  stats.runs = n_runs;
  for (double v : ms) stats.mean_ms += v;
  stats.mean_ms /= n_runs;
  std::sort(ms.begin(), ms.end());
  stats.median_ms = n_runs % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
  return stats;
}

LandmarkSet predict_landmarks(const WeightStore& ws, const FaceSample& sample, const BBox& box) {
  const NormalizedInput input = load_gray_crop(sample, box, ws.spec.input_side);
  const Tensor out = forward_sample(ws, input.pixels);
  LandmarkSet pred;
  pred.points.resize(2, ws.spec.n_landmarks);
  for (int i = 0; i < ws.spec.n_landmarks; ++i) {
    pred.points(0, i) = box.x + double(out[2 * i]) * box.w;
    pred.points(1, i) = box.y + double(out[2 * i + 1]) * box.h;
  }
  return pred;
}

std::vector<double> per_image_errors(const WeightStore& ws, const DatasetManifest& manifest, int threads) {
  if (manifest.n_landmarks != ws.spec.n_landmarks)
    throw SpecMismatchError("model predicts " + std::to_string(ws.spec.n_landmarks) + " landmarks, manifest has " +
                            std::to_string(manifest.n_landmarks));
  DatasetManifest local = manifest;
  ImageCache cache;
  attach_images(local, cache);
  std::vector<double> errors(local.entries.size());
  detail::parallel_for(local.entries.size(), threads, [&](std::size_t i) {
    const FaceSample& s = local.entries[i];
    errors[i] = nrmse(predict_landmarks(ws, s, s.bbox), s.landmarks, manifest.left_eye, manifest.right_eye);
  });
  return errors;
}

EvalReport evaluate(const WeightStore& ws, const DatasetManifest& manifest, const EvalOptions& options) {
  EvalReport r;
  r.failure_threshold = options.failure_threshold;
  r.per_image_errors = per_image_errors(ws, manifest, options.threads);
  for (const auto& s : manifest.entries) r.sample_ids.push_back(s.id);
  r.total_count = static_cast<int>(r.per_image_errors.size());
  double sum = 0.0;
  for (double e : r.per_image_errors) {
    sum += e;
    if (e > options.failure_threshold) ++r.failure_count;
  }
  r.mean_nrmse = r.total_count ? sum / r.total_count : 0.0;
  r.ced = ced_curve(r.per_image_errors, options.ced_grid);
  if (options.timing_runs > 0) r.timing = time_forward(ws, options.timing_warmup, options.timing_runs);
  return r;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace

void write_ced_csv(const std::filesystem::path& path, const std::vector<CedPoint>& ced) {
  std::string text = "threshold,fraction\n";
  for (const auto& p : ced) text += format_double(p.threshold) + "," + format_double(p.fraction) + "\n";
  write_text(path, text);
}

void write_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string errors = "sample_id,nrmse\n";
  for (std::size_t i = 0; i < report.per_image_errors.size(); ++i)
    errors += report.sample_ids[i] + "," + format_double(report.per_image_errors[i]) + "\n";
  write_text(dir / "errors.csv", errors);
  write_ced_csv(dir / "ced.csv", report.ced);
  write_text(dir / "summary.csv", "mean_nrmse,failure_rate,fps\n" + format_double(report.mean_nrmse) + "," +
                                      format_double(report.failure_rate()) + "," + format_double(report.fps()) +
                                      "\n");
}

std::vector<std::pair<std::string, double>> read_errors_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::pair<std::string, double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("sample_id", 0) == 0) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw HeaderError("expected sample_id,nrmse", line_no);
    try {
      rows.emplace_back(line.substr(0, comma), parse_double(line.substr(comma + 1)));
    } catch (const ValidationError&) {
      throw NumberError("bad error value in '" + line + "'", line_no);
    }
  }
  return rows;
}

}  // namespace sdn

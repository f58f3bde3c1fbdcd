#pragma once

// Inter-ocular normalized error, failure rate, cumulative error
// distribution and forward-pass latency.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sdn/dataset.hpp"
#include "sdn/network.hpp"

namespace sdn {

// Mean per-point Euclidean error divided by the ground-truth distance between
// landmarks left_idx and right_idx. Both sets must share a frame.
double nrmse(const LandmarkSet& pred, const LandmarkSet& gt, int left_idx, int right_idx);

// Percentage of errors strictly above threshold.
double failure_rate(std::span<const double> errors, double threshold = 0.10);

struct CedPoint {
  double threshold;
  double fraction;  // share of errors <= threshold
};

std::vector<CedPoint> ced_curve(std::span<const double> errors, std::span<const double> grid);
// 0, 0.002, ..., 0.100
std::vector<double> default_ced_grid();

struct TimingStats {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  int runs = 0;
};

// Single-image forward passes on a fixed pseudo-random input.
TimingStats time_forward(const WeightStore& ws, int n_warmup, int n_runs);

// Network prediction for `box` of `sample`, in the sample's pixel frame.
LandmarkSet predict_landmarks(const WeightStore& ws, const FaceSample& sample, const BBox& box);

// Per-entry NRMSE of the prediction on the entry's own box, in manifest order.
std::vector<double> per_image_errors(const WeightStore& ws, const DatasetManifest& manifest, int threads = 1);

struct EvalReport {
  std::vector<std::string> sample_ids;
  std::vector<double> per_image_errors;
  double mean_nrmse = 0.0;  // sum in manifest order, divided by the count
  double failure_threshold = 0.10;
  int failure_count = 0;
  int total_count = 0;
  std::vector<CedPoint> ced;
  TimingStats timing;

  double failure_rate() const { return total_count ? 100.0 * failure_count / total_count : 0.0; }
  double fps() const { return timing.mean_ms > 0 ? 1000.0 / timing.mean_ms : 0.0; }
};

struct EvalOptions {
  double failure_threshold = 0.10;
  std::vector<double> ced_grid = default_ced_grid();
  int threads = 1;
  int timing_warmup = 2;
  int timing_runs = 10;  // 0 skips timing
};

EvalReport evaluate(const WeightStore& ws, const DatasetManifest& manifest, const EvalOptions& options = {});

// errors.csv (sample_id,nrmse), ced.csv (threshold,fraction),
// summary.csv (mean_nrmse,failure_rate,fps).
void write_report(const EvalReport& report, const std::filesystem::path& dir);
void write_ced_csv(const std::filesystem::path& path, const std::vector<CedPoint>& ced);
std::vector<std::pair<std::string, double>> read_errors_csv(const std::filesystem::path& path);

}  // namespace sdn

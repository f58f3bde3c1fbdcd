#pragma once

// Mini-batch SGD over a manifest, stage chaining with fine-tuning, and
// checkpointing.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sdn/augment.hpp"
#include "sdn/dataset.hpp"
#include "sdn/lr_policy.hpp"
#include "sdn/network.hpp"
#include "sdn/weight_io.hpp"

namespace sdn {

struct StageSchedule {
  std::string name = "s1";
  std::filesystem::path data_manifest;
  LrPolicy policy;
  int batch_size = 64;
  std::int64_t max_iterations = 60000;
  std::optional<std::filesystem::path> init_from;
  std::int64_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::uint64_t shuffle_seed = 1;
  double momentum = 0.0;
  LossKind loss = LossKind::Norm;
  std::vector<std::string> frozen_layers;  // layer ids excluded from updates
  std::filesystem::path checkpoint_dir;    // empty: write nothing

  // Stage defaults: s1 fixed 0.001 for 60k iterations, s2 step (gamma 0.1,
  // step 20000) for 60k, s3 inv (gamma 1e-5, power 0.75) for 20k.
  static StageSchedule defaults(Stage stage);

  void validate() const;
};

struct TrainingLog {
  struct Step {
    std::int64_t iter;
    double lr;
    double loss;
  };
  struct Saved {
    std::int64_t iter;
    std::filesystem::path path;
  };
  std::string stage;
  std::vector<Step> steps;
  std::vector<Saved> checkpoints;

  // iter,lr,loss
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  Checkpoint state;
  TrainingLog log;
};

// Deterministic batch order: every epoch is a seeded Fisher-Yates permutation
// of the samples; a trailing partial batch is filled from the head of the same
// epoch. Batch `iter` depends on nothing but (seed, sample count, batch size).
std::vector<std::size_t> batch_indices(std::uint64_t shuffle_seed, std::size_t sample_count, int batch_size,
                                       std::int64_t iter);

// Runs iterations start.iteration .. schedule.max_iterations - 1. Pass a
// checkpoint read from disk to resume; pass iteration 0 to fine-tune.
// Throws NumericalError on a non-finite loss.
TrainResult train_stage(Checkpoint start, const StageSchedule& schedule, const DatasetManifest& data);

// Loads schedule.data_manifest.
TrainResult train_stage(Checkpoint start, const StageSchedule& schedule);

// Weights to start a stage from: init_from if set (iteration reset to 0),
// else a fresh network.
Checkpoint initial_state(const StageSchedule& schedule, const NetworkSpec& spec);

struct ThreeStageConfig {
  NetworkSpec network;
  std::array<StageSchedule, 3> stages{StageSchedule::defaults(Stage::S1), StageSchedule::defaults(Stage::S2),
                                      StageSchedule::defaults(Stage::S3)};
  std::filesystem::path source_manifest;  // original training set, mined for hard examples
  AugmentStageConfig hard_augment = AugmentStageConfig::defaults(Stage::S3);
  std::filesystem::path out_dir = ".";
  int threads = 1;
};

struct ThreeStageResult {
  WeightStore weights;
  std::vector<TrainingLog> logs;
  std::vector<std::filesystem::path> final_checkpoints;
  std::vector<std::string> notices;
};

// s1 -> s2 -> (hard-example augmentation) -> s3. Stage k+1 starts from stage
// k's final checkpoint unless it names its own init_from. S3 is skipped, with a
// notice, when no training sample is hard.
ThreeStageResult run_three_stage(const ThreeStageConfig& config);

// INI-style config: [network] and [pipeline] sections plus one section per
// stage ([s1], [s2], [s3]) whose keys are the StageSchedule field names.
// Relative paths resolve against the config file's directory.
ThreeStageConfig read_stage_config(const std::filesystem::path& path);

// Grammar summary printed by the CLI's --help.
std::string stage_config_grammar();

}  // namespace sdn

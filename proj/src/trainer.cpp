#include "sdn/trainer.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "sdn/error.hpp"

namespace sdn {

StageSchedule StageSchedule::defaults(Stage stage) {
  StageSchedule s;
  s.name = to_string(stage);
  switch (stage) {
    case Stage::S1:
      s.policy = {LrKind::Fixed, 0.001, 0.1, 20000, 0.75};
      s.max_iterations = 60000;
      s.shuffle_seed = 1;
      break;
    case Stage::S2:
      s.policy = {LrKind::Step, 0.001, 0.1, 20000, 0.75};
      s.max_iterations = 60000;
      s.shuffle_seed = 2;
      break;
    case Stage::S3:
      s.policy = {LrKind::Inv, 0.001, 0.00001, 20000, 0.75};
      s.max_iterations = 20000;
      s.shuffle_seed = 3;
      break;
  }
  return s;
}

void StageSchedule::validate() const {
  policy.validate();
  if (batch_size < 1) throw SpecError("stage " + name + ": batch_size must be >= 1");
  if (max_iterations < 1) throw SpecError("stage " + name + ": max_iterations must be >= 1");
  if (checkpoint_every < 0) throw SpecError("stage " + name + ": checkpoint_every must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw SpecError("stage " + name + ": momentum must be in [0, 1)");
}

void TrainingLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "iter,lr,loss\n";
  for (const auto& s : steps) out << s.iter << "," << format_double(s.lr) << "," << format_double(s.loss) << "\n";
  if (!out) throw IoError("cannot write " + path.string());
}

std::vector<std::size_t> batch_indices(std::uint64_t shuffle_seed, std::size_t sample_count, int batch_size,
                                       std::int64_t iter) {
  if (sample_count == 0) throw ValidationError("cannot draw batches from an empty dataset");
  const std::size_t b = static_cast<std::size_t>(batch_size);
  const std::uint64_t per_epoch = (sample_count + b - 1) / b;
  const std::uint64_t epoch = static_cast<std::uint64_t>(iter) / per_epoch;
  const std::uint64_t slot = static_cast<std::uint64_t>(iter) % per_epoch;

  std::vector<std::size_t> order(sample_count);
  for (std::size_t i = 0; i < sample_count; ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(shuffle_seed), static_cast<std::uint32_t>(shuffle_seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  for (std::size_t i = sample_count - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);

  std::vector<std::size_t> batch(b);
  for (std::size_t k = 0; k < b; ++k) batch[k] = order[(slot * b + k) % sample_count];
  return batch;
}

namespace {

struct Prepared {
  Tensor pixels;
  Eigen::VectorXf target;
};

Prepared prepare(const FaceSample& s, int side) {
  const NormalizedInput in = load_gray_crop(s, s.bbox, side);
  const LandmarkSet unit = to_crop_frame({s.landmarks_in_source(), CoordinateFrame::ImagePixels}, in.crop_transform);
  Eigen::VectorXf target(2 * unit.size());
  for (int i = 0; i < unit.size(); ++i) {
    target[2 * i] = static_cast<float>(unit.points(0, i));
    target[2 * i + 1] = static_cast<float>(unit.points(1, i));
  }
  return {in.pixels, target};
}

// Keeps every crop in memory when the set is small enough.
constexpr Eigen::Index kCropCacheFloats = Eigen::Index(1) << 25;

std::string checkpoint_name(const StageSchedule& s, std::int64_t iter, bool final) {
  return s.name + (final ? "_final" : "_iter" + std::to_string(iter)) + ".sdnw";
}

}  // namespace

TrainResult train_stage(Checkpoint start, const StageSchedule& schedule, const DatasetManifest& data) {
  schedule.validate();
  check_structure(start.weights);
  const NetworkSpec& spec = start.weights.spec;
  if (data.n_landmarks != spec.n_landmarks)
    throw SpecMismatchError("stage " + schedule.name + ": manifest has " + std::to_string(data.n_landmarks) +
                            " landmarks, network predicts " + std::to_string(spec.n_landmarks));
  if (data.entries.empty()) throw ValidationError("stage " + schedule.name + ": training manifest is empty");
  for (const auto& id : schedule.frozen_layers)
    if (!start.weights.find(id)) throw SpecError("stage " + schedule.name + ": unknown frozen layer '" + id + "'");
  if (schedule.momentum > 0.0 && !start.velocity) {
    start.velocity = start.weights;
    for (auto& l : start.velocity->layers)
      std::visit([](auto& p) { p.weights.values().setZero(), p.bias.values().setZero(); }, l.params);
  }
  if (!schedule.checkpoint_dir.empty()) std::filesystem::create_directories(schedule.checkpoint_dir);

  DatasetManifest local = data;
  ImageCache cache;
  attach_images(local, cache);
  const int side = spec.input_side;
  const int out_dim = spec.output_dim();
  const std::size_t m = local.entries.size();

  std::vector<Prepared> cached;
  if (Eigen::Index(m) * side * side <= kCropCacheFloats) {
    cached.reserve(m);
    for (const auto& s : local.entries) cached.push_back(prepare(s, side));
  }

  TrainResult result{std::move(start), {}};
  result.log.stage = schedule.name;
  Checkpoint& state = result.state;
  const int b_count = schedule.batch_size;

  auto save = [&](std::int64_t iter, bool final) {
    if (schedule.checkpoint_dir.empty()) return;
    const auto path = schedule.checkpoint_dir / checkpoint_name(schedule, iter, final);
    Checkpoint ck = state;
    ck.iteration = iter;
    save_checkpoint(ck, path);
    result.log.checkpoints.push_back({iter, path});
  };

  Tensor batch({b_count, 1, side, side});
  Tensor gt({b_count, out_dim});
  for (std::int64_t iter = state.iteration; iter < schedule.max_iterations; ++iter) {
    const auto idx = batch_indices(schedule.shuffle_seed, m, b_count, iter);
    for (int b = 0; b < b_count; ++b) {
      const std::size_t i = idx[static_cast<std::size_t>(b)];
      const Prepared p = cached.empty() ? prepare(local.entries[i], side) : cached[i];
      batch.values().segment(Eigen::Index(b) * side * side, side * side) = p.pixels.values();
      gt.values().segment(Eigen::Index(b) * out_dim, out_dim) = p.target;
    }

    const double lr = lr_at(schedule.policy, iter);
    const BackwardResult<float> step = backward(state.weights, batch, gt, schedule.loss);
    if (!std::isfinite(step.loss)) {
      std::ostringstream msg;
      msg << "stage " << schedule.name << ": non-finite loss at iter " << iter << " (lr " << lr << ", batch:";
      for (std::size_t i : idx) msg << " " << local.entries[i].id;
      msg << ")";
      throw NumericalError(msg.str());
    }
    result.log.steps.push_back({iter, lr, step.loss});

    for (std::size_t li = 0; li < state.weights.layers.size(); ++li) {
      auto& layer = state.weights.layers[li];
      if (std::find(schedule.frozen_layers.begin(), schedule.frozen_layers.end(), layer.id) !=
          schedule.frozen_layers.end())
        continue;
      std::visit(
          [&](auto& p) {
            using P = std::decay_t<decltype(p)>;
            const auto& g = std::get<P>(step.grads.layers[li].params);
            if (schedule.momentum > 0.0) {
              auto& v = std::get<P>(state.velocity->layers[li].params);
              sgd_momentum_update(p.weights, g.weights, v.weights, lr, schedule.momentum);
              sgd_momentum_update(p.bias, g.bias, v.bias, lr, schedule.momentum);
            } else {
              sgd_update(p.weights, g.weights, lr);
              sgd_update(p.bias, g.bias, lr);
            }
          },
          layer.params);
    }
    state.iteration = iter + 1;
    if (schedule.checkpoint_every > 0 && state.iteration % schedule.checkpoint_every == 0 &&
        state.iteration < schedule.max_iterations)
      save(state.iteration, false);
  }
  save(state.iteration, true);
  return result;
}

TrainResult train_stage(Checkpoint start, const StageSchedule& schedule) {
  return train_stage(std::move(start), schedule, read_manifest(schedule.data_manifest));
}

Checkpoint initial_state(const StageSchedule& schedule, const NetworkSpec& spec) {
  if (!schedule.init_from) return {build_network(spec), 0, std::nullopt};
  Checkpoint ck = load_checkpoint(*schedule.init_from, spec.n_landmarks);
  if (!(ck.weights.spec == spec))
    throw SpecMismatchError("stage " + schedule.name + ": " + schedule.init_from->string() +
                            " was trained with a different network spec");
  ck.iteration = 0;
  ck.velocity.reset();
  return ck;
}

ThreeStageResult run_three_stage(const ThreeStageConfig& config) {
  ThreeStageResult out;
  std::filesystem::create_directories(config.out_dir);
  std::optional<std::filesystem::path> previous;

  auto run = [&](StageSchedule schedule, const DatasetManifest* data) {
    if (!schedule.init_from && previous) schedule.init_from = previous;
    if (schedule.checkpoint_dir.empty()) schedule.checkpoint_dir = config.out_dir;
    try {
      Checkpoint start = initial_state(schedule, config.network);
      TrainResult r = data ? train_stage(std::move(start), schedule, *data) : train_stage(std::move(start), schedule);
      r.log.write_csv(config.out_dir / (schedule.name + "_log.csv"));
      previous = r.log.checkpoints.back().path;
      out.final_checkpoints.push_back(*previous);
      out.weights = std::move(r.state.weights);
      out.logs.push_back(std::move(r.log));
    } catch (const NumericalError& e) {
      throw NumericalError("stage " + schedule.name + " failed: " + e.what());
    } catch (const Error& e) {
      throw Error("stage " + schedule.name + " failed: " + e.what());
    } catch (const std::filesystem::filesystem_error& e) {
      throw Error("stage " + schedule.name + " failed: " + e.what());
    }
  };

  run(config.stages[0], nullptr);
  run(config.stages[1], nullptr);

  StageSchedule s3 = config.stages[2];
  DatasetManifest hard_data;
  try {
    const DatasetManifest source = read_manifest(config.source_manifest);
    StageOutput aug = run_stage(source, config.hard_augment, &out.weights, config.threads);
    hard_data = std::move(aug.manifest);
    hard_data.base_dir = source.base_dir;
    if (s3.data_manifest.empty()) s3.data_manifest = config.out_dir / (s3.name + ".manifest");
    if (!hard_data.entries.empty()) {
      write_manifest(s3.data_manifest, hard_data);
      write_provenance(s3.data_manifest.string() + ".prov", aug.provenance);
    }
  } catch (const Error& e) {
    throw Error("stage " + s3.name + " failed: " + e.what());
  }
  if (hard_data.entries.empty()) {
    out.notices.push_back("stage " + s3.name + " skipped: no hard examples above threshold " +
                          format_double(config.hard_augment.hard_threshold.value_or(0.02)));
    return out;
  }
  run(s3, &hard_data);
  return out;
}

}  // namespace sdn

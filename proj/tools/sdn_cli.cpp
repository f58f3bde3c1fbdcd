// sdn: augment, train, eval, detect and curve from the command line.
//
// Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "sdn/augment.hpp"
#include "sdn/dataset.hpp"
#include "sdn/error.hpp"
#include "sdn/evaluator.hpp"
#include "sdn/trainer.hpp"
#include "sdn/weight_io.hpp"

namespace {

constexpr int kUsage = 2;
constexpr int kNumerical = 3;

const char* kManifestGrammar = R"(Manifest (UTF-8, one record per line):
  #n_landmarks=N            required header
  #left_eye=I               eye corner indices used for normalization
  #right_eye=J
  #mirror_perm=p0,p1,...    left/right landmark swap, must be an involution
  ID<TAB>IMAGE<TAB>x,y,w,h<TAB>LANDMARKS<TAB>TAGS
    LANDMARKS  pts file path, or inline:x,y;x,y;...
    TAGS       - or key=value;key=value (warp=a,b,c,d,e,f maps the sample
               frame onto IMAGE for augmented samples)
  Relative paths resolve against the manifest's directory.
)";

int verbosity = 1;

void info(const std::string& line) {
  if (verbosity > 0) std::cerr << line << "\n";
}

struct AugmentArgs {
  std::string manifest, out, model, stage = "s1";
  std::optional<std::uint64_t> seed;
  std::optional<double> hard_threshold;
  int threads = 1;
};

int cmd_augment(const AugmentArgs& a) {
  sdn::AugmentStageConfig cfg = sdn::AugmentStageConfig::defaults(sdn::parse_stage(a.stage));
  if (a.seed) cfg.rng_seed = *a.seed;
  if (a.hard_threshold) cfg.hard_threshold = *a.hard_threshold;
  if (cfg.stage == sdn::Stage::S3 && a.model.empty()) {
    std::cerr << "error: --stage s3 selects hard examples and needs --model WEIGHTS\n";
    return kUsage;
  }
  const sdn::DatasetManifest source = sdn::read_manifest(a.manifest);
  std::optional<sdn::WeightStore> model;
  if (!a.model.empty()) model = sdn::load_weights(a.model, source.n_landmarks);

  const sdn::StageOutput out = sdn::run_stage(source, cfg, model ? &*model : nullptr, a.threads);
  sdn::write_manifest(a.out, out.manifest);
  sdn::write_provenance(a.out + ".prov", out.provenance);
  for (const auto& w : out.warnings) std::cerr << "warning: " << w << "\n";
  info(sdn::to_string(cfg.stage) + ": " + std::to_string(out.sources) + " sources -> " +
       std::to_string(out.manifest.entries.size()) + " samples (" + std::to_string(out.discarded) + " discarded)");
  return 0;
}

struct TrainArgs {
  std::string config, out, stage, resume, manifest;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> iterations;
  int threads = 0;
};

int cmd_train(const TrainArgs& a) {
  sdn::ThreeStageConfig cfg = sdn::read_stage_config(a.config);
  if (!a.out.empty()) cfg.out_dir = a.out;
  if (a.seed) cfg.network.seed = *a.seed;
  if (a.threads > 0) cfg.threads = a.threads;
  for (auto& s : cfg.stages) {
    if (a.iterations) s.max_iterations = *a.iterations;
    if (s.checkpoint_dir.empty()) s.checkpoint_dir = cfg.out_dir;
  }

  if (a.stage.empty()) {
    if (!a.resume.empty() || !a.manifest.empty()) {
      std::cerr << "error: --resume and --manifest need --stage\n";
      return kUsage;
    }
    const sdn::ThreeStageResult r = sdn::run_three_stage(cfg);
    for (const auto& n : r.notices) info(n);
    for (const auto& p : r.final_checkpoints) std::cout << p.string() << "\n";
    return 0;
  }

  sdn::StageSchedule schedule = cfg.stages[static_cast<std::size_t>(sdn::parse_stage(a.stage))];
  if (!a.manifest.empty()) schedule.data_manifest = a.manifest;
  if (schedule.data_manifest.empty()) {
    std::cerr << "error: stage " << schedule.name << " has no data_manifest (set it in the config or pass --manifest)\n";
    return kUsage;
  }
  std::filesystem::create_directories(cfg.out_dir);
  sdn::Checkpoint start = a.resume.empty() ? sdn::initial_state(schedule, cfg.network)
                                           : sdn::load_checkpoint(a.resume, cfg.network.n_landmarks);
  if (!(start.weights.spec == cfg.network)) {
    std::cerr << "error: " << a.resume << " does not match the [network] section of the config\n";
    return kUsage;
  }
  const sdn::TrainResult r = sdn::train_stage(std::move(start), schedule);
  r.log.write_csv(cfg.out_dir / (schedule.name + "_log.csv"));
  if (!r.log.steps.empty())
    info(schedule.name + ": iter " + std::to_string(r.log.steps.back().iter) + " loss " +
         sdn::format_double(r.log.steps.back().loss));
  for (const auto& c : r.log.checkpoints) std::cout << c.path.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string weights, manifest, out;
  double failure_threshold = 0.10;
  int threads = 1;
  int timing_runs = 10;
};

int cmd_eval(const EvalArgs& a) {
  const sdn::DatasetManifest manifest = sdn::read_manifest(a.manifest);
  const sdn::WeightStore ws = sdn::load_weights(a.weights, manifest.n_landmarks);
  sdn::EvalOptions opt;
  opt.failure_threshold = a.failure_threshold;
  opt.threads = a.threads;
  opt.timing_runs = a.timing_runs;
  const sdn::EvalReport r = sdn::evaluate(ws, manifest, opt);
  sdn::write_report(r, a.out);
  std::printf("images        %d\n", r.total_count);
  std::printf("mean NRMSE    %.6f (%.2f %%)\n", r.mean_nrmse, 100.0 * r.mean_nrmse);
  std::printf("failure rate  %.2f %% (%d of %d above %.2f)\n", r.failure_rate(), r.failure_count, r.total_count,
              r.failure_threshold);
  if (a.timing_runs > 0)
    std::printf("forward       %.3f ms mean, %.3f ms median, %.1f fps\n", r.timing.mean_ms, r.timing.median_ms,
                r.fps());
  return 0;
}

struct DetectArgs {
  std::string weights, image, bbox;
};

int cmd_detect(const DetectArgs& a) {
  sdn::BBox box;
  try {
    box = sdn::BBox::parse(a.bbox);
  } catch (const sdn::ValidationError& e) {
    std::cerr << "error: --bbox: " << e.what() << "\n";
    return kUsage;
  }
  const sdn::WeightStore ws = sdn::load_weights(a.weights);
  sdn::FaceSample sample;
  sample.id = a.image;
  sample.image_path = a.image;
  sample.bbox = box;
  const sdn::LandmarkSet pred = sdn::predict_landmarks(ws, sample, box);
  for (int i = 0; i < pred.size(); ++i)
    std::cout << sdn::format_double(pred.points(0, i)) << " " << sdn::format_double(pred.points(1, i)) << "\n";
  return 0;
}

struct CurveArgs {
  std::string errors, out;
  double grid_max = 0.10;
  double grid_step = 0.002;
};

int cmd_curve(const CurveArgs& a) {
  if (!(a.grid_step > 0.0) || !(a.grid_max >= 0.0)) {
    std::cerr << "error: --grid-step must be > 0 and --grid-max >= 0\n";
    return kUsage;
  }
  std::vector<double> errors;
  for (const auto& row : sdn::read_errors_csv(a.errors)) errors.push_back(row.second);
  std::vector<double> grid;
  const auto steps = static_cast<long>(std::floor(a.grid_max / a.grid_step + 1e-9));
  for (long i = 0; i <= steps; ++i) grid.push_back(static_cast<double>(i) * a.grid_step);
  sdn::write_ced_csv(a.out, sdn::ced_curve(errors, grid));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Facial landmark localization with a single deep network"};
  app.require_subcommand(1);
  app.footer(std::string("\n") + kManifestGrammar + "\n" + sdn::stage_config_grammar());
  bool quiet = false;
  app.add_flag("--quiet", quiet, "Only print results and errors");

  AugmentArgs aug;
  auto* augment = app.add_subcommand("augment", "Expand a manifest with one augmentation stage");
  augment->add_option("--manifest", aug.manifest, "Source manifest")->required()->check(CLI::ExistingFile);
  augment->add_option("--stage", aug.stage, "s1, s2 or s3")->check(CLI::IsMember({"s1", "s2", "s3"}));
  augment->add_option("--out", aug.out, "Output manifest; provenance goes to OUT.prov")->required();
  augment->add_option("--model", aug.model, "Weights for s3 hard-example selection")->check(CLI::ExistingFile);
  augment->add_option("--seed", aug.seed, "Expansion-ratio seed (defaults 1, 2, 3 per stage)");
  augment->add_option("--hard-threshold", aug.hard_threshold, "s3 NRMSE threshold (default 0.02)");
  augment->add_option("--threads", aug.threads, "Worker threads")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train all three stages, or one with --stage");
  train->add_option("--config", tr.config, "Stage config file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", tr.out, "Output directory (overrides [pipeline] out_dir)");
  train->add_option("--stage", tr.stage, "Run only this stage")->check(CLI::IsMember({"s1", "s2", "s3"}));
  train->add_option("--resume", tr.resume, "Continue a stage from this checkpoint")->check(CLI::ExistingFile);
  train->add_option("--manifest", tr.manifest, "Training manifest for --stage")->check(CLI::ExistingFile);
  train->add_option("--seed", tr.seed, "Weight initialization seed (default 7)");
  train->add_option("--iterations", tr.iterations, "Override max_iterations of every stage")
      ->check(CLI::PositiveNumber);
  train->add_option("--threads", tr.threads, "Threads for hard-example mining")->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Evaluate weights on a test manifest");
  eval->add_option("--weights", ev.weights, "Weight file")->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", ev.manifest, "Test manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", ev.out, "Report directory")->required();
  eval->add_option("--failure-threshold", ev.failure_threshold, "Failure NRMSE threshold");
  eval->add_option("--threads", ev.threads, "Worker threads")->check(CLI::PositiveNumber);
  eval->add_option("--timing-runs", ev.timing_runs, "Timed forward passes, 0 to skip (fps is then 0)")
      ->check(CLI::NonNegativeNumber);

  DetectArgs de;
  auto* detect = app.add_subcommand("detect", "Print N landmark lines \"x y\" in image pixels");
  detect->add_option("--weights", de.weights, "Weight file")->required()->check(CLI::ExistingFile);
  detect->add_option("--image", de.image, "Image (pgm/ppm, or png/jpeg with OpenCV)")
      ->required()
      ->check(CLI::ExistingFile);
  detect->add_option("--bbox", de.bbox, "Face box x,y,w,h")->required();

  CurveArgs cu;
  auto* curve = app.add_subcommand("curve", "CED curve from an errors.csv");
  curve->add_option("--errors", cu.errors, "errors.csv from eval")->required()->check(CLI::ExistingFile);
  curve->add_option("--out", cu.out, "Output CSV")->required();
  curve->add_option("--grid-max", cu.grid_max, "Largest threshold (default 0.10)");
  curve->add_option("--grid-step", cu.grid_step, "Threshold step (default 0.002)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }
  verbosity = quiet ? 0 : 1;

  try {
    if (*augment) return cmd_augment(aug);
    if (*train) return cmd_train(tr);
    if (*eval) return cmd_eval(ev);
    if (*detect) return cmd_detect(de);
    if (*curve) return cmd_curve(cu);
  } catch (const sdn::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

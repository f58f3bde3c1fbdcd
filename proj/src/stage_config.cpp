#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <set>

#include "sdn/error.hpp"
#include "sdn/trainer.hpp"

namespace sdn {

namespace {

namespace pt = boost::property_tree;

template <typename T>
T number(const std::string& section, const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end)
    throw SpecError("config [" + section + "] " + key + ": bad value '" + text + "'");
  return v;
}

double real(const std::string& section, const std::string& key, const std::string& text) {
  try {
    return parse_double(text);
  } catch (const ValidationError&) {
    throw SpecError("config [" + section + "] " + key + ": bad value '" + text + "'");
  }
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> parts, items;
  boost::algorithm::split(parts, text, boost::algorithm::is_any_of(","));
  for (auto& p : parts)
    if (boost::algorithm::trim(p), !p.empty()) items.push_back(p);
  return items;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
  const std::filesystem::path p(value);
  return p.is_absolute() ? p : base / p;
}

LossKind parse_loss(const std::string& section, const std::string& text) {
  if (text == "norm") return LossKind::Norm;
  if (text == "squared_norm") return LossKind::SquaredNorm;
  throw SpecError("config [" + section + "] loss: expected norm or squared_norm, got '" + text + "'");
}

void read_stage(const pt::ptree& tree, const std::string& section, const std::filesystem::path& base,
                StageSchedule& s) {
  for (const auto& [key, node] : tree) {
    const std::string value = node.get_value<std::string>();
    if (key == "name") s.name = value;
    else if (key == "data_manifest") s.data_manifest = resolve(base, value);
    else if (key == "policy") s.policy.kind = parse_lr_kind(value);
    else if (key == "base_lr") s.policy.base_lr = real(section, key, value);
    else if (key == "gamma") s.policy.gamma = real(section, key, value);
    else if (key == "step_size") s.policy.step_size = number<std::int64_t>(section, key, value);
    else if (key == "power") s.policy.power = real(section, key, value);
    else if (key == "batch_size") s.batch_size = number<int>(section, key, value);
    else if (key == "max_iterations") s.max_iterations = number<std::int64_t>(section, key, value);
    else if (key == "init_from") s.init_from = resolve(base, value);
    else if (key == "checkpoint_every") s.checkpoint_every = number<std::int64_t>(section, key, value);
    else if (key == "shuffle_seed") s.shuffle_seed = number<std::uint64_t>(section, key, value);
    else if (key == "momentum") s.momentum = real(section, key, value);
    else if (key == "loss") s.loss = parse_loss(section, value);
    else if (key == "frozen_layers") s.frozen_layers = split_list(value);
    else if (key == "checkpoint_dir") s.checkpoint_dir = resolve(base, value);
    else throw SpecError("config [" + section + "]: unknown key '" + key + "'");
  }
  s.validate();
}

}  // namespace

ThreeStageConfig read_stage_config(const std::filesystem::path& path) {
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    if (e.line() == 0) throw IoError("cannot read config " + path.string() + ": " + e.message());
    throw ParseError(path.string() + ": " + e.message(), static_cast<int>(e.line()));
  }

  const std::filesystem::path base = path.parent_path();
  ThreeStageConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw SpecError("config: key '" + section + "' outside any section");
    if (section == "network") {
      static const std::set<std::string> known{"input_side", "n_landmarks", "groups", "fc_hidden", "seed"};
      std::string text;
      for (const auto& [key, node] : body) {
        if (!known.count(key)) throw SpecError("config [network]: unknown key '" + key + "'");
        text += key + "=" + node.get_value<std::string>() + "\n";
      }
      config.network = spec_from_manifest(text);
      config.network.validate();
    } else if (section == "pipeline") {
      for (const auto& [key, node] : body) {
        const std::string value = node.get_value<std::string>();
        if (key == "source_manifest") config.source_manifest = resolve(base, value);
        else if (key == "out_dir") config.out_dir = resolve(base, value);
        else if (key == "threads") config.threads = number<int>(section, key, value);
        else if (key == "hard_threshold") config.hard_augment.hard_threshold = real(section, key, value);
        else if (key == "hard_seed") config.hard_augment.rng_seed = number<std::uint64_t>(section, key, value);
        else throw SpecError("config [pipeline]: unknown key '" + key + "'");
      }
    } else {
      const Stage stage = parse_stage(section);
      read_stage(body, section, base, config.stages[static_cast<std::size_t>(stage)]);
    }
  }
  if (config.threads < 1) throw SpecError("config [pipeline] threads: must be >= 1");
  return config;
}

std::string stage_config_grammar() {
  return R"(Stage config (INI, UTF-8; '#' or ';' starts a comment; relative paths resolve
against the config file's directory):

  [network]                 all keys optional, defaults shown
  input_side = 64
  n_landmarks = 68
  groups = 3:32:32,3:64:64,3:128:128     kernel:conv1_channels:conv2_channels
  fc_hidden = 256
  seed = 7                  weight initialization seed

  [pipeline]
  source_manifest = PATH    original training set, mined for s3 hard examples
  out_dir = PATH            checkpoints, logs and the s3 manifest
  threads = 1
  hard_threshold = 0.02
  hard_seed = 3

  [s1] / [s2] / [s3]        one section per stage
  data_manifest = PATH      required for s1 and s2; s3 defaults to the mined set
  policy = fixed|step|inv
  base_lr = 0.001
  gamma = 0.1               s3 default 0.00001
  step_size = 20000
  power = 0.75
  batch_size = 64
  max_iterations = 60000    s3 default 20000
  init_from = PATH          default: previous stage's final checkpoint
  checkpoint_every = 0      0 writes only the final checkpoint
  shuffle_seed = 1          s2 default 2, s3 default 3
  momentum = 0
  loss = norm|squared_norm
  frozen_layers = ID,...    g1.conv1 .. g3.conv2, fc1, fc2
  checkpoint_dir = PATH     default: out_dir
)";
}

}  // namespace sdn

#include "sdn/network.hpp"

#include <charconv>
#include <random>
#include <sstream>

namespace sdn {

void NetworkSpec::validate() const {
  std::vector<std::string> problems;
  if (groups.size() != 3)
    problems.push_back("exactly 3 groups required, got " + std::to_string(groups.size()));
  if (input_side < 1) problems.push_back("input_side must be >= 1");
  if (n_landmarks < 1) problems.push_back("n_landmarks must be >= 1");
  if (fc_hidden < 1) problems.push_back("fc_hidden must be >= 1");
  int side = input_side;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const GroupSpec& g = groups[i];
    const std::string name = "group " + std::to_string(i + 1) + ": ";
    if (g.kernel_size < 1 || g.kernel_size % 2 == 0)
      problems.push_back(name + "kernel_size must be odd and >= 1, got " + std::to_string(g.kernel_size));
    if (g.channels_conv1 < 1 || g.channels_conv2 < 1) problems.push_back(name + "channel counts must be >= 1");
    if (side < 2 || side % 2 != 0)
      problems.push_back(name + "spatial size " + std::to_string(side) + " is not divisible by 2 at pooling");
    side /= 2;
  }
  if (!problems.empty()) {
    std::string msg = "invalid network spec:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw SpecError(msg);
  }
}

std::string to_manifest(const NetworkSpec& spec) {
  std::ostringstream os;
  os << "input_side=" << spec.input_side << "\n"
     << "n_landmarks=" << spec.n_landmarks << "\n"
     << "groups=";
  for (std::size_t i = 0; i < spec.groups.size(); ++i) {
    const auto& g = spec.groups[i];
    os << (i ? "," : "") << g.kernel_size << ":" << g.channels_conv1 << ":" << g.channels_conv2;
  }
  os << "\n"
     << "fc_hidden=" << spec.fc_hidden << "\n"
     << "seed=" << spec.seed << "\n";
  return os.str();
}

namespace {

template <typename T>
T parse_number(std::string_view s, std::string_view key) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw SpecError("network spec: bad value '" + std::string(s) + "' for " + std::string(key));
  return v;
}

std::vector<GroupSpec> parse_groups(std::string_view s) {
  std::vector<GroupSpec> groups;
  while (!s.empty()) {
    const auto comma = s.find(',');
    std::string_view item = s.substr(0, comma);
    s = comma == std::string_view::npos ? std::string_view{} : s.substr(comma + 1);
    const auto c1 = item.find(':');
    const auto c2 = item.find(':', c1 == std::string_view::npos ? c1 : c1 + 1);
    if (c1 == std::string_view::npos || c2 == std::string_view::npos)
      throw SpecError("network spec: group '" + std::string(item) + "' is not k:c1:c2");
    groups.push_back({parse_number<int>(item.substr(0, c1), "groups"),
                      parse_number<int>(item.substr(c1 + 1, c2 - c1 - 1), "groups"),
                      parse_number<int>(item.substr(c2 + 1), "groups")});
  }
  return groups;
}

}  // namespace

NetworkSpec spec_from_manifest(std::string_view text) {
  NetworkSpec spec;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw SpecError("network spec: line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string_view value = std::string_view(line).substr(eq + 1);
    if (key == "input_side") spec.input_side = parse_number<int>(value, key);
    else if (key == "n_landmarks") spec.n_landmarks = parse_number<int>(value, key);
    else if (key == "groups") spec.groups = parse_groups(value);
    else if (key == "fc_hidden") spec.fc_hidden = parse_number<int>(value, key);
    else if (key == "seed") spec.seed = parse_number<std::uint64_t>(value, key);
    // Other keys (checkpoint metadata) belong to the caller.
  }
  return spec;
}

std::vector<std::string> layer_ids() {
  return {"g1.conv1", "g1.conv2", "g2.conv1", "g2.conv2", "g3.conv1", "g3.conv2", "fc1", "fc2"};
}

WeightStore build_network(const NetworkSpec& spec) {
  WeightStore ws = zero_weights<float>(spec);
  std::mt19937_64 rng(spec.seed);
  // 53-bit uniform in [0,1); std::uniform_real_distribution is not portable bit-for-bit.
  auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  for (auto& layer : ws.layers) {
    std::visit(
        [&](auto& p) {
          double fan_in, fan_out;
          if constexpr (std::is_same_v<std::decay_t<decltype(p)>, ConvParams>) {
            const double area = double(p.kernel_size()) * p.kernel_size();
            fan_in = p.in_channels() * area;
            fan_out = p.out_channels() * area;
          } else {
            fan_in = p.in_dim();
            fan_out = p.out_dim();
          }
          const double limit = std::sqrt(6.0 / (fan_in + fan_out));
          for (Eigen::Index i = 0; i < p.weights.size(); ++i)
            p.weights[i] = static_cast<float>(limit * (2.0 * uniform() - 1.0));
        },
        layer.params);
  }
  return ws;
}

ReceptiveField receptive_field(const NetworkSpec& spec) {
  spec.validate();
  ReceptiveField rf;
  int field = 1;
  int jump = 1;
  for (const GroupSpec& g : spec.groups) {
    rf.per_group.push_back(2 * g.kernel_size - 1);
    field += 2 * (g.kernel_size - 1) * jump;
    field += jump;  // 2x2 pooling window
    jump *= 2;
    rf.cumulative.push_back(field);
  }
  return rf;
}

}  // namespace sdn

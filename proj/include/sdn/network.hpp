#pragma once

// The single deep network: three layer groups (conv, conv, 2x2 max-pool, with
// tanh after each conv) followed by a tanh hidden fc layer and a linear
// output layer of 2N landmark coordinates.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "sdn/error.hpp"
#include "sdn/layers.hpp"
#include "sdn/tensor.hpp"

namespace sdn {

struct GroupSpec {
  int kernel_size = 3;
  int channels_conv1 = 32;
  int channels_conv2 = 32;
  friend bool operator==(const GroupSpec&, const GroupSpec&) = default;
};

struct NetworkSpec {
  int input_side = 64;
  int n_landmarks = 68;
  std::vector<GroupSpec> groups{{3, 32, 32}, {3, 64, 64}, {3, 128, 128}};
  int fc_hidden = 256;
  std::uint64_t seed = 7;

  int output_dim() const { return 2 * n_landmarks; }
  // Spatial side after the last pooling.
  int final_side() const { return input_side >> static_cast<int>(groups.size()); }
  int flat_features() const { return groups.back().channels_conv2 * final_side() * final_side(); }

  // Throws SpecError listing every failing field or group.
  void validate() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// "key=value" lines; the same text is embedded in weight files.
std::string to_manifest(const NetworkSpec& spec);
NetworkSpec spec_from_manifest(std::string_view text);

enum class LossKind { Norm, SquaredNorm };

template <typename Scalar>
using LayerParams = std::variant<BasicConvParams<Scalar>, BasicFcParams<Scalar>>;

template <typename Scalar>
struct BasicLayer {
  std::string id;
  LayerParams<Scalar> params;
  friend bool operator==(const BasicLayer&, const BasicLayer&) = default;
};

// Layers in forward order: g1.conv1, g1.conv2, ..., g3.conv2, fc1, fc2.
template <typename Scalar>
struct BasicWeightStore {
  NetworkSpec spec;
  std::vector<BasicLayer<Scalar>> layers;

  const BasicLayer<Scalar>* find(std::string_view id) const {
    for (const auto& l : layers)
      if (l.id == id) return &l;
    return nullptr;
  }
  BasicLayer<Scalar>* find(std::string_view id) {
    for (auto& l : layers)
      if (l.id == id) return &l;
    return nullptr;
  }

  const BasicConvParams<Scalar>& conv(std::size_t i) const {
    return std::get<BasicConvParams<Scalar>>(layers.at(i).params);
  }
  const BasicFcParams<Scalar>& fc(std::size_t i) const {
    return std::get<BasicFcParams<Scalar>>(layers.at(i).params);
  }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& l : layers)
      std::visit([&](const auto& p) { n += p.weights.size() + p.bias.size(); }, l.params);
    return n;
  }

  template <typename Other>
  BasicWeightStore<Other> cast() const {
    BasicWeightStore<Other> out{spec, {}};
    for (const auto& l : layers)
      std::visit([&](const auto& p) { out.layers.push_back({l.id, p.template cast<Other>()}); }, l.params);
    return out;
  }

  friend bool operator==(const BasicWeightStore&, const BasicWeightStore&) = default;
};

using WeightStore = BasicWeightStore<float>;

constexpr std::size_t kConvLayers = 6;
constexpr std::size_t kFcHidden = 6;
constexpr std::size_t kFcOutput = 7;

std::vector<std::string> layer_ids();

// Fan-based uniform init in +/- sqrt(6 / (fan_in + fan_out)), zero biases.
WeightStore build_network(const NetworkSpec& spec);

// A zero-filled store with the topology of `spec`; also the reference used to
// check that loaded or hand-built stores are consistent with their spec.
template <typename Scalar>
BasicWeightStore<Scalar> zero_weights(const NetworkSpec& spec) {
  spec.validate();
  const auto ids = layer_ids();
  BasicWeightStore<Scalar> ws{spec, {}};
  int in_channels = 1;
  std::size_t li = 0;
  for (const GroupSpec& g : spec.groups) {
    for (int out_channels : {g.channels_conv1, g.channels_conv2}) {
      const int k = g.kernel_size;
      ws.layers.push_back({ids[li++], BasicConvParams<Scalar>{
                                          BasicTensor<Scalar>({out_channels, in_channels, k, k}),
                                          BasicTensor<Scalar>({out_channels}), 1, k / 2}});
      in_channels = out_channels;
    }
  }
  ws.layers.push_back({ids[li++], BasicFcParams<Scalar>{BasicTensor<Scalar>({spec.fc_hidden, spec.flat_features()}),
                                                        BasicTensor<Scalar>({spec.fc_hidden})}});
  ws.layers.push_back({ids[li++], BasicFcParams<Scalar>{BasicTensor<Scalar>({spec.output_dim(), spec.fc_hidden}),
                                                        BasicTensor<Scalar>({spec.output_dim()})}});
  return ws;
}

// Throws ShapeError if the layer list does not match ws.spec.
template <typename Scalar>
void check_structure(const BasicWeightStore<Scalar>& ws) {
  const auto ref = zero_weights<Scalar>(ws.spec);
  if (ws.layers.size() != ref.layers.size())
    throw ShapeError("weight store has " + std::to_string(ws.layers.size()) + " layers, spec needs " +
                     std::to_string(ref.layers.size()));
  for (std::size_t i = 0; i < ref.layers.size(); ++i) {
    const auto& a = ws.layers[i];
    const auto& b = ref.layers[i];
    if (a.id != b.id) throw ShapeError("layer " + std::to_string(i) + " is '" + a.id + "', expected '" + b.id + "'");
    if (a.params.index() != b.params.index()) throw ShapeError("layer " + a.id + " has the wrong kind");
    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          const auto& q = std::get<P>(b.params);
          if (p.weights.shape() != q.weights.shape() || p.bias.shape() != q.bias.shape())
            throw ShapeError("layer " + a.id + " weights " + to_string(p.weights.shape()) + "/" +
                             to_string(p.bias.shape()) + " do not match spec " +
                             to_string(q.weights.shape()) + "/" + to_string(q.bias.shape()));
          if constexpr (std::is_same_v<P, BasicConvParams<Scalar>>) {
            if (p.stride != q.stride || p.padding != q.padding)
              throw ShapeError("layer " + a.id + " stride/padding do not match spec");
          }
        },
        a.params);
  }
}

// ---------------------------------------------------------------------------
// Forward pass.

template <typename Scalar>
struct SampleTrace {
  std::vector<BasicTensor<Scalar>> conv_inputs;   // input of each conv
  std::vector<BasicTensor<Scalar>> conv_outputs;  // tanh output of each conv
  std::vector<ArgmaxRecord> pools;
  Shape pooled_shape;
  BasicTensor<Scalar> flat;    // fc1 input
  BasicTensor<Scalar> hidden;  // tanh(fc1)
  BasicTensor<Scalar> output;  // 2N
};

template <typename Scalar>
SampleTrace<Scalar> forward_trace(const BasicWeightStore<Scalar>& ws, const BasicTensor<Scalar>& image) {
  const int side = ws.spec.input_side;
  if (image.shape() != Shape{1, side, side})
    throw ShapeError("network input must be [1," + std::to_string(side) + "," + std::to_string(side) +
                     "], got " + to_string(image.shape()));
  SampleTrace<Scalar> t;
  BasicTensor<Scalar> x = image;
  for (std::size_t g = 0; g < 3; ++g) {
    for (std::size_t j = 0; j < 2; ++j) {
      const std::size_t li = 2 * g + j;
      t.conv_inputs.push_back(x);
      x = tanh_activation(conv2d(x, ws.conv(li)));
      t.conv_outputs.push_back(x);
    }
    auto pooled = maxpool2x2(x);
    t.pools.push_back(std::move(pooled.record));
    x = std::move(pooled.output);
  }
  t.pooled_shape = x.shape();
  t.flat = x.reshaped({static_cast<int>(x.size())});
  t.hidden = tanh_activation(fully_connected(t.flat, ws.fc(kFcHidden)));
  t.output = fully_connected(t.hidden, ws.fc(kFcOutput));
  return t;
}

template <typename Scalar>
BasicTensor<Scalar> forward_sample(const BasicWeightStore<Scalar>& ws, const BasicTensor<Scalar>& image) {
  return forward_trace(ws, image).output;
}

namespace detail {

template <typename Scalar>
BasicTensor<Scalar> batch_item(const BasicTensor<Scalar>& batch, int b) {
  const Shape item(batch.shape().begin() + 1, batch.shape().end());
  const Eigen::Index n = shape_size(item);
  return BasicTensor<Scalar>(item, batch.values().segment(Eigen::Index(b) * n, n).eval());
}

template <typename Scalar>
void check_batch(const BasicWeightStore<Scalar>& ws, const BasicTensor<Scalar>& batch) {
  const int side = ws.spec.input_side;
  if (batch.rank() != 4 || batch.dim(1) != 1 || batch.dim(2) != side || batch.dim(3) != side)
    throw ShapeError("network batch must be [B,1," + std::to_string(side) + "," + std::to_string(side) +
                     "], got " + to_string(batch.shape()));
}

}  // namespace detail

// batch [B,1,S,S] -> [B,2N] in crop-relative unit coordinates (x1,y1,...,xN,yN).
template <typename Scalar>
BasicTensor<Scalar> forward(const BasicWeightStore<Scalar>& ws, const BasicTensor<Scalar>& batch) {
  detail::check_batch(ws, batch);
  const int b_count = batch.dim(0);
  const int out_dim = ws.spec.output_dim();
  BasicTensor<Scalar> out({b_count, out_dim});
  for (int b = 0; b < b_count; ++b)
    out.values().segment(Eigen::Index(b) * out_dim, out_dim) =
        forward_sample(ws, detail::batch_item(batch, b)).values();
  return out;
}

// ---------------------------------------------------------------------------
// Loss: (1 / 2B) sum_i ||pred_i - gt_i||_2, the unsquared Euclidean norm of
// each sample's 2N-vector. Its gradient is taken as zero where the norm is 0.
// SquaredNorm, (1 / 2B) sum_i ||pred_i - gt_i||^2, is kept for ablations.

template <typename Scalar>
struct LossResult {
  double loss = 0.0;
  BasicTensor<Scalar> d_pred;
};

template <typename Scalar>
LossResult<Scalar> loss_and_grad(const BasicTensor<Scalar>& pred, const BasicTensor<Scalar>& gt,
                                 LossKind kind = LossKind::Norm) {
  if (pred.shape() != gt.shape() || pred.rank() != 2)
    throw ShapeError("loss: prediction " + to_string(pred.shape()) + " and target " + to_string(gt.shape()) +
                     " must be equal [B,2N] shapes");
  const int b_count = pred.dim(0);
  const int dim = pred.dim(1);
  LossResult<Scalar> r{0.0, BasicTensor<Scalar>(pred.shape())};
  const double scale = 1.0 / (2.0 * b_count);
  for (int b = 0; b < b_count; ++b) {
    const Eigen::Index off = Eigen::Index(b) * dim;
    const AccumVector diff = pred.values().segment(off, dim).template cast<double>() -
                             gt.values().segment(off, dim).template cast<double>();
    if (kind == LossKind::SquaredNorm) {
      r.loss += scale * diff.squaredNorm();
      r.d_pred.values().segment(off, dim) = (2.0 * scale * diff).template cast<Scalar>();
    } else {
      const double norm = diff.norm();
      r.loss += scale * norm;
      if (norm > 0.0) r.d_pred.values().segment(off, dim) = (scale / norm * diff).template cast<Scalar>();
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Backward pass: loss plus gradients for every parameter, shaped as a
// weight store with the same layer ids.

template <typename Scalar>
struct BackwardResult {
  double loss = 0.0;
  BasicTensor<Scalar> pred;
  BasicWeightStore<Scalar> grads;
};

template <typename Scalar>
BackwardResult<Scalar> backward(const BasicWeightStore<Scalar>& ws, const BasicTensor<Scalar>& batch,
                                const BasicTensor<Scalar>& gt, LossKind kind = LossKind::Norm) {
  detail::check_batch(ws, batch);
  const int b_count = batch.dim(0);
  const int out_dim = ws.spec.output_dim();
  if (gt.shape() != Shape{b_count, out_dim})
    throw ShapeError("backward: target " + to_string(gt.shape()) + " does not match [" +
                     std::to_string(b_count) + "," + std::to_string(out_dim) + "]");

  std::vector<SampleTrace<Scalar>> traces;
  traces.reserve(static_cast<std::size_t>(b_count));
  BackwardResult<Scalar> r;
  r.pred = BasicTensor<Scalar>({b_count, out_dim});
  for (int b = 0; b < b_count; ++b) {
    traces.push_back(forward_trace(ws, detail::batch_item(batch, b)));
    r.pred.values().segment(Eigen::Index(b) * out_dim, out_dim) = traces.back().output.values();
  }
  auto loss = loss_and_grad(r.pred, gt, kind);
  r.loss = loss.loss;

  // Per-layer double accumulators over the batch.
  std::vector<AccumVector> acc_w, acc_b;
  for (const auto& l : ws.layers)
    std::visit(
        [&](const auto& p) {
          acc_w.push_back(AccumVector::Zero(p.weights.size()));
          acc_b.push_back(AccumVector::Zero(p.bias.size()));
        },
        l.params);
  auto add = [&](std::size_t li, const LayerGrads<Scalar>& g) {
    acc_w[li] += g.d_weights.values().template cast<double>();
    acc_b[li] += g.d_bias.values().template cast<double>();
  };

  for (int b = 0; b < b_count; ++b) {
    const auto& t = traces[static_cast<std::size_t>(b)];
    BasicTensor<Scalar> up({out_dim}, loss.d_pred.values().segment(Eigen::Index(b) * out_dim, out_dim).eval());

    auto g = fc_grad(t.hidden, ws.fc(kFcOutput), up);
    add(kFcOutput, g);
    up = tanh_grad(t.hidden, g.d_input);
    g = fc_grad(t.flat, ws.fc(kFcHidden), up);
    add(kFcHidden, g);
    up = g.d_input.reshaped(t.pooled_shape);

    for (int grp = 2; grp >= 0; --grp) {
      up = maxpool2x2_grad(t.pools[static_cast<std::size_t>(grp)], up);
      for (int j = 1; j >= 0; --j) {
        const auto li = static_cast<std::size_t>(2 * grp + j);
        up = tanh_grad(t.conv_outputs[li], up);
        g = conv2d_grad(t.conv_inputs[li], ws.conv(li), up);
        add(li, g);
        up = std::move(g.d_input);
      }
    }
  }

  r.grads.spec = ws.spec;
  for (std::size_t li = 0; li < ws.layers.size(); ++li) {
    std::visit(
        [&](const auto& p) {
          auto q = p;
          q.weights.values() = acc_w[li].template cast<Scalar>();
          q.bias.values() = acc_b[li].template cast<Scalar>();
          r.grads.layers.push_back({ws.layers[li].id, std::move(q)});
        },
        ws.layers[li].params);
  }
  return r;
}

// ---------------------------------------------------------------------------

struct ReceptiveField {
  std::vector<int> per_group;   // field of the group's two stacked convs: 2k - 1
  std::vector<int> cumulative;  // field in input pixels after each group's pooling
};

ReceptiveField receptive_field(const NetworkSpec& spec);

}  // namespace sdn

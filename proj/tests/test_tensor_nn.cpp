#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "sdn/error.hpp"
#include "sdn/layers.hpp"

using namespace sdn;
using sdn::test::dot;
using sdn::test::max_rel_error;
using sdn::test::random_tensor;

namespace {

// Direct sliding-window cross-correlation.
TensorD conv_oracle(const TensorD& x, const BasicConvParams<double>& p) {
  const int c_in = x.dim(0), h = x.dim(1), w = x.dim(2), k = p.kernel_size();
  const int oh = (h + 2 * p.padding - k) / p.stride + 1, ow = (w + 2 * p.padding - k) / p.stride + 1;
  TensorD out({p.out_channels(), oh, ow});
  for (int o = 0; o < p.out_channels(); ++o)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        double s = p.bias[o];
        for (int c = 0; c < c_in; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = y * p.stride + ky - p.padding, ix = xx * p.stride + kx - p.padding;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              s += p.weights[((Eigen::Index(o) * c_in + c) * k + ky) * k + kx] * x.at(c, iy, ix);
            }
        out.at(o, y, xx) = s;
      }
  return out;
}

BasicConvParams<double> random_conv(std::mt19937_64& rng, int out_c, int in_c, int k, int stride, int pad) {
  return {random_tensor<double>(rng, {out_c, in_c, k, k}), random_tensor<double>(rng, {out_c}), stride, pad};
}

}  // namespace

TEST_CASE("tensor shape invariants") {
  CHECK_THROWS_AS(Tensor({2, 0, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), ShapeError);
  Tensor t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  t.at(1, 2, 3) = 5.0f;
  CHECK(t[23] == 5.0f);
  t.at(0, 1, 2) = 7.0f;
  CHECK(t[6] == 7.0f);
  CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
  CHECK(t.reshaped({24}).values() == t.values());
}

TEST_CASE("conv2d on the 3x3 example") {
  Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  ConvParams p{Tensor({1, 1, 2, 2}, 1.0f), Tensor({1}, 0.0f)};
  const Tensor y = conv2d(x, p);
  REQUIRE(y.shape() == Shape{1, 2, 2});
  CHECK(y.values() == Tensor({1, 2, 2}, {12, 16, 24, 28}).values());
  const TensorD oracle = conv_oracle(x.cast<double>(), p.cast<double>());
  CHECK(y.cast<double>().values() == oracle.values());
}

TEST_CASE("conv2d identity kernel and bias-only output") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor<float>(rng, {1, 5, 7});
  ConvParams identity{Tensor({1, 1, 1, 1}, 1.0f), Tensor({1}, 0.0f)};
  CHECK(conv2d(x, identity).values() == x.values());

  ConvParams p{random_tensor<float>(rng, {3, 2, 3, 3}), Tensor({3}, {0.5f, -1.0f, 2.0f}), 1, 1};
  const Tensor y = conv2d(Tensor({2, 6, 6}), p);
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 36; ++i) CHECK(y[o * 36 + i] == p.bias[o]);
}

TEST_CASE("conv2d matches the window oracle for stride and padding") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 1 + 2 * int(rng() % 3), stride = 1 + int(rng() % 2), pad = int(rng() % 3);
    const int c = 1 + int(rng() % 3);
    int h = k + int(rng() % 6), w = k + int(rng() % 6);
    // keep the output size integral for stride 2
    if ((h + 2 * pad - k) % stride) ++h;
    if ((w + 2 * pad - k) % stride) ++w;
    const TensorD x = random_tensor<double>(rng, {c, h, w});
    const auto p = random_conv(rng, 2, c, k, stride, pad);
    const TensorD y = conv2d(x, p), oracle = conv_oracle(x, p);
    REQUIRE(y.shape() == oracle.shape());
    CHECK((y.values() - oracle.values()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("conv2d shape errors name the dimensions") {
  ConvParams p{Tensor({1, 2, 3, 3}), Tensor({1})};
  try {
    conv2d(Tensor({3, 5, 5}), p);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("3 channels") != std::string::npos);
    CHECK(std::string(e.what()).find("expects 2") != std::string::npos);
  }
  ConvParams strided{Tensor({1, 1, 3, 3}), Tensor({1}), 2, 0};
  CHECK_THROWS_AS(conv2d(Tensor({1, 6, 5}), strided), ShapeError);  // (6-3)/2 is not an integer
  CHECK_THROWS_AS(conv2d(Tensor({1, 2, 2}), ConvParams{Tensor({1, 1, 3, 3}), Tensor({1})}), ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor({1, 4, 4}), ConvParams{Tensor({1, 1, 3, 3}), Tensor({2})}), ShapeError);
}

TEST_CASE("conv2d is linear in its input with zero bias") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = random_conv(rng, 3, 2, 3, 1, 1);
    p.bias.values().setZero();
    const TensorD x = random_tensor<double>(rng, {2, 6, 5}), y = random_tensor<double>(rng, {2, 6, 5});
    const double a = 1.7, b = -0.6;
    const TensorD mix({2, 6, 5}, (a * x.values() + b * y.values()).eval());
    const Eigen::VectorXd lhs = conv2d(mix, p).values();
    const Eigen::VectorXd rhs = a * conv2d(x, p).values() + b * conv2d(y, p).values();
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("maxpool2x2 examples") {
  auto r = maxpool2x2(Tensor({1, 2, 2}, {1, 2, 3, 4}));
  CHECK(r.output.shape() == Shape{1, 1, 1});
  CHECK(r.output[0] == 4.0f);
  CHECK(r.record.winners == std::vector<Eigen::Index>{3});

  const auto constant = maxpool2x2(Tensor({2, 4, 6}, 2.5f));
  CHECK(constant.output.shape() == Shape{2, 2, 3});
  CHECK((constant.output.values().array() == 2.5f).all());
}

TEST_CASE("maxpool2x2 against a brute-force window oracle") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    // distinct values: a shuffled ramp
    std::vector<float> v(16);
    for (int i = 0; i < 16; ++i) v[i] = float(i);
    std::shuffle(v.begin(), v.end(), rng);
    Tensor x({1, 4, 4});
    for (int i = 0; i < 16; ++i) x[i] = v[i];
    const auto r = maxpool2x2(x);
    for (int oy = 0; oy < 2; ++oy)
      for (int ox = 0; ox < 2; ++ox) {
        float best = -1;
        Eigen::Index arg = -1;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const Eigen::Index idx = (2 * oy + dy) * 4 + 2 * ox + dx;
            if (x[idx] > best) best = x[idx], arg = idx;
          }
        CHECK(r.output.at(0, oy, ox) == best);
        CHECK(r.record.winners[std::size_t(oy * 2 + ox)] == arg);
      }
    const Tensor up = random_tensor<float>(rng, {1, 2, 2});
    const Tensor d = maxpool2x2_grad(r.record, up);
    int nonzero = 0;
    for (Eigen::Index i = 0; i < d.size(); ++i) nonzero += d[i] != 0.0f;
    CHECK(nonzero == 4);
    CHECK(d.values().cwiseAbs().sum() == doctest::Approx(up.values().cwiseAbs().sum()));
  }
}

TEST_CASE("maxpool2x2 odd sizes and ties") {
  Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, -7, -8, -9});
  const auto r = maxpool2x2(x);
  REQUIRE(r.output.shape() == Shape{1, 2, 2});
  CHECK(r.output.values() == Tensor({1, 2, 2}, {5, 6, -7, -9}).values());
  // the padded cells never win, even against negative values
  CHECK(r.record.winners == std::vector<Eigen::Index>{4, 5, 6, 8});

  const auto tie = maxpool2x2(Tensor({1, 2, 2}, 1.0f));
  CHECK(tie.record.winners == std::vector<Eigen::Index>{0});
  CHECK_THROWS_AS(maxpool2x2(Tensor({4, 4})), ShapeError);
  CHECK_THROWS_AS(maxpool2x2_grad(tie.record, Tensor({2})), ShapeError);
}

TEST_CASE("tanh values, symmetry and saturation") {
  CHECK(tanh_activation(Tensor({1}, 0.0f))[0] == 0.0f);
  const double e = std::exp(1.0), want = (e - 1 / e) / (e + 1 / e);
  CHECK(tanh_activation(TensorD({1}, 1.0))[0] == doctest::Approx(want).epsilon(1e-12));
  CHECK(tanh_activation(Tensor({1}, 1.0f))[0] == doctest::Approx(0.7615941559).epsilon(1e-6));

  std::mt19937_64 rng(23);
  const Tensor z = random_tensor<float>(rng, {200}, -6.0, 6.0);
  const Tensor pos = tanh_activation(z);
  const Tensor neg = tanh_activation(Tensor({200}, (-z.values()).eval()));
  CHECK((pos.values() + neg.values()).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((pos.values().array().abs() < 1.0f).all());

  const Tensor big = tanh_activation(Tensor({4}, {1e4f, -1e4f, 80.0f, -1e30f}));
  CHECK(big.values() == Tensor({4}, {1, -1, 1, -1}).values());
  CHECK(tanh_activation(TensorD({2}, {800.0, -800.0})).values() == TensorD({2}, {1, -1}).values());

  // monotone on a grid
  Tensor grid({401});
  for (int i = 0; i <= 400; ++i) grid[i] = -10.0f + 0.05f * i;
  const Tensor g = tanh_activation(grid);
  for (int i = 1; i <= 400; ++i) CHECK(g[i] >= g[i - 1]);
}

TEST_CASE("fully_connected examples") {
  CHECK(fully_connected(Tensor({2}, {1, 1}), FcParams{Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2})}).values() ==
        Tensor({2}, {3, 7}).values());
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor<float>(rng, {5});
  FcParams identity{Tensor({5, 5}), Tensor({5})};
  for (int i = 0; i < 5; ++i) identity.weights[i * 5 + i] = 1.0f;
  CHECK(fully_connected(x, identity).values() == x.values());
  FcParams bias_only{Tensor({3, 5}), Tensor({3}, {1, -2, 3})};
  CHECK(fully_connected(x, bias_only).values() == bias_only.bias.values());
  CHECK_THROWS_AS(fully_connected(Tensor({4}), identity), ShapeError);
  CHECK_THROWS_AS(fc_grad(x, identity, Tensor({4})), ShapeError);
}

TEST_CASE("sgd_update") {
  Tensor p({2}, {1, 2});
  sgd_update(p, Tensor({2}), 0.3);
  CHECK(p.values() == Tensor({2}, {1, 2}).values());
  Tensor q({1}, {1});
  sgd_update(q, Tensor({1}, {2}), 0.5);
  CHECK(q[0] == 0.0f);
  std::mt19937_64 rng(9);
  Tensor r = random_tensor<float>(rng, {7});
  const Tensor before = r;
  sgd_update(r, random_tensor<float>(rng, {7}), 0.0);
  CHECK(r == before);
  CHECK_THROWS_AS(sgd_update(r, Tensor({6}), 0.1), ShapeError);
  CHECK_THROWS_AS(sgd_update(r, Tensor({7}), -0.1), SpecError);
  CHECK_THROWS_AS(sgd_update(r, Tensor({7}), std::nan("")), SpecError);

  // f(x) = (x - 3)^2 decreases monotonically under small steps
  TensorD x({1}, {10.0});
  double last = 49.0;
  for (int i = 0; i < 100; ++i) {
    sgd_update(x, TensorD({1}, {2 * (x[0] - 3)}), 0.05);
    const double f = (x[0] - 3) * (x[0] - 3);
    CHECK(f < last);
    last = f;
  }
}

TEST_CASE("sgd momentum accumulates velocity") {
  Tensor p({1}, {1.0f}), v({1});
  sgd_momentum_update(p, Tensor({1}, {1.0f}), v, 0.1, 0.9);
  CHECK(v[0] == doctest::Approx(0.1));
  CHECK(p[0] == doctest::Approx(0.9));
  sgd_momentum_update(p, Tensor({1}, {1.0f}), v, 0.1, 0.9);
  CHECK(v[0] == doctest::Approx(0.19));
  CHECK(p[0] == doctest::Approx(0.71));
}

TEST_CASE("numeric_gradient examples") {
  std::mt19937_64 rng(4);
  const TensorD x = random_tensor<double>(rng, {3, 2});
  const TensorD g = numeric_gradient([](const TensorD& t) { return t.values().sum(); }, x, 1e-4);
  CHECK((g.values().array() - 1.0).abs().maxCoeff() < 1e-9);
  const TensorD sq = numeric_gradient([](const TensorD& t) { return t[0] * t[0]; }, TensorD({1}, {3.0}), 1e-4);
  CHECK(sq[0] == doctest::Approx(6.0).epsilon(1e-9));
  CHECK_THROWS_AS(numeric_gradient([](const TensorD&) { return 0.0; }, x, 0.0), SpecError);
}

TEST_CASE("conv2d_grad on a random 1x4x4 input") {
  std::mt19937_64 rng(31);
  const TensorD x = random_tensor<double>(rng, {1, 4, 4});
  const auto p = random_conv(rng, 2, 1, 3, 1, 0);
  const TensorD up = random_tensor<double>(rng, {2, 2, 2});
  const auto g = conv2d_grad(x, p, up);
  const TensorD num = numeric_gradient([&](const TensorD& t) { return dot(conv2d(t, p), up); }, x, 1e-6);
  CHECK(max_rel_error(g.d_input, num) < 1e-4);
}

TEST_CASE("every layer's analytic gradient matches central differences") {
  // 64-bit storage with eps 1e-6, ten seeds per layer
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(seed);

    {
      const int stride = 1 + int(seed % 2), pad = int(seed % 2);
      const TensorD x = random_tensor<double>(rng, {2, 7, 7});
      auto p = random_conv(rng, 3, 2, 3, stride, pad);
      const TensorD y = conv2d(x, p);
      const TensorD up = random_tensor<double>(rng, y.shape());
      const auto g = conv2d_grad(x, p, up);
      auto with_w = [&](const TensorD& w) { return dot(conv2d(x, {w, p.bias, stride, pad}), up); };
      auto with_b = [&](const TensorD& b) { return dot(conv2d(x, {p.weights, b, stride, pad}), up); };
      auto with_x = [&](const TensorD& t) { return dot(conv2d(t, p), up); };
      CHECK(max_rel_error(g.d_weights, numeric_gradient(with_w, p.weights, 1e-6)) < 1e-4);
      CHECK(max_rel_error(g.d_bias, numeric_gradient(with_b, p.bias, 1e-6)) < 1e-4);
      CHECK(max_rel_error(g.d_input, numeric_gradient(with_x, x, 1e-6)) < 1e-4);
    }
    {
      const TensorD x = random_tensor<double>(rng, {2, 5, 6});
      const auto r = maxpool2x2(x);
      const TensorD up = random_tensor<double>(rng, r.output.shape());
      const TensorD d = maxpool2x2_grad(r.record, up);
      auto f = [&](const TensorD& t) { return dot(maxpool2x2(t).output, up); };
      CHECK(max_rel_error(d, numeric_gradient(f, x, 1e-6)) < 1e-4);
    }
    {
      const TensorD x = random_tensor<double>(rng, {30}, -3.0, 3.0);
      const TensorD up = random_tensor<double>(rng, {30});
      const TensorD d = tanh_grad(tanh_activation(x), up);
      auto f = [&](const TensorD& t) { return dot(tanh_activation(t), up); };
      CHECK(max_rel_error(d, numeric_gradient(f, x, 1e-6)) < 1e-4);
    }
    {
      const TensorD x = random_tensor<double>(rng, {6});
      BasicFcParams<double> p{random_tensor<double>(rng, {4, 6}), random_tensor<double>(rng, {4})};
      const TensorD up = random_tensor<double>(rng, {4});
      const auto g = fc_grad(x, p, up);
      auto with_w = [&](const TensorD& w) { return dot(fully_connected(x, {w, p.bias}), up); };
      auto with_b = [&](const TensorD& b) { return dot(fully_connected(x, {p.weights, b}), up); };
      auto with_x = [&](const TensorD& t) { return dot(fully_connected(t, p), up); };
      CHECK(max_rel_error(g.d_weights, numeric_gradient(with_w, p.weights, 1e-6)) < 1e-4);
      CHECK(max_rel_error(g.d_bias, numeric_gradient(with_b, p.bias, 1e-6)) < 1e-4);
      CHECK(max_rel_error(g.d_input, numeric_gradient(with_x, x, 1e-6)) < 1e-4);
    }
  }
}

TEST_CASE("float layers accumulate in double") {
  // 1e8 + 1 - 1e8 loses the 1 in float arithmetic but not with a double accumulator.
  FcParams p{Tensor({1, 3}, {1, 1, 1}), Tensor({1})};
  CHECK(fully_connected(Tensor({3}, {1e8f, 1.0f, -1e8f}), p)[0] == 1.0f);
  ConvParams c{Tensor({1, 3, 1, 1}, 1.0f), Tensor({1})};
  CHECK(conv2d(Tensor({3, 1, 1}, {1e8f, 1.0f, -1e8f}), c)[0] == 1.0f);
}

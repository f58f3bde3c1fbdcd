#include <doctest.h>

#include <random>

#include "sdn/error.hpp"
#include "sdn/evaluator.hpp"
#include "support.hpp"

using namespace sdn;
using sdn::test::TempDir;
using sdn::test::uniform;

namespace {

LandmarkSet make_set(std::initializer_list<double> xy) {
  LandmarkSet s;
  s.points.resize(2, Eigen::Index(xy.size() / 2));
  Eigen::Index i = 0;
  for (double v : xy) s.points(i % 2, i / 2) = v, ++i;
  return s;
}

// Network whose output is a constant: the bias of the last layer.
WeightStore constant_network(const NetworkSpec& spec, const Eigen::VectorXf& out) {
  WeightStore ws = zero_weights<float>(spec);
  std::get<FcParams>(ws.layers[kFcOutput].params).bias.values() = out;
  return ws;
}

}  // namespace

TEST_CASE("nrmse example") {
  const LandmarkSet gt = make_set({0, 0, 100, 0, 50, 50});
  LandmarkSet pred = gt;
  pred.points.row(0).array() += 3;
  pred.points.row(1).array() += 4;
  CHECK(nrmse(pred, gt, 0, 1) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(nrmse(gt, gt, 0, 1) == 0.0);

  CHECK_THROWS_AS(nrmse(make_set({0, 0}), gt, 0, 1), ShapeError);
  CHECK_THROWS_AS(nrmse(gt, gt, 0, 5), ValidationError);
  CHECK_THROWS_AS(nrmse(gt, make_set({1, 1, 1, 1, 0, 0}), 0, 1), ValidationError);
}

TEST_CASE("nrmse is invariant to similarity transforms") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    LandmarkSet gt, pred;
    gt.points = Eigen::Matrix2Xd::Random(2, 7) * 50;
    pred.points = gt.points + Eigen::Matrix2Xd::Random(2, 7) * 3;
    const double e = nrmse(pred, gt, 0, 1);
    const Eigen::Affine2d t = Eigen::Translation2d(uniform(rng, -100, 100), uniform(rng, -100, 100)) *
                              Eigen::Rotation2Dd(uniform(rng, -3, 3)) * Eigen::Scaling(uniform(rng, 0.1, 10.0));
    LandmarkSet tp = pred, tg = gt;
    tp.points = t * pred.points;
    tg.points = t * gt.points;
    CHECK(nrmse(tp, tg, 0, 1) == doctest::Approx(e).epsilon(1e-9));

    // error grows with a uniform scaling of the residual
    LandmarkSet far = gt;
    far.points = gt.points + 2.0 * (pred.points - gt.points);
    CHECK(nrmse(far, gt, 0, 1) == doctest::Approx(2 * e).epsilon(1e-9));
  }
}

TEST_CASE("failure rate and cumulative distribution") {
  const std::vector<double> e{0.05, 0.15};
  CHECK(failure_rate(e) == 50.0);
  CHECK(failure_rate(std::vector<double>{0.1, 0.1}) == 0.0);
  CHECK(failure_rate(e, 0.01) == 100.0);
  CHECK_THROWS_AS(failure_rate(std::vector<double>{}), ValidationError);

  const std::vector<double> errs{0.01, 0.02, 0.2};
  const std::vector<double> grid{0.0, 0.02, 0.1, 0.3};
  const auto ced = ced_curve(errs, grid);
  REQUIRE(ced.size() == 4);
  CHECK(ced[0].fraction == 0.0);
  CHECK(ced[1].fraction == doctest::Approx(2.0 / 3.0));
  CHECK(ced[2].fraction == doctest::Approx(2.0 / 3.0));
  CHECK(ced[3].fraction == 1.0);
  CHECK_THROWS_AS(ced_curve(errs, std::vector<double>{0.1, 0.05}), ValidationError);

  const auto g = default_ced_grid();
  CHECK(g.size() == 51);
  CHECK(g.back() == doctest::Approx(0.1));

  std::mt19937_64 rng(2);
  std::vector<double> many(200);
  for (auto& v : many) v = uniform(rng, 0, 0.2);
  const auto curve = ced_curve(many, g);
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].fraction >= curve[i - 1].fraction);
  CHECK(1.0 - curve.back().fraction == doctest::Approx(failure_rate(many) / 100.0));
}

TEST_CASE("prediction maps crop coordinates back to the box") {
  const NetworkSpec spec = test::tiny_spec(16, 2);
  Eigen::VectorXf out(4);
  out << 0.25f, 0.5f, 0.75f, 0.5f;
  const WeightStore ws = constant_network(spec, out);
  FaceSample s;
  s.image = std::make_shared<const GrayImage>(GrayImage::Constant(50, 50, 0.5f));
  const LandmarkSet p = predict_landmarks(ws, s, {10, 20, 40, 20});
  CHECK(p.point(0) == Eigen::Vector2d(20, 30));
  CHECK(p.point(1) == Eigen::Vector2d(40, 30));

  // a constant network that outputs the true crop coordinates has zero error
  DatasetManifest m;
  m.n_landmarks = 2;
  s.id = "a";
  s.bbox = {10, 20, 40, 20};
  s.landmarks = p;
  m.entries.push_back(s);
  CHECK(per_image_errors(ws, m) == std::vector<double>{0.0});
  m.n_landmarks = 3;
  CHECK_THROWS_AS(per_image_errors(ws, m), SpecMismatchError);
}

TEST_CASE("evaluation report") {
  TempDir dir("eval");
  const auto path = test::write_synthetic_dataset(dir.path(), 3, 9, 2, 16);
  const DatasetManifest m = read_manifest(path);
  const WeightStore ws = build_network(test::tiny_spec(16, 2));
  EvalOptions opt;
  opt.timing_runs = 0;
  const EvalReport r = evaluate(ws, m, opt);
  REQUIRE(r.per_image_errors.size() == 9);
  CHECK(r.total_count == 9);
  CHECK(r.sample_ids[4] == "f4");
  CHECK(r.fps() == 0.0);

  double sum = 0;
  int failures = 0;
  for (std::size_t i = 0; i < 9; ++i) {
    const FaceSample& s = m.entries[i];
    FaceSample local = s;
    local.image = std::make_shared<const GrayImage>(read_image(m.resolve(s.image_path)));
    const double e = nrmse(predict_landmarks(ws, local, s.bbox), s.landmarks, 0, 1);
    CHECK(r.per_image_errors[i] == e);
    sum += e;
    failures += e > 0.10;
  }
  CHECK(r.mean_nrmse == sum / 9);
  CHECK(r.failure_count == failures);
  CHECK(r.failure_rate() == doctest::Approx(100.0 * failures / 9));

  opt.threads = 3;
  CHECK(evaluate(ws, m, opt).per_image_errors == r.per_image_errors);

  write_report(r, dir / "report");
  const auto rows = read_errors_csv(dir / "report/errors.csv");
  REQUIRE(rows.size() == 9);
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(rows[i].first == r.sample_ids[i]);
    CHECK(rows[i].second == r.per_image_errors[i]);
  }
  const std::string summary = test::read_file(dir / "report/summary.csv");
  CHECK(summary.rfind("mean_nrmse,failure_rate,fps\n" + format_double(r.mean_nrmse) + ",", 0) == 0);
  const std::string ced = test::read_file(dir / "report/ced.csv");
  CHECK(ced.rfind("threshold,fraction\n0,", 0) == 0);

  write_report(r, dir / "again");
  CHECK(test::read_file(dir / "again/summary.csv") == summary);
}

TEST_CASE("forward timing") {
  const WeightStore ws = build_network(test::tiny_spec(16, 2));
  const TimingStats t = time_forward(ws, 0, 1);
  CHECK(t.runs == 1);
  CHECK(t.mean_ms > 0.0);
  CHECK(t.median_ms == t.mean_ms);
  CHECK_THROWS_AS(time_forward(ws, 1, 0), SpecError);
}

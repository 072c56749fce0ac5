#include "nowcast/metrics.hpp"
#include "nowcast/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace nowcast;

namespace {

Pose3D pose_of(std::initializer_list<Point3> joints) {
  Pose3D p(static_cast<int>(joints.size()));
  int i = 0;
  for (const auto& j : joints) p.joints[i++] = j;
  return p;
}

// Brute-force re-implementation kept intentionally independent of the
// library path: plain loops straight from the metric definitions.
std::pair<double, double> oracle_add(const std::vector<Pose3D>& pred, const std::vector<Pose3D>& gt) {
  std::vector<double> all;
  std::vector<double> frame_means;
  for (size_t f = 0; f < gt.size(); ++f) {
    std::vector<double> frame;
    for (int j = 0; j < gt[f].joint_count(); ++j) {
      if (!gt[f].joint_valid(j) || !pred[f].joint_valid(j)) continue;
      const double dx = pred[f].joints[j].x - gt[f].joints[j].x;
      const double dy = pred[f].joints[j].y - gt[f].joints[j].y;
      const double dz = pred[f].joints[j].z - gt[f].joints[j].z;
      frame.push_back(100.0 * std::sqrt(dx * dx + dy * dy + dz * dz));
    }
    if (frame.empty()) continue;
    double s = 0.0;
    for (double d : frame) s += d;
    frame_means.push_back(s / frame.size());
    for (double d : frame) all.push_back(d);
  }
  double mean = 0.0;
  for (double d : all) mean += d;
  mean /= all.size();
  double fmean = 0.0;
  for (double m : frame_means) fmean += m;
  fmean /= frame_means.size();
  double var = 0.0;
  for (double m : frame_means) var += (m - fmean) * (m - fmean);
  return {mean, std::sqrt(var / frame_means.size())};
}

double oracle_map(const std::vector<Pose3D>& pred, const std::vector<Pose3D>& gt, double threshold_cm) {
  long hit = 0, total = 0;
  for (size_t f = 0; f < gt.size(); ++f)
    for (int j = 0; j < gt[f].joint_count(); ++j) {
      if (!gt[f].joint_valid(j) || !pred[f].joint_valid(j)) continue;
      const double dx = pred[f].joints[j].x - gt[f].joints[j].x;
      const double dy = pred[f].joints[j].y - gt[f].joints[j].y;
      const double dz = pred[f].joints[j].z - gt[f].joints[j].z;
      ++total;
      if (100.0 * std::sqrt(dx * dx + dy * dy + dz * dz) < threshold_cm) ++hit;
    }
  return static_cast<double>(hit) / total;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("add of a perfect prediction is zero") {
  const std::vector<Pose3D> gt = {pose_of({{0, 0, 1}, {0.1, 0, 1}})};
  const auto [mean, stddev] = add_metric(gt, gt);
  CHECK(mean == 0.0);
  CHECK(stddev == 0.0);
}

TEST_CASE("add averages joint distances in centimeters") {
  const std::vector<Pose3D> gt = {pose_of({{0, 0, 1}, {0, 0, 2}})};
  const std::vector<Pose3D> pred = {pose_of({{0.03, 0, 1}, {0, 0.05, 2}})};
  const auto [mean, stddev] = add_metric(pred, gt);
  CHECK(mean == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(stddev == doctest::Approx(0.0));
}

TEST_CASE("invalid ground-truth joints are excluded") {
  std::vector<Pose3D> gt = {pose_of({{0, 0, 1}, {0, 0, 2}})};
  gt[0].valid[1] = 0;
  const std::vector<Pose3D> pred = {pose_of({{0.03, 0, 1}, {5, 5, 5}})};
  CHECK(add_metric(pred, gt).first == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("add throws when nothing is jointly valid") {
  std::vector<Pose3D> gt = {pose_of({{0, 0, 1}})};
  gt[0].valid[0] = 0;
  CHECK_THROWS_AS(add_metric(gt, gt), std::invalid_argument);
}

TEST_CASE("map counts strict-inequality hits") {
  const std::vector<Pose3D> gt = {pose_of({{0, 0, 1}, {0, 0, 2}, {0, 0, 3}})};
  const std::vector<Pose3D> pred = {pose_of({{0.01, 0, 1}, {0.03, 0, 2}, {0.05, 0, 3}})};
  const auto m = map_metric(pred, gt, {4.0});
  CHECK(m.at(4.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(map_metric(pred, gt, {1e9}).at(1e9) == 1.0);
}

TEST_CASE("boundary distance is not counted") {
  // 0.25 m offset is exactly representable, so the distance is exactly 25 cm.
  const std::vector<Pose3D> gt = {pose_of({{0, 0, 1}})};
  const std::vector<Pose3D> pred = {pose_of({{0.25, 0, 1}})};
  CHECK(map_metric(pred, gt, {25.0}).at(25.0) == 0.0);
  CHECK(map_metric(pred, gt, {std::nextafter(25.0, 26.0)}).at(std::nextafter(25.0, 26.0)) == 1.0);
}

TEST_CASE("map is non-decreasing in the threshold") {
  Rng rng(3);
  std::vector<Pose3D> gt, pred;
  for (int f = 0; f < 20; ++f) {
    Pose3D g(5), p(5);
    for (int j = 0; j < 5; ++j) {
      g.joints[j] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 3)};
      p.joints[j] = {g.joints[j].x + rng.normal(0, 0.03), g.joints[j].y + rng.normal(0, 0.03),
                     g.joints[j].z + rng.normal(0, 0.03)};
    }
    gt.push_back(g);
    pred.push_back(p);
  }
  const auto m = map_metric(pred, gt);
  double prev = -1.0;
  for (const auto& [t, f] : m) {
    CHECK(f >= prev);
    prev = f;
  }
}

TEST_CASE("add is translation-equivariant") {
  Rng rng(5);
  std::vector<Pose3D> gt, pred, gt2, pred2;
  for (int f = 0; f < 10; ++f) {
    Pose3D g(4), p(4), g2(4), p2(4);
    for (int j = 0; j < 4; ++j) {
      g.joints[j] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 3)};
      p.joints[j] = {g.joints[j].x + rng.normal(0, 0.05), g.joints[j].y, g.joints[j].z};
      g2.joints[j] = {g.joints[j].x + 1.5, g.joints[j].y - 0.7, g.joints[j].z + 2.0};
      p2.joints[j] = {p.joints[j].x + 1.5, p.joints[j].y - 0.7, p.joints[j].z + 2.0};
    }
    gt.push_back(g);
    pred.push_back(p);
    gt2.push_back(g2);
    pred2.push_back(p2);
  }
  CHECK(std::abs(add_metric(pred, gt).first - add_metric(pred2, gt2).first) < 1e-9);
}

TEST_CASE("map at a vanishing threshold counts exactly-coincident joints") {
  std::vector<Pose3D> gt = {pose_of({{0, 0, 1}, {0.5, 0, 1}})};
  std::vector<Pose3D> pred = {pose_of({{0, 0, 1}, {0.5001, 0, 1}})};
  CHECK(map_metric(pred, gt, {1e-12}).at(1e-12) == doctest::Approx(0.5));
}

TEST_CASE("library matches the brute-force oracle on random instances") {
  Rng rng(99);
  for (int iter = 0; iter < 100; ++iter) {
    const int frames = 1 + static_cast<int>(rng.uniform_index(10));
    std::vector<Pose3D> gt, pred;
    for (int f = 0; f < frames; ++f) {
      Pose3D g(5), p(5);
      for (int j = 0; j < 5; ++j) {
        g.joints[j] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 4)};
        p.joints[j] = {g.joints[j].x + rng.normal(0, 0.05), g.joints[j].y + rng.normal(0, 0.05),
                       g.joints[j].z + rng.normal(0, 0.05)};
        if (rng.uniform() < 0.1) g.valid[j] = 0;
        if (rng.uniform() < 0.05) p.valid[j] = 0;
      }
      gt.push_back(g);
      pred.push_back(p);
    }
    bool any = false;
    for (size_t f = 0; f < gt.size() && !any; ++f)
      for (int j = 0; j < 5; ++j)
        if (gt[f].joint_valid(j) && pred[f].joint_valid(j)) any = true;
    if (!any) continue;
    const auto [mean, stddev] = add_metric(pred, gt);
    const auto [omean, ostd] = oracle_add(pred, gt);
    CHECK(std::abs(mean - omean) < 1e-12);
    CHECK(std::abs(stddev - ostd) < 1e-12);
    for (double t : kDefaultMapThresholdsCm)
      CHECK(std::abs(map_metric(pred, gt).at(t) - oracle_map(pred, gt, t)) < 1e-12);
  }
}

TEST_CASE("accumulator: a perfect predictor reports zeros and full map") {
  MetricsAccumulator acc({0.5, 1.0}, {"a", "b"});
  Pose3D pose = pose_of({{0, 0, 1}, {0.2, 0, 1.5}});
  for (int f = 0; f < 5; ++f) {
    acc.add(0.0, pose, pose);
    acc.add(0.5, pose, pose);
    acc.add(1.0, pose, pose);
  }
  const MetricsReport r = acc.report();
  CHECK(r.current.add_mean_cm == 0.0);
  for (const auto& [offset, s] : r.per_horizon) {
    CHECK(s.add_mean_cm == 0.0);
    CHECK(s.map_at.at(10.0) == 1.0);
  }
  CHECK(r.per_joint.at("a").n_frames == 5);
}

TEST_CASE("report serialization round trips") {
  MetricsAccumulator acc({0.5}, {"a", "b"});
  acc.add(0.0, pose_of({{0, 0, 1}, {0.03, 0, 1}}), pose_of({{0, 0, 1}, {0, 0, 1}}));
  acc.add(0.5, pose_of({{0, 0, 1}, {0, 0, 1}}), pose_of({{0, 0, 1}, {0, 0, 1}}));
  MetricsReport r = acc.report();
  r.mode = "gt_past";
  const MetricsReport back = MetricsReport::from_json(r.to_json());
  CHECK(back.mode == r.mode);
  CHECK(back.current.add_mean_cm == doctest::Approx(r.current.add_mean_cm).epsilon(1e-12));
  CHECK(back.per_horizon.size() == r.per_horizon.size());
  CHECK(back.per_joint.size() == 2);
  // CSV: one row per horizon (incl. t) and per joint, plus headers.
  const std::string csv = r.per_horizon_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2);
  const std::string jcsv = r.per_joint_csv();
  CHECK(std::count(jcsv.begin(), jcsv.end(), '\n') == 1 + 2);
}

}  // TEST_SUITE

#include "oracles.hpp"

#include <oeg/dataset.hpp>
#include <oeg/grasp.hpp>

#include <gtest/gtest.h>

#include <numbers>

using namespace oeg;

namespace {

template <class F>
void expect_error(ErrorCode code, F&& f) {
  try {
    f();
    FAIL() << "expected " << code_name(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

PointCloud view_of(Shape shape, Vector3 scale, std::uint64_t seed, RestingPose pose = RestingPose::upright,
                   int points = 1500) {
  SyntheticSpec s;
  s.shape = shape;
  s.scale = scale;
  s.pose = pose;
  s.points = points;
  s.seed = seed;
  s.yaw = 0.3 * static_cast<double>(seed);
  return generate_synthetic(s);
}

const EndEffectorPose side_pose = EndEffectorPose::make({0.1, 0.7, -0.3}, Eigen::Quaterniond(0.5, 0.5, 0.5, 0.5));

}  // namespace

TEST(Keypoint, SinglePoint) {
  PointCloud c;
  c.points.push_back({1, 2, 3});
  EXPECT_EQ(select_keypoint(c, {{0, 0, 0}, {0, 0, 1}}, {1, 0, 0}), 0u);
  expect_error(ErrorCode::empty_cloud, [] { select_keypoint(PointCloud{}, {}, {1, 0, 0}); });
}

TEST(Keypoint, BoxFaceTowardArm) {
  // dense box surface over [-0.05, 0.05]^2 x [0, 0.1]; arm on the +X side,
  // horizontal grasp line along X through the box centre
  PointCloud c;
  const int n = 21;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double a = -0.05 + 0.1 * i / (n - 1), b = 0.1 * j / (n - 1);
      c.points.push_back({0.05, a, b});
      c.points.push_back({-0.05, a, b});
      c.points.push_back({a, 0.05, b});
      c.points.push_back({a, -0.05, b});
    }
  const GraspLine line{{0, 0, 0.05}, {1, 0, 0}};
  const auto k = select_keypoint(c, line, {-1, 0, 0});
  EXPECT_DOUBLE_EQ(c.points[k].x(), 0.05);
  EXPECT_LE(distance_to_line(c.points[k], line), 0.01);
  // from the other side the -X face wins
  EXPECT_DOUBLE_EQ(c.points[select_keypoint(c, line, {1, 0, 0})].x(), -0.05);
}

TEST(Keypoint, FarLineFallsBackToNearestPoint) {
  PointCloud c;
  c.points = {{0, 0, 0}, {1, 0, 0}, {0, 5, 0}};
  EXPECT_EQ(select_keypoint(c, {{0, 0, 100}, {1, 0, 0}}, {0, 0, -1}), 0u);
  EXPECT_EQ(select_keypoint(c, {{0, 4, 100}, {0, 0, 1}}, {0, 0, -1}), 2u);
}

TEST(SpinImage, OnlyKeypointInRange) {
  PointCloud c;
  c.points = {{0, 0, 0}, {1, 1, 1}};
  const auto s = compute_spin_image(c, 0, Vector3::UnitZ(), 8, 0.09);
  for (std::size_t i = 0; i < s.values.size(); ++i) EXPECT_EQ(s.values[i], i == 4 * 8 + 0 ? 1.0 : 0.0);
}

TEST(SpinImage, AnalyticRing) {
  const double S = 0.09;
  PointCloud c;
  c.points.push_back(Point3::Zero());
  const int n = 64;
  for (int i = 0; i < n; ++i) {
    const double t = 2 * std::numbers::pi * i / n;
    c.points.push_back({S / 2 * std::cos(t), S / 2 * std::sin(t), 0});
  }
  const auto s = compute_spin_image(c, 0, Vector3::UnitZ(), 8, S);
  // ring: column of alpha = S/2 (bin 4), centre beta row (bin 4); keypoint: (row 4, col 0)
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    double expect = 0;
    if (i == 4 * 8 + 4) expect = double(n) / (n + 1);
    if (i == 4 * 8 + 0) expect = 1.0 / (n + 1);
    EXPECT_NEAR(s.values[i], expect, 1e-15) << i;
  }
  EXPECT_EQ(s.values, oracle::spin_values(c, 0, Vector3::UnitZ(), 8, S));
}

TEST(SpinImage, MatchesPerPointOracle) {
  auto g = oracle::rng(40);
  for (int k = 0; k < 20; ++k) {
    const auto c = view_of(Shape::bottle, {0.035, 0.035, 0.24}, 50 + k, k % 2 ? RestingPose::toppled : RestingPose::upright, 600);
    const std::size_t key = g() % c.size();
    const Vector3 n = estimate_normal(c, key, 0.03);
    const auto s = compute_spin_image(c, key, GraspParams{});
    EXPECT_EQ(s.values, oracle::spin_values(c, key, n, 8, 0.09));
    double total = 0;
    for (double v : s.values) total += v;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(SpinImage, RotationAboutNormalInvariant) {
  const auto c = view_of(Shape::cone, {0.05, 0.05, 0.11}, 7);
  const std::size_t key = 100;
  const Vector3 n = estimate_normal(c, key, 0.03);
  const auto base = compute_spin_image(c, key, n, 8, 0.09);
  auto g = oracle::rng(41);
  std::uniform_real_distribution<double> u(0, 2 * std::numbers::pi);
  for (int i = 0; i < 10; ++i) {
    const Matrix3 R = Eigen::AngleAxisd(u(g), n).toRotationMatrix();
    const Point3 p = c.points[key];
    const PointCloud r = transformed(transformed(c, Matrix3::Identity(), -p), R, p);
    const auto s = compute_spin_image(r, key, n, 8, 0.09);
    for (std::size_t j = 0; j < s.values.size(); ++j) EXPECT_NEAR(s.values[j], base.values[j], 1e-9);
  }
}

TEST(SpinImage, NeedsNeighbours) {
  PointCloud c;
  c.points = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  expect_error(ErrorCode::insufficient_neighbors, [&] { compute_spin_image(c, 0, GraspParams{}); });
}

TEST(Radius, Examples) {
  PointCloud cube;
  for (int i = 0; i < 8; ++i) cube.points.emplace_back(i & 1, (i >> 1) & 1, (i >> 2) & 1);
  cube.points.emplace_back(0.5, 0.5, 0.5);
  EXPECT_NEAR(radius_feature(cube, 8), 0.0, 1e-12);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(radius_feature(cube, i), std::sqrt(0.75), 1e-12);
}

TEST(Radius, BottleShoulderMatchesDirectComputation) {
  SyntheticSpec s;
  s.shape = Shape::bottle;
  s.scale = {0.035, 0.035, 0.24};
  s.points = 1500;
  s.seed = 4;
  const auto view = generate_synthetic_view(s);
  const Vector3 axis = view.rotation * Vector3::UnitZ();
  std::size_t shoulder = 0;
  double best = 1e9;
  for (std::size_t i = 0; i < view.cloud.size(); ++i) {
    const double h = (view.cloud.points[i] - view.translation).dot(axis);
    if (std::abs(h - 0.675 * 0.24) < best) {
      best = std::abs(h - 0.675 * 0.24);
      shoulder = i;
    }
  }
  EXPECT_NEAR(radius_feature(view.cloud, shoulder), oracle::radius(view.cloud, shoulder, -Vector3::UnitZ()), 1e-9);
}

TEST(GraspMemory, TeachBuildsSixtyFiveDimFeature) {
  const auto c = view_of(Shape::cylinder, {0.03, 0.03, 0.15}, 3);
  GraspMemory m;
  const Point3 mid = centroid(c);
  const GraspLine line{mid, {0, 1, 0}};
  const auto id1 = m.teach("side", c, line, {0, 1, 0}, side_pose);
  const auto id2 = m.teach("side", c, line, {0, 1, 0}, side_pose);
  EXPECT_NE(id1, id2);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(grasp_feature(m.templates()[0]).size(), 65u);
  EXPECT_EQ(m.templates()[0].affordance_label, "side");
  EXPECT_GE(m.templates()[0].radius, 0.0);
  m.check_invariants();
  expect_error(ErrorCode::empty_cloud, [&] { m.teach("side", PointCloud{}, line, {0, 1, 0}, side_pose); });
  EXPECT_EQ(m.size(), 2u);
}

TEST(GraspMemory, PoseValidation) {
  expect_error(ErrorCode::invalid_argument,
               [] { EndEffectorPose::make(Point3::Zero(), Eigen::Quaterniond(2, 0, 0, 0)); });
  const auto p = EndEffectorPose::make(Point3::Zero(), Eigen::Quaterniond(1 + 5e-7, 0, 0, 0));
  EXPECT_NEAR(p.orientation.norm(), 1.0, 1e-15);
}

TEST(GraspDetect, SelfMatchAndExhaustion) {
  const auto c = view_of(Shape::bottle, {0.035, 0.035, 0.24}, 5);
  GraspMemory m;
  const GraspLine line{centroid(c), {0, 0, 1}};
  m.teach("body", c, line, {0, 1, 0}, side_pose);
  const std::size_t key = select_keypoint(c, line, {0, 1, 0});
  const auto d = detect_grasp(m, "body", c, std::vector<std::size_t>{key});
  EXPECT_EQ(d.keypoint, key);
  EXPECT_LE(d.distance, 1e-9);
  EXPECT_EQ(d.grasp.id, m.templates()[0].id);
  expect_error(ErrorCode::no_reachable_grasp,
               [&] { detect_grasp(m, "body", c, std::vector<std::size_t>{key}, [](const EndEffectorPose&) { return false; }); });
  expect_error(ErrorCode::no_templates_for_affordance, [&] { detect_grasp(m, "handle", c); });
}

TEST(GraspDetect, MatchesExhaustivePairScan) {
  auto g = oracle::rng(60);
  for (int trial = 0; trial < 5; ++trial) {
    GraspMemory m;
    for (int t = 0; t < 5; ++t) {
      const auto c = view_of(Shape::bottle, {0.035, 0.035, 0.24}, 100 + 10 * trial + t);
      const Point3 ctr = centroid(c);
      const GraspLine line{ctr + Vector3(0, 0, 0.02 * t - 0.04), {0, 0, 1}};
      m.teach("body", c, line, {0, 1, 0}, EndEffectorPose::make({0.01 * t, 0, 0}, Eigen::Quaterniond::Identity()));
    }
    m.teach("other", view_of(Shape::box, {0.1, 0.05, 0.2}, 9), {{0, 0.8, -0.3}, {0, 0, 1}}, {0, 1, 0}, side_pose);
    const auto query = view_of(Shape::bottle, {0.035, 0.035, 0.24}, 500 + trial);
    std::vector<std::size_t> cands;
    for (int i = 0; i < 10; ++i) cands.push_back(g() % query.size());
    const Reachability reach = [&](const EndEffectorPose& p) { return trial % 2 == 0 || p.position.x() > 0.015; };
    const auto d = detect_grasp(m, "body", query, cands, reach);
    const auto o = oracle::best_pair(m, "body", query, cands, reach);
    ASSERT_TRUE(o.found);
    EXPECT_NEAR(d.distance, o.distance, 1e-9);
    if (d.keypoint != o.keypoint || d.grasp.id != o.template_id) {
      EXPECT_NEAR(d.distance, o.distance, 1e-12);
    }
    EXPECT_TRUE(reach(d.grasp.pose));
    EXPECT_EQ(d.grasp.affordance_label, "body");
  }
}

TEST(GraspDetect, DiagonalMahalanobisIsStandardizedEuclidean) {
  const std::vector<double> a{1, 2, 3}, b{0, 0, 0}, v{4, 1, 0.25};
  EXPECT_NEAR(mahalanobis_diagonal(a, b, v), std::sqrt(0.25 + 4 + 36), 1e-12);
}

TEST(GraspDetect, DefaultCandidatesCapped) {
  PointCloud c;
  for (int i = 0; i < 1001; ++i) c.points.emplace_back(i, 0, 0);
  const auto cands = default_candidates(c, 200);
  EXPECT_LE(cands.size(), 200u);
  EXPECT_GE(cands.size(), 150u);
  EXPECT_EQ(cands.front(), 0u);
}

TEST(GraspMemory, JsonRoundTrip) {
  const auto c = view_of(Shape::cylinder, {0.03, 0.03, 0.15}, 3);
  GraspMemory m;
  m.teach("side", c, {centroid(c), {0, 0, 1}}, {0, 1, 0}, side_pose);
  m.teach("top", c, {centroid(c), {0, 0, 1}}, {0, 0, -1}, EndEffectorPose{});
  const auto j = m.to_json();
  EXPECT_EQ(j[0].at("pose").at("quaternion").size(), 4u);
  const auto back = GraspMemory::from_json(j);
  back.check_invariants();
  EXPECT_EQ(back.to_json().dump(), j.dump());
  auto bad = j;
  bad[0]["spin"]["values"].erase(0);
  expect_error(ErrorCode::corrupt_snapshot, [&] { GraspMemory::from_json(bad); });
}

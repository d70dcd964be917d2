#include "oracles.hpp"

#include <oeg/dataset.hpp>
#include <oeg/protocol.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace oeg;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("oeg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const ViewSet& desk_views() {
  static const ViewSet views = describe_views(generate_dataset(desk_recipe(20, 1)).views);
  return views;
}

TeachingLog log_of(std::initializer_list<std::pair<EventKind, bool>> events) {
  TeachingLog log;
  std::size_t i = 0;
  for (const auto& [k, ok] : events) log.events.push_back({++i, k, "a", ok ? "a" : "b", ok, "v", std::nullopt});
  return log;
}

}  // namespace

// ---- dataset ----

TEST(Synthetic, SphereSurfaceExact) {
  SyntheticSpec s;
  s.shape = Shape::sphere;
  s.scale = {0.05, 0.05, 0.05};
  s.points = 400;
  s.seed = 3;
  const auto v = generate_synthetic_view(s);
  const Point3 c = v.rotation * sphere_center_object_frame(s) + v.translation;
  for (const auto& p : v.cloud.points) EXPECT_NEAR((p - c).norm(), 0.05, 1e-9);
}

TEST(Synthetic, SeededDeterminism) {
  SyntheticSpec s;
  s.shape = Shape::cone;
  s.noise_sigma = 0.002;
  s.seed = 17;
  const auto a = generate_synthetic(s), b = generate_synthetic(s);
  EXPECT_EQ(a.points, b.points);
  s.seed = 18;
  EXPECT_NE(generate_synthetic(s).points, a.points);
}

TEST(Synthetic, PartialViewFacesCamera) {
  for (Shape shape : {Shape::cylinder, Shape::box, Shape::sphere, Shape::cone}) {
    SyntheticSpec s;
    s.shape = shape;
    s.scale = {0.05, 0.05, 0.08};
    s.points = 300;
    s.seed = 2;
    const auto v = generate_synthetic_view(s);
    EXPECT_EQ(v.cloud.size(), 300u);
    EXPECT_GE(static_cast<double>(v.cloud.size()) / static_cast<double>(v.sampled), 0.3) << to_string(shape);
    for (std::size_t i = 0; i < v.cloud.size(); ++i)
      EXPECT_GT(v.cloud.normals[i].dot(-v.cloud.points[i]), 0.0);
  }
}

TEST(Synthetic, RestsOnTable) {
  for (RestingPose pose : {RestingPose::upright, RestingPose::toppled}) {
    SyntheticSpec s;
    s.shape = Shape::cylinder;
    s.scale = {0.03, 0.03, 0.2};
    s.pose = pose;
    s.points = 2000;
    const auto c = generate_synthetic(s);
    double lo = 1e9;
    for (const auto& p : c.points) lo = std::min(lo, p.z());
    EXPECT_NEAR(lo, table_height, 0.005);
  }
}

TEST(Synthetic, InvalidSpecs) {
  SyntheticSpec s;
  s.points = 10;
  EXPECT_THROW(generate_synthetic(s), Error);
  s.points = 100;
  s.noise_sigma = -1;
  EXPECT_THROW(generate_synthetic(s), Error);
}

TEST(Synthetic, CategorySeparabilityLeaveOneOut) {
  const auto data = generate_dataset(desk_recipe(20, 2));
  std::vector<std::pair<std::string, GoodDescriptor>> all;
  for (const auto& [l, views] : data.views)
    for (const auto& c : views) all.push_back({l, describe(c, GoodVariant::pose_invariant)});
  std::size_t correct = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    double best = 1e9;
    std::string label;
    for (std::size_t j = 0; j < all.size(); ++j) {
      if (i == j) continue;
      const double d = l1_distance(all[i].second, all[j].second);
      if (d < best) {
        best = d;
        label = all[j].first;
      }
    }
    if (label == all[i].first) ++correct;
  }
  EXPECT_EQ(correct, all.size());
}

TEST(Dataset, ScanTwoCategories) {
  const auto root = fresh_dir("scan2");
  for (const char* cat : {"mug", "plate"}) {
    fs::create_directories(root / cat);
    for (int i = 0; i < 3; ++i) std::ofstream(root / cat / ("v" + std::to_string(i) + ".xyz")) << "0 0 " << i << "\n";
  }
  fs::create_directories(root / "empty");
  std::ofstream(root / "mug" / "notes.txt") << "ignored";
  const auto h = scan_dataset(root);
  ASSERT_EQ(h.categories.size(), 2u);
  EXPECT_EQ(h.categories.at("mug").size(), 3u);
  EXPECT_EQ(h.categories.at("plate").size(), 3u);
  EXPECT_TRUE(std::is_sorted(h.categories.at("mug").begin(), h.categories.at("mug").end()));
  EXPECT_EQ(h.view_count(), 6u);
}

TEST(Dataset, EmptyAndMalformed) {
  const auto root = fresh_dir("scan_empty");
  EXPECT_THROW(
      {
        try {
          scan_dataset(root);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), ErrorCode::empty_dataset);
          throw;
        }
      },
      Error);
  fs::create_directories(root / "bad");
  std::ofstream(root / "bad" / "v.xyz") << "1 2\n";
  try {
    scan_dataset(root);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::parse_error);
  }
}

TEST(Dataset, ScanRecoversManifest) {
  const auto root = fresh_dir("manifest");
  auto recipe = desk_recipe(3, 4);
  recipe.points = 100;
  const auto manifest = write_dataset(root, recipe);
  const auto h = scan_dataset(root);
  std::set<std::string> from_scan, from_manifest;
  for (const auto& [l, files] : h.categories)
    for (const auto& f : files) from_scan.insert(fs::relative(f, root).generic_string());
  for (const auto& e : manifest) from_manifest.insert(e.at("file").get<std::string>());
  EXPECT_EQ(from_scan, from_manifest);
  const auto text_manifest = nlohmann::json::parse(std::ifstream(root / "manifest.json"));
  EXPECT_EQ(text_manifest, manifest);
}

TEST(Dataset, RecursiveLayout) {
  const auto root = fresh_dir("recursive");
  fs::create_directories(root / "apple" / "apple_1");
  std::ofstream(root / "apple" / "apple_1" / "a.pcd")
      << "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\nWIDTH 1\nHEIGHT 1\nPOINTS 1\nDATA ascii\n1 2 3\n";
  EXPECT_THROW(scan_dataset(root), Error);
  ScanOptions o;
  o.recursive = true;
  EXPECT_EQ(scan_dataset(root, o).categories.at("apple").size(), 1u);
}

TEST(Dataset, RecipeParsing) {
  const auto r = parse_recipe(nlohmann::json::parse(R"({"preset": "desk8", "views_per_category": 4, "label_noise": 0.1})"));
  EXPECT_EQ(r.categories.size(), 8u);
  EXPECT_EQ(r.views_per_category, 4);
  EXPECT_THROW(parse_recipe(nlohmann::json::parse(R"({"categories": [{"label": "x", "shape": "torus", "scale": [1,1,1]}]})")),
               Error);
  EXPECT_THROW(parse_recipe(nlohmann::json::object()), Error);
}

// ---- metrics ----

TEST(Metrics, GcaRatio) {
  auto log = log_of({{EventKind::introduce, true}});
  for (int i = 0; i < 10; ++i) log.events.push_back({log.events.size() + 1, EventKind::ask, "a", i < 7 ? "a" : "b", i < 7, "v", std::nullopt});
  BayesLearner s;
  s.teach_new_category("a", std::vector<double>{1});
  const auto r = compute_metrics(log, s);
  EXPECT_EQ(r.qci, 10u);
  EXPECT_DOUBLE_EQ(r.gca, 0.7);
  EXPECT_EQ(r.tlc, 1u);
  EXPECT_DOUBLE_EQ(r.aic, 1.0);
}

TEST(Metrics, AllCorrect) {
  auto log = log_of({{EventKind::introduce, true}, {EventKind::ask, true}, {EventKind::ask, true}});
  log.events[2].window_accuracy = 1.0;
  BayesLearner s;
  s.teach_new_category("a", std::vector<double>{1});
  const auto r = compute_metrics(log, s);
  EXPECT_EQ(r.gca, 1.0);
  EXPECT_EQ(r.apa, 1.0);
}

TEST(Metrics, NoAsks) {
  const auto r = compute_metrics(log_of({{EventKind::introduce, true}}), BayesLearner{});
  EXPECT_EQ(r.qci, 0u);
  EXPECT_EQ(r.gca, 0.0);
  EXPECT_EQ(r.tlc, 0u);
}

// ---- protocol ----

TEST(Protocol, SingleCategoryStopsForLackOfData) {
  ViewSet one;
  one["only"] = desk_views().at("can");
  const auto r = run_experiment(one, BayesLearner{}, {});
  EXPECT_EQ(r.report.tlc, 1u);
  EXPECT_EQ(r.report.stop_reason, StopReason::lack_of_data);
  EXPECT_EQ(r.log.events.front().kind, EventKind::introduce);
  EXPECT_EQ(oracle::check_log(r.log, one), "");
}

TEST(Protocol, DeskRunMeetsTargets) {
  for (std::uint64_t seed : {0, 1, 2}) {
    ProtocolConfig cfg;
    cfg.seed = seed;
    const auto r = run_experiment(desk_views(), BayesLearner{}, cfg);
    EXPECT_EQ(r.report.tlc, 8u);
    EXPECT_EQ(r.report.stop_reason, StopReason::lack_of_data);
    EXPECT_GE(r.report.gca, 0.67);
    EXPECT_EQ(oracle::check_log(r.log, desk_views()), "");
    std::size_t asks = 0;
    for (const auto& e : r.log.events) asks += e.kind == EventKind::ask;
    EXPECT_EQ(r.report.qci, asks);
    EXPECT_DOUBLE_EQ(r.report.aic, static_cast<double>(r.learner.total_instances()) / 8.0);
    r.learner.check_invariants();
  }
}

TEST(Protocol, Deterministic) {
  ProtocolConfig cfg;
  cfg.seed = 5;
  const auto a = run_experiment(desk_views(), BayesLearner{}, cfg);
  const auto b = run_experiment(desk_views(), BayesLearner{}, cfg);
  EXPECT_EQ(to_json(a.log).dump(), to_json(b.log).dump());
  EXPECT_EQ(trace_csv(a.log), trace_csv(b.log));
  cfg.seed = 6;
  EXPECT_NE(to_json(run_experiment(desk_views(), BayesLearner{}, cfg).log).dump(), to_json(a.log).dump());
}

TEST(Protocol, BreakpointOnNoisyLabels) {
  auto recipe = desk_recipe(60, 3);
  recipe.categories.resize(3);
  recipe.label_noise = 0.5;
  const auto views = describe_views(generate_dataset(recipe).views);
  ProtocolConfig cfg;
  cfg.tau = 0.99;
  const auto r = run_experiment(views, BayesLearner{}, cfg);
  EXPECT_EQ(r.report.stop_reason, StopReason::breakpoint);
  EXPECT_EQ(oracle::check_log(r.log, views), "");
  // the breakpoint fires exactly breakpoint_window asks after the last introduction
  std::size_t since = 0;
  for (const auto& e : r.log.events) {
    if (e.kind == EventKind::introduce) since = 0;
    if (e.kind == EventKind::ask) ++since;
  }
  EXPECT_EQ(since, cfg.breakpoint_window);
}

TEST(Protocol, WindowAccuracyAndApa) {
  ProtocolConfig cfg;
  cfg.seed = 2;
  const auto r = run_experiment(desk_views(), BayesLearner{}, cfg);
  double sum = 0;
  std::size_t n = 0, known = 0;
  std::vector<bool> since;
  for (const auto& e : r.log.events) {
    if (e.kind == EventKind::introduce) {
      ++known;
      since.clear();
    }
    if (e.kind != EventKind::ask) continue;
    since.push_back(e.correct);
    const std::size_t w = std::max<std::size_t>(3 * known, 10);
    if (since.size() >= w) {
      ASSERT_TRUE(e.window_accuracy.has_value());
      const double acc = static_cast<double>(std::count(since.end() - static_cast<long>(w), since.end(), true)) / w;
      EXPECT_DOUBLE_EQ(*e.window_accuracy, acc);
      sum += acc;
      ++n;
    } else {
      EXPECT_FALSE(e.window_accuracy.has_value());
    }
  }
  EXPECT_DOUBLE_EQ(r.report.apa, sum / n);
}

TEST(Protocol, Errors) {
  EXPECT_THROW(run_experiment(ViewSet{}, BayesLearner{}, {}), Error);
  ProtocolConfig bad;
  bad.tau = 1.0;
  EXPECT_THROW(run_experiment(desk_views(), BayesLearner{}, bad), Error);
}

TEST(Protocol, TraceCsvHeader) {
  const auto r = run_experiment(desk_views(), BayesLearner{}, {});
  const std::string csv = trace_csv(r.log);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "iteration,kind,category,predicted,window_accuracy");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), r.log.events.size() + 1);
  const auto j = to_json(r.report);
  for (const char* k : {"QCI", "TLC", "AIC", "GCA", "APA", "stop_reason", "seed"}) EXPECT_TRUE(j.contains(k));
}

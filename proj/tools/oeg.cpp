// oeg: command-line front end (describe, simteach, grasp-match, serve,
// gen-synthetic). stdout carries JSON only; diagnostics go to stderr.

#include <oeg/dataset.hpp>
#include <oeg/good.hpp>
#include <oeg/grasp.hpp>
#include <oeg/http.hpp>
#include <oeg/protocol.hpp>
#include <oeg/service.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int exit_usage = 2;
constexpr int exit_data = 3;
constexpr int exit_internal = 4;

void fail(std::string_view code, const std::string& message) {
  std::cerr << json{{"code", code}, {"message", message}}.dump() << '\n';
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw oeg::Error(oeg::ErrorCode::io_error, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw oeg::Error(oeg::ErrorCode::parse_error, path.string() + ": " + e.what());
  }
}

void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << content;
    if (!out) throw oeg::Error(oeg::ErrorCode::io_error, "cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

struct DescribeArgs {
  std::string cloud;
  std::string variant = "pose";
  int bins = 15;
};

int run_describe(const DescribeArgs& a) {
  oeg::GoodSettings settings;
  settings.bins_per_side = a.bins;
  const auto d = oeg::describe(oeg::load_cloud(a.cloud), oeg::parse_variant(a.variant), settings);
  std::cout << json(d).dump() << '\n';
  return 0;
}

struct SimteachArgs {
  std::string root;
  double tau = 0.67;
  int seeds = 10;
  std::uint64_t seed = 0;
  std::size_t window = 100;
  int bins = 15;
  int jobs = 1;
  std::string report;
  std::string trace_dir;
};

int run_simteach(const SimteachArgs& a) {
  const oeg::DatasetHandle handle = oeg::scan_dataset(a.root);
  oeg::GoodSettings settings;
  settings.bins_per_side = a.bins;
  std::cerr << "describing " << handle.view_count() << " views in " << handle.categories.size() << " categories\n";
  const oeg::ViewSet views = oeg::describe_dataset(handle, settings);

  const auto n = static_cast<std::size_t>(std::max(a.seeds, 1));
  std::vector<oeg::ExperimentResult> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i; (i = next++) < n;) {
      try {
        oeg::ProtocolConfig config;
        config.tau = a.tau;
        config.breakpoint_window = a.window;
        config.seed = a.seed + i;
        results[i] = oeg::run_experiment(views, oeg::BayesLearner{}, config);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < std::max(a.jobs, 1); ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  const fs::path trace_dir = !a.trace_dir.empty()                 ? fs::path(a.trace_dir)
                             : !a.report.empty()                   ? fs::path(a.report).parent_path()
                                                                   : fs::path();
  const std::string stem = a.report.empty() ? "simteach" : fs::path(a.report).stem().string();
  json runs = json::array();
  for (const auto& r : results) {
    json j = oeg::to_json(r.report);
    if (!a.report.empty() || !a.trace_dir.empty()) {
      const fs::path csv = trace_dir / (stem + "_seed" + std::to_string(r.report.seed) + ".csv");
      write_atomic(csv, oeg::trace_csv(r.log));
      j["trace"] = csv.string();
    }
    std::cerr << "seed " << r.report.seed << ": TLC " << r.report.tlc << ", GCA " << r.report.gca << ", "
              << oeg::to_string(r.report.stop_reason) << '\n';
    runs.push_back(std::move(j));
  }
  const json out{{"dataset", a.root}, {"tau", a.tau}, {"runs", runs}};
  if (!a.report.empty()) write_atomic(a.report, out.dump(2) + "\n");
  std::cout << out.dump() << '\n';
  return 0;
}

struct GraspArgs {
  std::string cloud;
  std::string memory;
  std::string affordance;
};

// Accepts a service snapshot, a GET /memory payload or a bare template list.
oeg::GraspMemory grasp_memory_from(const json& j) {
  if (j.is_object() && j.contains("memory")) return oeg::GraspMemory::from_json(j.at("memory").at("grasps"));
  if (j.is_object() && j.contains("grasps")) return oeg::GraspMemory::from_json(j.at("grasps"));
  if (j.is_array()) return oeg::GraspMemory::from_json(j);
  throw oeg::Error(oeg::ErrorCode::corrupt_snapshot, "memory file holds no grasp templates");
}

int run_grasp(const GraspArgs& a) {
  const oeg::GraspMemory memory = grasp_memory_from(read_json(a.memory));
  const oeg::PointCloud cloud = oeg::load_cloud(a.cloud);
  const oeg::GraspDetection d = oeg::detect_grasp(memory, a.affordance, cloud);
  const auto& p = cloud.points[d.keypoint];
  const json out{{"affordance", a.affordance},
                 {"keypoint", {{"index", d.keypoint}, {"position", {p.x(), p.y(), p.z()}}}},
                 {"template_id", d.grasp.id},
                 {"pose", oeg::pose_to_json(d.grasp.pose)},
                 {"distance", d.distance}};
  std::cout << out.dump() << '\n';
  return 0;
}

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string snapshot_dir;
  int bins = 15;
  double unknown_threshold = oeg::AffordanceMemory::default_unknown_threshold;
  double tau = 0.67;
};

int run_serve(const ServeArgs& a) {
  oeg::ServiceConfig config;
  config.good.bins_per_side = a.bins;
  config.unknown_threshold = a.unknown_threshold;
  config.tau = a.tau;
  if (!a.snapshot_dir.empty()) config.snapshot_dir = a.snapshot_dir;
  oeg::Session session(config);
  if (config.snapshot_dir && session.load_snapshot())
    std::cerr << "restored " << session.snapshot_path() << '\n';

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  oeg::HttpService http(session);
  if (!http.bind(a.host, a.port))
    throw oeg::Error(oeg::ErrorCode::io_error, "cannot bind " + a.host + ":" + std::to_string(a.port));
  std::thread server([&] { http.listen(); });
  std::cerr << "listening on http://" << a.host << ':' << a.port << '\n';

  int sig = 0;
  sigwait(&signals, &sig);
  std::cerr << "shutting down\n";
  http.stop();
  server.join();
  if (config.snapshot_dir) {
    session.save_snapshot();
    std::cerr << "saved " << session.snapshot_path() << '\n';
  }
  return 0;
}

struct GenArgs {
  std::string root;
  std::string spec;
};

int run_gen(const GenArgs& a) {
  const oeg::DatasetRecipe recipe = oeg::parse_recipe(read_json(a.spec));
  const json manifest = oeg::write_dataset(a.root, recipe);
  std::cout << json{{"root", a.root}, {"views", manifest.size()}, {"categories", recipe.categories.size()}}.dump()
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-ended object category, affordance and grasp learning"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML file; subcommand keys go in a section named after it, e.g. [serve]");

  DescribeArgs describe;
  auto* cmd_describe = app.add_subcommand("describe", "Print the GOOD descriptor of a point cloud");
  cmd_describe->add_option("cloud", describe.cloud, "Cloud file (.xyz or .pcd)")->required()->check(CLI::ExistingFile);
  cmd_describe->add_option("--variant", describe.variant, "pose or gravity")
      ->check(CLI::IsMember({"pose", "gravity", "pose_invariant", "gravity_aligned"}));
  cmd_describe->add_option("--bins", describe.bins, "Bins per projection side")->check(CLI::Range(2, 1000));

  SimteachArgs sim;
  auto* cmd_sim = app.add_subcommand("simteach", "Run the simulated-teacher protocol over a dataset");
  cmd_sim->add_option("root", sim.root, "Dataset root (one directory per category)")->required();
  cmd_sim->add_option("--tau", sim.tau, "Accuracy threshold for introducing a category");
  cmd_sim->add_option("--seeds", sim.seeds, "Number of runs")->check(CLI::PositiveNumber);
  cmd_sim->add_option("--seed", sim.seed, "Seed of the first run; run k uses seed+k");
  cmd_sim->add_option("--window", sim.window, "Asks without progress before a breakpoint")->check(CLI::PositiveNumber);
  cmd_sim->add_option("--bins", sim.bins, "Bins per projection side")->check(CLI::Range(2, 1000));
  cmd_sim->add_option("--jobs", sim.jobs, "Parallel runs")->check(CLI::PositiveNumber);
  cmd_sim->add_option("--report", sim.report, "Write the report JSON here; traces go next to it");
  cmd_sim->add_option("--trace-dir", sim.trace_dir, "Directory for per-seed CSV traces");

  GraspArgs grasp;
  auto* cmd_grasp = app.add_subcommand("grasp-match", "Select a grasp for a cloud from stored templates");
  cmd_grasp->add_option("cloud", grasp.cloud, "Cloud file")->required()->check(CLI::ExistingFile);
  cmd_grasp->add_option("--memory", grasp.memory, "Snapshot or memory JSON")->required()->check(CLI::ExistingFile);
  cmd_grasp->add_option("--affordance", grasp.affordance, "Affordance label")->required();

  ServeArgs serve;
  auto* cmd_serve = app.add_subcommand("serve", "Run the HTTP teaching service");
  cmd_serve->add_option("--host", serve.host, "Listen address");
  cmd_serve->add_option("--port", serve.port, "Listen port")->check(CLI::Range(1, 65535));
  cmd_serve->add_option("--snapshot-dir", serve.snapshot_dir, "Restore from and save to <dir>/memory.json");
  cmd_serve->add_option("--bins", serve.bins, "Bins per projection side")->check(CLI::Range(2, 1000));
  cmd_serve->add_option("--unknown-threshold", serve.unknown_threshold, "Affordance Unknown distance")
      ->check(CLI::PositiveNumber);
  cmd_serve->add_option("--tau", serve.tau, "Accuracy threshold reported by /metrics");

  GenArgs gen;
  auto* cmd_gen = app.add_subcommand("gen-synthetic", "Write a synthetic dataset and its manifest");
  cmd_gen->add_option("root", gen.root, "Output directory")->required();
  cmd_gen->add_option("--spec", gen.spec, "Dataset recipe JSON")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    fail("usage", e.what());
    return exit_usage;
  }

  try {
    if (*cmd_describe) return run_describe(describe);
    if (*cmd_sim) return run_simteach(sim);
    if (*cmd_grasp) return run_grasp(grasp);
    if (*cmd_serve) return run_serve(serve);
    if (*cmd_gen) return run_gen(gen);
  } catch (const oeg::Error& e) {
    fail(oeg::code_name(e.code()), e.what());
    return e.code() == oeg::ErrorCode::invalid_argument ? exit_usage : exit_data;
  } catch (const std::exception& e) {
    fail("internal", e.what());
    return exit_internal;
  }
  return exit_usage;
}

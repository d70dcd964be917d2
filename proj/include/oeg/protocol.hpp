#pragma once

// Simulated teacher for open-ended category learning: introduce a category,
// ask about unseen views of known categories, correct mistakes, and move on
// once windowed accuracy exceeds tau.

#include <oeg/bayes.hpp>
#include <oeg/dataset.hpp>
#include <oeg/good.hpp>

#include <json.hpp>

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace oeg {

struct View {
  std::string id;  // file path or generator key
  GoodDescriptor descriptor;
};

/// Described views grouped by category label.
using ViewSet = std::map<std::string, std::vector<View>>;

/// Describes every file of a dataset with the pose-invariant descriptor.
inline ViewSet describe_dataset(const DatasetHandle& dataset, const GoodSettings& settings = {}) {
  ViewSet out;
  for (const auto& [label, files] : dataset.categories)
    for (const auto& f : files)
      out[label].push_back({f.string(), describe(load_cloud(f), GoodVariant::pose_invariant, settings)});
  return out;
}

inline ViewSet describe_views(const std::map<std::string, std::vector<PointCloud>>& clouds,
                              const GoodSettings& settings = {}) {
  ViewSet out;
  for (const auto& [label, list] : clouds)
    for (std::size_t i = 0; i < list.size(); ++i)
      out[label].push_back({label + "#" + std::to_string(i), describe(list[i], GoodVariant::pose_invariant, settings)});
  return out;
}

enum class EventKind { teach, ask, correct, introduce };
enum class StopReason { breakpoint, lack_of_data };

inline std::string to_string(EventKind k) {
  switch (k) {
    case EventKind::teach: return "teach";
    case EventKind::ask: return "ask";
    case EventKind::correct: return "correct";
    case EventKind::introduce: return "introduce";
  }
  return "ask";
}

inline std::string to_string(StopReason r) { return r == StopReason::breakpoint ? "breakpoint" : "lack_of_data"; }

struct TeachingEvent {
  std::size_t iteration = 0;
  EventKind kind = EventKind::ask;
  std::string category;   // ground truth
  std::string predicted;  // asks only
  bool correct = false;
  std::string view;
  std::optional<double> window_accuracy;  // set on asks where tau was evaluated
};

struct TeachingLog {
  std::vector<TeachingEvent> events;
  StopReason stop_reason = StopReason::lack_of_data;
  std::uint64_t seed = 0;
};

struct ExperimentReport {
  std::size_t qci = 0;
  std::size_t tlc = 0;
  double aic = 0.0;
  double gca = 0.0;
  double apa = 0.0;
  StopReason stop_reason = StopReason::lack_of_data;
  std::uint64_t seed = 0;
};

struct ProtocolConfig {
  double tau = 0.67;
  std::size_t breakpoint_window = 100;
  std::uint64_t seed = 0;
  // sliding window = max(window_per_category * known, min_window)
  std::size_t window_per_category = 3;
  std::size_t min_window = 10;
};

struct ExperimentResult {
  ExperimentReport report;
  TeachingLog log;
  BayesLearner learner;
};

/// Metrics from a finished log. QCI counts question/correction iterations
/// (one per ask); APA averages the windowed accuracies recorded whenever the
/// threshold was evaluated, and falls back to GCA if it never was.
inline ExperimentReport compute_metrics(const TeachingLog& log, const BayesLearner& final_state) {
  ExperimentReport r;
  r.stop_reason = log.stop_reason;
  r.seed = log.seed;
  std::size_t correct = 0;
  double window_sum = 0.0;
  std::size_t windows = 0;
  for (const auto& e : log.events) {
    if (e.kind != EventKind::ask) continue;
    ++r.qci;
    if (e.correct) ++correct;
    if (e.window_accuracy) {
      window_sum += *e.window_accuracy;
      ++windows;
    }
  }
  r.tlc = final_state.categories().size();
  r.aic = r.tlc ? static_cast<double>(final_state.total_instances()) / static_cast<double>(r.tlc) : 0.0;
  r.gca = r.qci ? static_cast<double>(correct) / static_cast<double>(r.qci) : 0.0;
  r.apa = windows ? window_sum / static_cast<double>(windows) : r.gca;
  return r;
}

inline ExperimentResult run_experiment(const ViewSet& dataset, BayesLearner learner, const ProtocolConfig& config) {
  std::size_t total_views = 0;
  for (const auto& [label, views] : dataset) total_views += views.size();
  if (dataset.empty() || total_views == 0) throw Error(ErrorCode::empty_dataset, "dataset has no views");
  if (!(config.tau > 0.0 && config.tau < 1.0)) throw Error(ErrorCode::invalid_argument, "tau must lie in (0, 1)");

  std::mt19937_64 rng(config.seed);
  auto draw = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

  std::vector<std::string> pending;  // categories still to introduce, in order
  std::vector<std::string> known;
  for (const auto& [label, views] : dataset) {
    if (views.empty()) continue;
    (learner.knows(label) ? known : pending).push_back(label);
  }
  std::shuffle(pending.begin(), pending.end(), rng);

  std::map<std::string, std::vector<std::size_t>> unseen;  // popped from the back
  for (const auto& [label, views] : dataset) {
    auto& order = unseen[label];
    for (std::size_t i = 0; i < views.size(); ++i) order.push_back(i);
    std::shuffle(order.begin(), order.end(), rng);
  }

  ExperimentResult result;
  TeachingLog& log = result.log;
  log.seed = config.seed;
  std::size_t iteration = 0;
  std::vector<bool> since_intro;  // ask outcomes since the last introduction

  auto take = [&](const std::string& label) -> const View& {
    const std::size_t idx = unseen[label].back();
    unseen[label].pop_back();
    return dataset.at(label)[idx];
  };

  auto introduce = [&]() {
    while (!pending.empty()) {
      const std::string label = pending.front();
      pending.erase(pending.begin());
      if (unseen[label].empty()) continue;
      const View& v = take(label);
      learner.teach_new_category(label, v.descriptor);
      known.push_back(label);
      log.events.push_back({++iteration, EventKind::introduce, label, "", true, v.id, std::nullopt});
      since_intro.clear();
      return true;
    }
    return false;
  };

  if (known.empty() && !introduce()) throw Error(ErrorCode::empty_dataset, "no category can be introduced");

  for (;;) {
    std::vector<std::string> askable;
    for (const auto& label : known)
      if (!unseen[label].empty()) askable.push_back(label);
    if (askable.empty()) {
      log.stop_reason = StopReason::lack_of_data;
      break;
    }
    const std::string label = askable[draw(askable.size())];
    const View& v = take(label);
    const auto prediction = learner.classify(v.descriptor);
    const bool correct = prediction.label == label;
    log.events.push_back({++iteration, EventKind::ask, label, prediction.label, correct, v.id, std::nullopt});
    const std::size_t ask_index = log.events.size() - 1;
    since_intro.push_back(correct);
    if (!correct) {
      learner.correct_category(label, v.descriptor);
      log.events.push_back({++iteration, EventKind::correct, label, prediction.label, false, v.id, std::nullopt});
    }

    const std::size_t window = std::max(config.window_per_category * known.size(), config.min_window);
    if (since_intro.size() >= window) {
      const auto hits = std::count(since_intro.end() - static_cast<std::ptrdiff_t>(window), since_intro.end(), true);
      const double accuracy = static_cast<double>(hits) / static_cast<double>(window);
      log.events[ask_index].window_accuracy = accuracy;
      if (accuracy > config.tau) {
        if (!introduce()) {
          log.stop_reason = StopReason::lack_of_data;
          break;
        }
        continue;
      }
    }
    if (since_intro.size() >= config.breakpoint_window) {
      log.stop_reason = StopReason::breakpoint;
      break;
    }
  }

  result.report = compute_metrics(log, learner);
  result.learner = std::move(learner);
  return result;
}

inline ExperimentResult run_experiment(const DatasetHandle& dataset, BayesLearner learner, const ProtocolConfig& config,
                                       const GoodSettings& settings = {}) {
  return run_experiment(describe_dataset(dataset, settings), std::move(learner), config);
}

inline nlohmann::json to_json(const ExperimentReport& r) {
  return {{"QCI", r.qci}, {"TLC", r.tlc}, {"AIC", r.aic},  {"GCA", r.gca},
          {"APA", r.apa}, {"stop_reason", to_string(r.stop_reason)}, {"seed", r.seed}};
}

inline nlohmann::json to_json(const TeachingLog& log) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : log.events) {
    nlohmann::json j{{"iteration", e.iteration}, {"kind", to_string(e.kind)}, {"category", e.category},
                     {"predicted", e.predicted},  {"correct", e.correct},       {"view", e.view}};
    if (e.window_accuracy) j["window_accuracy"] = *e.window_accuracy;
    events.push_back(std::move(j));
  }
  return {{"seed", log.seed}, {"stop_reason", to_string(log.stop_reason)}, {"events", events}};
}

/// Per-iteration trace: iteration,kind,category,predicted,window_accuracy.
inline std::string trace_csv(const TeachingLog& log) {
  std::string out = "iteration,kind,category,predicted,window_accuracy\n";
  for (const auto& e : log.events) {
    out += std::to_string(e.iteration) + ',' + to_string(e.kind) + ',' + e.category + ',' + e.predicted + ',';
    if (e.window_accuracy) out += format_real(*e.window_accuracy);
    out += '\n';
  }
  return out;
}

}  // namespace oeg

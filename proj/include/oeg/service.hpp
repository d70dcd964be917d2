#pragma once

// Teaching session: tracked objects plus the category, affordance and grasp
// memories, driven by the Select/Teach/Ask/Correct/Teach-grasp/Grasp verbs.
// Transport-free; see http.hpp for the HTTP binding.

#include <oeg/affordance.hpp>
#include <oeg/bayes.hpp>
#include <oeg/cloud.hpp>
#include <oeg/error.hpp>
#include <oeg/good.hpp>
#include <oeg/grasp.hpp>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>

namespace oeg {

struct ServiceConfig {
  GoodSettings good;
  double unknown_threshold = AffordanceMemory::default_unknown_threshold;
  double tau = 0.67;
  GraspParams grasp;
  std::optional<std::filesystem::path> snapshot_dir;
  bool check_invariants = true;  // after every mutation
};

struct TrackedObject {
  std::uint64_t track_id = 0;
  PointCloud cloud;
  std::optional<std::string> category;    // last taught or corrected label
  std::optional<std::string> predicted;   // last answer to an ask
  std::optional<std::string> affordance;  // last taught affordance label
  LocalReferenceFrame pose_frame;         // gravity-aligned
  GoodDescriptor shape;                   // pose-invariant, for categories
  GoodDescriptor posed;                   // gravity-aligned, for affordances
};

namespace detail {

inline Vector3 json_vec3(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::invalid_argument, std::string(what) + " must be [x, y, z]");
  Vector3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw Error(ErrorCode::invalid_argument, std::string(what) + " must hold numbers");
    v[i] = j[i].get<double>();
  }
  if (!all_finite(v)) throw Error(ErrorCode::invalid_argument, std::string(what) + " must be finite");
  return v;
}

inline nlohmann::json vec3_json(const Vector3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

inline const nlohmann::json& field(const nlohmann::json& body, const char* name) {
  if (!body.is_object() || !body.contains(name))
    throw Error(ErrorCode::invalid_argument, std::string("missing field '") + name + "'");
  return body.at(name);
}

inline std::string string_field(const nlohmann::json& body, const char* name) {
  const auto& v = field(body, name);
  if (!v.is_string() || v.get<std::string>().empty())
    throw Error(ErrorCode::invalid_argument, std::string("field '") + name + "' must be a non-empty string");
  return v.get<std::string>();
}

inline nlohmann::json optional_string(const std::optional<std::string>& s) {
  return s ? nlohmann::json(*s) : nlohmann::json(nullptr);
}

}  // namespace detail

/// Accepts {"format": "xyz"|"pcd", "data": text} or
/// {"points": [[x,y,z],...], "normals": [[nx,ny,nz],...]?}.
inline PointCloud cloud_from_json(const nlohmann::json& body) {
  if (!body.is_object()) throw Error(ErrorCode::invalid_argument, "cloud body must be an object");
  if (body.contains("points")) {
    const auto& pts = body.at("points");
    if (!pts.is_array()) throw Error(ErrorCode::invalid_argument, "'points' must be an array");
    PointCloud cloud;
    for (const auto& p : pts) cloud.points.push_back(detail::json_vec3(p, "point"));
    if (body.contains("normals")) {
      const auto& ns = body.at("normals");
      if (!ns.is_array() || ns.size() != pts.size())
        throw Error(ErrorCode::invalid_argument, "'normals' must match 'points' in length");
      for (std::size_t i = 0; i < ns.size(); ++i) cloud.normals.push_back(detail::checked_normal(detail::json_vec3(ns[i], "normal"), i + 1));
    }
    if (cloud.empty()) throw Error(ErrorCode::empty_cloud, "cloud has no points");
    return cloud;
  }
  const std::string format = body.value("format", std::string("xyz"));
  CloudFormat fmt;
  if (format == "xyz") fmt = CloudFormat::xyz;
  else if (format == "pcd" || format == "pcd_ascii") fmt = CloudFormat::pcd_ascii;
  else throw Error(ErrorCode::invalid_argument, "unknown cloud format '" + format + "'");
  const auto& data = detail::field(body, "data");
  if (!data.is_string()) throw Error(ErrorCode::invalid_argument, "'data' must be a string");
  return parse_cloud(data.get<std::string>(), fmt);
}

inline nlohmann::json cloud_to_json(const PointCloud& cloud) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : cloud.points) pts.push_back(detail::vec3_json(p));
  nlohmann::json j{{"points", pts}};
  if (cloud.has_normals()) {
    nlohmann::json ns = nlohmann::json::array();
    for (const auto& n : cloud.normals) ns.push_back(detail::vec3_json(n));
    j["normals"] = ns;
  }
  return j;
}

inline EndEffectorPose pose_from_json(const nlohmann::json& j) {
  const Vector3 p = detail::json_vec3(detail::field(j, "position"), "pose.position");
  const auto& q = detail::field(j, "quaternion");
  if (!q.is_array() || q.size() != 4) throw Error(ErrorCode::invalid_argument, "pose.quaternion must be [w, x, y, z]");
  for (const auto& c : q)
    if (!c.is_number()) throw Error(ErrorCode::invalid_argument, "pose.quaternion must hold numbers");
  return EndEffectorPose::make(p, Eigen::Quaterniond(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                                                     q[3].get<double>()));
}

inline nlohmann::json pose_to_json(const EndEffectorPose& pose) {
  const auto& q = pose.orientation;
  return {{"position", detail::vec3_json(pose.position)}, {"quaternion", {q.w(), q.x(), q.y(), q.z()}}};
}

/// One teaching session. Mutations take an exclusive lock and validate every
/// input before touching state, so a failed request changes nothing; reads
/// share the lock.
class Session {
 public:
  explicit Session(ServiceConfig config = {}) : config_(std::move(config)), affordances_(config_.unknown_threshold) {
    if (!(config_.tau > 0.0 && config_.tau < 1.0)) throw Error(ErrorCode::invalid_argument, "tau must lie in (0, 1)");
  }

  const ServiceConfig& config() const { return config_; }

  // Select: register a perceived object and describe it both ways.
  std::uint64_t add_object(PointCloud cloud) {
    TrackedObject obj = make_object(std::move(cloud));
    std::unique_lock lock(mutex_);
    obj.track_id = next_track_id_++;
    const auto id = obj.track_id;
    objects_.emplace(id, std::move(obj));
    return id;
  }

  nlohmann::json add_object_json(const nlohmann::json& body) {
    const auto id = add_object(cloud_from_json(body));
    return {{"track_id", id}};
  }

  // Teach-category: new label starts a category, a known one adds an instance.
  nlohmann::json teach(std::uint64_t track_id, const std::string& category) {
    std::unique_lock lock(mutex_);
    TrackedObject& obj = object(track_id);
    const bool known = learner_.knows(category);
    if (known) learner_.correct_category(category, obj.shape);
    else learner_.teach_new_category(category, obj.shape);
    obj.category = category;
    verify();
    return {{"track_id", track_id}, {"category", category}, {"action", known ? "correct" : "teach"}};
  }

  // Ask-category: predicted category plus recognized affordance.
  nlohmann::json ask(std::uint64_t track_id) {
    std::unique_lock lock(mutex_);
    TrackedObject& obj = object(track_id);
    const ClassificationResult c = learner_.classify(obj.shape);
    const AffordanceMatch a = affordances_.recognize(obj.posed);
    obj.predicted = c.label;
    ++asks_;
    return {{"track_id", track_id},
            {"category", c.label},
            {"log_posterior", c.log_posterior},
            {"scores", c.per_category_scores},
            {"affordance", a.label.value_or("Unknown")},
            {"affordance_distance", a.instance_id ? nlohmann::json(a.distance) : nlohmann::json(nullptr)}};
  }

  // Correct-category: the category must already exist. A correction that
  // contradicts the last answer for this object counts as a wrong answer.
  nlohmann::json correct(std::uint64_t track_id, const std::string& category) {
    std::unique_lock lock(mutex_);
    TrackedObject& obj = object(track_id);
    learner_.correct_category(category, obj.shape);
    if (obj.predicted && *obj.predicted != category) ++mistakes_;
    obj.predicted.reset();
    obj.category = category;
    verify();
    return {{"track_id", track_id}, {"category", category}, {"action", "correct"}};
  }

  nlohmann::json teach_affordance(std::uint64_t track_id, const std::string& label) {
    std::unique_lock lock(mutex_);
    TrackedObject& obj = object(track_id);
    // store the instance as it will be persisted so a restore answers identically
    const auto id = affordances_.teach(label, nlohmann::json(obj.posed).get<GoodDescriptor>());
    obj.affordance = label;
    verify();
    return {{"track_id", track_id}, {"affordance", label}, {"instance_id", id}};
  }

  nlohmann::json teach_grasp(std::uint64_t track_id, const std::string& affordance, const GraspLine& line,
                             const Vector3& approach, const EndEffectorPose& pose) {
    std::unique_lock lock(mutex_);
    TrackedObject& obj = object(track_id);
    const auto id = grasps_.teach(affordance, obj.cloud, line, approach, pose, config_.grasp);
    verify();
    const GraspTemplate& t = grasps_.templates().back();
    return {{"track_id", track_id}, {"template_id", id}, {"affordance", affordance}, {"radius", t.radius}};
  }

  nlohmann::json teach_grasp_json(std::uint64_t track_id, const nlohmann::json& body) {
    const std::string affordance = detail::string_field(body, "affordance");
    const auto& gl = detail::field(body, "grasp_line");
    GraspLine line{detail::json_vec3(detail::field(gl, "point"), "grasp_line.point"),
                   detail::json_vec3(detail::field(gl, "direction"), "grasp_line.direction")};
    const Vector3 approach = detail::json_vec3(detail::field(body, "approach"), "approach");
    const EndEffectorPose pose = pose_from_json(detail::field(body, "pose"));
    return teach_grasp(track_id, affordance, line, approach, pose);
  }

  // Grasp: with no affordance given, the object's recognized affordance is used.
  nlohmann::json grasp(std::uint64_t track_id, std::optional<std::string> affordance = std::nullopt) const {
    std::shared_lock lock(mutex_);
    const TrackedObject& obj = object(track_id);
    double recognized_distance = 0.0;
    bool recognized = false;
    if (!affordance) {
      const AffordanceMatch a = affordances_.recognize(obj.posed);
      if (a.unknown()) throw Error(ErrorCode::unknown_affordance, "the object's affordance is Unknown");
      affordance = a.label;
      recognized_distance = a.distance;
      recognized = true;
    }
    const GraspDetection d = detect_grasp(grasps_, *affordance, obj.cloud, config_.grasp);
    nlohmann::json out{{"track_id", track_id},
                       {"affordance", *affordance},
                       {"keypoint", {{"index", d.keypoint}, {"position", detail::vec3_json(obj.cloud.points[d.keypoint])}}},
                       {"template_id", d.grasp.id},
                       {"pose", pose_to_json(d.grasp.pose)},
                       {"distance", d.distance}};
    if (recognized) out["affordance_distance"] = recognized_distance;
    return out;
  }

  nlohmann::json object_json(std::uint64_t track_id) const {
    std::shared_lock lock(mutex_);
    return describe_object(object(track_id));
  }

  nlohmann::json learner_snapshot() const {
    std::shared_lock lock(mutex_);
    return learner_.snapshot();
  }

  /// Everything a client needs to rebuild its view of the session.
  nlohmann::json memory() const {
    std::shared_lock lock(mutex_);
    return memory_unlocked();
  }

  nlohmann::json metrics() const {
    std::shared_lock lock(mutex_);
    const double gca = asks_ ? static_cast<double>(asks_ - mistakes_) / static_cast<double>(asks_) : 0.0;
    return {{"asks", asks_},
            {"mistakes", mistakes_},
            {"gca", gca},
            {"tau", config_.tau},
            {"above_tau", asks_ > 0 && gca > config_.tau},
            {"categories", learner_.categories().size()},
            {"config",
             {{"bins", config_.good.bins_per_side}, {"unknown_threshold", affordances_.unknown_threshold()}}}};
  }

  /// Full persisted state: the memory view plus the raw clouds.
  nlohmann::json snapshot() const {
    std::shared_lock lock(mutex_);
    nlohmann::json clouds = nlohmann::json::object();
    for (const auto& [id, obj] : objects_) clouds[std::to_string(id)] = cloud_to_json(obj.cloud);
    return {{"memory", memory_unlocked()}, {"clouds", clouds}};
  }

  void restore(const nlohmann::json& snap) {
    try {
      const auto& mem = snap.at("memory");
      BayesLearner learner = BayesLearner::restore(mem.at("learner"));
      AffordanceMemory affordances = AffordanceMemory::from_json(mem.at("affordances"), config_.unknown_threshold);
      GraspMemory grasps = GraspMemory::from_json(mem.at("grasps"));
      std::map<std::uint64_t, TrackedObject> objects;
      for (const auto& o : mem.at("objects")) {
        const auto id = o.at("track_id").get<std::uint64_t>();
        TrackedObject obj = make_object(cloud_from_json(snap.at("clouds").at(std::to_string(id))));
        obj.track_id = id;
        auto opt = [&](const char* k) -> std::optional<std::string> {
          if (!o.contains(k) || o.at(k).is_null()) return std::nullopt;
          return o.at(k).get<std::string>();
        };
        obj.category = opt("category");
        obj.predicted = opt("predicted");
        obj.affordance = opt("affordance");
        objects.emplace(id, std::move(obj));
      }
      const auto& counters = mem.at("counters");
      std::unique_lock lock(mutex_);
      learner_ = std::move(learner);
      affordances_ = std::move(affordances);
      grasps_ = std::move(grasps);
      objects_ = std::move(objects);
      next_track_id_ = counters.at("next_track_id").get<std::uint64_t>();
      asks_ = counters.at("asks").get<std::size_t>();
      mistakes_ = counters.at("mistakes").get<std::size_t>();
      if (!objects_.empty() && next_track_id_ <= objects_.rbegin()->first)
        throw Error(ErrorCode::corrupt_snapshot, "next_track_id is not above every stored track id");
      verify();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::corrupt_snapshot, std::string("session snapshot: ") + e.what());
    }
  }

  std::filesystem::path snapshot_path() const {
    if (!config_.snapshot_dir) throw Error(ErrorCode::invalid_argument, "no snapshot directory configured");
    return *config_.snapshot_dir / "memory.json";
  }

  /// Written to a temporary file first, then renamed into place.
  void save_snapshot() const {
    const auto path = snapshot_path();
    std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      out << snapshot().dump();
      if (!out) throw Error(ErrorCode::io_error, "cannot write " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

  /// Restores from the snapshot directory if a snapshot exists there.
  bool load_snapshot() {
    const auto path = snapshot_path();
    if (!std::filesystem::exists(path)) return false;
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::corrupt_snapshot, path.string() + ": " + e.what());
    }
    restore(j);
    return true;
  }

 private:
  TrackedObject make_object(PointCloud cloud) const {
    detail::require_nonempty(cloud, "add_object");
    TrackedObject obj;
    obj.pose_frame = build_lrf_gravity_aligned(cloud, config_.good.gravity, Degeneracy::tie_break);
    obj.shape = describe(cloud, GoodVariant::pose_invariant, config_.good);
    obj.posed = compute_good(cloud, obj.pose_frame, config_.good.bins_per_side, GoodVariant::gravity_aligned);
    obj.cloud = std::move(cloud);
    return obj;
  }

  TrackedObject& object(std::uint64_t id) {
    auto it = objects_.find(id);
    if (it == objects_.end()) throw Error(ErrorCode::not_found, "unknown track_id " + std::to_string(id));
    return it->second;
  }

  const TrackedObject& object(std::uint64_t id) const { return const_cast<Session*>(this)->object(id); }

  static nlohmann::json describe_object(const TrackedObject& o) {
    return {{"track_id", o.track_id},
            {"point_count", o.cloud.size()},
            {"category", detail::optional_string(o.category)},
            {"predicted", detail::optional_string(o.predicted)},
            {"affordance", detail::optional_string(o.affordance)},
            {"pose_frame", o.pose_frame},
            {"descriptors", {{"pose_invariant", o.shape}, {"gravity_aligned", o.posed}}}};
  }

  nlohmann::json memory_unlocked() const {
    nlohmann::json objects = nlohmann::json::array();
    for (const auto& [id, obj] : objects_) objects.push_back(describe_object(obj));
    return {{"learner", learner_.snapshot()},
            {"affordances", affordances_.to_json()},
            {"grasps", grasps_.to_json()},
            {"objects", objects},
            {"counters", {{"next_track_id", next_track_id_}, {"asks", asks_}, {"mistakes", mistakes_}}}};
  }

  void verify() const {
    if (!config_.check_invariants) return;
    learner_.check_invariants();
    affordances_.check_invariants();
    grasps_.check_invariants();
    if (!affordances_.empty() && affordances_.instances().front().descriptor.bins_per_side != config_.good.bins_per_side)
      throw std::logic_error("session: affordance descriptors do not match the configured bins");
  }

  ServiceConfig config_;
  mutable std::shared_mutex mutex_;
  std::map<std::uint64_t, TrackedObject> objects_;
  BayesLearner learner_;
  AffordanceMemory affordances_;
  GraspMemory grasps_;
  std::uint64_t next_track_id_ = 1;
  std::size_t asks_ = 0;
  std::size_t mistakes_ = 0;
};

}  // namespace oeg

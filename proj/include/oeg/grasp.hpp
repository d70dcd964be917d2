#pragma once

// Grasp templates: a spin image around a grasp keypoint plus the keypoint's
// distance to the view's box centre, matched under a diagonal Mahalanobis
// metric within one affordance category.

#include <oeg/cloud.hpp>
#include <oeg/good.hpp>

#include <Eigen/Geometry>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace oeg {

struct EndEffectorPose {
  Point3 position = Point3::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();

  /// Accepts quaternions within 1e-6 of unit norm and renormalizes them.
  static EndEffectorPose make(const Point3& position, const Eigen::Quaterniond& q) {
    if (!detail::all_finite(position) || std::abs(q.norm() - 1.0) > 1e-6)
      throw Error(ErrorCode::invalid_argument, "end-effector orientation must be a unit quaternion");
    return {position, q.normalized()};
  }
};

struct GraspLine {
  Point3 point = Point3::Zero();
  Vector3 direction = Vector3::UnitZ();
};

struct SpinImage {
  int width = 0;
  double support = 0.0;
  std::vector<double> values;  // width*width, row = beta bin, column = alpha bin
};

struct GraspTemplate {
  std::uint64_t id = 0;
  std::string affordance_label;
  SpinImage spin;
  double radius = 0.0;
  EndEffectorPose pose;
};

struct GraspParams {
  int spin_width = 8;
  double support_length = 0.09;
  double normal_radius = 0.03;
  double line_band = 0.01;
  double variance_floor = 1e-6;
  std::size_t max_candidates = 200;
  Vector3 gravity = -Vector3::UnitZ();
  Point3 viewpoint = Point3::Zero();
};

using Reachability = std::function<bool(const EndEffectorPose&)>;

inline bool always_reachable(const EndEffectorPose&) { return true; }

struct GraspDetection {
  std::size_t keypoint = 0;
  GraspTemplate grasp;
  double distance = 0.0;
};

inline double distance_to_line(const Point3& p, const GraspLine& line) {
  const Vector3 d = line.direction.normalized();
  const Vector3 r = p - line.point;
  return (r - r.dot(d) * d).norm();
}

/// Keypoint for a demonstrated grasp: among points within `band` of the grasp
/// line, the one furthest toward the arm (largest projection on -approach).
/// Falls back to the point nearest the line when the band is empty.
inline std::size_t select_keypoint(const PointCloud& cloud, const GraspLine& line, const Vector3& approach,
                                   double band = 0.01) {
  detail::require_nonempty(cloud, "select_keypoint");
  const Vector3 toward_arm = -approach.normalized();
  std::optional<std::size_t> facing;
  double facing_score = -std::numeric_limits<double>::infinity();
  std::size_t nearest = 0;
  double nearest_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double d = distance_to_line(cloud.points[i], line);
    if (d < nearest_dist) {
      nearest_dist = d;
      nearest = i;
    }
    if (d <= band) {
      const double s = cloud.points[i].dot(toward_arm);
      if (s > facing_score) {
        facing_score = s;
        facing = i;
      }
    }
  }
  return facing.value_or(nearest);
}

namespace detail {

// Bin of u in [0, 1] scaled by `bins`; values within 1e-9 of a boundary snap
// upward so analytically placed points land in their nominal bin.
inline std::size_t unit_bin(double u, int bins) {
  const double t = u * bins + 1e-9;
  if (t <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(bins - 1), static_cast<std::size_t>(std::floor(t)));
}

}  // namespace detail

/// Spin image at `keypoint` with an explicit surface normal. Points with
/// alpha in [0, S] and beta in [-S/2, S/2] are hard-binned; the result sums to
/// one unless nothing fell in range.
inline SpinImage compute_spin_image(const PointCloud& cloud, std::size_t keypoint, const Vector3& normal, int width,
                                    double support) {
  detail::require_nonempty(cloud, "compute_spin_image");
  if (keypoint >= cloud.size()) throw Error(ErrorCode::invalid_argument, "compute_spin_image: keypoint out of range");
  if (width < 1 || !(support > 0.0)) throw Error(ErrorCode::invalid_argument, "compute_spin_image: bad geometry");
  const Point3& p = cloud.points[keypoint];
  const Vector3 n = normal.normalized();
  SpinImage img{width, support, std::vector<double>(static_cast<std::size_t>(width * width), 0.0)};
  double total = 0.0;
  for (const auto& q : cloud.points) {
    const Vector3 d = q - p;
    const double beta = n.dot(d);
    const double alpha = std::sqrt(std::max(0.0, d.squaredNorm() - beta * beta));
    if (alpha > support || std::abs(beta) > support / 2) continue;
    const std::size_t col = detail::unit_bin(alpha / support, width);
    const std::size_t row = detail::unit_bin((beta + support / 2) / support, width);
    img.values[row * static_cast<std::size_t>(width) + col] += 1.0;
    total += 1.0;
  }
  if (total > 0)
    for (auto& v : img.values) v /= total;
  return img;
}

inline SpinImage compute_spin_image(const PointCloud& cloud, std::size_t keypoint, const GraspParams& params = {}) {
  const Vector3 n = estimate_normal(cloud, keypoint, params.normal_radius, params.viewpoint);
  return compute_spin_image(cloud, keypoint, n, params.spin_width, params.support_length);
}

/// Distance from the keypoint to the centre of the view's gravity-aligned box.
inline double radius_feature(const PointCloud& cloud, std::size_t keypoint, const Vector3& gravity = -Vector3::UnitZ()) {
  detail::require_nonempty(cloud, "radius_feature");
  if (keypoint >= cloud.size()) throw Error(ErrorCode::invalid_argument, "radius_feature: keypoint out of range");
  const auto lrf = build_lrf_gravity_aligned(cloud, gravity, Degeneracy::tie_break);
  return (cloud.points[keypoint] - bounding_box(cloud, lrf.rotation()).center).norm();
}

/// Row-major spin image followed by the radius.
inline std::vector<double> grasp_feature(const SpinImage& spin, double radius) {
  std::vector<double> f = spin.values;
  f.push_back(radius);
  return f;
}

inline std::vector<double> grasp_feature(const GraspTemplate& t) { return grasp_feature(t.spin, t.radius); }

/// Per-dimension population variance over the templates, floored.
inline std::vector<double> feature_variances(const std::vector<const GraspTemplate*>& templates, double floor) {
  if (templates.empty()) return {};
  const std::size_t dims = grasp_feature(*templates.front()).size();
  std::vector<double> mean(dims, 0.0), var(dims, 0.0);
  for (const auto* t : templates) {
    const auto f = grasp_feature(*t);
    for (std::size_t i = 0; i < dims; ++i) mean[i] += f[i];
  }
  for (auto& m : mean) m /= static_cast<double>(templates.size());
  for (const auto* t : templates) {
    const auto f = grasp_feature(*t);
    for (std::size_t i = 0; i < dims; ++i) var[i] += (f[i] - mean[i]) * (f[i] - mean[i]);
  }
  for (auto& v : var) v = std::max(v / static_cast<double>(templates.size()), floor);
  return var;
}

inline double mahalanobis_diagonal(const std::vector<double>& a, const std::vector<double>& b,
                                   const std::vector<double>& variances) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]) / variances[i];
  return std::sqrt(s);
}

/// Every k-th point, k chosen so at most `max_candidates` indices come back.
inline std::vector<std::size_t> default_candidates(const PointCloud& cloud, std::size_t max_candidates = 200) {
  std::vector<std::size_t> out;
  if (cloud.empty() || max_candidates == 0) return out;
  const std::size_t step = (cloud.size() + max_candidates - 1) / max_candidates;
  for (std::size_t i = 0; i < cloud.size(); i += step) out.push_back(i);
  return out;
}

class GraspMemory {
 public:
  const std::vector<GraspTemplate>& templates() const { return templates_; }
  std::size_t size() const { return templates_.size(); }

  std::vector<const GraspTemplate*> of_affordance(const std::string& label) const {
    std::vector<const GraspTemplate*> out;
    for (const auto& t : templates_)
      if (t.affordance_label == label) out.push_back(&t);
    return out;
  }

  /// Builds a template from a demonstrated grasp and stores it; returns its id.
  std::uint64_t teach(const std::string& affordance_label, const PointCloud& cloud, const GraspLine& line,
                      const Vector3& approach, const EndEffectorPose& pose, const GraspParams& params = {}) {
    if (affordance_label.empty()) throw Error(ErrorCode::invalid_argument, "affordance label must be non-empty");
    const std::size_t key = select_keypoint(cloud, line, approach, params.line_band);
    GraspTemplate t;
    t.affordance_label = affordance_label;
    t.spin = compute_spin_image(cloud, key, params);
    t.radius = radius_feature(cloud, key, params.gravity);
    t.pose = pose;
    return add(std::move(t));
  }

  std::uint64_t add(GraspTemplate t) {
    if (!templates_.empty()) {
      const auto& first = templates_.front().spin;
      if (t.spin.width != first.width || t.spin.values.size() != first.values.size())
        throw Error(ErrorCode::dimension_mismatch, "spin image geometry differs from stored templates");
    }
    if (t.radius < 0) throw Error(ErrorCode::invalid_argument, "radius must be >= 0");
    t.id = next_id_++;
    templates_.push_back(std::move(t));
    return templates_.back().id;
  }

  void check_invariants() const {
    for (std::size_t i = 0; i < templates_.size(); ++i) {
      const auto& t = templates_[i];
      if (i > 0 && t.id <= templates_[i - 1].id) throw std::logic_error("grasp memory: ids not unique");
      if (t.radius < 0 || t.spin.values.size() != static_cast<std::size_t>(t.spin.width * t.spin.width))
        throw std::logic_error("grasp memory: malformed template");
      if (std::abs(t.pose.orientation.norm() - 1.0) > 1e-9) throw std::logic_error("grasp memory: non-unit quaternion");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& t : templates_) {
      const auto& q = t.pose.orientation;
      list.push_back({{"id", t.id},
                      {"affordance_label", t.affordance_label},
                      {"spin", {{"width", t.spin.width}, {"support", t.spin.support}, {"values", t.spin.values}}},
                      {"radius", t.radius},
                      {"pose",
                       {{"position", {t.pose.position.x(), t.pose.position.y(), t.pose.position.z()}},
                        {"quaternion", {q.w(), q.x(), q.y(), q.z()}}}}});
    }
    return list;
  }

  static GraspMemory from_json(const nlohmann::json& j) {
    GraspMemory m;
    try {
      for (const auto& e : j) {
        GraspTemplate t;
        t.id = e.at("id").get<std::uint64_t>();
        t.affordance_label = e.at("affordance_label").get<std::string>();
        t.spin.width = e.at("spin").at("width").get<int>();
        t.spin.support = e.at("spin").at("support").get<double>();
        t.spin.values = e.at("spin").at("values").get<std::vector<double>>();
        t.radius = e.at("radius").get<double>();
        const auto p = e.at("pose").at("position").get<std::vector<double>>();
        const auto q = e.at("pose").at("quaternion").get<std::vector<double>>();
        if (p.size() != 3 || q.size() != 4 || t.spin.width < 1 ||
            t.spin.values.size() != static_cast<std::size_t>(t.spin.width * t.spin.width))
          throw Error(ErrorCode::corrupt_snapshot, "grasp template " + std::to_string(t.id) + " is malformed");
        t.pose = EndEffectorPose::make(Point3(p[0], p[1], p[2]), Eigen::Quaterniond(q[0], q[1], q[2], q[3]));
        if (!m.templates_.empty() && t.id <= m.templates_.back().id)
          throw Error(ErrorCode::corrupt_snapshot, "grasp template ids must be increasing");
        m.next_id_ = t.id + 1;
        m.templates_.push_back(std::move(t));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::corrupt_snapshot, std::string("grasp memory: ") + e.what());
    }
    return m;
  }

 private:
  std::vector<GraspTemplate> templates_;
  std::uint64_t next_id_ = 1;
};

/// Scores every (candidate keypoint, template) pair of the affordance and
/// returns the closest pair whose template pose is reachable. Candidates
/// whose normal cannot be estimated are skipped.
inline GraspDetection detect_grasp(const GraspMemory& memory, const std::string& affordance_label,
                                   const PointCloud& cloud, const std::vector<std::size_t>& candidates,
                                   const Reachability& reachable = always_reachable, const GraspParams& params = {}) {
  const auto templates = memory.of_affordance(affordance_label);
  if (templates.empty())
    throw Error(ErrorCode::no_templates_for_affordance, "no grasp templates for affordance '" + affordance_label + "'");
  detail::require_nonempty(cloud, "detect_grasp");
  const auto variances = feature_variances(templates, params.variance_floor);

  std::vector<std::vector<double>> template_features;
  for (const auto* t : templates) template_features.push_back(grasp_feature(*t));

  struct Scored {
    double distance;
    std::size_t candidate_rank;
    std::size_t template_rank;
  };
  std::vector<Scored> pairs;
  std::size_t usable = 0;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    std::vector<double> f;
    try {
      const SpinImage spin = compute_spin_image(cloud, candidates[c], params);
      if (spin.width != templates.front()->spin.width) throw Error(ErrorCode::dimension_mismatch, "spin width");
      f = grasp_feature(spin, radius_feature(cloud, candidates[c], params.gravity));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::insufficient_neighbors) continue;
      throw;
    }
    ++usable;
    for (std::size_t t = 0; t < templates.size(); ++t)
      pairs.push_back({mahalanobis_diagonal(f, template_features[t], variances), c, t});
  }
  if (usable == 0)
    throw Error(ErrorCode::insufficient_neighbors, "detect_grasp: no candidate keypoint has an estimable normal");

  std::sort(pairs.begin(), pairs.end(), [](const Scored& a, const Scored& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    if (a.candidate_rank != b.candidate_rank) return a.candidate_rank < b.candidate_rank;
    return a.template_rank < b.template_rank;
  });
  for (const auto& s : pairs) {
    const GraspTemplate& t = *templates[s.template_rank];
    if (reachable(t.pose)) return {candidates[s.candidate_rank], t, s.distance};
  }
  throw Error(ErrorCode::no_reachable_grasp, "no reachable grasp among " + std::to_string(pairs.size()) + " pairs");
}

inline GraspDetection detect_grasp(const GraspMemory& memory, const std::string& affordance_label,
                                   const PointCloud& cloud, const GraspParams& params = {}) {
  return detect_grasp(memory, affordance_label, cloud, default_candidates(cloud, params.max_candidates),
                      always_reachable, params);
}

}  // namespace oeg

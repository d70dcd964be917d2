#pragma once

// Global orthographic object descriptor: three binned orthographic projections
// of a view expressed in an object-attached reference frame.

#include <oeg/cloud.hpp>

#include <json.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace oeg {

enum class GoodVariant { pose_invariant, gravity_aligned };

inline std::string to_string(GoodVariant v) {
  return v == GoodVariant::pose_invariant ? "pose_invariant" : "gravity_aligned";
}

inline GoodVariant parse_variant(const std::string& s) {
  if (s == "pose_invariant" || s == "pose") return GoodVariant::pose_invariant;
  if (s == "gravity_aligned" || s == "gravity") return GoodVariant::gravity_aligned;
  throw Error(ErrorCode::invalid_argument, "unknown descriptor variant '" + s + "'");
}

/// Right-handed orthonormal frame anchored at the object centroid.
struct LocalReferenceFrame {
  Point3 origin = Point3::Zero();
  Vector3 x_axis = Vector3::UnitX();
  Vector3 y_axis = Vector3::UnitY();
  Vector3 z_axis = Vector3::UnitZ();

  /// Columns are the axes, so `rotation().transpose() * (p - origin)` gives
  /// frame coordinates.
  Matrix3 rotation() const {
    Matrix3 r;
    r.col(0) = x_axis;
    r.col(1) = y_axis;
    r.col(2) = z_axis;
    return r;
  }

  Vector3 to_local(const Point3& p) const { return rotation().transpose() * (p - origin); }
};

struct GoodDescriptor {
  int bins_per_side = 0;
  std::vector<double> values;  // [XoZ | YoZ | XoY], each b*b row-major
  GoodVariant variant = GoodVariant::pose_invariant;
  std::size_t point_count = 0;  // points binned; 0 when unknown

  std::size_t size() const { return values.size(); }
  bool operator==(const GoodDescriptor&) const = default;
};

struct GoodSettings {
  int bins_per_side = 15;
  Vector3 gravity = -Vector3::UnitZ();
};

/// How LRF construction treats clouds that do not determine a frame.
enum class Degeneracy { reject, tie_break };

namespace detail {

// Orient `axis` so the strictly larger share of points lies on its positive
// side; an exact tie falls back to the world-axis preference.
inline Vector3 disambiguate_sign(const PointCloud& cloud, const Point3& origin, const Vector3& axis) {
  std::size_t pos = 0, neg = 0;
  for (const auto& p : cloud.points) {
    const double d = (p - origin).dot(axis);
    if (d > 0) ++pos;
    else if (d < 0) ++neg;
  }
  if (pos > neg) return axis;
  if (neg > pos) return -axis;
  return prefer_world_positive(axis);
}

inline std::size_t projection_bin(double u, double half_width, int bins) {
  if (!(half_width > 0.0)) return static_cast<std::size_t>(bins / 2);
  const double t = (u + half_width) / (2.0 * half_width) * bins;
  if (t <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(bins - 1), static_cast<std::size_t>(std::floor(t)));
}

}  // namespace detail

/// PCA frame: X along the largest variance, Z along the smallest, both signs
/// fixed by point counts, Y = Z x X.
inline LocalReferenceFrame build_lrf_pose_invariant(const PointCloud& cloud,
                                                    Degeneracy policy = Degeneracy::reject) {
  detail::require_nonempty(cloud, "build_lrf_pose_invariant");
  const PcaResult pca = pca_axes(cloud);
  if (pca.rank < 2 && policy == Degeneracy::reject)
    throw Error(ErrorCode::degenerate_cloud, "build_lrf_pose_invariant: cloud is collinear or a single point");
  LocalReferenceFrame lrf;
  lrf.origin = centroid(cloud);
  lrf.x_axis = detail::disambiguate_sign(cloud, lrf.origin, pca.eigenvectors[0]);
  lrf.z_axis = detail::disambiguate_sign(cloud, lrf.origin, pca.eigenvectors[2]);
  lrf.y_axis = lrf.z_axis.cross(lrf.x_axis).normalized();
  return lrf;
}

/// Table-aligned frame: Z opposes gravity, X is the dominant horizontal
/// direction of the view projected on the table, Y = Z x X.
inline LocalReferenceFrame build_lrf_gravity_aligned(const PointCloud& cloud, const Vector3& gravity = -Vector3::UnitZ(),
                                                     Degeneracy policy = Degeneracy::reject) {
  detail::require_nonempty(cloud, "build_lrf_gravity_aligned");
  if (!(gravity.norm() > 0.0)) throw Error(ErrorCode::invalid_argument, "gravity must be non-zero");
  LocalReferenceFrame lrf;
  lrf.origin = centroid(cloud);
  lrf.z_axis = -gravity.normalized();

  const Vector3 e1 = detail::closest_world_axis_in_plane(lrf.z_axis);
  const Vector3 e2 = lrf.z_axis.cross(e1);
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : cloud.points) {
    const Vector3 d = p - lrf.origin;
    const Eigen::Vector2d h(d.dot(e1), d.dot(e2));
    cov.noalias() += h * h.transpose();
  }
  cov /= static_cast<double>(cloud.size());

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> solver(cov);
  const double major = std::max(0.0, solver.eigenvalues()[1]);
  const double minor = std::max(0.0, solver.eigenvalues()[0]);
  Vector3 x = e1;
  if (major <= 0.0) {
    if (policy == Degeneracy::reject)
      throw Error(ErrorCode::degenerate_cloud, "build_lrf_gravity_aligned: projection on the table is a single point");
  } else if (major - minor > 1e-9 * major) {
    const Eigen::Vector2d v = solver.eigenvectors().col(1);
    x = (v[0] * e1 + v[1] * e2).normalized();
  }
  lrf.x_axis = detail::disambiguate_sign(cloud, lrf.origin, x);
  lrf.y_axis = lrf.z_axis.cross(lrf.x_axis).normalized();
  return lrf;
}

/// Bins the cloud's three orthographic projections in `lrf`. All planes share
/// a square support of half-width equal to the half-diagonal of the
/// origin-centred frame box; each projection is normalized to sum to one.
inline GoodDescriptor compute_good(const PointCloud& cloud, const LocalReferenceFrame& lrf, int bins_per_side,
                                   GoodVariant variant = GoodVariant::pose_invariant) {
  detail::require_nonempty(cloud, "compute_good");
  if (bins_per_side < 2) throw Error(ErrorCode::invalid_argument, "compute_good: bins_per_side must be >= 2");

  std::vector<Vector3> local;
  local.reserve(cloud.size());
  Vector3 extent = Vector3::Zero();
  for (const auto& p : cloud.points) {
    local.push_back(lrf.to_local(p));
    extent = extent.cwiseMax(local.back().cwiseAbs());
  }
  const double half_width = extent.norm();

  const auto b = static_cast<std::size_t>(bins_per_side);
  const std::size_t block = b * b;
  GoodDescriptor d;
  d.bins_per_side = bins_per_side;
  d.variant = variant;
  d.values.assign(3 * block, 0.0);

  // (horizontal, vertical) coordinate pairs for XoZ, YoZ, XoY
  constexpr int planes[3][2] = {{0, 2}, {1, 2}, {0, 1}};
  for (const auto& q : local) {
    for (int k = 0; k < 3; ++k) {
      const std::size_t col = detail::projection_bin(q[planes[k][0]], half_width, bins_per_side);
      const std::size_t row = detail::projection_bin(q[planes[k][1]], half_width, bins_per_side);
      d.values[k * block + row * b + col] += 1.0;
    }
  }
  const double n = static_cast<double>(cloud.size());
  for (auto& v : d.values) v /= n;
  d.point_count = cloud.size();
  return d;
}

/// Frame + descriptor in one call. Degenerate clouds get the tie-broken frame
/// instead of an error, which is what interactive callers want.
inline GoodDescriptor describe(const PointCloud& cloud, GoodVariant variant, const GoodSettings& settings = {}) {
  const LocalReferenceFrame lrf = variant == GoodVariant::pose_invariant
                                      ? build_lrf_pose_invariant(cloud, Degeneracy::tie_break)
                                      : build_lrf_gravity_aligned(cloud, settings.gravity, Degeneracy::tie_break);
  return compute_good(cloud, lrf, settings.bins_per_side, variant);
}

/// Per-bin point counts (values scaled back by the number of binned points);
/// the category learner accumulates these.
inline std::vector<double> bin_counts(const GoodDescriptor& d) {
  if (!d.point_count) return d.values;
  const double n = static_cast<double>(d.point_count);
  std::vector<double> out;
  out.reserve(d.values.size());
  for (double v : d.values) out.push_back(std::round(v * n));
  return out;
}

inline double l1_distance(const GoodDescriptor& a, const GoodDescriptor& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::dimension_mismatch, "l1_distance: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.values[i] - b.values[i]);
  return s;
}

inline void to_json(nlohmann::json& j, const GoodDescriptor& d) {
  std::vector<double> rounded;
  rounded.reserve(d.values.size());
  for (double v : d.values) rounded.push_back(round_sig9(v));
  j = nlohmann::json{{"variant", to_string(d.variant)}, {"bins_per_side", d.bins_per_side}, {"values", rounded}};
  if (d.point_count) j["point_count"] = d.point_count;
}

inline void from_json(const nlohmann::json& j, GoodDescriptor& d) {
  d.variant = parse_variant(j.at("variant").get<std::string>());
  d.bins_per_side = j.at("bins_per_side").get<int>();
  d.values = j.at("values").get<std::vector<double>>();
  d.point_count = j.value("point_count", std::size_t{0});
  const auto b = static_cast<std::size_t>(d.bins_per_side);
  if (d.bins_per_side < 2 || d.values.size() != 3 * b * b)
    throw Error(ErrorCode::dimension_mismatch, "descriptor length does not match bins_per_side");
}

inline void to_json(nlohmann::json& j, const LocalReferenceFrame& f) {
  auto v = [](const Vector3& a) { return std::vector<double>{a.x(), a.y(), a.z()}; };
  j = nlohmann::json{{"origin", v(f.origin)}, {"x_axis", v(f.x_axis)}, {"y_axis", v(f.y_axis)}, {"z_axis", v(f.z_axis)}};
}

}  // namespace oeg

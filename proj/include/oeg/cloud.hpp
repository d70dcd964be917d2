#pragma once

#include <oeg/error.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace oeg {

using Point3 = Eigen::Vector3d;
using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;

/// Ordered set of 3D points in meters. Normals are either absent (empty) or
/// one unit vector per point.
struct PointCloud {
  std::vector<Point3> points;
  std::vector<Vector3> normals;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !normals.empty(); }
};

struct BoundingBox {
  Point3 center = Point3::Zero();
  Vector3 half_extents = Vector3::Zero();
  Matrix3 axes = Matrix3::Identity();  // columns are the box axes
};

enum class CloudFormat { xyz, pcd_ascii };

/// Eigen-decomposition of the population covariance, eigenvalues descending.
/// `rank` counts eigenvalues that are non-negligible relative to the largest.
struct PcaResult {
  std::array<double, 3> eigenvalues{};
  std::array<Vector3, 3> eigenvectors{};
  int rank = 0;

  bool degenerate() const { return rank < 3; }
};

/// Shortest decimal form with 9 significant digits. Used by every text
/// serializer so that save(load(save(x))) is stable.
inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline double round_sig9(double v) { return std::stod(format_real(v)); }

namespace detail {

inline void require_nonempty(const PointCloud& cloud, const char* what) {
  if (cloud.empty())
    throw Error(ErrorCode::empty_cloud, std::string(what) + ": cloud has no points");
}

inline bool all_finite(const Vector3& v) {
  return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z());
}

// Sign convention shared by PCA and the reference frames: among opposite
// directions, prefer the one with positive world X, then Y, then Z.
inline Vector3 prefer_world_positive(Vector3 v) {
  for (int i = 0; i < 3; ++i) {
    if (std::abs(v[i]) > 1e-12) return v[i] < 0 ? Vector3(-v) : v;
  }
  return v;
}

// Unit vector in the subspace orthogonal to `normal` that is closest to world
// +X (or +Y when X is nearly parallel to `normal`).
inline Vector3 closest_world_axis_in_plane(const Vector3& normal) {
  for (const Vector3& w : {Vector3::UnitX().eval(), Vector3::UnitY().eval(), Vector3::UnitZ().eval()}) {
    Vector3 p = w - w.dot(normal) * normal;
    if (p.norm() > 1e-6) return p.normalized();
  }
  return Vector3::UnitX();
}

// Unit vector along `line` closest to world +X, then +Y, then +Z.
inline Vector3 closest_world_axis_on_line(const Vector3& line) {
  return prefer_world_positive(line.normalized());
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline double parse_real(const std::string& tok, std::size_t line_no) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size() || !std::isfinite(v))
    throw Error(ErrorCode::parse_error,
                "line " + std::to_string(line_no) + ": not a finite number '" + tok + "'");
  return v;
}

inline Vector3 checked_normal(const Vector3& n, std::size_t line_no) {
  if (std::abs(n.norm() - 1.0) > 1e-6)
    throw Error(ErrorCode::parse_error,
                "line " + std::to_string(line_no) + ": normal is not unit length");
  return n;
}

inline PointCloud parse_xyz(std::istream& in) {
  PointCloud cloud;
  std::string line;
  std::size_t line_no = 0;
  std::size_t fields = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    auto tok = split_ws(line);
    if (tok.size() != 3 && tok.size() != 6)
      throw Error(ErrorCode::parse_error, "line " + std::to_string(line_no) + ": expected 3 or 6 fields, got " +
                                              std::to_string(tok.size()));
    if (fields == 0) fields = tok.size();
    if (tok.size() != fields)
      throw Error(ErrorCode::parse_error, "line " + std::to_string(line_no) + ": field count changed from " +
                                              std::to_string(fields) + " to " + std::to_string(tok.size()));
    cloud.points.emplace_back(parse_real(tok[0], line_no), parse_real(tok[1], line_no), parse_real(tok[2], line_no));
    if (fields == 6)
      cloud.normals.push_back(checked_normal(
          Vector3(parse_real(tok[3], line_no), parse_real(tok[4], line_no), parse_real(tok[5], line_no)), line_no));
  }
  return cloud;
}

inline PointCloud parse_pcd_ascii(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::size_t fields = 0;
  long long points = -1;
  bool data_seen = false;
  while (!data_seen && std::getline(in, line)) {
    ++line_no;
    auto tok = split_ws(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    const std::string& key = tok[0];
    if (key == "VERSION" || key == "VIEWPOINT") {
      continue;
    } else if (key == "FIELDS") {
      std::vector<std::string> names(tok.begin() + 1, tok.end());
      const std::vector<std::string> xyz{"x", "y", "z"};
      const std::vector<std::string> xyzn{"x", "y", "z", "normal_x", "normal_y", "normal_z"};
      if (names == xyz) fields = 3;
      else if (names == xyzn) fields = 6;
      else throw Error(ErrorCode::parse_error, "unsupported FIELDS header: '" + line + "'");
    } else if (key == "SIZE" || key == "TYPE" || key == "COUNT") {
      if (fields == 0 || tok.size() - 1 != fields)
        throw Error(ErrorCode::parse_error, "malformed " + key + " header: '" + line + "'");
      if (key == "TYPE" && std::any_of(tok.begin() + 1, tok.end(), [](const std::string& t) { return t != "F"; }))
        throw Error(ErrorCode::parse_error, "unsupported TYPE header: '" + line + "'");
      if (key == "COUNT" && std::any_of(tok.begin() + 1, tok.end(), [](const std::string& t) { return t != "1"; }))
        throw Error(ErrorCode::parse_error, "unsupported COUNT header: '" + line + "'");
    } else if (key == "WIDTH" || key == "HEIGHT") {
      if (tok.size() != 2) throw Error(ErrorCode::parse_error, "malformed " + key + " header: '" + line + "'");
    } else if (key == "POINTS") {
      if (tok.size() != 2) throw Error(ErrorCode::parse_error, "malformed POINTS header: '" + line + "'");
      points = static_cast<long long>(parse_real(tok[1], line_no));
    } else if (key == "DATA") {
      if (tok.size() != 2 || tok[1] != "ascii")
        throw Error(ErrorCode::parse_error, "unsupported DATA header: '" + line + "'");
      data_seen = true;
    } else {
      throw Error(ErrorCode::parse_error, "unknown header '" + key + "'");
    }
  }
  if (!data_seen) throw Error(ErrorCode::parse_error, "missing DATA header");
  if (fields == 0) throw Error(ErrorCode::parse_error, "missing FIELDS header");

  PointCloud cloud;
  while (std::getline(in, line)) {
    ++line_no;
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != fields)
      throw Error(ErrorCode::parse_error, "line " + std::to_string(line_no) + ": expected " + std::to_string(fields) +
                                              " fields, got " + std::to_string(tok.size()));
    cloud.points.emplace_back(parse_real(tok[0], line_no), parse_real(tok[1], line_no), parse_real(tok[2], line_no));
    if (fields == 6)
      cloud.normals.push_back(checked_normal(
          Vector3(parse_real(tok[3], line_no), parse_real(tok[4], line_no), parse_real(tok[5], line_no)), line_no));
  }
  if (points >= 0 && static_cast<std::size_t>(points) != cloud.size())
    throw Error(ErrorCode::parse_error, "POINTS header says " + std::to_string(points) + " but " +
                                            std::to_string(cloud.size()) + " points follow");
  return cloud;
}

}  // namespace detail

inline CloudFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".pcd" ? CloudFormat::pcd_ascii : CloudFormat::xyz;
}

inline PointCloud parse_cloud(const std::string& text, CloudFormat format) {
  std::istringstream in(text);
  PointCloud cloud = format == CloudFormat::xyz ? detail::parse_xyz(in) : detail::parse_pcd_ascii(in);
  if (cloud.empty()) throw Error(ErrorCode::empty_cloud, "cloud contains zero points");
  return cloud;
}

inline PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_cloud(ss.str(), format);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

inline PointCloud load_cloud(const std::filesystem::path& path) { return load_cloud(path, format_from_path(path)); }

inline std::string serialize_cloud(const PointCloud& cloud, CloudFormat format) {
  std::string out;
  const bool normals = cloud.has_normals();
  if (format == CloudFormat::pcd_ascii) {
    const std::string n = std::to_string(cloud.size());
    out += "VERSION 0.7\n";
    out += normals ? "FIELDS x y z normal_x normal_y normal_z\nSIZE 4 4 4 4 4 4\nTYPE F F F F F F\nCOUNT 1 1 1 1 1 1\n"
                   : "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\n";
    out += "WIDTH " + n + "\nHEIGHT 1\nPOINTS " + n + "\nDATA ascii\n";
  }
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    out += format_real(p.x()) + ' ' + format_real(p.y()) + ' ' + format_real(p.z());
    if (normals) {
      const auto& nv = cloud.normals[i];
      out += ' ' + format_real(nv.x()) + ' ' + format_real(nv.y()) + ' ' + format_real(nv.z());
    }
    out += '\n';
  }
  return out;
}

inline void save_cloud(const std::filesystem::path& path, const PointCloud& cloud, CloudFormat format) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << serialize_cloud(cloud, format);
}

inline Point3 centroid(const PointCloud& cloud) {
  detail::require_nonempty(cloud, "centroid");
  Point3 sum = Point3::Zero();
  for (const auto& p : cloud.points) sum += p;
  return sum / static_cast<double>(cloud.size());
}

namespace detail {

inline Matrix3 covariance(const std::vector<Point3>& points, const Point3& mean) {
  Matrix3 cov = Matrix3::Zero();
  for (const auto& p : points) {
    const Vector3 d = p - mean;
    cov.noalias() += d * d.transpose();
  }
  return cov / static_cast<double>(points.size());
}

inline PcaResult pca_from_covariance(const Matrix3& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix3> solver(cov);
  const Vector3 ev = solver.eigenvalues();  // ascending
  const Matrix3 vecs = solver.eigenvectors();

  PcaResult r;
  for (int i = 0; i < 3; ++i) {
    r.eigenvalues[i] = std::max(0.0, ev[2 - i]);
    r.eigenvectors[i] = vecs.col(2 - i).normalized();
  }

  const double top = r.eigenvalues[0];
  auto tied = [&](int a, int b) { return std::abs(r.eigenvalues[a] - r.eigenvalues[b]) <= 1e-9 * top; };
  if (top <= 0.0 || (tied(0, 1) && tied(1, 2))) {
    r.eigenvectors = {Vector3::UnitX(), Vector3::UnitY(), Vector3::UnitZ()};
  } else if (tied(0, 1)) {
    const Vector3 unique = prefer_world_positive(r.eigenvectors[2]);
    r.eigenvectors[0] = closest_world_axis_in_plane(unique);
    r.eigenvectors[1] = unique.cross(r.eigenvectors[0]).normalized();
    r.eigenvectors[2] = unique;
  } else if (tied(1, 2)) {
    const Vector3 unique = prefer_world_positive(r.eigenvectors[0]);
    r.eigenvectors[1] = closest_world_axis_in_plane(unique);
    r.eigenvectors[2] = unique.cross(r.eigenvectors[1]).normalized();
    r.eigenvectors[0] = unique;
  } else {
    for (auto& v : r.eigenvectors) v = prefer_world_positive(v);
  }

  r.rank = 0;
  if (top > 0.0)
    for (double l : r.eigenvalues)
      if (l > 1e-10 * top) ++r.rank;
  return r;
}

}  // namespace detail

/// PCA of the cloud's population covariance. Degeneracy is reported through
/// `rank`, never thrown; tied eigenvalues resolve toward world +X, then +Y.
inline PcaResult pca_axes(const PointCloud& cloud) {
  detail::require_nonempty(cloud, "pca_axes");
  return detail::pca_from_covariance(detail::covariance(cloud.points, centroid(cloud)));
}

/// Tight box of the cloud in the frame whose columns are `axes`.
inline BoundingBox bounding_box(const PointCloud& cloud, const Matrix3& axes) {
  detail::require_nonempty(cloud, "bounding_box");
  Vector3 lo = Vector3::Constant(std::numeric_limits<double>::infinity());
  Vector3 hi = -lo;
  for (const auto& p : cloud.points) {
    const Vector3 q = axes.transpose() * p;
    lo = lo.cwiseMin(q);
    hi = hi.cwiseMax(q);
  }
  BoundingBox box;
  box.axes = axes;
  box.half_extents = (hi - lo) / 2.0;
  box.center = axes * ((hi + lo) / 2.0);
  return box;
}

/// Indices of all points within `radius` of `query` (inclusive), in cloud order.
inline std::vector<std::size_t> radius_neighbors(const PointCloud& cloud, const Point3& query, double radius) {
  std::vector<std::size_t> out;
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if ((cloud.points[i] - query).squaredNorm() <= r2) out.push_back(i);
  return out;
}

/// Surface normal at `index` from the PCA of its radius neighbourhood, oriented
/// so that it faces `viewpoint`.
inline Vector3 estimate_normal(const PointCloud& cloud, std::size_t index, double radius,
                               const Point3& viewpoint = Point3::Zero()) {
  detail::require_nonempty(cloud, "estimate_normal");
  if (index >= cloud.size()) throw Error(ErrorCode::invalid_argument, "estimate_normal: index out of range");
  const Point3& p = cloud.points[index];
  const auto nbrs = radius_neighbors(cloud, p, radius);
  if (nbrs.size() < 3)
    throw Error(ErrorCode::insufficient_neighbors,
                "estimate_normal: " + std::to_string(nbrs.size()) + " neighbours within radius");
  std::vector<Point3> local;
  local.reserve(nbrs.size());
  Point3 mean = Point3::Zero();
  for (auto i : nbrs) {
    local.push_back(cloud.points[i]);
    mean += cloud.points[i];
  }
  mean /= static_cast<double>(local.size());
  const PcaResult pca = detail::pca_from_covariance(detail::covariance(local, mean));
  if (pca.rank < 2)
    throw Error(ErrorCode::insufficient_neighbors, "estimate_normal: neighbourhood is collinear");
  Vector3 n = pca.eigenvectors[2];
  if (n.dot(viewpoint - p) < 0) n = -n;
  return n;
}

/// Rigid transform helper used by generators and tests.
inline PointCloud transformed(const PointCloud& cloud, const Matrix3& rotation, const Vector3& translation) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(rotation * p + translation);
  for (const auto& n : cloud.normals) out.normals.push_back(rotation * n);
  return out;
}

}  // namespace oeg

#pragma once

// Directory-of-views datasets and a seeded generator of partial object views
// resting on a table in front of a virtual camera at the origin.

#include <oeg/cloud.hpp>

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace oeg {

enum class Shape { cylinder, box, sphere, cone, bottle, plate };
enum class RestingPose { upright, toppled };

inline std::string to_string(Shape s) {
  switch (s) {
    case Shape::cylinder: return "cylinder";
    case Shape::box: return "box";
    case Shape::sphere: return "sphere";
    case Shape::cone: return "cone";
    case Shape::bottle: return "bottle";
    case Shape::plate: return "plate";
  }
  return "cylinder";
}

inline Shape parse_shape(const std::string& s) {
  for (Shape v : {Shape::cylinder, Shape::box, Shape::sphere, Shape::cone, Shape::bottle, Shape::plate})
    if (to_string(v) == s) return v;
  throw Error(ErrorCode::invalid_argument, "unknown shape '" + s + "'");
}

inline std::string to_string(RestingPose p) { return p == RestingPose::upright ? "upright" : "toppled"; }

inline RestingPose parse_pose(const std::string& s) {
  if (s == "upright") return RestingPose::upright;
  if (s == "toppled") return RestingPose::toppled;
  throw Error(ErrorCode::invalid_argument, "unknown pose '" + s + "'");
}

/// One synthetic view. `scale` is shape-specific:
///   cylinder/cone/bottle/plate: (radius_x, radius_y, height)
///   box: edge lengths; sphere: semi-axes.
/// `yaw` turns the object about the vertical before it is viewed.
struct SyntheticSpec {
  Shape shape = Shape::cylinder;
  Vector3 scale = Vector3(0.04, 0.04, 0.1);
  RestingPose pose = RestingPose::upright;
  double noise_sigma = 0.0;
  int points = 500;
  std::uint64_t seed = 0;
  double yaw = 0.0;
};

/// Camera at the origin looking along +Y, table plane at z = table_height.
inline constexpr double table_height = -0.4;
inline const Point3 object_base{0.0, 0.8, table_height};

struct GeneratedView {
  PointCloud cloud;              // visible points with analytic normals
  std::size_t sampled = 0;       // surface samples drawn to obtain them
  Matrix3 rotation = Matrix3::Identity();  // object-to-world rotation
  Vector3 translation = Vector3::Zero();
};

namespace detail {

struct SurfaceSample {
  Point3 p;
  Vector3 n;
};

// A surface patch with its area and a sampler uniform (or near-uniform) on it.
struct SurfacePart {
  double area;
  std::function<SurfaceSample(std::mt19937_64&)> sample;
};

inline double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// Disc of radii (rx, ry) at height z, normal +/-Z.
inline SurfacePart disc_part(double rx, double ry, double z, double nz) {
  return {std::numbers::pi * rx * ry, [=](std::mt19937_64& rng) {
            const double r = std::sqrt(uniform01(rng));
            const double t = 2 * std::numbers::pi * uniform01(rng);
            return SurfaceSample{Point3(rx * r * std::cos(t), ry * r * std::sin(t), z), Vector3(0, 0, nz)};
          }};
}

// Surface of revolution between heights z0 < z1 with radius profile r(z)
// (linear between the given end radii), scaled by (sx, sy) horizontally.
// Rejection keeps sampling proportional to the local radius.
inline SurfacePart frustum_part(double sx, double sy, double r0, double r1, double z0, double z1) {
  const double slant = std::hypot(z1 - z0, r1 - r0);
  const double area = std::numbers::pi * (r0 + r1) * slant * std::sqrt(sx * sy);
  const double rmax = std::max(r0, r1);
  return {area, [=](std::mt19937_64& rng) {
            for (;;) {
              const double u = uniform01(rng);
              const double r = r0 + (r1 - r0) * u;
              if (uniform01(rng) * rmax > r) continue;
              const double t = 2 * std::numbers::pi * uniform01(rng);
              const double c = std::cos(t), s = std::sin(t);
              const Point3 p(sx * r * c, sy * r * s, z0 + (z1 - z0) * u);
              // profile normal (dz, -dr) rotated to angle t, corrected for the elliptic scale
              const Vector3 n = Vector3((z1 - z0) * c / sx, (z1 - z0) * s / sy, -(r1 - r0)).normalized();
              return SurfaceSample{p, n};
            }
          }};
}

inline std::vector<SurfacePart> shape_parts(const SyntheticSpec& spec) {
  const double sx = spec.scale.x(), sy = spec.scale.y(), h = spec.scale.z();
  std::vector<SurfacePart> parts;
  switch (spec.shape) {
    case Shape::cylinder:
      parts.push_back(frustum_part(sx, sy, 1.0, 1.0, 0.0, h));
      parts.push_back(disc_part(sx, sy, h, 1.0));
      parts.push_back(disc_part(sx, sy, 0.0, -1.0));
      break;
    case Shape::cone:
      parts.push_back(frustum_part(sx, sy, 1.0, 0.0, 0.0, h));
      parts.push_back(disc_part(sx, sy, 0.0, -1.0));
      break;
    case Shape::bottle:
      parts.push_back(frustum_part(sx, sy, 1.0, 1.0, 0.0, 0.6 * h));
      parts.push_back(frustum_part(sx, sy, 1.0, 0.35, 0.6 * h, 0.75 * h));
      parts.push_back(frustum_part(sx, sy, 0.35, 0.35, 0.75 * h, h));
      parts.push_back(disc_part(0.35 * sx, 0.35 * sy, h, 1.0));
      parts.push_back(disc_part(sx, sy, 0.0, -1.0));
      break;
    case Shape::plate: {
      // shallow dish: flat underside, rim band, and a paraboloid upper face
      parts.push_back(disc_part(sx, sy, 0.0, -1.0));
      parts.push_back(frustum_part(sx, sy, 1.0, 1.0, 0.0, h));
      const double floor_z = 0.3 * h;
      parts.push_back({std::numbers::pi * sx * sy * 1.1, [=](std::mt19937_64& rng) {
                         const double r = std::sqrt(uniform01(rng));
                         const double t = 2 * std::numbers::pi * uniform01(rng);
                         const double c = std::cos(t), s = std::sin(t);
                         const double z = floor_z + (h - floor_z) * r * r;
                         const double slope = 2 * (h - floor_z) * r;  // dz / d(normalized radius)
                         const Vector3 n = Vector3(-slope * c / sx, -slope * s / sy, 1.0).normalized();
                         return SurfaceSample{Point3(sx * r * c, sy * r * s, z), n};
                       }});
      break;
    }
    case Shape::box: {
      const double a = sx / 2, b = sy / 2;
      auto face = [](Vector3 origin, Vector3 du, Vector3 dv, Vector3 n) {
        return SurfacePart{du.norm() * dv.norm(), [=](std::mt19937_64& rng) {
                             return SurfaceSample{origin + uniform01(rng) * du + uniform01(rng) * dv, n};
                           }};
      };
      parts.push_back(face({-a, -b, 0}, {sx, 0, 0}, {0, sy, 0}, {0, 0, -1}));
      parts.push_back(face({-a, -b, h}, {sx, 0, 0}, {0, sy, 0}, {0, 0, 1}));
      parts.push_back(face({-a, -b, 0}, {sx, 0, 0}, {0, 0, h}, {0, -1, 0}));
      parts.push_back(face({-a, b, 0}, {sx, 0, 0}, {0, 0, h}, {0, 1, 0}));
      parts.push_back(face({-a, -b, 0}, {0, sy, 0}, {0, 0, h}, {-1, 0, 0}));
      parts.push_back(face({a, -b, 0}, {0, sy, 0}, {0, 0, h}, {1, 0, 0}));
      break;
    }
    case Shape::sphere: {
      // directions uniform on the sphere, then scaled to the ellipsoid,
      // resting on the table
      const Vector3 axes = spec.scale;
      parts.push_back({1.0, [=](std::mt19937_64& rng) {
                         const double z = 2 * uniform01(rng) - 1;
                         const double t = 2 * std::numbers::pi * uniform01(rng);
                         const double r = std::sqrt(std::max(0.0, 1 - z * z));
                         const Vector3 u(r * std::cos(t), r * std::sin(t), z);
                         const Point3 p = u.cwiseProduct(axes) + Vector3(0, 0, axes.z());
                         const Vector3 n = u.cwiseQuotient(axes).normalized();
                         return SurfaceSample{p, n};
                       }});
      break;
    }
  }
  return parts;
}

}  // namespace detail

/// Object-frame centre of a sphere spec (used by oracles).
inline Point3 sphere_center_object_frame(const SyntheticSpec& spec) { return Point3(0, 0, spec.scale.z()); }

/// Samples the shape surface, poses it on the table, keeps the points whose
/// outward normal faces the camera and adds Gaussian noise. Deterministic in
/// the spec (including its seed).
inline GeneratedView generate_synthetic_view(const SyntheticSpec& spec) {
  if (spec.points < 50) throw Error(ErrorCode::invalid_argument, "synthetic spec needs points >= 50");
  if (spec.noise_sigma < 0) throw Error(ErrorCode::invalid_argument, "noise_sigma must be >= 0");
  if ((spec.scale.array() <= 0).any()) throw Error(ErrorCode::invalid_argument, "scale must be positive");

  std::mt19937_64 rng(spec.seed);
  const auto parts = detail::shape_parts(spec);
  std::vector<double> areas;
  for (const auto& p : parts) areas.push_back(p.area);
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());

  Matrix3 rot = Eigen::AngleAxisd(spec.yaw, Vector3::UnitZ()).toRotationMatrix();
  if (spec.pose == RestingPose::toppled)
    rot = rot * Eigen::AngleAxisd(std::numbers::pi / 2, Vector3::UnitX()).toRotationMatrix();

  // Placement from a calibration sample of the whole surface: lowest point on
  // the table, horizontal box centre over object_base.
  std::mt19937_64 calib(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  Vector3 lo = Vector3::Constant(std::numeric_limits<double>::infinity());
  Vector3 hi = -lo;
  for (int i = 0; i < 4000; ++i) {
    const Point3 q = rot * parts[pick(calib)].sample(calib).p;
    lo = lo.cwiseMin(q);
    hi = hi.cwiseMax(q);
  }
  const Vector3 offset = object_base - Vector3((lo.x() + hi.x()) / 2, (lo.y() + hi.y()) / 2, lo.z());

  GeneratedView view;
  view.rotation = rot;
  view.translation = offset;
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0 ? spec.noise_sigma : 1.0);
  const std::size_t budget = static_cast<std::size_t>(spec.points) * 200;
  while (view.cloud.size() < static_cast<std::size_t>(spec.points) && view.sampled < budget) {
    const auto s = parts[pick(rng)].sample(rng);
    ++view.sampled;
    const Point3 p = rot * s.p + offset;
    const Vector3 n = rot * s.n;
    if (n.dot(Point3::Zero() - p) <= 0) continue;
    Point3 q = p;
    if (spec.noise_sigma > 0) q += Vector3(noise(rng), noise(rng), noise(rng));
    view.cloud.points.push_back(q);
    view.cloud.normals.push_back(n.normalized());
  }
  if (view.cloud.size() < static_cast<std::size_t>(spec.points))
    throw Error(ErrorCode::invalid_argument, "shape is not visible from the camera");
  return view;
}

inline PointCloud generate_synthetic(const SyntheticSpec& spec) { return generate_synthetic_view(spec).cloud; }

inline nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"shape", to_string(s.shape)},
          {"scale", {s.scale.x(), s.scale.y(), s.scale.z()}},
          {"pose", to_string(s.pose)},
          {"noise_sigma", s.noise_sigma},
          {"points", s.points},
          {"seed", s.seed},
          {"yaw", s.yaw}};
}

/// Directory layout root/<category>/<view>.{xyz,pcd}, sorted.
struct DatasetHandle {
  std::filesystem::path root;
  std::map<std::string, std::vector<std::filesystem::path>> categories;

  std::size_t view_count() const {
    std::size_t n = 0;
    for (const auto& [label, views] : categories) n += views.size();
    return n;
  }
};

struct ScanOptions {
  /// Also collect views in nested directories, e.g. the category/instance/view
  /// layout of the Washington RGB-D object dataset.
  bool recursive = false;
  /// Parse every file while scanning so malformed data fails fast.
  bool validate = true;
};

inline bool is_view_file(const std::filesystem::path& p) {
  return p.extension() == ".xyz" || p.extension() == ".pcd";
}

inline DatasetHandle scan_dataset(const std::filesystem::path& root, const ScanOptions& options = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw Error(ErrorCode::io_error, "dataset root is not a directory: " + root.string());
  DatasetHandle handle;
  handle.root = root;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    std::vector<fs::path> views;
    auto consider = [&](const fs::directory_entry& e) {
      if (e.is_regular_file() && is_view_file(e.path())) views.push_back(e.path());
    };
    if (options.recursive)
      for (const auto& e : fs::recursive_directory_iterator(dir)) consider(e);
    else
      for (const auto& e : fs::directory_iterator(dir)) consider(e);
    if (views.empty()) continue;
    std::sort(views.begin(), views.end());
    if (options.validate)
      for (const auto& v : views) (void)load_cloud(v);
    handle.categories[dir.filename().string()] = std::move(views);
  }
  if (handle.categories.empty()) throw Error(ErrorCode::empty_dataset, "no views found under " + root.string());
  return handle;
}

struct CategoryRecipe {
  std::string label;
  Shape shape = Shape::cylinder;
  Vector3 scale = Vector3(0.04, 0.04, 0.1);
  RestingPose pose = RestingPose::upright;
};

/// Recipe for a whole synthetic dataset. Each view draws a random yaw and a
/// uniform scale jitter; with probability `label_noise` a view is filed under
/// a different category than the one it was generated from.
struct DatasetRecipe {
  std::vector<CategoryRecipe> categories;
  int views_per_category = 20;
  int points = 600;
  double noise_sigma = 0.001;
  double scale_jitter = 0.05;
  double label_noise = 0.0;
  std::uint64_t seed = 1;
  CloudFormat format = CloudFormat::xyz;
};

/// Eight well-separated household-like categories at desk scale.
inline DatasetRecipe desk_recipe(int views_per_category = 20, std::uint64_t seed = 1) {
  DatasetRecipe r;
  r.views_per_category = views_per_category;
  r.seed = seed;
  r.categories = {
      {"ball", Shape::sphere, {0.04, 0.04, 0.04}, RestingPose::upright},
      {"bowl", Shape::cylinder, {0.06, 0.06, 0.05}, RestingPose::upright},
      {"can", Shape::cylinder, {0.025, 0.025, 0.14}, RestingPose::upright},
      {"cereal_box", Shape::box, {0.18, 0.12, 0.035}, RestingPose::upright},
      {"cube", Shape::box, {0.07, 0.07, 0.07}, RestingPose::upright},
      {"funnel", Shape::cone, {0.05, 0.05, 0.11}, RestingPose::upright},
      {"bottle", Shape::bottle, {0.035, 0.035, 0.24}, RestingPose::upright},
      {"plate", Shape::plate, {0.11, 0.11, 0.02}, RestingPose::upright},
  };
  return r;
}

struct GeneratedDataset {
  nlohmann::json manifest = nlohmann::json::array();
  std::map<std::string, std::vector<PointCloud>> views;  // keyed by filed label
};

/// Generates every view of the recipe in memory; each manifest entry holds
/// {spec, file, label, true_label}. File names are relative to the root.
inline GeneratedDataset generate_dataset(const DatasetRecipe& recipe) {
  if (recipe.categories.empty()) throw Error(ErrorCode::empty_dataset, "dataset recipe has no categories");
  GeneratedDataset out;
  std::mt19937_64 rng(recipe.seed);
  const char* ext = recipe.format == CloudFormat::xyz ? ".xyz" : ".pcd";
  std::map<std::string, int> counters;
  for (std::size_t c = 0; c < recipe.categories.size(); ++c) {
    const auto& cat = recipe.categories[c];
    for (int v = 0; v < recipe.views_per_category; ++v) {
      SyntheticSpec spec;
      spec.shape = cat.shape;
      const double jitter = 1.0 + recipe.scale_jitter * (2 * detail::uniform01(rng) - 1);
      spec.scale = cat.scale * jitter;
      spec.pose = cat.pose;
      spec.noise_sigma = recipe.noise_sigma;
      spec.points = recipe.points;
      spec.seed = rng();
      spec.yaw = 2 * std::numbers::pi * detail::uniform01(rng);
      std::string label = cat.label;
      if (recipe.label_noise > 0 && recipe.categories.size() > 1 && detail::uniform01(rng) < recipe.label_noise) {
        std::size_t other = std::uniform_int_distribution<std::size_t>(0, recipe.categories.size() - 2)(rng);
        if (other >= c) ++other;
        label = recipe.categories[other].label;
      }
      char name[32];
      std::snprintf(name, sizeof(name), "view_%04d", counters[label]++);
      const std::string file = label + "/" + name + ext;
      out.manifest.push_back({{"spec", to_json(spec)}, {"file", file}, {"label", label}, {"true_label", cat.label}});
      out.views[label].push_back(generate_synthetic(spec));
    }
  }
  return out;
}

/// Writes the dataset under `root` (one directory per category) plus
/// root/manifest.json, and returns the manifest.
inline nlohmann::json write_dataset(const std::filesystem::path& root, const DatasetRecipe& recipe) {
  namespace fs = std::filesystem;
  const GeneratedDataset data = generate_dataset(recipe);
  fs::create_directories(root);
  std::map<std::string, std::size_t> next;
  for (const auto& entry : data.manifest) {
    const std::string label = entry.at("label");
    const fs::path path = root / entry.at("file").get<std::string>();
    fs::create_directories(path.parent_path());
    save_cloud(path, data.views.at(label)[next[label]++], recipe.format);
  }
  std::ofstream(root / "manifest.json") << data.manifest.dump(2) << '\n';
  return data.manifest;
}

inline DatasetRecipe parse_recipe(const nlohmann::json& j) {
  DatasetRecipe r;
  try {
    r.views_per_category = j.value("views_per_category", r.views_per_category);
    r.points = j.value("points", r.points);
    r.noise_sigma = j.value("noise_sigma", r.noise_sigma);
    r.scale_jitter = j.value("scale_jitter", r.scale_jitter);
    r.label_noise = j.value("label_noise", r.label_noise);
    r.seed = j.value("seed", r.seed);
    r.format = j.value("format", std::string("xyz")) == "pcd-ascii" ? CloudFormat::pcd_ascii : CloudFormat::xyz;
    if (j.value("preset", std::string()) == "desk8") {
      r.categories = desk_recipe().categories;
    }
    for (const auto& c : j.value("categories", nlohmann::json::array())) {
      const auto s = c.at("scale").get<std::vector<double>>();
      if (s.size() != 3) throw Error(ErrorCode::invalid_argument, "scale needs 3 values");
      r.categories.push_back({c.at("label").get<std::string>(), parse_shape(c.at("shape").get<std::string>()),
                              Vector3(s[0], s[1], s[2]), parse_pose(c.value("pose", std::string("upright")))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("dataset recipe: ") + e.what());
  }
  if (r.categories.empty()) throw Error(ErrorCode::empty_dataset, "dataset recipe has no categories");
  return r;
}

}  // namespace oeg

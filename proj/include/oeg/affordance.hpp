#pragma once

#include <oeg/good.hpp>

#include <json.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace oeg {

struct AffordanceInstance {
  std::uint64_t id = 0;
  std::string label;
  GoodDescriptor descriptor;
};

struct AffordanceMatch {
  std::optional<std::string> label;  // nullopt means Unknown
  double distance = std::numeric_limits<double>::infinity();
  std::optional<std::uint64_t> instance_id;

  bool unknown() const { return !label.has_value(); }
};

inline double euclidean_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

/// Instance-based affordance memory with a 1-nearest-neighbour rule and an
/// Unknown rejection threshold on the Euclidean distance.
class AffordanceMemory {
 public:
  static constexpr double default_unknown_threshold = 0.15;

  explicit AffordanceMemory(double unknown_threshold = default_unknown_threshold) { set_threshold(unknown_threshold); }

  const std::vector<AffordanceInstance>& instances() const { return instances_; }
  double unknown_threshold() const { return threshold_; }
  std::size_t size() const { return instances_.size(); }
  bool empty() const { return instances_.empty(); }

  void set_threshold(double t) {
    if (!(t > 0.0)) throw Error(ErrorCode::invalid_argument, "unknown_threshold must be > 0");
    threshold_ = t;
  }

  std::uint64_t teach(const std::string& label, const GoodDescriptor& descriptor) {
    if (label.empty()) throw Error(ErrorCode::invalid_argument, "affordance label must be non-empty");
    check(descriptor);
    instances_.push_back({next_id_, label, descriptor});
    return next_id_++;
  }

  AffordanceMatch recognize(const GoodDescriptor& query) const {
    check(query);
    AffordanceMatch best;
    for (const auto& inst : instances_) {
      const double d = euclidean_distance(inst.descriptor.values, query.values);
      // strict comparison keeps the earliest (smallest) id on ties
      if (d < best.distance || !best.instance_id) {
        best.distance = d;
        best.instance_id = inst.id;
        best.label = inst.label;
      }
    }
    if (!best.instance_id || best.distance > threshold_) best.label.reset();
    return best;
  }

  void check_invariants() const {
    std::uint64_t last = 0;
    for (std::size_t i = 0; i < instances_.size(); ++i) {
      const auto& inst = instances_[i];
      if (inst.label.empty() || inst.descriptor.variant != GoodVariant::gravity_aligned ||
          inst.descriptor.size() != instances_.front().descriptor.size() || (i > 0 && inst.id <= last))
        throw std::logic_error("affordance memory: malformed instance");
      last = inst.id;
    }
    if (!(threshold_ > 0.0)) throw std::logic_error("affordance memory: threshold must be positive");
  }

  nlohmann::json to_json() const {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& inst : instances_)
      list.push_back({{"id", inst.id}, {"label", inst.label}, {"descriptor", inst.descriptor}});
    return list;
  }

  static AffordanceMemory from_json(const nlohmann::json& j, double unknown_threshold = default_unknown_threshold) {
    AffordanceMemory m(unknown_threshold);
    try {
      for (const auto& e : j) {
        AffordanceInstance inst{e.at("id").get<std::uint64_t>(), e.at("label").get<std::string>(),
                                e.at("descriptor").get<GoodDescriptor>()};
        m.check(inst.descriptor);
        if (!m.instances_.empty() && inst.id <= m.instances_.back().id)
          throw Error(ErrorCode::corrupt_snapshot, "affordance ids must be increasing");
        m.next_id_ = inst.id + 1;
        m.instances_.push_back(std::move(inst));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::corrupt_snapshot, std::string("affordance memory: ") + e.what());
    }
    return m;
  }

 private:
  void check(const GoodDescriptor& d) const {
    if (d.variant != GoodVariant::gravity_aligned)
      throw Error(ErrorCode::wrong_variant, "affordance descriptors must be gravity_aligned");
    if (d.values.empty() || (!instances_.empty() && d.size() != instances_.front().descriptor.size()))
      throw Error(ErrorCode::dimension_mismatch, "affordance descriptor dimensionality mismatch");
  }

  std::vector<AffordanceInstance> instances_;
  double threshold_ = default_unknown_threshold;
  std::uint64_t next_id_ = 1;
};

}  // namespace oeg

#pragma once

// Open-ended naive Bayes over histogram descriptors. Categories appear when
// first taught; every teach/correct refreshes priors and bin likelihoods.

#include <oeg/error.hpp>
#include <oeg/good.hpp>

#include <json.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace oeg {

struct CategoryModel {
  std::string label;
  std::size_t instances = 0;          // N_k
  std::vector<double> accumulators;   // a_k, elementwise sum of taught vectors
  double prior = 0.0;                 // N_k / N
  std::vector<double> likelihoods;    // (a_ki + 1) / sum_j (a_kj + 1)
  std::vector<double> log_likelihoods;
};

struct ClassificationResult {
  std::string label;
  double log_posterior = 0.0;  // normalized over known categories
  std::map<std::string, double> per_category_scores;
};

class BayesLearner {
 public:
  const std::map<std::string, CategoryModel>& categories() const { return categories_; }
  std::size_t total_instances() const { return total_; }
  std::size_t dimensions() const { return dims_; }
  bool knows(const std::string& label) const { return categories_.count(label) != 0; }
  bool empty() const { return categories_.empty(); }

  void teach_new_category(const std::string& label, std::span<const double> x) {
    if (label.empty()) throw Error(ErrorCode::invalid_argument, "category label must be non-empty");
    if (knows(label)) throw Error(ErrorCode::duplicate_category, "category '" + label + "' already exists");
    check_vector(x, dims_ == 0 ? x.size() : dims_);
    if (dims_ == 0) dims_ = x.size();
    CategoryModel& model = categories_[label];
    model.label = label;
    model.instances = 1;
    model.accumulators.assign(x.begin(), x.end());
    ++total_;
    refresh(model);
  }

  void correct_category(const std::string& label, std::span<const double> x) {
    auto it = categories_.find(label);
    if (it == categories_.end()) throw Error(ErrorCode::unknown_category, "category '" + label + "' is not known");
    check_vector(x, dims_);
    CategoryModel& model = it->second;
    ++model.instances;
    for (std::size_t i = 0; i < dims_; ++i) model.accumulators[i] += x[i];
    ++total_;
    refresh(model);
  }

  // Descriptors enter the learner as per-bin point counts.
  void teach_new_category(const std::string& label, const GoodDescriptor& d) { teach_new_category(label, bin_counts(d)); }
  void correct_category(const std::string& label, const GoodDescriptor& d) { correct_category(label, bin_counts(d)); }

  /// MAP label under score(k) = log P(C_k) + sum_i x_i log P(x_i | C_k). Ties go
  /// to the lexicographically smallest label.
  ClassificationResult classify(std::span<const double> x) const {
    if (categories_.empty()) throw Error(ErrorCode::no_known_categories, "no categories have been taught");
    check_vector(x, dims_);
    ClassificationResult result;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& [label, model] : categories_) {
      double score = std::log(model.prior);
      for (std::size_t i = 0; i < dims_; ++i) score += x[i] * model.log_likelihoods[i];
      result.per_category_scores[label] = score;
      if (score > best || result.label.empty()) {
        best = score;
        result.label = label;
      }
    }
    double norm = 0.0;
    for (const auto& [label, s] : result.per_category_scores) norm += std::exp(s - best);
    result.log_posterior = -std::log(norm);
    return result;
  }

  ClassificationResult classify(const GoodDescriptor& d) const { return classify(bin_counts(d)); }

  /// Throws std::logic_error if any model invariant is broken.
  void check_invariants(double tol = 1e-9) const {
    std::size_t sum = 0;
    double prior_sum = 0.0;
    for (const auto& [label, m] : categories_) {
      if (m.label != label || m.instances == 0 || m.accumulators.size() != dims_ || m.likelihoods.size() != dims_)
        throw std::logic_error("bayes: malformed category '" + label + "'");
      double lsum = 0.0;
      for (std::size_t i = 0; i < dims_; ++i) {
        if (!(m.likelihoods[i] > 0.0) || m.accumulators[i] < 0.0)
          throw std::logic_error("bayes: non-positive likelihood in '" + label + "'");
        lsum += m.likelihoods[i];
      }
      if (std::abs(lsum - 1.0) > tol) throw std::logic_error("bayes: likelihoods of '" + label + "' do not sum to 1");
      sum += m.instances;
      prior_sum += m.prior;
    }
    if (sum != total_) throw std::logic_error("bayes: N differs from sum of N_k");
    if (total_ > 0 && std::abs(prior_sum - 1.0) > tol) throw std::logic_error("bayes: priors do not sum to 1");
  }

  /// Only counts and accumulators are stored; probabilities are re-derived.
  nlohmann::json snapshot() const {
    nlohmann::json cats = nlohmann::json::object();
    for (const auto& [label, m] : categories_)
      cats[label] = nlohmann::json{{"N_k", m.instances}, {"accumulators", m.accumulators}};
    return nlohmann::json{{"n", dims_}, {"N", total_}, {"categories", cats}};
  }

  static BayesLearner restore(const nlohmann::json& j) {
    BayesLearner s;
    try {
      s.dims_ = j.at("n").get<std::size_t>();
      s.total_ = j.at("N").get<std::size_t>();
      std::size_t sum = 0;
      for (const auto& [label, c] : j.at("categories").items()) {
        CategoryModel& m = s.categories_[label];
        m.label = label;
        m.instances = c.at("N_k").get<std::size_t>();
        m.accumulators = c.at("accumulators").get<std::vector<double>>();
        if (m.instances == 0 || m.accumulators.size() != s.dims_)
          throw Error(ErrorCode::corrupt_snapshot, "category '" + label + "' is malformed");
        for (double a : m.accumulators)
          if (!std::isfinite(a) || a < 0) throw Error(ErrorCode::corrupt_snapshot, "negative accumulator");
        sum += m.instances;
      }
      if (sum != s.total_) throw Error(ErrorCode::corrupt_snapshot, "N does not equal the sum of N_k");
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::corrupt_snapshot, std::string("learner snapshot: ") + e.what());
    }
    for (auto& [label, m] : s.categories_) s.refresh_likelihoods(m);
    s.refresh_priors();
    return s;
  }

  static BayesLearner restore(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::corrupt_snapshot, std::string("learner snapshot: ") + e.what());
    }
    return restore(j);
  }

 private:
  void check_vector(std::span<const double> x, std::size_t expected) const {
    if (x.empty()) throw Error(ErrorCode::dimension_mismatch, "empty descriptor");
    if (x.size() != expected)
      throw Error(ErrorCode::dimension_mismatch,
                  "descriptor has " + std::to_string(x.size()) + " dims, expected " + std::to_string(expected));
    for (double v : x)
      if (!std::isfinite(v) || v < 0) throw Error(ErrorCode::invalid_argument, "descriptor values must be finite and >= 0");
  }

  void refresh(CategoryModel& updated) {
    refresh_likelihoods(updated);
    refresh_priors();
  }

  void refresh_priors() {
    for (auto& [label, m] : categories_) m.prior = static_cast<double>(m.instances) / static_cast<double>(total_);
  }

  static void refresh_likelihoods(CategoryModel& m) {
    double denom = 0.0;
    for (double a : m.accumulators) denom += a + 1.0;
    m.likelihoods.resize(m.accumulators.size());
    m.log_likelihoods.resize(m.accumulators.size());
    for (std::size_t i = 0; i < m.accumulators.size(); ++i) {
      m.likelihoods[i] = (m.accumulators[i] + 1.0) / denom;
      m.log_likelihoods[i] = std::log(m.likelihoods[i]);
    }
  }

  std::map<std::string, CategoryModel> categories_;
  std::size_t total_ = 0;
  std::size_t dims_ = 0;
};

}  // namespace oeg

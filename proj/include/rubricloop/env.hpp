// Copyright 2026 The rubricloop Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Synthetic tasks and the ground truth everything else is measured against:
// attribute spaces, stakeholders with a hidden simplex weight vector (the
// latent utility), gold rubrics, the utility gap and ordinal equivalence.

#ifndef RUBRICLOOP_ENV_HPP_
#define RUBRICLOOP_ENV_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rubricloop/error.hpp"
#include "rubricloop/random.hpp"
#include "rubricloop/rubric.hpp"
#include "rubricloop/stats.hpp"

namespace rubricloop {

inline constexpr int kSuiteVersion = 1;

struct AttributeSpace {
  std::vector<std::string> names;
  std::vector<VerifierKind> verifier_kind;
  VerifierCosts verifiers;

  std::size_t size() const { return names.size(); }

  VerifierSpec VerifierFor(int attribute) const {
    detail::Require(attribute >= 0 && static_cast<std::size_t>(attribute) < size(),
                    "AttributeSpace::VerifierFor: attribute index out of range");
    return verifiers.For(verifier_kind[attribute]);
  }

  void Validate() const {
    detail::RequireConfig(names.size() >= 2, "attribute space needs d >= 2");
    detail::RequireConfig(verifier_kind.size() == names.size(),
                          "attribute space: one verifier kind per attribute");
    std::set<std::string> unique(names.begin(), names.end());
    detail::RequireConfig(unique.size() == names.size(), "attribute names must be unique");
  }
};

// Strictly increasing map applied to the linear utility: identity or u^gamma.
struct MonotoneTransform {
  double gamma = 1.0;  // 1 is the identity.

  bool is_identity() const { return gamma == 1.0; }
  double operator()(double u) const { return is_identity() ? u : std::pow(u, gamma); }
};

struct AnswerNoise {
  double easy_flip = 0.05;
  double medium_bucket = 0.1;
  double hard_stddev = 0.05;
};

struct StakeholderModel {
  std::vector<double> w_star;
  MonotoneTransform transform;
  AnswerNoise noise;
  double accept_threshold = 0.35;

  std::size_t support_size() const {
    return static_cast<std::size_t>(
        std::count_if(w_star.begin(), w_star.end(), [](double w) { return w > 0.0; }));
  }

  std::vector<int> Support() const {
    std::vector<int> s;
    for (std::size_t j = 0; j < w_star.size(); ++j) {
      if (w_star[j] > 0.0) s.push_back(static_cast<int>(j));
    }
    return s;
  }

  void Validate() const {
    detail::Require(w_star.size() >= 2, "stakeholder: need d >= 2");
    double total = 0.0;
    for (double w : w_star) {
      detail::Require(w >= 0.0, "stakeholder: negative weight");
      total += w;
    }
    detail::Require(std::abs(total - 1.0) <= 1e-12, "stakeholder: weights must sum to 1");
    detail::Require(support_size() >= 2, "stakeholder: need at least 2 nonzero weights");
    detail::Require(transform.gamma > 0.0, "stakeholder: transform must be increasing");
    detail::Require(accept_threshold >= 0.0, "stakeholder: negative acceptance threshold");
  }
};

struct TaskContext {
  std::string task_id;
  std::vector<double> context_features;
  std::optional<std::vector<int>> preference_hint;
};

enum class Split { kTrain, kEval };
NLOHMANN_JSON_SERIALIZE_ENUM(Split, {{Split::kTrain, "train"}, {Split::kEval, "eval"}})

struct Task {
  TaskContext context;
  StakeholderModel stakeholder;
  Rubric gold_rubric;
  Split split = Split::kTrain;
};

struct SuiteConfig {
  int d = 12;
  int d_ctx = 12;
  int k_star_min = 4;
  int k_star_max = 4;
  int n_train = 32;
  int n_eval = 8;
  double context_noise = 0.25;
  double judge_fraction = 0.5;
  int hint_size = 0;  // 0 disables the coarse public preference hint.
  double transform_gamma = 1.0;
  double accept_threshold = 0.35;
  AnswerNoise answer_noise;
  VerifierCosts verifiers;

  void Validate() const {
    detail::RequireConfig(d >= 2, "suite config: d must be >= 2");
    detail::RequireConfig(d_ctx >= 1, "suite config: d_ctx must be >= 1");
    detail::RequireConfig(n_train > 0, "suite config: train count must be > 0");
    detail::RequireConfig(n_eval >= 0, "suite config: eval count must be >= 0");
    detail::RequireConfig(2 <= k_star_min && k_star_min <= k_star_max && k_star_max <= d,
                          "suite config: need 2 <= k_star_min <= k_star_max <= d");
    detail::RequireConfig(context_noise >= 0.0, "suite config: negative context noise");
    detail::RequireConfig(judge_fraction >= 0.0 && judge_fraction <= 1.0,
                          "suite config: judge fraction outside [0,1]");
    detail::RequireConfig(hint_size >= 0 && hint_size <= d, "suite config: bad hint size");
    detail::RequireConfig(transform_gamma > 0.0, "suite config: transform gamma must be > 0");
    detail::RequireConfig(accept_threshold >= 0.0, "suite config: negative acceptance threshold");
    detail::RequireConfig(verifiers.judge_flip_prob >= 0.0 && verifiers.judge_flip_prob < 0.5,
                          "suite config: judge flip probability outside [0,0.5)");
  }
};

struct TaskSuite {
  int suite_version = kSuiteVersion;
  std::uint64_t seed = 0;
  SuiteConfig config;
  AttributeSpace space;
  // Fixed d_ctx x d map from weights to context features (row-major).
  std::vector<double> context_map;
  std::vector<Task> tasks;

  std::vector<const Task*> Select(Split split) const {
    std::vector<const Task*> out;
    for (const Task& t : tasks) {
      if (t.split == split) out.push_back(&t);
    }
    return out;
  }
};

// U*(y) = transform(sum_j w*_j y_j), in [0, 1].
inline double TrueUtility(const StakeholderModel& s, std::span<const double> satisfaction) {
  detail::Require(satisfaction.size() == s.w_star.size(), "TrueUtility: dimension mismatch");
  double u = 0.0;
  for (std::size_t j = 0; j < satisfaction.size(); ++j) u += s.w_star[j] * satisfaction[j];
  return s.transform(std::clamp(u, 0.0, 1.0));
}

inline double TrueUtility(const StakeholderModel& s, const WorkerOutput& y) {
  return TrueUtility(s, y.satisfaction);
}

inline Criterion MakeCriterion(const AttributeSpace& space, int attribute, double weight) {
  Criterion c;
  c.attribute_index = attribute;
  c.template_id = "satisfies/" + space.names.at(attribute);
  c.text = "Output satisfies requirement '" + space.names.at(attribute) + "'";
  c.verifier = space.VerifierFor(attribute);
  c.weight = weight;
  return c;
}

// One criterion per nonzero weight, heaviest first, weights renormalized over
// the kept criteria. At most `max_criteria` are kept.
inline Rubric GoldRubric(const StakeholderModel& s, const AttributeSpace& space,
                         std::size_t max_criteria = kDefaultMaxCriteria) {
  detail::Require(s.w_star.size() == space.size(), "GoldRubric: dimension mismatch");
  std::vector<int> support = s.Support();
  std::stable_sort(support.begin(), support.end(),
                   [&](int a, int b) { return s.w_star[a] > s.w_star[b]; });
  if (support.size() > max_criteria) support.resize(max_criteria);
  double kept = 0.0;
  for (int j : support) kept += s.w_star[j];
  Rubric r;
  r.max_criteria = max_criteria;
  for (int j : support) r.criteria.push_back(MakeCriterion(space, j, s.w_star[j] / kept));
  AssignStages(r.criteria);
  return r;
}

// Mean squared difference between true and proxy utilities.
inline double UtilityGap(std::span<const std::pair<double, double>> pairs) {
  detail::Require(!pairs.empty(), "UtilityGap: empty input");
  double sum = 0.0;
  for (const auto& [u_true, u_proxy] : pairs) sum += (u_true - u_proxy) * (u_true - u_proxy);
  return sum / static_cast<double>(pairs.size());
}

struct OrdinalReport {
  bool equivalent = false;
  double kendall_tau = 0.0;
  std::size_t discordant_pairs = 0;
  std::size_t pairs = 0;
};

// Compares the orders two scorers induce on the same candidates. A pair
// agrees when both score differences have the same sign; pairs tied under the
// true scorer are skipped.
inline OrdinalReport CheckOrdinalEquivalence(std::span<const double> u_true,
                                             std::span<const double> u_proxy) {
  detail::Require(u_true.size() == u_proxy.size(), "CheckOrdinalEquivalence: size mismatch");
  detail::Require(u_true.size() >= 2, "CheckOrdinalEquivalence: need >= 2 candidates");
  OrdinalReport report;
  for (std::size_t i = 0; i < u_true.size(); ++i) {
    for (std::size_t j = i + 1; j < u_true.size(); ++j) {
      const int st = Sign(u_true[i] - u_true[j]);
      if (st == 0) continue;
      ++report.pairs;
      if (Sign(u_proxy[i] - u_proxy[j]) != st) ++report.discordant_pairs;
    }
  }
  report.equivalent = report.discordant_pairs == 0;
  report.kendall_tau = KendallTau(u_true, u_proxy);
  return report;
}

template <class Candidate, class TrueScorer, class ProxyScorer>
OrdinalReport CheckOrdinalEquivalence(const TrueScorer& u_true, const ProxyScorer& u_proxy,
                                      std::span<const Candidate> candidates) {
  std::vector<double> a, b;
  a.reserve(candidates.size());
  b.reserve(candidates.size());
  for (const Candidate& c : candidates) {
    a.push_back(u_true(c));
    b.push_back(u_proxy(c));
  }
  return CheckOrdinalEquivalence(a, b);
}

namespace detail {

// Symmetric Dirichlet(1) draw on a random k-subset of d coordinates.
inline std::vector<double> SampleSparseSimplex(int d, int k, RandomStream& rng) {
  std::vector<int> idx(d);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.Index(d - i)]);
  std::vector<double> w(d, 0.0);
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    double g = 0.0;
    while (g <= 0.0) g = rng.Gamma(1.0);
    w[idx[i]] = g;
    total += g;
  }
  for (int i = 0; i < k; ++i) w[idx[i]] /= total;
  // Push the rounding residue onto the largest entry so the sum is exactly 1.
  double sum = 0.0;
  for (double x : w) sum += x;
  *std::max_element(w.begin(), w.end()) += 1.0 - sum;
  return w;
}

}  // namespace detail

// Deterministic in (cfg, seed). Context features are a fixed linear image of
// w* plus Gaussian noise, so the manager sees partial signal about U*.
inline TaskSuite GenerateTaskSuite(const SuiteConfig& cfg, std::uint64_t seed) {
  cfg.Validate();
  RandomStream rng(seed);
  TaskSuite suite;
  suite.seed = seed;
  suite.config = cfg;
  suite.space.verifiers = cfg.verifiers;
  for (int j = 0; j < cfg.d; ++j) {
    suite.space.names.push_back("attr_" + std::string(j < 10 ? "0" : "") + std::to_string(j));
    suite.space.verifier_kind.push_back(rng.Bernoulli(cfg.judge_fraction)
                                            ? VerifierKind::kModelJudge
                                            : VerifierKind::kRuleBased);
  }
  suite.context_map.resize(static_cast<std::size_t>(cfg.d_ctx) * cfg.d);
  for (double& a : suite.context_map) a = rng.Normal(0.0, 1.0);

  const int total = cfg.n_train + cfg.n_eval;
  for (int t = 0; t < total; ++t) {
    Task task;
    task.split = t < cfg.n_train ? Split::kTrain : Split::kEval;
    const int local = task.split == Split::kTrain ? t : t - cfg.n_train;
    task.context.task_id = std::string(task.split == Split::kTrain ? "train-" : "eval-") +
                           (local < 10 ? "00" : (local < 100 ? "0" : "")) + std::to_string(local);
    const int k = cfg.k_star_min + static_cast<int>(rng.Index(cfg.k_star_max - cfg.k_star_min + 1));
    StakeholderModel& s = task.stakeholder;
    s.w_star = detail::SampleSparseSimplex(cfg.d, k, rng);
    s.transform.gamma = cfg.transform_gamma;
    s.noise = cfg.answer_noise;
    s.accept_threshold = cfg.accept_threshold;

    task.context.context_features.resize(cfg.d_ctx);
    for (int r = 0; r < cfg.d_ctx; ++r) {
      double v = 0.0;
      for (int j = 0; j < cfg.d; ++j) v += suite.context_map[r * cfg.d + j] * s.w_star[j];
      task.context.context_features[r] = v + rng.Normal(0.0, cfg.context_noise);
    }
    if (cfg.hint_size > 0) {
      std::vector<int> support = s.Support();
      std::stable_sort(support.begin(), support.end(),
                       [&](int a, int b) { return s.w_star[a] > s.w_star[b]; });
      support.resize(std::min<std::size_t>(support.size(), cfg.hint_size));
      std::sort(support.begin(), support.end());
      task.context.preference_hint = support;
    }
    task.gold_rubric = GoldRubric(s, suite.space);
    suite.tasks.push_back(std::move(task));
  }
  return suite;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::ordered_json& j, const AnswerNoise& n) {
  j = nlohmann::ordered_json{{"easy_flip", n.easy_flip},
                             {"medium_bucket", n.medium_bucket},
                             {"hard_stddev", n.hard_stddev}};
}
inline void from_json(const nlohmann::ordered_json& j, AnswerNoise& n) {
  j.at("easy_flip").get_to(n.easy_flip);
  j.at("medium_bucket").get_to(n.medium_bucket);
  j.at("hard_stddev").get_to(n.hard_stddev);
}

inline void to_json(nlohmann::ordered_json& j, const VerifierCosts& v) {
  j = nlohmann::ordered_json{{"rule_cost_usd", v.rule_cost_usd},
                             {"rule_time_sec", v.rule_time_sec},
                             {"judge_cost_usd", v.judge_cost_usd},
                             {"judge_time_sec", v.judge_time_sec},
                             {"judge_flip_prob", v.judge_flip_prob}};
}
inline void from_json(const nlohmann::ordered_json& j, VerifierCosts& v) {
  j.at("rule_cost_usd").get_to(v.rule_cost_usd);
  j.at("rule_time_sec").get_to(v.rule_time_sec);
  j.at("judge_cost_usd").get_to(v.judge_cost_usd);
  j.at("judge_time_sec").get_to(v.judge_time_sec);
  j.at("judge_flip_prob").get_to(v.judge_flip_prob);
}

inline void to_json(nlohmann::ordered_json& j, const SuiteConfig& c) {
  j = nlohmann::ordered_json{{"d", c.d},
                             {"d_ctx", c.d_ctx},
                             {"k_star_min", c.k_star_min},
                             {"k_star_max", c.k_star_max},
                             {"n_train", c.n_train},
                             {"n_eval", c.n_eval},
                             {"context_noise", c.context_noise},
                             {"judge_fraction", c.judge_fraction},
                             {"hint_size", c.hint_size},
                             {"transform_gamma", c.transform_gamma},
                             {"accept_threshold", c.accept_threshold},
                             {"answer_noise", c.answer_noise},
                             {"verifiers", c.verifiers}};
}
inline void from_json(const nlohmann::ordered_json& j, SuiteConfig& c) {
  SuiteConfig defaults;
  c.d = j.value("d", defaults.d);
  c.d_ctx = j.value("d_ctx", defaults.d_ctx);
  c.k_star_min = j.value("k_star_min", defaults.k_star_min);
  c.k_star_max = j.value("k_star_max", defaults.k_star_max);
  c.n_train = j.value("n_train", defaults.n_train);
  c.n_eval = j.value("n_eval", defaults.n_eval);
  c.context_noise = j.value("context_noise", defaults.context_noise);
  c.judge_fraction = j.value("judge_fraction", defaults.judge_fraction);
  c.hint_size = j.value("hint_size", defaults.hint_size);
  c.transform_gamma = j.value("transform_gamma", defaults.transform_gamma);
  c.accept_threshold = j.value("accept_threshold", defaults.accept_threshold);
  if (j.contains("answer_noise")) j.at("answer_noise").get_to(c.answer_noise);
  if (j.contains("verifiers")) j.at("verifiers").get_to(c.verifiers);
}

inline void to_json(nlohmann::ordered_json& j, const StakeholderModel& s) {
  j = nlohmann::ordered_json{{"w_star", s.w_star},
                             {"transform_gamma", s.transform.gamma},
                             {"answer_noise", s.noise},
                             {"accept_threshold", s.accept_threshold}};
}
inline void from_json(const nlohmann::ordered_json& j, StakeholderModel& s) {
  j.at("w_star").get_to(s.w_star);
  j.at("transform_gamma").get_to(s.transform.gamma);
  j.at("answer_noise").get_to(s.noise);
  j.at("accept_threshold").get_to(s.accept_threshold);
}

inline void to_json(nlohmann::ordered_json& j, const Task& t) {
  j = nlohmann::ordered_json{{"task_id", t.context.task_id},
                             {"split", t.split},
                             {"context_features", t.context.context_features}};
  j["preference_hint"] = t.context.preference_hint ? nlohmann::ordered_json(*t.context.preference_hint)
                                                   : nlohmann::ordered_json(nullptr);
  j["stakeholder"] = t.stakeholder;
  j["gold_rubric"] = t.gold_rubric;
}
inline void from_json(const nlohmann::ordered_json& j, Task& t) {
  j.at("task_id").get_to(t.context.task_id);
  j.at("split").get_to(t.split);
  j.at("context_features").get_to(t.context.context_features);
  if (j.contains("preference_hint") && !j.at("preference_hint").is_null()) {
    t.context.preference_hint = j.at("preference_hint").get<std::vector<int>>();
  }
  j.at("stakeholder").get_to(t.stakeholder);
  j.at("gold_rubric").get_to(t.gold_rubric);
}

inline void to_json(nlohmann::ordered_json& j, const TaskSuite& s) {
  nlohmann::ordered_json attributes = nlohmann::ordered_json::array();
  for (std::size_t a = 0; a < s.space.size(); ++a) {
    attributes.push_back({{"name", s.space.names[a]}, {"verifier", s.space.verifier_kind[a]}});
  }
  j = nlohmann::ordered_json{{"suite_version", s.suite_version},
                             {"seed", s.seed},
                             {"config", s.config},
                             {"attributes", attributes},
                             {"verifier_costs", s.space.verifiers},
                             {"context_map", s.context_map},
                             {"tasks", s.tasks}};
}
inline void from_json(const nlohmann::ordered_json& j, TaskSuite& s) {
  s.suite_version = j.at("suite_version").get<int>();
  if (s.suite_version != kSuiteVersion) {
    throw FormatError("unsupported suite_version " + std::to_string(s.suite_version));
  }
  j.at("seed").get_to(s.seed);
  j.at("config").get_to(s.config);
  s.space = {};
  for (const auto& a : j.at("attributes")) {
    s.space.names.push_back(a.at("name").get<std::string>());
    s.space.verifier_kind.push_back(a.at("verifier").get<VerifierKind>());
  }
  j.at("verifier_costs").get_to(s.space.verifiers);
  j.at("context_map").get_to(s.context_map);
  j.at("tasks").get_to(s.tasks);
  s.space.Validate();
}

}  // namespace rubricloop

#endif  // RUBRICLOOP_ENV_HPP_

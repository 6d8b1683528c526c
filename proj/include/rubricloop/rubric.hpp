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

// Rubrics: weighted, staged, verifiable criteria and the proxy utility they
// induce on a worker output. A rubric scores an output as the weighted sum of
// its verifier values; stages are labels only and do not change scoring.

#ifndef RUBRICLOOP_RUBRIC_HPP_
#define RUBRICLOOP_RUBRIC_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "rubricloop/error.hpp"
#include "rubricloop/random.hpp"

namespace rubricloop {

inline constexpr std::size_t kDefaultMaxCriteria = 12;

// Attribute satisfaction levels produced by a worker, plus the effort it
// spent per attribute.
struct WorkerOutput {
  std::vector<double> satisfaction;
  std::vector<double> effort;
};

enum class Stage { kGate, kVerification, kQuality };
enum class VerifierKind { kRuleBased, kModelJudge };

NLOHMANN_JSON_SERIALIZE_ENUM(Stage, {{Stage::kGate, "gate"},
                                     {Stage::kVerification, "verification"},
                                     {Stage::kQuality, "quality"}})
NLOHMANN_JSON_SERIALIZE_ENUM(VerifierKind, {{VerifierKind::kRuleBased, "rule"},
                                            {VerifierKind::kModelJudge, "judge"}})

inline const char* StageName(Stage s) {
  switch (s) {
    case Stage::kGate: return "gate";
    case Stage::kVerification: return "verification";
    case Stage::kQuality: return "quality";
  }
  return "?";
}

struct VerifierSpec {
  VerifierKind kind = VerifierKind::kRuleBased;
  double flip_prob = 0.0;  // ModelJudge only.
  double unit_cost_usd = 0.0;
  double unit_time_sec = 0.01;
};

// Per-call verifier price list used when building specs for an attribute.
struct VerifierCosts {
  double rule_cost_usd = 0.0;
  double rule_time_sec = 0.01;
  double judge_cost_usd = 0.002;
  double judge_time_sec = 1.5;
  double judge_flip_prob = 0.02;

  VerifierSpec For(VerifierKind kind) const {
    if (kind == VerifierKind::kRuleBased) {
      return {VerifierKind::kRuleBased, 0.0, rule_cost_usd, rule_time_sec};
    }
    return {VerifierKind::kModelJudge, judge_flip_prob, judge_cost_usd, judge_time_sec};
  }

  // Same specs with judge noise removed.
  VerifierCosts NoiseFree() const {
    VerifierCosts c = *this;
    c.judge_flip_prob = 0.0;
    return c;
  }
};

struct Criterion {
  std::string template_id;
  int attribute_index = 0;
  Stage stage = Stage::kVerification;
  std::string text;
  VerifierSpec verifier;
  double weight = 0.0;
};

struct Rubric {
  std::vector<Criterion> criteria;
  std::size_t max_criteria = kDefaultMaxCriteria;

  std::size_t size() const { return criteria.size(); }

  // Dense attribute-weight vector of length d (zeros off-rubric).
  std::vector<double> ExpandWeights(std::size_t d) const {
    std::vector<double> w(d, 0.0);
    for (const Criterion& c : criteria) {
      detail::Require(c.attribute_index >= 0 && static_cast<std::size_t>(c.attribute_index) < d,
                      "Rubric::ExpandWeights: attribute index out of range");
      w[c.attribute_index] += c.weight;
    }
    return w;
  }
};

struct ValidationResult {
  std::vector<std::string> violations;
  bool valid() const { return violations.empty(); }
};

// Checks every rubric invariant; `num_attributes`, when given, also bounds
// attribute indices.
inline ValidationResult ValidateRubric(const Rubric& r,
                                       std::optional<std::size_t> num_attributes = std::nullopt) {
  ValidationResult result;
  auto fail = [&](std::string msg) { result.violations.push_back(std::move(msg)); };
  if (r.criteria.empty()) fail("rubric has no criteria");
  if (r.criteria.size() > r.max_criteria) {
    fail("rubric length " + std::to_string(r.criteria.size()) + " exceeds maximum " +
         std::to_string(r.max_criteria));
  }
  double total = 0.0;
  std::set<int> seen;
  for (std::size_t i = 0; i < r.criteria.size(); ++i) {
    const Criterion& c = r.criteria[i];
    const std::string where = "criterion " + std::to_string(i);
    if (!(c.weight >= 0.0 && c.weight <= 1.0)) fail(where + ": weight outside [0,1]");
    total += c.weight;
    if (c.attribute_index < 0 ||
        (num_attributes && static_cast<std::size_t>(c.attribute_index) >= *num_attributes)) {
      fail(where + ": attribute index out of range");
    }
    if (!seen.insert(c.attribute_index).second) fail(where + ": duplicate attribute");
    const VerifierSpec& v = c.verifier;
    if (v.kind == VerifierKind::kRuleBased && v.flip_prob != 0.0) {
      fail(where + ": rule-based verifier with nonzero flip probability");
    }
    if (!(v.flip_prob >= 0.0 && v.flip_prob < 0.5)) fail(where + ": flip probability outside [0,0.5)");
    if (!(v.unit_cost_usd >= 0.0) || !(v.unit_time_sec >= 0.0)) fail(where + ": negative cost");
  }
  if (!r.criteria.empty() && std::abs(total - 1.0) > 1e-9) {
    fail("weights sum to " + std::to_string(total) + ", not 1 (simplex violation)");
  }
  return result;
}

// Labels criteria Gate / Verification / Quality by where the midpoint of each
// criterion's weight interval falls in the cumulative mass: [0, .25) Gate,
// [.25, .75) Verification, [.75, 1] Quality. Order of `criteria` is kept.
inline void AssignStages(std::vector<Criterion>& criteria) {
  double total = 0.0;
  for (const Criterion& c : criteria) total += c.weight;
  if (total <= 0.0) return;
  double cumulative = 0.0;
  for (Criterion& c : criteria) {
    const double mid = (cumulative + 0.5 * c.weight) / total;
    cumulative += c.weight;
    c.stage = mid < 0.25 ? Stage::kGate : (mid < 0.75 ? Stage::kVerification : Stage::kQuality);
  }
}

// Weight mass per stage, indexed by Stage.
inline std::array<double, 3> StageMass(const Rubric& r) {
  std::array<double, 3> mass{0.0, 0.0, 0.0};
  for (const Criterion& c : r.criteria) mass[static_cast<int>(c.stage)] += c.weight;
  return mass;
}

// One verifier call. Rule-based verifiers read the satisfaction level exactly
// and consume no randomness. A model judge consumes exactly one uniform draw u:
// u < flip_prob corrupts the reading to u / flip_prob, which is itself uniform
// on [0, 1) given corruption.
inline double RunVerifier(const VerifierSpec& spec, const WorkerOutput& y, int attribute_index,
                          RandomStream& rng) {
  detail::Require(attribute_index >= 0 &&
                      static_cast<std::size_t>(attribute_index) < y.satisfaction.size(),
                  "RunVerifier: attribute index out of range");
  const double level = y.satisfaction[attribute_index];
  if (spec.kind == VerifierKind::kRuleBased) return level;
  const double u = rng.Uniform();
  return u < spec.flip_prob ? u / spec.flip_prob : level;
}

enum class TimeAggregation { kSequential, kParallel };
NLOHMANN_JSON_SERIALIZE_ENUM(TimeAggregation, {{TimeAggregation::kSequential, "sequential"},
                                               {TimeAggregation::kParallel, "parallel"}})

struct ScoreBreakdown {
  double proxy_utility = 0.0;
  std::vector<double> values;
  double total_cost_usd = 0.0;
  double total_time_sec = 0.0;
};

struct VerificationCost {
  double cost_usd = 0.0;
  double time_sec = 0.0;
};

// Cost of one scoring pass of `r`: cost adds up; time adds up (sequential) or
// takes the slowest criterion (parallel).
inline VerificationCost RubricCost(const Rubric& r,
                                   TimeAggregation mode = TimeAggregation::kSequential) {
  VerificationCost cost;
  for (const Criterion& c : r.criteria) {
    cost.cost_usd += c.verifier.unit_cost_usd;
    cost.time_sec = mode == TimeAggregation::kSequential
                        ? cost.time_sec + c.verifier.unit_time_sec
                        : std::max(cost.time_sec, c.verifier.unit_time_sec);
  }
  return cost;
}

// Proxy utility sum_j w_j * v_j with verifier values v_j.
inline ScoreBreakdown Score(const Rubric& r, const WorkerOutput& y, RandomStream& rng,
                            TimeAggregation mode = TimeAggregation::kSequential) {
  const ValidationResult check = ValidateRubric(r, y.satisfaction.size());
  if (!check.valid()) throw InvalidArgument("Score: invalid rubric: " + check.violations.front());
  ScoreBreakdown out;
  out.values.reserve(r.criteria.size());
  for (const Criterion& c : r.criteria) {
    const double v = RunVerifier(c.verifier, y, c.attribute_index, rng);
    out.values.push_back(v);
    out.proxy_utility += c.weight * v;
  }
  const VerificationCost cost = RubricCost(r, mode);
  out.total_cost_usd = cost.cost_usd;
  out.total_time_sec = cost.time_sec;
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::ordered_json& j, const VerifierSpec& v) {
  j = nlohmann::ordered_json{{"kind", v.kind},
                             {"flip_prob", v.flip_prob},
                             {"unit_cost_usd", v.unit_cost_usd},
                             {"unit_time_sec", v.unit_time_sec}};
}

inline void from_json(const nlohmann::ordered_json& j, VerifierSpec& v) {
  j.at("kind").get_to(v.kind);
  j.at("flip_prob").get_to(v.flip_prob);
  j.at("unit_cost_usd").get_to(v.unit_cost_usd);
  j.at("unit_time_sec").get_to(v.unit_time_sec);
}

inline void to_json(nlohmann::ordered_json& j, const Criterion& c) {
  j = nlohmann::ordered_json{{"template_id", c.template_id}, {"attribute", c.attribute_index},
                             {"stage", c.stage},             {"text", c.text},
                             {"weight", c.weight},           {"verifier", c.verifier}};
}

inline void from_json(const nlohmann::ordered_json& j, Criterion& c) {
  j.at("template_id").get_to(c.template_id);
  j.at("attribute").get_to(c.attribute_index);
  j.at("stage").get_to(c.stage);
  c.text = j.value("text", std::string());
  j.at("weight").get_to(c.weight);
  j.at("verifier").get_to(c.verifier);
}

inline void to_json(nlohmann::ordered_json& j, const Rubric& r) {
  j = nlohmann::ordered_json{{"max_criteria", r.max_criteria}, {"criteria", r.criteria}};
}

inline void from_json(const nlohmann::ordered_json& j, Rubric& r) {
  r.max_criteria = j.value("max_criteria", kDefaultMaxCriteria);
  j.at("criteria").get_to(r.criteria);
}

}  // namespace rubricloop

#endif  // RUBRICLOOP_RUBRIC_HPP_

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

// Simulated pre-execution consultation: the manager asks questions about
// single attributes at a declared difficulty and the stakeholder answers with
// level-dependent precision and noise.

#ifndef RUBRICLOOP_DIALOGUE_HPP_
#define RUBRICLOOP_DIALOGUE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <variant>
#include <vector>

#include "json.hpp"
#include "rubricloop/env.hpp"
#include "rubricloop/error.hpp"
#include "rubricloop/random.hpp"
#include "rubricloop/rubric.hpp"

namespace rubricloop {

enum class Level { kEasy = 0, kMedium = 1, kHard = 2 };
NLOHMANN_JSON_SERIALIZE_ENUM(Level, {{Level::kEasy, "easy"},
                                     {Level::kMedium, "medium"},
                                     {Level::kHard, "hard"}})

struct Question {
  int attribute_index = 0;
  Level level = Level::kEasy;
};

// Medium answers report which bucket w*_j falls in.
inline constexpr std::array<double, 5> kBucketEdges = {0.0, 0.05, 0.15, 0.3, 1.0};

struct SignBit {
  bool relevant = false;
};
struct Bucket {
  int index = 0;
};
struct Estimate {
  double value = 0.0;
};

struct Answer {
  std::variant<SignBit, Bucket, Estimate> payload;
  Level level = Level::kEasy;
};

struct DialogueTranscript {
  std::vector<std::pair<Question, Answer>> turns;
  int n_easy = 0;
  int n_medium = 0;
  int n_hard = 0;

  void Append(const Question& q, const Answer& a) {
    turns.emplace_back(q, a);
    switch (q.level) {
      case Level::kEasy: ++n_easy; break;
      case Level::kMedium: ++n_medium; break;
      case Level::kHard: ++n_hard; break;
    }
  }

  bool Asked(int attribute) const {
    return std::any_of(turns.begin(), turns.end(),
                       [&](const auto& t) { return t.first.attribute_index == attribute; });
  }
};

inline int BucketOf(double w) {
  for (int b = 0; b < 3; ++b) {
    if (w < kBucketEdges[b + 1]) return b;
  }
  return 3;
}

inline double BucketMidpoint(int b) { return 0.5 * (kBucketEdges[b] + kBucketEdges[b + 1]); }

// The stakeholder's reply. Easy: relevance indicator 1[w*_j > 0] flipped with
// the easy-flip probability. Medium: bucket of w*_j moved one bucket up or
// down with the bucket-noise probability. Hard: w*_j plus Gaussian noise,
// clamped to [0, 1].
inline Answer AnswerQuestion(const StakeholderModel& s, const Question& q, RandomStream& rng) {
  detail::Require(q.attribute_index >= 0 &&
                      static_cast<std::size_t>(q.attribute_index) < s.w_star.size(),
                  "AnswerQuestion: attribute index out of range");
  const double w = s.w_star[q.attribute_index];
  Answer a;
  a.level = q.level;
  switch (q.level) {
    case Level::kEasy: {
      bool bit = w > 0.0;
      if (rng.Bernoulli(s.noise.easy_flip)) bit = !bit;
      a.payload = SignBit{bit};
      break;
    }
    case Level::kMedium: {
      int b = BucketOf(w);
      if (rng.Bernoulli(s.noise.medium_bucket)) {
        b += rng.Bernoulli(0.5) ? 1 : -1;
        b = std::clamp(b, 0, 3);
      }
      a.payload = Bucket{b};
      break;
    }
    case Level::kHard:
      a.payload = Estimate{std::clamp(w + rng.Normal(0.0, s.noise.hard_stddev), 0.0, 1.0)};
      break;
  }
  return a;
}

// Questions carry their burden level; the stakeholder-side classifier is the
// identity on that declared level.
inline Level ClassifyDifficulty(const Question& q) { return q.level; }

// log(1 + 0.1 n_easy + 0.5 n_medium + n_hard) / log(1 + burden_scale).
// The default scale of 15 gives the log(16) normalizer.
inline double ClarificationCost(int n_easy, int n_medium, int n_hard, double burden_scale = 15.0) {
  if (n_easy < 0 || n_medium < 0 || n_hard < 0) {
    throw InvalidArgument("ClarificationCost: negative question count");
  }
  detail::Require(burden_scale > 0.0, "ClarificationCost: burden scale must be > 0");
  return std::log(1.0 + 0.1 * n_easy + 0.5 * n_medium + n_hard) / std::log(1.0 + burden_scale);
}

inline double ClarificationCost(const DialogueTranscript& t, double burden_scale = 15.0) {
  return ClarificationCost(t.n_easy, t.n_medium, t.n_hard, burden_scale);
}

inline double L1Distance(std::span<const double> a, std::span<const double> b) {
  detail::Require(a.size() == b.size(), "L1Distance: size mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return d;
}

// True iff the draft's attribute-weight vector is within the stakeholder's
// acceptance threshold of w* in L1.
inline bool Satisfied(const StakeholderModel& s, const Rubric& draft) {
  const std::vector<double> w = draft.ExpandWeights(s.w_star.size());
  return L1Distance(w, s.w_star) <= s.accept_threshold;
}

// Point estimate of w* from a transcript: for each attribute the most
// informative answer wins (hard value > medium bucket midpoint > easy, where
// easy yes keeps the 1/d prior and easy no gives 0). Unqueried attributes keep
// the prior. Renormalized onto the simplex.
inline std::vector<double> EstimateWeights(const DialogueTranscript& t, std::size_t d) {
  detail::Require(d >= 1, "EstimateWeights: d must be >= 1");
  const double prior = 1.0 / static_cast<double>(d);
  std::vector<double> est(d, prior);
  std::vector<int> best_level(d, -1);
  for (const auto& [q, a] : t.turns) {
    const int j = q.attribute_index;
    detail::Require(j >= 0 && static_cast<std::size_t>(j) < d,
                    "EstimateWeights: attribute index out of range");
    const int level = static_cast<int>(a.level);
    if (level < best_level[j]) continue;
    best_level[j] = level;
    if (const auto* e = std::get_if<Estimate>(&a.payload)) {
      est[j] = e->value;
    } else if (const auto* b = std::get_if<Bucket>(&a.payload)) {
      est[j] = BucketMidpoint(b->index);
    } else if (const auto* s = std::get_if<SignBit>(&a.payload)) {
      est[j] = s->relevant ? prior : 0.0;
    }
  }
  double total = 0.0;
  for (double v : est) total += v;
  if (total <= 0.0) return std::vector<double>(d, prior);
  for (double& v : est) v /= total;
  return est;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::ordered_json& j, const Answer& a) {
  j = nlohmann::ordered_json{{"level", a.level}};
  if (const auto* e = std::get_if<Estimate>(&a.payload)) {
    j["estimate"] = e->value;
  } else if (const auto* b = std::get_if<Bucket>(&a.payload)) {
    j["bucket"] = b->index;
  } else {
    j["relevant"] = std::get<SignBit>(a.payload).relevant;
  }
}

inline void from_json(const nlohmann::ordered_json& j, Answer& a) {
  j.at("level").get_to(a.level);
  switch (a.level) {
    case Level::kEasy: a.payload = SignBit{j.at("relevant").get<bool>()}; break;
    case Level::kMedium: a.payload = Bucket{j.at("bucket").get<int>()}; break;
    case Level::kHard: a.payload = Estimate{j.at("estimate").get<double>()}; break;
  }
}

inline void to_json(nlohmann::ordered_json& j, const DialogueTranscript& t) {
  nlohmann::ordered_json turns = nlohmann::ordered_json::array();
  for (const auto& [q, a] : t.turns) {
    turns.push_back({{"attribute", q.attribute_index}, {"answer", a}});
  }
  j = nlohmann::ordered_json{
      {"n_easy", t.n_easy}, {"n_medium", t.n_medium}, {"n_hard", t.n_hard}, {"turns", turns}};
}

inline void from_json(const nlohmann::ordered_json& j, DialogueTranscript& t) {
  t = {};
  for (const auto& turn : j.at("turns")) {
    Answer a = turn.at("answer").get<Answer>();
    t.Append(Question{turn.at("attribute").get<int>(), a.level}, a);
  }
}

}  // namespace rubricloop

#endif  // RUBRICLOOP_DIALOGUE_HPP_

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

// Rubric-conditioned worker: splits a fixed effort budget across attributes
// in proportion to rubric weights and returns noisy saturating satisfaction.
// Workers only see the task context and the rubric.

#ifndef RUBRICLOOP_WORKER_HPP_
#define RUBRICLOOP_WORKER_HPP_

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "rubricloop/env.hpp"
#include "rubricloop/error.hpp"
#include "rubricloop/random.hpp"
#include "rubricloop/rubric.hpp"

namespace rubricloop {

struct WorkerConfig {
  double effort_budget = 4.0;
  double curvature = 1.0;
  double noise_stddev = 0.05;
  int team_size = 1;

  void Validate() const {
    detail::RequireConfig(effort_budget > 0.0, "worker: effort budget must be > 0");
    detail::RequireConfig(curvature > 0.0, "worker: curvature must be > 0");
    detail::RequireConfig(noise_stddev >= 0.0, "worker: noise stddev must be >= 0");
    detail::RequireConfig(team_size >= 1, "worker: team size must be >= 1");
  }
};

inline void to_json(nlohmann::ordered_json& j, const WorkerConfig& c) {
  j = nlohmann::ordered_json{{"effort_budget", c.effort_budget},
                             {"curvature", c.curvature},
                             {"noise_stddev", c.noise_stddev},
                             {"team_size", c.team_size}};
}
inline void from_json(const nlohmann::ordered_json& j, WorkerConfig& c) {
  c.effort_budget = j.value("effort_budget", c.effort_budget);
  c.curvature = j.value("curvature", c.curvature);
  c.noise_stddev = j.value("noise_stddev", c.noise_stddev);
  c.team_size = j.value("team_size", c.team_size);
}

// y_j = clamp(1 - exp(-kappa e_j) + N(0, sigma), 0, 1) with e_j = E w_j for
// rubric attributes (0 elsewhere), or E / d everywhere without a rubric.
// Consumes exactly d normal draws.
inline WorkerOutput Execute(const TaskContext& x, const Rubric* rubric, std::size_t d,
                            const WorkerConfig& cfg, RandomStream& rng) {
  (void)x;
  cfg.Validate();
  detail::Require(d >= 1, "Execute: empty attribute space");
  WorkerOutput out;
  if (rubric == nullptr) {
    out.effort.assign(d, cfg.effort_budget / static_cast<double>(d));
  } else {
    const ValidationResult check = ValidateRubric(*rubric, d);
    if (!check.valid()) {
      throw InvalidArgument("Execute: rubric invalid for attribute space: " +
                            check.violations.front());
    }
    out.effort = rubric->ExpandWeights(d);
    for (double& e : out.effort) e *= cfg.effort_budget;
  }
  out.satisfaction.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double mean = 1.0 - std::exp(-cfg.curvature * out.effort[j]);
    out.satisfaction[j] = std::clamp(mean + rng.Normal(0.0, cfg.noise_stddev), 0.0, 1.0);
  }
  return out;
}

inline WorkerOutput Execute(const TaskContext& x, const std::optional<Rubric>& rubric,
                            std::size_t d, const WorkerConfig& cfg, RandomStream& rng) {
  return Execute(x, rubric ? &*rubric : nullptr, d, cfg, rng);
}

// Team of n independent workers sharing one rubric. Member i draws from
// substream i of a base stream forked once from `rng`, so results do not
// depend on execution order.
inline std::vector<WorkerOutput> ExecuteTeam(const TaskContext& x, const Rubric& rubric,
                                             std::size_t d, const WorkerConfig& cfg,
                                             RandomStream& rng) {
  cfg.Validate();
  const RandomStream base = rng.Fork();
  std::vector<WorkerOutput> team;
  team.reserve(cfg.team_size);
  for (int i = 0; i < cfg.team_size; ++i) {
    RandomStream member = base.Substream(i);
    team.push_back(Execute(x, &rubric, d, cfg, member));
  }
  return team;
}

}  // namespace rubricloop

#endif  // RUBRICLOOP_WORKER_HPP_

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

// Test-time steering and ranking faithfulness: best-of-K selection,
// importance reweighting, NDCG@k, precision@k, rank swaps, percentile
// bootstrap intervals and the per-condition comparison report.

#ifndef RUBRICLOOP_EVAL_HPP_
#define RUBRICLOOP_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "json.hpp"
#include "rubricloop/dialogue.hpp"
#include "rubricloop/env.hpp"
#include "rubricloop/error.hpp"
#include "rubricloop/parallel.hpp"
#include "rubricloop/policy.hpp"
#include "rubricloop/random.hpp"
#include "rubricloop/rubric.hpp"
#include "rubricloop/stats.hpp"
#include "rubricloop/worker.hpp"

namespace rubricloop {

enum class Condition { kNoRubric, kSft, kGspo, kGold };
NLOHMANN_JSON_SERIALIZE_ENUM(Condition, {{Condition::kNoRubric, "no_rubric"},
                                         {Condition::kSft, "sft"},
                                         {Condition::kGspo, "gspo"},
                                         {Condition::kGold, "gold"}})

inline const char* ConditionName(Condition c) {
  switch (c) {
    case Condition::kNoRubric: return "no_rubric";
    case Condition::kSft: return "sft";
    case Condition::kGspo: return "gspo";
    case Condition::kGold: return "gold";
  }
  return "?";
}

inline Condition ParseCondition(const std::string& name) {
  for (Condition c : {Condition::kNoRubric, Condition::kSft, Condition::kGspo, Condition::kGold}) {
    if (name == ConditionName(c)) return c;
  }
  throw InvalidArgument("unknown condition '" + name + "'");
}

struct CandidateSet {
  Condition condition = Condition::kGold;
  std::vector<WorkerOutput> outputs;
  std::vector<double> proxy;   // u-hat
  std::vector<double> oracle;  // U*

  void Validate() const {
    detail::Require(proxy.size() == oracle.size(), "CandidateSet: scores not index-aligned");
    for (std::size_t i = 0; i < proxy.size(); ++i) {
      detail::Require(std::isfinite(proxy[i]) && std::isfinite(oracle[i]),
                      "CandidateSet: non-finite score");
    }
  }
};

enum class RankBy { kProxy, kOracle };

// Argmax with ties to the lowest index.
inline std::size_t ArgMaxLowest(std::span<const double> scores) {
  detail::Require(!scores.empty(), "best_of_k: empty candidate set");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

inline std::size_t BestOfK(const CandidateSet& c, RankBy by) {
  c.Validate();
  return ArgMaxLowest(by == RankBy::kProxy ? c.proxy : c.oracle);
}

// Draws index i with probability s_i / sum(s).
inline std::size_t ImportanceReweight(std::span<const double> scores, RandomStream& rng) {
  detail::Require(!scores.empty(), "importance_reweight: empty candidate set");
  double total = 0.0;
  for (double s : scores) {
    detail::Require(std::isfinite(s) && s >= 0.0, "importance_reweight: scores must be >= 0");
    total += s;
  }
  detail::Require(total > 0.0, "importance_reweight: all scores are zero");
  const double u = rng.Uniform() * total;
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] <= 0.0) continue;
    last_positive = i;
    cumulative += scores[i];
    if (u < cumulative) return i;
  }
  return last_positive;
}

inline std::size_t ImportanceReweight(const CandidateSet& c, RandomStream& rng) {
  c.Validate();
  return ImportanceReweight(c.proxy, rng);
}

// Indices sorted by descending score, ties to the lower index.
inline std::vector<std::size_t> RankDescending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

// DCG of the proxy ordering's relevances over the first k positions with
// discount 1 / log2(i + 1), normalized by the ideal DCG.
inline double NdcgAtK(std::span<const double> proxy, std::span<const double> relevance,
                      std::size_t k) {
  detail::Require(proxy.size() == relevance.size(), "ndcg_at_k: size mismatch");
  detail::Require(k >= 1 && k <= proxy.size(), "ndcg_at_k: k must lie in [1, n]");
  bool any = false;
  for (double r : relevance) {
    detail::Require(std::isfinite(r) && r >= 0.0, "ndcg_at_k: relevances must be >= 0");
    any = any || r > 0.0;
  }
  detail::Require(any, "ndcg_at_k: all relevances are zero");
  const std::vector<std::size_t> order = RankDescending(proxy);
  std::vector<double> ideal(relevance.begin(), relevance.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double log_pos = std::log2(static_cast<double>(i) + 2.0);
    dcg += relevance[order[i]] / log_pos;
    idcg += ideal[i] / log_pos;
  }
  return dcg / idcg;
}

struct RankAgreementResult {
  double precision_at_k = 0.0;
  int swaps = 0;
};

// precision@k = |top-k(proxy) & top-k(oracle)| / k; swaps counts pairs in the
// proxy top-k that the oracle orders strictly the other way.
inline RankAgreementResult RankAgreement(std::span<const double> proxy,
                                         std::span<const double> oracle, std::size_t k) {
  detail::Require(proxy.size() == oracle.size(), "rank_agreement: size mismatch");
  detail::Require(k >= 1 && k <= proxy.size(), "rank_agreement: k must lie in [1, n]");
  const std::vector<std::size_t> by_proxy = RankDescending(proxy);
  const std::vector<std::size_t> by_oracle = RankDescending(oracle);
  std::vector<char> in_oracle_top(proxy.size(), 0);
  for (std::size_t i = 0; i < k; ++i) in_oracle_top[by_oracle[i]] = 1;
  RankAgreementResult out;
  int hits = 0;
  for (std::size_t i = 0; i < k; ++i) hits += in_oracle_top[by_proxy[i]];
  out.precision_at_k = static_cast<double>(hits) / static_cast<double>(k);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      if (oracle[by_proxy[a]] < oracle[by_proxy[b]]) ++out.swaps;
    }
  }
  return out;
}

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

// Linear-interpolation quantile of sorted data.
inline double SortedQuantile(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Percentile bootstrap interval for the mean.
inline Interval BootstrapCi(std::span<const double> values, int n_boot, double level,
                            std::uint64_t seed) {
  detail::Require(!values.empty(), "bootstrap_ci: empty input");
  detail::Require(level > 0.0 && level < 1.0, "bootstrap_ci: level must lie in (0, 1)");
  detail::Require(n_boot >= 1, "bootstrap_ci: n_boot must be >= 1");
  RandomStream rng(seed);
  const std::size_t n = values.size();
  std::vector<double> means(n_boot);
  for (int b = 0; b < n_boot; ++b) {
    // Deviations from a pivot keep constant inputs exactly degenerate.
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += values[rng.Index(n)] - values[0];
    means[b] = values[0] + sum / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double tail = 0.5 * (1.0 - level);
  return {SortedQuantile(means, tail), SortedQuantile(means, 1.0 - tail)};
}

// Equal weights over every attribute: the uninformed ranking proxy.
inline Rubric UniformRubric(const AttributeSpace& space) {
  Rubric r;
  r.max_criteria = space.size();
  const double w = 1.0 / static_cast<double>(space.size());
  for (std::size_t j = 0; j < space.size(); ++j) {
    r.criteria.push_back(MakeCriterion(space, static_cast<int>(j), w));
  }
  AssignStages(r.criteria);
  return r;
}

inline bool CoversSupport(const Rubric& r, const StakeholderModel& s) {
  const std::vector<double> w = r.ExpandWeights(s.w_star.size());
  for (int j : s.Support()) {
    if (w[j] <= 0.0) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Condition comparison

struct EvalConfig {
  int n_max = 8;
  int trials = 16;
  int ndcg_k = 8;
  int precision_k = 3;
  WorkerConfig worker;
  bool noise_free_verifiers = false;
  int n_boot = 2000;
  double ci_level = 0.95;
  std::uint64_t seed = 7;
  int threads = 1;

  void Validate() const {
    detail::RequireConfig(n_max >= 1, "eval: n_max must be >= 1");
    detail::RequireConfig(trials >= 1, "eval: trials must be >= 1");
    detail::RequireConfig(ndcg_k >= 1, "eval: ndcg_k must be >= 1");
    detail::RequireConfig(precision_k >= 1 && precision_k <= std::max(n_max, ndcg_k),
                          "eval: precision_k must lie in [1, candidates]");
    detail::RequireConfig(n_boot >= 1, "eval: n_boot must be >= 1");
    detail::RequireConfig(ci_level > 0.0 && ci_level < 1.0, "eval: ci_level must lie in (0, 1)");
    worker.Validate();
  }
  int candidates() const { return std::max(n_max, ndcg_k); }
};

inline void to_json(nlohmann::ordered_json& j, const EvalConfig& c) {
  j = nlohmann::ordered_json{{"n_max", c.n_max},
                             {"trials", c.trials},
                             {"ndcg_k", c.ndcg_k},
                             {"precision_k", c.precision_k},
                             {"worker", c.worker},
                             {"noise_free_verifiers", c.noise_free_verifiers},
                             {"n_boot", c.n_boot},
                             {"ci_level", c.ci_level},
                             {"seed", c.seed}};
}
inline void from_json(const nlohmann::ordered_json& j, EvalConfig& c) {
  c.n_max = j.value("n_max", c.n_max);
  c.trials = j.value("trials", c.trials);
  c.ndcg_k = j.value("ndcg_k", c.ndcg_k);
  c.precision_k = j.value("precision_k", c.precision_k);
  if (j.contains("worker")) j.at("worker").get_to(c.worker);
  c.noise_free_verifiers = j.value("noise_free_verifiers", c.noise_free_verifiers);
  c.n_boot = j.value("n_boot", c.n_boot);
  c.ci_level = j.value("ci_level", c.ci_level);
  c.seed = j.value("seed", c.seed);
}

struct CurvePoint {
  int n = 0;
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double oracle_mean = 0.0;
};

struct TrialRecord {
  std::string task_id;
  int trial = 0;
  double ndcg = 0.0;
  double precision = 0.0;
  int swaps = 0;
  bool covers_support = false;
  std::size_t rubric_size = 0;
  double c_clarify = 0.0;
};

struct ConditionReport {
  Condition condition = Condition::kGold;
  std::vector<CurvePoint> curve;  // N ascending
  double ndcg_mean = 0.0;
  double ndcg_std = 0.0;
  double precision_mean = 0.0;
  double swaps_mean = 0.0;
  double mean_c_clarify = 0.0;
  std::vector<TrialRecord> trials;  // task-major, trial-minor
};

struct EvalReport {
  EvalConfig config;
  std::vector<ConditionReport> conditions;

  const ConditionReport& Get(Condition c) const {
    for (const ConditionReport& r : conditions) {
      if (r.condition == c) return r;
    }
    throw InvalidArgument(std::string("EvalReport: no condition ") + ConditionName(c));
  }
};

namespace detail {

struct TrialOutcome {
  std::vector<double> proxy_best;   // per N
  std::vector<double> oracle_best;  // per N
  TrialRecord record;
};

inline void StripJudgeNoise(Rubric& r) {
  for (Criterion& c : r.criteria) c.verifier.flip_prob = 0.0;
}

}  // namespace detail

// For each eval task and trial: builds the condition's rubric, runs
// max(N_max, ndcg_k) workers under it, scores them by u-hat and U*, and
// records best-of-N values for N = 1..N_max plus ranking agreement on the
// first ndcg_k candidates. Randomness is keyed by (task, trial) only, so
// conditions share worker and verifier noise streams.
inline EvalReport CompareConditions(const TaskSuite& suite, const TokenVocab& vocab,
                                    const std::map<Condition, PolicyParams>& policies,
                                    const std::vector<Condition>& conditions,
                                    const EvalConfig& cfg) {
  cfg.Validate();
  detail::Require(!conditions.empty(), "compare_conditions: no conditions requested");
  const std::vector<const Task*> tasks = suite.Select(Split::kEval);
  detail::Require(!tasks.empty(), "compare_conditions: suite has no eval tasks");
  const std::size_t d = suite.space.size();
  const int n_cand = cfg.candidates();
  const Rubric uniform = UniformRubric(suite.space);

  EvalReport report;
  report.config = cfg;
  for (Condition cond : conditions) {
    const PolicyParams* params = nullptr;
    if (cond == Condition::kSft || cond == Condition::kGspo) {
      const auto it = policies.find(cond);
      if (it == policies.end()) {
        throw InvalidArgument(std::string("compare_conditions: no parameters for condition ") +
                              ConditionName(cond));
      }
      params = &it->second;
    }
    const std::size_t n_cells = tasks.size() * static_cast<std::size_t>(cfg.trials);
    std::vector<detail::TrialOutcome> cells(n_cells);
    ParallelFor(n_cells, cfg.threads, [&](std::size_t cell) {
      const Task& task = *tasks[cell / cfg.trials];
      const int trial = static_cast<int>(cell % cfg.trials);
      const RandomStream base =
          RandomStream::Derive(cfg.seed, {cell / cfg.trials, static_cast<std::uint64_t>(trial)});
      RandomStream policy_rng = base.Substream(0);
      const RandomStream worker_base = base.Substream(1);
      const RandomStream verify_base = base.Substream(2);

      Rubric work_rubric, rank_rubric;
      bool use_rubric = true;
      double c_clarify = 0.0;
      switch (cond) {
        case Condition::kNoRubric:
          use_rubric = false;
          rank_rubric = uniform;
          break;
        case Condition::kGold:
          work_rubric = rank_rubric = task.gold_rubric;
          break;
        case Condition::kSft:
        case Condition::kGspo: {
          const ManagerPolicy policy(vocab, suite.space, *params);
          const TokenSequence seq =
              policy.SampleSequence(task.context, StakeholderHooks(task.stakeholder), policy_rng);
          work_rubric = rank_rubric = policy.Decode(seq);
          c_clarify = ClarificationCost(seq.transcript);
          break;
        }
      }
      if (cfg.noise_free_verifiers) detail::StripJudgeNoise(rank_rubric);

      std::vector<double> proxy(n_cand), oracle(n_cand);
      for (int i = 0; i < n_cand; ++i) {
        RandomStream wr = worker_base.Substream(i);
        RandomStream vr = verify_base.Substream(i);
        const WorkerOutput y =
            Execute(task.context, use_rubric ? &work_rubric : nullptr, d, cfg.worker, wr);
        proxy[i] = Score(rank_rubric, y, vr).proxy_utility;
        oracle[i] = TrueUtility(task.stakeholder, y);
      }

      detail::TrialOutcome& out = cells[cell];
      for (int n = 1; n <= cfg.n_max; ++n) {
        const std::span<const double> p(proxy.data(), n), o(oracle.data(), n);
        out.proxy_best.push_back(oracle[ArgMaxLowest(p)]);
        out.oracle_best.push_back(oracle[ArgMaxLowest(o)]);
      }
      const std::span<const double> pk(proxy.data(), cfg.ndcg_k), ok(oracle.data(), cfg.ndcg_k);
      const RankAgreementResult ra = RankAgreement(
          std::span<const double>(proxy.data(), n_cand),
          std::span<const double>(oracle.data(), n_cand), cfg.precision_k);
      out.record.task_id = task.context.task_id;
      out.record.trial = trial;
      out.record.ndcg = NdcgAtK(pk, ok, cfg.ndcg_k);
      out.record.precision = ra.precision_at_k;
      out.record.swaps = ra.swaps;
      out.record.covers_support = use_rubric && CoversSupport(rank_rubric, task.stakeholder);
      out.record.rubric_size = use_rubric ? work_rubric.size() : 0;
      out.record.c_clarify = c_clarify;
    });

    ConditionReport cr;
    cr.condition = cond;
    for (int n = 1; n <= cfg.n_max; ++n) {
      std::vector<double> task_means(tasks.size(), 0.0);
      double oracle_total = 0.0;
      for (std::size_t c = 0; c < n_cells; ++c) {
        task_means[c / cfg.trials] += cells[c].proxy_best[n - 1] / cfg.trials;
        oracle_total += cells[c].oracle_best[n - 1];
      }
      const Interval ci = BootstrapCi(
          task_means, cfg.n_boot, cfg.ci_level,
          MixSeed(cfg.seed ^ (static_cast<std::uint64_t>(cond) << 32) ^ static_cast<std::uint64_t>(n)));
      cr.curve.push_back({n, Mean(task_means), ci.low, ci.high,
                          oracle_total / static_cast<double>(n_cells)});
    }
    std::vector<double> ndcg;
    double precision = 0.0, swaps = 0.0, clarify = 0.0;
    for (const detail::TrialOutcome& c : cells) {
      ndcg.push_back(c.record.ndcg);
      precision += c.record.precision;
      swaps += c.record.swaps;
      clarify += c.record.c_clarify;
      cr.trials.push_back(c.record);
    }
    cr.ndcg_mean = Mean(ndcg);
    cr.ndcg_std = PopulationStd(ndcg);
    cr.precision_mean = precision / static_cast<double>(n_cells);
    cr.swaps_mean = swaps / static_cast<double>(n_cells);
    cr.mean_c_clarify = clarify / static_cast<double>(n_cells);
    report.conditions.push_back(std::move(cr));
  }
  return report;
}

inline std::string EvalCsv(const EvalReport& r) {
  std::string out = "condition,N,mean,ci_low,ci_high\n";
  for (const ConditionReport& c : r.conditions) {
    for (const CurvePoint& p : c.curve) {
      out += fmt::format("{},{},{:.6f},{:.6f},{:.6f}\n", ConditionName(c.condition), p.n, p.mean,
                         p.ci_low, p.ci_high);
    }
  }
  return out;
}

inline nlohmann::ordered_json EvalJson(const EvalReport& r) {
  nlohmann::ordered_json conds = nlohmann::ordered_json::array();
  for (const ConditionReport& c : r.conditions) {
    nlohmann::ordered_json curve = nlohmann::ordered_json::array();
    for (const CurvePoint& p : c.curve) {
      curve.push_back({{"N", p.n},
                       {"mean", p.mean},
                       {"ci_low", p.ci_low},
                       {"ci_high", p.ci_high},
                       {"oracle_ranked_mean", p.oracle_mean}});
    }
    nlohmann::ordered_json trials = nlohmann::ordered_json::array();
    for (const TrialRecord& t : c.trials) {
      trials.push_back({{"task_id", t.task_id},
                        {"trial", t.trial},
                        {"ndcg", t.ndcg},
                        {"precision", t.precision},
                        {"swaps", t.swaps},
                        {"covers_support", t.covers_support},
                        {"rubric_size", t.rubric_size}});
    }
    conds.push_back({{"condition", c.condition},
                     {"curve", curve},
                     {"ndcg_mean", c.ndcg_mean},
                     {"ndcg_std", c.ndcg_std},
                     {"precision_at_k", c.precision_mean},
                     {"mean_swaps", c.swaps_mean},
                     {"mean_c_clarify", c.mean_c_clarify},
                     {"trials", trials}});
  }
  return nlohmann::ordered_json{{"config", r.config}, {"conditions", conds}};
}

}  // namespace rubricloop

#endif  // RUBRICLOOP_EVAL_HPP_

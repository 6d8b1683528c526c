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

// Operator calibration on a finite decoding support. Supervision operators
// (pointwise rewards, pairwise preferences, listwise choices) emit noisy
// signals about U*; a tabular scorer fitted by empirical risk minimization
// under the matching strictly proper loss should reproduce the operator's
// target, and therefore the order U* induces on the support.

#ifndef RUBRICLOOP_CALIBRATION_HPP_
#define RUBRICLOOP_CALIBRATION_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rubricloop/env.hpp"
#include "rubricloop/error.hpp"
#include "rubricloop/random.hpp"
#include "rubricloop/stats.hpp"

namespace rubricloop {

// Candidates are indices 0..n-1 with known U* values; the sampler is uniform.
struct Support {
  std::vector<double> utilities;

  std::size_t size() const { return utilities.size(); }
  void Validate() const {
    detail::Require(utilities.size() >= 2, "Support: need at least 2 candidates");
    for (double u : utilities) detail::Require(std::isfinite(u), "Support: non-finite utility");
  }
};

inline Support MakeSupport(const StakeholderModel& s, std::span<const WorkerOutput> outputs) {
  Support support;
  for (const WorkerOutput& y : outputs) support.utilities.push_back(TrueUtility(s, y));
  support.Validate();
  return support;
}

enum class OperatorKind { kPointwise, kPairwise, kListwise };
NLOHMANN_JSON_SERIALIZE_ENUM(OperatorKind, {{OperatorKind::kPointwise, "pointwise"},
                                            {OperatorKind::kPairwise, "pairwise"},
                                            {OperatorKind::kListwise, "listwise"}})

inline const char* OperatorName(OperatorKind k) {
  switch (k) {
    case OperatorKind::kPointwise: return "pointwise";
    case OperatorKind::kPairwise: return "pairwise";
    case OperatorKind::kListwise: return "listwise";
  }
  return "?";
}

struct ObservationOperator {
  OperatorKind kind = OperatorKind::kPointwise;
  double noise_stddev = 0.1;      // pointwise
  double rationality_beta = 2.0;  // pairwise / listwise
  int list_size = 3;              // listwise

  void Validate(const Support& support) const {
    detail::Require(noise_stddev >= 0.0, "operator: negative noise");
    detail::Require(rationality_beta >= 0.0, "operator: negative rationality");
    if (kind == OperatorKind::kListwise) {
      detail::Require(list_size >= 1 && static_cast<std::size_t>(list_size) <= support.size(),
                      "operator: list size must lie in [1, |S|]");
    }
  }
};

// Instance: one candidate (pointwise), an ordered pair (pairwise) or a sorted
// list of distinct candidates (listwise).
struct Instance {
  std::vector<int> items;
};

// Observation Z: the reward r, the indicator that items[0] beat items[1], or
// the position in the list of the chosen candidate.
struct Observation {
  double reward = 0.0;
  bool first_wins = false;
  int chosen = 0;
};

inline double Sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline std::vector<double> Softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= z;
  return p;
}

// Target functional T*(U*)(I): E[r] = U*(y); sigma(beta dU*); softmax(beta U*).
inline std::vector<double> Target(const ObservationOperator& op, const Support& support,
                                  const Instance& inst) {
  for (int i : inst.items) {
    detail::Require(i >= 0 && static_cast<std::size_t>(i) < support.size(),
                    "Target: candidate out of range");
  }
  switch (op.kind) {
    case OperatorKind::kPointwise:
      detail::Require(inst.items.size() == 1, "Target: pointwise instance needs one candidate");
      return {support.utilities[inst.items[0]]};
    case OperatorKind::kPairwise:
      detail::Require(inst.items.size() == 2, "Target: pairwise instance needs two candidates");
      return {Sigmoid(op.rationality_beta *
                      (support.utilities[inst.items[0]] - support.utilities[inst.items[1]]))};
    case OperatorKind::kListwise: {
      detail::Require(!inst.items.empty(), "Target: listwise instance needs a nonempty list");
      std::vector<double> logits;
      for (int i : inst.items) logits.push_back(op.rationality_beta * support.utilities[i]);
      return Softmax(logits);
    }
  }
  return {};
}

inline std::pair<Instance, Observation> SampleObservation(const ObservationOperator& op,
                                                          const Support& support,
                                                          RandomStream& rng) {
  op.Validate(support);
  const std::size_t n = support.size();
  Instance inst;
  Observation z;
  switch (op.kind) {
    case OperatorKind::kPointwise: {
      inst.items = {static_cast<int>(rng.Index(n))};
      z.reward = support.utilities[inst.items[0]] + rng.Normal(0.0, op.noise_stddev);
      break;
    }
    case OperatorKind::kPairwise: {
      const int i = static_cast<int>(rng.Index(n));
      int j = static_cast<int>(rng.Index(n - 1));
      if (j >= i) ++j;
      inst.items = {i, j};
      z.first_wins = rng.Bernoulli(Target(op, support, inst)[0]);
      break;
    }
    case OperatorKind::kListwise: {
      std::vector<int> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      for (int k = 0; k < op.list_size; ++k) std::swap(idx[k], idx[k + rng.Index(n - k)]);
      inst.items.assign(idx.begin(), idx.begin() + op.list_size);
      std::sort(inst.items.begin(), inst.items.end());
      const std::vector<double> q = Target(op, support, inst);
      const double u = rng.Uniform();
      double cumulative = 0.0;
      z.chosen = static_cast<int>(q.size()) - 1;
      for (std::size_t k = 0; k < q.size(); ++k) {
        cumulative += q[k];
        if (u < cumulative) {
          z.chosen = static_cast<int>(k);
          break;
        }
      }
      break;
    }
  }
  return {inst, z};
}

struct LossValue {
  double value = 0.0;
  bool infinite = false;
};

// Strictly proper losses: squared error, Bernoulli NLL, -log t(y*).
inline LossValue ProperLoss(const ObservationOperator& op, std::span<const double> prediction,
                            const Observation& z) {
  auto neg_log = [](double p) {
    return p > 0.0 ? LossValue{-std::log(p), false}
                   : LossValue{std::numeric_limits<double>::infinity(), true};
  };
  switch (op.kind) {
    case OperatorKind::kPointwise:
      detail::Require(prediction.size() == 1, "ProperLoss: pointwise prediction is a scalar");
      return {(prediction[0] - z.reward) * (prediction[0] - z.reward), false};
    case OperatorKind::kPairwise:
      detail::Require(prediction.size() == 1, "ProperLoss: pairwise prediction is a probability");
      return neg_log(z.first_wins ? prediction[0] : 1.0 - prediction[0]);
    case OperatorKind::kListwise:
      detail::Require(z.chosen >= 0 && static_cast<std::size_t>(z.chosen) < prediction.size(),
                      "ProperLoss: chosen index outside the list");
      return neg_log(prediction[z.chosen]);
  }
  return {};
}

struct KlDecomposition {
  double kl = 0.0;
  double entropy = 0.0;
  double cross_entropy = 0.0;
  bool infinite = false;
};

// KL(q* || q_model) together with H(q*) and H(q*, q_model).
inline KlDecomposition KlListwise(std::span<const double> q_star, std::span<const double> q_model) {
  detail::Require(q_star.size() == q_model.size() && !q_star.empty(),
                  "KlListwise: supports must match");
  KlDecomposition out;
  for (std::size_t i = 0; i < q_star.size(); ++i) {
    if (q_star[i] <= 0.0) continue;
    out.entropy -= q_star[i] * std::log(q_star[i]);
    if (q_model[i] <= 0.0) {
      out.infinite = true;
      continue;
    }
    out.cross_entropy -= q_star[i] * std::log(q_model[i]);
    out.kl += q_star[i] * std::log(q_star[i] / q_model[i]);
  }
  if (out.infinite) {
    out.kl = out.cross_entropy = std::numeric_limits<double>::infinity();
  }
  return out;
}

struct FitConfig {
  double temperature = 1.0;
  double gradient_tolerance = 1e-9;
  int max_iterations = 200000;
  double initial_step = 1.0;
};

struct ScorerTable {
  std::vector<double> scores;
  double temperature = 1.0;
  int iterations = 0;
  double final_risk = 0.0;
  double gradient_norm = 0.0;
  std::size_t samples = 0;
  std::vector<char> visited;
};

namespace detail {

// Aggregated sufficient statistics of a sample; the empirical risk and its
// gradient only depend on these.
struct ObservationStats {
  std::vector<double> reward_sum, reward_sq, count;  // pointwise
  std::vector<std::vector<double>> pair_n, pair_wins;  // pairwise, [i][j]
  std::map<std::vector<int>, std::vector<double>> list_choices;  // listwise
  double n = 0.0;
};

inline double EmpiricalRisk(const ObservationOperator& op, const ObservationStats& st,
                            const std::vector<double>& g, double tau, std::vector<double>* grad) {
  const std::size_t m = g.size();
  if (grad != nullptr) grad->assign(m, 0.0);
  double risk = 0.0;
  switch (op.kind) {
    case OperatorKind::kPointwise:
      for (std::size_t i = 0; i < m; ++i) {
        risk += st.count[i] * g[i] * g[i] - 2.0 * g[i] * st.reward_sum[i] + st.reward_sq[i];
        if (grad != nullptr) (*grad)[i] = 2.0 * (st.count[i] * g[i] - st.reward_sum[i]) / st.n;
      }
      break;
    case OperatorKind::kPairwise:
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          const double n = st.pair_n[i][j];
          if (n == 0.0) continue;
          const double w = st.pair_wins[i][j];
          const double diff = g[i] - g[j];
          // -w log sigma(diff) - (n - w) log sigma(-diff), computed stably.
          const double log_p = -std::log1p(std::exp(-std::abs(diff))) + std::min(diff, 0.0);
          const double log_q = -std::log1p(std::exp(-std::abs(diff))) + std::min(-diff, 0.0);
          risk -= w * log_p + (n - w) * log_q;
          if (grad != nullptr) {
            const double gi = (n * Sigmoid(diff) - w) / st.n;
            (*grad)[i] += gi;
            (*grad)[j] -= gi;
          }
        }
      }
      break;
    case OperatorKind::kListwise:
      for (const auto& [items, chosen] : st.list_choices) {
        std::vector<double> logits;
        for (int i : items) logits.push_back(g[i] / tau);
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double l : logits) z += std::exp(l - mx);
        const double lse = mx + std::log(z);
        double total = 0.0;
        for (double c : chosen) total += c;
        for (std::size_t k = 0; k < items.size(); ++k) {
          risk += chosen[k] * (lse - logits[k]);
          if (grad != nullptr) {
            (*grad)[items[k]] += (total * std::exp(logits[k] - lse) - chosen[k]) / (tau * st.n);
          }
        }
      }
      break;
  }
  return risk / st.n;
}

}  // namespace detail

// Empirical risk minimization of a tabular scorer g (one score per
// candidate) under the operator's link and proper loss, by gradient descent
// with backtracking until the gradient's max-norm drops below tolerance.
inline ScorerTable FitScorer(const ObservationOperator& op, const Support& support,
                             std::size_t n_samples, const FitConfig& cfg, RandomStream& rng) {
  support.Validate();
  op.Validate(support);
  detail::Require(n_samples >= 1, "FitScorer: need at least one sample");
  detail::Require(cfg.temperature > 0.0, "FitScorer: temperature must be > 0");
  const std::size_t m = support.size();
  detail::ObservationStats st;
  st.reward_sum.assign(m, 0.0);
  st.reward_sq.assign(m, 0.0);
  st.count.assign(m, 0.0);
  st.pair_n.assign(m, std::vector<double>(m, 0.0));
  st.pair_wins.assign(m, std::vector<double>(m, 0.0));
  st.n = static_cast<double>(n_samples);
  ScorerTable table;
  table.visited.assign(m, 0);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const auto [inst, z] = SampleObservation(op, support, rng);
    for (int i : inst.items) table.visited[i] = 1;
    switch (op.kind) {
      case OperatorKind::kPointwise:
        st.reward_sum[inst.items[0]] += z.reward;
        st.reward_sq[inst.items[0]] += z.reward * z.reward;
        st.count[inst.items[0]] += 1.0;
        break;
      case OperatorKind::kPairwise:
        st.pair_n[inst.items[0]][inst.items[1]] += 1.0;
        if (z.first_wins) st.pair_wins[inst.items[0]][inst.items[1]] += 1.0;
        break;
      case OperatorKind::kListwise: {
        auto& counts = st.list_choices[inst.items];
        counts.resize(inst.items.size(), 0.0);
        counts[z.chosen] += 1.0;
        break;
      }
    }
  }

  std::vector<double> g(m, 0.0), grad, trial, trial_grad;
  double risk = detail::EmpiricalRisk(op, st, g, cfg.temperature, &grad);
  double step = cfg.initial_step;
  auto max_abs = [](const std::vector<double>& v) {
    double mx = 0.0;
    for (double x : v) mx = std::max(mx, std::abs(x));
    return mx;
  };
  int it = 0;
  for (; it < cfg.max_iterations && max_abs(grad) > cfg.gradient_tolerance; ++it) {
    double grad_sq = 0.0;
    for (double x : grad) grad_sq += x * x;
    bool accepted = false;
    for (int h = 0; h < 60 && !accepted; ++h) {
      trial = g;
      for (std::size_t i = 0; i < m; ++i) trial[i] -= step * grad[i];
      const double trial_risk = detail::EmpiricalRisk(op, st, trial, cfg.temperature, &trial_grad);
      // Near the optimum the Armijo decrease drops below the resolution of
      // the risk; then accept steps that keep the risk flat and shrink the
      // gradient (approximate Armijo condition).
      const bool armijo = trial_risk <= risk - 0.5 * step * grad_sq;
      const bool flat = std::abs(trial_risk - risk) <= 1e-12 * (1.0 + std::abs(risk)) &&
                        max_abs(trial_grad) < max_abs(grad);
      if (armijo || flat) {
        g.swap(trial);
        grad.swap(trial_grad);
        risk = trial_risk;
        accepted = true;
        step *= 1.5;
      } else {
        step *= 0.5;
      }
    }
    if (!accepted) break;  // Flat to machine precision.
  }
  table.scores = g;
  table.temperature = cfg.temperature;
  table.iterations = it;
  table.final_risk = risk;
  table.gradient_norm = max_abs(grad);
  table.samples = n_samples;
  if (table.gradient_norm > cfg.gradient_tolerance && it >= cfg.max_iterations) {
    throw NumericError(std::string("FitScorer(") + OperatorName(op.kind) +
                       "): no convergence after " + std::to_string(it) +
                       " iterations; gradient max-norm " + std::to_string(table.gradient_norm) +
                       ", risk " + std::to_string(risk));
  }
  return table;
}

struct CalibrationReport {
  OperatorKind kind = OperatorKind::kPointwise;
  double kendall_tau = 0.0;
  bool tau_defined = true;
  bool order_equivalent = false;
  // Listwise: max over pairs |(g_i - g_j) - tau * beta * (U_i - U_j)|.
  double max_affine_residual = 0.0;
  // Pairwise: fraction of candidate pairs whose score and utility
  // differences share a sign.
  double sign_agreement = 0.0;
  double max_abs_error = 0.0;  // Pointwise: max |g - U*|.
};

// Compares a fitted scorer against U* on the support. With zero rationality
// the pairwise and listwise targets carry no order, so tau is flagged
// undefined rather than failed.
inline CalibrationReport CheckTheorem(const ScorerTable& g, const Support& support,
                                      const ObservationOperator& op) {
  detail::Require(g.scores.size() == support.size(), "CheckTheorem: size mismatch");
  CalibrationReport report;
  report.kind = op.kind;
  const OrdinalReport ord = CheckOrdinalEquivalence(support.utilities, g.scores);
  report.kendall_tau = ord.kendall_tau;
  report.order_equivalent = ord.equivalent;
  report.tau_defined = std::isfinite(ord.kendall_tau) &&
                       !(op.kind != OperatorKind::kPointwise && op.rationality_beta == 0.0);
  const std::size_t n = support.size();
  std::size_t agree = 0, pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    report.max_abs_error = std::max(report.max_abs_error, std::abs(g.scores[i] - support.utilities[i]));
    for (std::size_t j = i + 1; j < n; ++j) {
      const double du = support.utilities[i] - support.utilities[j];
      const double dg = g.scores[i] - g.scores[j];
      report.max_affine_residual = std::max(
          report.max_affine_residual, std::abs(dg - g.temperature * op.rationality_beta * du));
      ++pairs;
      if (Sign(dg) == Sign(du)) ++agree;
    }
  }
  report.sign_agreement = static_cast<double>(agree) / static_cast<double>(pairs);
  if (op.kind != OperatorKind::kListwise) report.max_affine_residual = 0.0;
  if (op.kind == OperatorKind::kListwise || op.kind == OperatorKind::kPairwise) {
    report.max_abs_error = 0.0;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Pinned experiment protocol

struct CalibrationProtocol {
  std::size_t support_size = 6;
  double utility_low = 0.1;
  double utility_high = 0.9;
  std::size_t samples = 50000;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  double rationality_beta = 2.0;
  int list_size = 3;
  double pointwise_noise = 0.1;
  FitConfig fit;
};

inline void to_json(nlohmann::ordered_json& j, const FitConfig& c) {
  j = nlohmann::ordered_json{{"temperature", c.temperature},
                             {"gradient_tolerance", c.gradient_tolerance},
                             {"max_iterations", c.max_iterations},
                             {"initial_step", c.initial_step}};
}
inline void from_json(const nlohmann::ordered_json& j, FitConfig& c) {
  c.temperature = j.value("temperature", c.temperature);
  c.gradient_tolerance = j.value("gradient_tolerance", c.gradient_tolerance);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.initial_step = j.value("initial_step", c.initial_step);
}

inline void to_json(nlohmann::ordered_json& j, const CalibrationProtocol& p) {
  j = nlohmann::ordered_json{{"support_size", p.support_size},
                             {"utility_low", p.utility_low},
                             {"utility_high", p.utility_high},
                             {"samples", p.samples},
                             {"seeds", p.seeds},
                             {"rationality_beta", p.rationality_beta},
                             {"list_size", p.list_size},
                             {"pointwise_noise", p.pointwise_noise},
                             {"fit", p.fit}};
}
inline void from_json(const nlohmann::ordered_json& j, CalibrationProtocol& p) {
  p.support_size = j.value("support_size", p.support_size);
  p.utility_low = j.value("utility_low", p.utility_low);
  p.utility_high = j.value("utility_high", p.utility_high);
  p.samples = j.value("samples", p.samples);
  p.seeds = j.value("seeds", p.seeds);
  p.rationality_beta = j.value("rationality_beta", p.rationality_beta);
  p.list_size = j.value("list_size", p.list_size);
  p.pointwise_noise = j.value("pointwise_noise", p.pointwise_noise);
  if (j.contains("fit")) j.at("fit").get_to(p.fit);
}

struct CalibrationRun {
  std::uint64_t seed = 0;
  ObservationOperator op;
  Support support;
  ScorerTable scorer;
  CalibrationReport report;
  std::string error;  // Nonempty when the fit failed.
};

// Support with evenly spaced distinct utilities whose candidate order is
// shuffled by the seed.
inline Support ProtocolSupport(const CalibrationProtocol& p, std::uint64_t seed) {
  detail::Require(p.support_size >= 2, "ProtocolSupport: need |S| >= 2");
  Support s;
  for (std::size_t i = 0; i < p.support_size; ++i) {
    s.utilities.push_back(p.utility_low + (p.utility_high - p.utility_low) * static_cast<double>(i) /
                                              static_cast<double>(p.support_size - 1));
  }
  RandomStream rng = RandomStream::Derive(seed, {0xca1});
  for (std::size_t i = s.size(); i > 1; --i) std::swap(s.utilities[i - 1], s.utilities[rng.Index(i)]);
  return s;
}

inline std::vector<CalibrationRun> RunCalibrationProtocol(const CalibrationProtocol& p) {
  std::vector<CalibrationRun> runs;
  for (OperatorKind kind :
       {OperatorKind::kPointwise, OperatorKind::kPairwise, OperatorKind::kListwise}) {
    for (std::uint64_t seed : p.seeds) {
      CalibrationRun run;
      run.seed = seed;
      run.op.kind = kind;
      run.op.noise_stddev = p.pointwise_noise;
      run.op.rationality_beta = p.rationality_beta;
      run.op.list_size = p.list_size;
      run.support = ProtocolSupport(p, seed);
      RandomStream rng = RandomStream::Derive(seed, {0xf17, static_cast<std::uint64_t>(kind)});
      try {
        run.scorer = FitScorer(run.op, run.support, p.samples, p.fit, rng);
        run.report = CheckTheorem(run.scorer, run.support, run.op);
      } catch (const NumericError& e) {
        run.error = e.what();
      }
      runs.push_back(std::move(run));
    }
  }
  return runs;
}

inline nlohmann::ordered_json ToJson(const CalibrationRun& run) {
  nlohmann::ordered_json j{{"operator", run.op.kind},
                           {"seed", run.seed},
                           {"samples", run.scorer.samples},
                           {"rationality_beta", run.op.rationality_beta},
                           {"list_size", run.op.list_size},
                           {"pointwise_noise", run.op.noise_stddev},
                           {"utilities", run.support.utilities}};
  if (!run.error.empty()) {
    j["error"] = run.error;
    return j;
  }
  j["scores"] = run.scorer.scores;
  j["iterations"] = run.scorer.iterations;
  j["final_risk"] = run.scorer.final_risk;
  j["tau_defined"] = run.report.tau_defined;
  j["kendall_tau"] = run.report.tau_defined ? nlohmann::ordered_json(run.report.kendall_tau)
                                            : nlohmann::ordered_json(nullptr);
  j["order_equivalent"] = run.report.order_equivalent;
  j["max_affine_residual"] = run.report.max_affine_residual;
  j["sign_agreement"] = run.report.sign_agreement;
  j["max_abs_error"] = run.report.max_abs_error;
  return j;
}

}  // namespace rubricloop

#endif  // RUBRICLOOP_CALIBRATION_HPP_

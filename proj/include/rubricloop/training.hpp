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

// Two-stage training of the manager policy.
//
// Stage I fits the policy to scripted-expert demonstrations by gradient
// descent on the token negative log-likelihood. Stage II runs GSPO: for every
// task the dialogue is sampled once, K rubric completions are sampled from the
// shared dialogue state, workers execute them, returns are shaped by the
// clarification and compute costs, and the policy follows the clipped
// sequence-ratio surrogate with group-standardized advantages and a KL trust
// region. After each sweep the bottom-percentile groups are replayed.

#ifndef RUBRICLOOP_TRAINING_HPP_
#define RUBRICLOOP_TRAINING_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

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

// Which tokens enter the length-normalized sequence ratio.
enum class RatioSpan { kRubricTokens, kFullSequence };
// Which policy anchors the KL term.
enum class ReferencePolicy { kEpochStart, kInitial };
enum class Optimizer { kSgd, kAdam };

NLOHMANN_JSON_SERIALIZE_ENUM(RatioSpan, {{RatioSpan::kRubricTokens, "rubric"},
                                         {RatioSpan::kFullSequence, "full"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ReferencePolicy, {{ReferencePolicy::kEpochStart, "epoch_start"},
                                               {ReferencePolicy::kInitial, "initial"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Optimizer, {{Optimizer::kSgd, "sgd"}, {Optimizer::kAdam, "adam"}})

struct TrainConfig {
  int group_size = 4;
  double clip_epsilon = 0.2;
  double kl_coef = 0.05;
  double lambda_clarify = 0.05;
  double lambda_compute = 0.01;
  double w_cost = 0.3;
  double w_time = 0.7;
  // Saturation point of the compute cost: a 12-judge rubric maps to 1.
  double compute_alpha = 0.3 * (12 * 0.002) + 0.7 * (12 * 1.5);
  double burden_scale = 15.0;
  double replay_percentile = 25.0;
  bool replay = true;
  int epochs = 100;
  double learning_rate = 0.02;
  Optimizer optimizer = Optimizer::kAdam;
  double eps_std = 1e-8;
  RatioSpan ratio_span = RatioSpan::kRubricTokens;
  ReferencePolicy reference = ReferencePolicy::kEpochStart;
  // False subtracts the (unweighted) cost terms from the objective instead of
  // shaping the return; they then carry no gradient.
  bool costs_in_return = true;
  int accumulation = 1;
  int threads = 1;
  TimeAggregation time_aggregation = TimeAggregation::kSequential;
  WorkerConfig worker;
  std::uint64_t seed = 42;

  void Validate() const {
    detail::RequireConfig(group_size >= 2, "train config: K must be >= 2");
    detail::RequireConfig(clip_epsilon > 0.0 && clip_epsilon < 1.0,
                          "train config: clip epsilon must lie in (0,1)");
    detail::RequireConfig(kl_coef >= 0.0, "train config: negative KL coefficient");
    detail::RequireConfig(replay_percentile >= 0.0 && replay_percentile <= 100.0,
                          "train config: replay percentile outside [0,100]");
    detail::RequireConfig(epochs >= 0, "train config: negative epochs");
    detail::RequireConfig(learning_rate >= 0.0, "train config: negative learning rate");
    detail::RequireConfig(compute_alpha > 0.0, "train config: compute alpha must be > 0");
    detail::RequireConfig(accumulation >= 1, "train config: accumulation width must be >= 1");
    detail::RequireConfig(eps_std > 0.0, "train config: eps_std must be > 0");
    worker.Validate();
  }
};

struct SftConfig {
  int epochs = 1000;
  double learning_rate = 0.5;
  double tolerance = 1e-6;
  int max_halvings = 40;
};

// Missing keys keep the current value, so a partial object patches a config.
inline void to_json(nlohmann::ordered_json& j, const TrainConfig& c) {
  j = nlohmann::ordered_json{{"group_size", c.group_size},
                             {"clip_epsilon", c.clip_epsilon},
                             {"kl_coef", c.kl_coef},
                             {"lambda_clarify", c.lambda_clarify},
                             {"lambda_compute", c.lambda_compute},
                             {"w_cost", c.w_cost},
                             {"w_time", c.w_time},
                             {"compute_alpha", c.compute_alpha},
                             {"burden_scale", c.burden_scale},
                             {"replay_percentile", c.replay_percentile},
                             {"replay", c.replay},
                             {"epochs", c.epochs},
                             {"learning_rate", c.learning_rate},
                             {"optimizer", c.optimizer},
                             {"eps_std", c.eps_std},
                             {"ratio_span", c.ratio_span},
                             {"reference", c.reference},
                             {"costs_in_return", c.costs_in_return},
                             {"accumulation", c.accumulation},
                             {"time_aggregation", c.time_aggregation},
                             {"worker", c.worker},
                             {"seed", c.seed}};
}
inline void from_json(const nlohmann::ordered_json& j, TrainConfig& c) {
  c.group_size = j.value("group_size", c.group_size);
  c.clip_epsilon = j.value("clip_epsilon", c.clip_epsilon);
  c.kl_coef = j.value("kl_coef", c.kl_coef);
  c.lambda_clarify = j.value("lambda_clarify", c.lambda_clarify);
  c.lambda_compute = j.value("lambda_compute", c.lambda_compute);
  c.w_cost = j.value("w_cost", c.w_cost);
  c.w_time = j.value("w_time", c.w_time);
  c.compute_alpha = j.value("compute_alpha", c.compute_alpha);
  c.burden_scale = j.value("burden_scale", c.burden_scale);
  c.replay_percentile = j.value("replay_percentile", c.replay_percentile);
  c.replay = j.value("replay", c.replay);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.eps_std = j.value("eps_std", c.eps_std);
  c.ratio_span = j.value("ratio_span", c.ratio_span);
  c.reference = j.value("reference", c.reference);
  c.costs_in_return = j.value("costs_in_return", c.costs_in_return);
  c.accumulation = j.value("accumulation", c.accumulation);
  c.time_aggregation = j.value("time_aggregation", c.time_aggregation);
  if (j.contains("worker")) j.at("worker").get_to(c.worker);
  c.seed = j.value("seed", c.seed);
}

inline void to_json(nlohmann::ordered_json& j, const SftConfig& c) {
  j = nlohmann::ordered_json{{"epochs", c.epochs},
                             {"learning_rate", c.learning_rate},
                             {"tolerance", c.tolerance},
                             {"max_halvings", c.max_halvings}};
}
inline void from_json(const nlohmann::ordered_json& j, SftConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.tolerance = j.value("tolerance", c.tolerance);
  c.max_halvings = j.value("max_halvings", c.max_halvings);
}

// ---------------------------------------------------------------------------
// Scalar pieces

// r = U* - lambda_clarify * C_clarify - lambda_compute * C_compute.
inline double ComputeReturn(double u_star, double c_clarify, double c_compute,
                            const TrainConfig& cfg) {
  return u_star - cfg.lambda_clarify * c_clarify - cfg.lambda_compute * c_compute;
}

// log(1 + w_cost * usd + w_time * sec) / log(1 + alpha).
inline double ComputeCost(double cost_usd, double time_sec, const TrainConfig& cfg) {
  if (!(cfg.compute_alpha > 0.0)) throw ConfigError("ComputeCost: alpha must be > 0");
  detail::Require(cost_usd >= 0.0 && time_sec >= 0.0, "ComputeCost: negative cost");
  return std::log(1.0 + cfg.w_cost * cost_usd + cfg.w_time * time_sec) /
         std::log(1.0 + cfg.compute_alpha);
}

// (r_k - mean) / max(population std, eps_std).
inline std::vector<double> Advantages(std::span<const double> returns, double eps_std = 1e-8) {
  if (returns.size() < 2) throw InvalidArgument("Advantages: need K >= 2");
  const double mean = Mean(returns);
  const double sd = PopulationStd(returns);
  std::vector<double> out(returns.size(), 0.0);
  if (sd <= eps_std) return out;
  for (std::size_t k = 0; k < returns.size(); ++k) out[k] = (returns[k] - mean) / sd;
  return out;
}

inline double Clip(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

// Per-rollout clipped surrogate min(s A, clip(s, 1-eps, 1+eps) A).
inline double ClippedTerm(double ratio, double advantage, double epsilon) {
  return std::min(ratio * advantage, Clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage);
}

// ---------------------------------------------------------------------------
// Rollouts and groups

struct Rollout {
  std::string task_id;
  TokenSequence sequence;
  std::vector<DecisionPoint> points;
  // First decision point that enters the sequence ratio.
  std::size_t ratio_begin = 0;
  Rubric rubric;
  WorkerOutput output;
  double u_star = 0.0;
  double c_clarify = 0.0;
  double c_compute = 0.0;
  double ret = 0.0;

  std::size_t ratio_length() const { return points.size() - ratio_begin; }
};

struct GroupBatch {
  std::string task_id;
  std::vector<Rollout> rollouts;
  double mean_return = 0.0;
  std::vector<double> advantages;
};

inline void FinalizeGroup(GroupBatch& batch, double eps_std) {
  std::vector<double> returns;
  for (const Rollout& r : batch.rollouts) returns.push_back(r.ret);
  batch.mean_return = Mean(returns);
  batch.advantages = Advantages(returns, eps_std);
}

// Length-normalized sequence ratio exp(mean over the ratio span of
// log pi_new - log pi_behavior).
inline double SeqRatio(const PolicyParams& p_new, const Rollout& r) {
  const std::size_t len = r.ratio_length();
  detail::Require(len > 0, "SeqRatio: empty ratio span");
  double sum = 0.0;
  for (std::size_t t = r.ratio_begin; t < r.points.size(); ++t) {
    sum += LogProbAt(p_new, r.points[t]) - r.sequence.logprobs[t];
  }
  const double s = std::exp(sum / static_cast<double>(len));
  if (!std::isfinite(s)) throw NumericError("SeqRatio: non-finite ratio");
  return s;
}

// ---------------------------------------------------------------------------
// KL trust region

namespace detail {

// KL(new || ref) at one decision point; optionally accumulates its gradient
// w.r.t. the new parameters, scaled by `scale`.
inline double PointKl(const PolicyParams& p_new, const PolicyParams& p_ref, const DecisionPoint& dp,
                      double scale, Eigen::MatrixXd* grad) {
  const std::vector<double> lp = MaskedLogSoftmax(p_new, dp.features, dp.mask);
  const std::vector<double> lq = MaskedLogSoftmax(p_ref, dp.features, dp.mask);
  double kl = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
  if (grad != nullptr) {
    for (std::size_t i = 0; i < lp.size(); ++i) {
      const double coeff = std::exp(lp[i]) * (lp[i] - lq[i] - kl);
      if (coeff != 0.0) grad->row(dp.mask[i]).noalias() += (scale * coeff) * dp.features.transpose();
    }
  }
  return std::max(kl, 0.0);
}

}  // namespace detail

// Mean over decision points of sum_v pi_new(v) log(pi_new(v) / pi_ref(v)).
inline double KlToRef(const PolicyParams& p_new, const PolicyParams& p_ref,
                      std::span<const DecisionPoint> points) {
  if (points.empty()) return 0.0;
  double total = 0.0;
  for (const DecisionPoint& dp : points) total += detail::PointKl(p_new, p_ref, dp, 0.0, nullptr);
  return total / static_cast<double>(points.size());
}

// ---------------------------------------------------------------------------
// GSPO objective

struct GspoResult {
  double loss = 0.0;
  double surrogate = 0.0;  // (1/K) sum_k clipped term
  double kl = 0.0;
  double clip_fraction = 0.0;
  Eigen::MatrixXd gradient;  // d loss / d theta
};

// loss = -(1/K) sum_k min(s_k A_k, clip(s_k) A_k) + beta * KL(new || ref),
// KL averaged over the decision points inside the ratio spans of the batch.
// Rollouts whose clipped branch binds contribute no surrogate gradient.
inline GspoResult GspoObjective(const GroupBatch& batch, const PolicyParams& p_new,
                                const PolicyParams& p_ref, const TrainConfig& cfg,
                                bool with_gradient = true) {
  const std::size_t K = batch.rollouts.size();
  detail::Require(K >= 1 && batch.advantages.size() == K, "GspoObjective: advantages missing");
  GspoResult out;
  if (with_gradient) out.gradient = Eigen::MatrixXd::Zero(p_new.theta.rows(), p_new.theta.cols());
  std::size_t clipped = 0;
  std::size_t kl_points = 0;
  for (const Rollout& r : batch.rollouts) kl_points += r.ratio_length();

  for (std::size_t k = 0; k < K; ++k) {
    const Rollout& r = batch.rollouts[k];
    const double a = batch.advantages[k];
    const double s = SeqRatio(p_new, r);
    const double term = ClippedTerm(s, a, cfg.clip_epsilon);
    out.surrogate += term / static_cast<double>(K);
    const bool binding = (a > 0.0 && s > 1.0 + cfg.clip_epsilon) ||
                         (a < 0.0 && s < 1.0 - cfg.clip_epsilon);
    if (binding) ++clipped;
    if (with_gradient && !binding && a != 0.0) {
      // d(-s A / K) = -(A s / (K L)) sum_t grad log pi_t
      const double scale = -a * s / (static_cast<double>(K) * r.ratio_length());
      for (std::size_t t = r.ratio_begin; t < r.points.size(); ++t) {
        AccumulateGradLogProb(p_new, r.points[t], scale, out.gradient);
      }
    }
  }
  if (kl_points > 0) {
    const double point_scale = cfg.kl_coef / static_cast<double>(kl_points);
    double kl_total = 0.0;
    for (const Rollout& r : batch.rollouts) {
      for (std::size_t t = r.ratio_begin; t < r.points.size(); ++t) {
        kl_total += detail::PointKl(p_new, p_ref, r.points[t], point_scale,
                                    with_gradient && cfg.kl_coef != 0.0 ? &out.gradient : nullptr);
      }
    }
    out.kl = kl_total / static_cast<double>(kl_points);
  }
  out.loss = -out.surrogate + cfg.kl_coef * out.kl;
  if (!cfg.costs_in_return) {
    double c_compute = 0.0;
    for (const Rollout& r : batch.rollouts) c_compute += r.c_compute;
    out.loss += batch.rollouts.front().c_clarify + c_compute / static_cast<double>(K);
  }
  out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(K);
  if (!std::isfinite(out.loss)) throw NumericError("GspoObjective: non-finite loss");
  return out;
}

// ---------------------------------------------------------------------------
// Prioritized replay

struct ReplayEpisode {
  int epoch = 0;
  std::string task_id;
  double mean_return = 0.0;
  GroupBatch batch;
};

class ReplayBuffer {
 public:
  // One entry per (epoch, task_id); a second insert replaces the first.
  void Insert(ReplayEpisode episode) {
    const auto key = std::make_pair(episode.epoch, episode.task_id);
    episodes_[key] = std::move(episode);
  }

  std::vector<const ReplayEpisode*> Epoch(int epoch) const {
    std::vector<const ReplayEpisode*> out;
    for (const auto& [key, ep] : episodes_) {
      if (key.first == epoch) out.push_back(&ep);
    }
    return out;
  }

  // Keeps only episodes from `epoch` onward.
  void DropBefore(int epoch) {
    std::erase_if(episodes_, [&](const auto& kv) { return kv.first.first < epoch; });
  }

  std::size_t size() const { return episodes_.size(); }

 private:
  std::map<std::pair<int, std::string>, ReplayEpisode> episodes_;
};

// Nearest-rank p-th percentile (rank = max(1, ceil(p/100 * n))) of the
// values, which must be nonempty.
inline double NearestRankPercentile(std::vector<double> values, double p) {
  detail::Require(!values.empty(), "NearestRankPercentile: empty input");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  const auto rank = static_cast<std::size_t>(std::max(1.0, std::ceil(p / 100.0 * n)));
  return values[std::min(rank, values.size()) - 1];
}

// Episodes of `epoch` whose mean return is <= the p-th percentile of that
// epoch's mean returns (ties included), ordered by (mean return, task_id).
inline std::vector<const ReplayEpisode*> ReplaySelect(const ReplayBuffer& buffer, int epoch,
                                                      double p) {
  std::vector<const ReplayEpisode*> eps = buffer.Epoch(epoch);
  detail::Require(!eps.empty(), "ReplaySelect: no episodes for epoch");
  std::vector<double> means;
  for (const ReplayEpisode* e : eps) means.push_back(e->mean_return);
  const double threshold = NearestRankPercentile(means, p);
  std::vector<const ReplayEpisode*> out;
  for (const ReplayEpisode* e : eps) {
    if (e->mean_return <= threshold) out.push_back(e);
  }
  std::sort(out.begin(), out.end(), [](const ReplayEpisode* a, const ReplayEpisode* b) {
    return a->mean_return != b->mean_return ? a->mean_return < b->mean_return
                                            : a->task_id < b->task_id;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Stage I: expert demonstrations and SFT

struct Demonstration {
  const Task* task = nullptr;
  TokenSequence sequence;
  std::vector<DecisionPoint> points;
};

// Nearest weight bin; exact ties (within 1e-12) go to the larger bin.
inline int NearestBin(const std::vector<double>& bins, double w) {
  int best = 0;
  for (int b = 1; b < static_cast<int>(bins.size()); ++b) {
    const double db = std::abs(bins[b] - w);
    const double dbest = std::abs(bins[best] - w);
    if (db < dbest - 1e-12 || (std::abs(db - dbest) <= 1e-12 && bins[b] > bins[best])) best = b;
  }
  return best;
}

// Scripted expert with oracle access to w*: hard questions on the heaviest
// support attributes (up to the question cap), STOP_ASK, then the gold
// criteria heaviest first with their nearest weight bins, END. Answers come
// from the stakeholder simulator, so transcripts carry its noise.
inline TokenSequence ExpertSequence(const TokenVocab& vocab, const Task& task, RandomStream& rng) {
  const StakeholderModel& s = task.stakeholder;
  std::vector<int> order = s.Support();
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return s.w_star[a] > s.w_star[b]; });
  TokenSequence seq;
  const int n_questions = std::min<int>(static_cast<int>(order.size()), vocab.max_questions());
  for (int i = 0; i < n_questions; ++i) {
    const Question q{order[i], Level::kHard};
    seq.tokens.push_back(vocab.Ask(q.attribute_index, q.level));
    seq.transcript.Append(q, AnswerQuestion(s, q, rng));
  }
  seq.tokens.push_back(vocab.StopAsk());
  for (const Criterion& c : task.gold_rubric.criteria) {
    if (static_cast<int>(seq.tokens.size()) - n_questions - 1 >= 2 * vocab.max_criteria()) break;
    seq.tokens.push_back(vocab.Crit(c.attribute_index));
    seq.tokens.push_back(vocab.WeightBin(NearestBin(vocab.bins(), c.weight)));
  }
  seq.tokens.push_back(vocab.End());
  seq.forced_stop.assign(seq.tokens.size(), 0);
  // Behavior log-probabilities under the uniform (zero-parameter) policy.
  const PolicyParams zero = PolicyParams::Zeros(vocab);
  for (const DecisionPoint& dp : DecisionPoints(vocab, task.context, seq)) {
    seq.logprobs.push_back(LogProbAt(zero, dp));
  }
  return seq;
}

inline std::vector<Demonstration> ExpertDemonstrations(const TaskSuite& suite,
                                                       const TokenVocab& vocab,
                                                       std::uint64_t seed) {
  std::vector<Demonstration> demos;
  const std::vector<const Task*> train = suite.Select(Split::kTrain);
  detail::Require(!train.empty(), "ExpertDemonstrations: suite has no train tasks");
  for (std::size_t i = 0; i < train.size(); ++i) {
    RandomStream rng = RandomStream::Derive(seed, {0x5f7, i});
    Demonstration demo;
    demo.task = train[i];
    demo.sequence = ExpertSequence(vocab, *train[i], rng);
    demo.points = DecisionPoints(vocab, train[i]->context, demo.sequence);
    demos.push_back(std::move(demo));
  }
  return demos;
}

// Mean over demonstrations of the sequence negative log-likelihood; also
// fills `grad` (d loss / d theta) when given.
inline double SftLoss(const PolicyParams& p, std::span<const Demonstration> demos,
                      Eigen::MatrixXd* grad = nullptr) {
  detail::Require(!demos.empty(), "SftLoss: no demonstrations");
  const double n = static_cast<double>(demos.size());
  if (grad != nullptr) *grad = Eigen::MatrixXd::Zero(p.theta.rows(), p.theta.cols());
  double loss = 0.0;
  for (const Demonstration& d : demos) {
    for (const DecisionPoint& dp : d.points) {
      loss -= LogProbAt(p, dp) / n;
      if (grad != nullptr) AccumulateGradLogProb(p, dp, -1.0 / n, *grad);
    }
  }
  return loss;
}

inline std::size_t DemoTokenCount(std::span<const Demonstration> demos) {
  std::size_t n = 0;
  for (const Demonstration& d : demos) n += d.points.size();
  return n;
}

struct SftResult {
  PolicyParams params;
  std::vector<double> loss_trace;  // loss after each epoch, starting with the initial loss
  double per_token_nll = 0.0;
};

// Full-batch gradient descent. A step is accepted only if the loss does not
// rise by more than `tolerance`; otherwise the step size is halved and the
// step retried.
inline SftResult SftFit(const PolicyParams& p0, std::span<const Demonstration> demos,
                        const SftConfig& cfg) {
  detail::Require(!demos.empty(), "SftFit: no demonstrations");
  SftResult result{p0, {}, 0.0};
  Eigen::MatrixXd grad;
  double loss = SftLoss(result.params, demos, &grad);
  if (!std::isfinite(loss)) throw NumericError("SftFit: non-finite initial loss");
  result.loss_trace.push_back(loss);
  double lr = cfg.learning_rate;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    bool accepted = false;
    for (int h = 0; h <= cfg.max_halvings && !accepted; ++h) {
      PolicyParams trial{result.params.theta - lr * grad};
      Eigen::MatrixXd trial_grad;
      const double trial_loss = SftLoss(trial, demos, &trial_grad);
      if (std::isfinite(trial_loss) && trial_loss <= loss + cfg.tolerance) {
        result.params = std::move(trial);
        loss = trial_loss;
        grad = std::move(trial_grad);
        accepted = true;
      } else {
        lr *= 0.5;
      }
    }
    if (!accepted) break;  // No descent direction left at machine precision.
    if (!std::isfinite(loss) || !result.params.AllFinite()) {
      throw NumericError("SftFit: training diverged");
    }
    result.loss_trace.push_back(loss);
  }
  result.per_token_nll = loss * static_cast<double>(demos.size()) /
                         static_cast<double>(DemoTokenCount(demos));
  return result;
}

// ---------------------------------------------------------------------------
// Stage II: GSPO training loop

struct EpochMetrics {
  int epoch = 0;
  double mean_return = 0.0;
  double mean_u_star = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  double mean_c_clarify = 0.0;
  double mean_c_compute = 0.0;
  std::size_t replayed = 0;
};

struct TrainResult {
  PolicyParams params;
  std::vector<EpochMetrics> metrics;
};

namespace detail {

class ParamUpdater {
 public:
  ParamUpdater(const TrainConfig& cfg, Eigen::Index rows, Eigen::Index cols) : cfg_(cfg) {
    if (cfg.optimizer == Optimizer::kAdam) {
      m_ = Eigen::MatrixXd::Zero(rows, cols);
      v_ = Eigen::MatrixXd::Zero(rows, cols);
    }
  }

  void Apply(PolicyParams& p, const Eigen::MatrixXd& grad) {
    if (cfg_.learning_rate == 0.0) return;
    if (cfg_.optimizer == Optimizer::kSgd) {
      p.theta -= cfg_.learning_rate * grad;
      return;
    }
    constexpr double kBeta1 = 0.9, kBeta2 = 0.99, kEps = 1e-8;
    ++step_;
    m_ = kBeta1 * m_ + (1.0 - kBeta1) * grad;
    v_ = kBeta2 * v_ + (1.0 - kBeta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(kBeta1, step_);
    const double c2 = 1.0 - std::pow(kBeta2, step_);
    p.theta.array() -= cfg_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + kEps);
  }

 private:
  const TrainConfig& cfg_;
  Eigen::MatrixXd m_, v_;
  int step_ = 0;
};

}  // namespace detail

// Samples one GSPO group for `task` under `params`: a shared dialogue, then K
// rubric completions, each executed by one worker and scored by U*.
inline GroupBatch SampleGroup(const TokenVocab& vocab, const AttributeSpace& space,
                              const PolicyParams& params, const Task& task,
                              const TrainConfig& cfg, RandomStream rng) {
  const ManagerPolicy policy(vocab, space, params);
  const EnvHooks hooks = StakeholderHooks(task.stakeholder);
  RandomStream dialogue_rng = rng.Substream(0);
  const TokenSequence dialogue = policy.SampleDialogue(task.context, hooks, dialogue_rng);
  const double c_clarify = ClarificationCost(dialogue.transcript, cfg.burden_scale);

  GroupBatch batch;
  batch.task_id = task.context.task_id;
  for (int k = 0; k < cfg.group_size; ++k) {
    RandomStream emit_rng = rng.Substream(1 + 2 * static_cast<std::uint64_t>(k));
    RandomStream work_rng = rng.Substream(2 + 2 * static_cast<std::uint64_t>(k));
    Rollout r;
    r.task_id = task.context.task_id;
    r.sequence = policy.SampleEmission(task.context, dialogue, emit_rng);
    r.points = DecisionPoints(vocab, task.context, r.sequence);
    r.ratio_begin =
        cfg.ratio_span == RatioSpan::kRubricTokens ? RubricStart(vocab, r.sequence) : 0;
    r.rubric = policy.Decode(r.sequence);
    r.output = Execute(task.context, &r.rubric, space.size(), cfg.worker, work_rng);
    r.u_star = TrueUtility(task.stakeholder, r.output);
    r.c_clarify = c_clarify;
    const VerificationCost vc = RubricCost(r.rubric, cfg.time_aggregation);
    r.c_compute = ComputeCost(vc.cost_usd, vc.time_sec, cfg);
    r.ret = cfg.costs_in_return ? ComputeReturn(r.u_star, r.c_clarify, r.c_compute, cfg)
                                : r.u_star;
    batch.rollouts.push_back(std::move(r));
  }
  FinalizeGroup(batch, cfg.eps_std);
  return batch;
}

inline nlohmann::ordered_json RolloutRecord(const TokenVocab& vocab, int epoch, const Rollout& r,
                                            std::size_t k) {
  std::vector<std::string> names;
  for (int tok : r.sequence.tokens) names.push_back(vocab.TokenName(tok));
  std::vector<int> questions;
  for (const auto& turn : r.sequence.transcript.turns) questions.push_back(turn.first.attribute_index);
  return nlohmann::ordered_json{
      {"epoch", epoch},
      {"task_id", r.task_id},
      {"k", k},
      {"tokens", r.sequence.tokens},
      {"token_names", names},
      {"transcript",
       {{"n_easy", r.sequence.transcript.n_easy},
        {"n_medium", r.sequence.transcript.n_medium},
        {"n_hard", r.sequence.transcript.n_hard},
        {"questions", questions}}},
      {"rubric_weights", r.rubric.ExpandWeights(r.output.satisfaction.size())},
      {"u_star", r.u_star},
      {"c_clarify", r.c_clarify},
      {"c_compute", r.c_compute},
      {"return", r.ret},
      {"logprobs", r.sequence.logprobs}};
}

using RolloutSink = std::function<void(const nlohmann::ordered_json&)>;

// GSPO with prioritized replay over the train split of `suite`.
inline TrainResult Train(const TaskSuite& suite, const TokenVocab& vocab, const PolicyParams& init,
                         const TrainConfig& cfg, const RolloutSink& sink = nullptr) {
  cfg.Validate();
  const std::vector<const Task*> tasks = suite.Select(Split::kTrain);
  detail::Require(!tasks.empty(), "Train: suite has no train tasks");
  TrainResult result{init, {}};
  PolicyParams& params = result.params;
  detail::ParamUpdater updater(cfg, params.theta.rows(), params.theta.cols());
  ReplayBuffer buffer;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const PolicyParams ref = cfg.reference == ReferencePolicy::kEpochStart ? params : init;
    EpochMetrics m;
    m.epoch = epoch;
    std::size_t n_rollouts = 0, n_updates = 0;

    for (std::size_t start = 0; start < tasks.size(); start += cfg.accumulation) {
      const std::size_t end = std::min(tasks.size(), start + cfg.accumulation);
      std::vector<GroupBatch> groups(end - start);
      const PolicyParams snapshot = params;
      ParallelFor(groups.size(), cfg.threads, [&](std::size_t g) {
        groups[g] = SampleGroup(vocab, suite.space, snapshot, *tasks[start + g], cfg,
                                RandomStream::Derive(cfg.seed, {static_cast<std::uint64_t>(epoch),
                                                                start + g}));
      });
      Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(params.theta.rows(), params.theta.cols());
      for (GroupBatch& g : groups) {
        const GspoResult obj = GspoObjective(g, params, ref, cfg);
        grad += obj.gradient / static_cast<double>(groups.size());
        m.kl += obj.kl;
        m.clip_fraction += obj.clip_fraction;
        ++n_updates;
        for (std::size_t k = 0; k < g.rollouts.size(); ++k) {
          const Rollout& r = g.rollouts[k];
          m.mean_return += r.ret;
          m.mean_u_star += r.u_star;
          m.mean_c_clarify += r.c_clarify;
          m.mean_c_compute += r.c_compute;
          ++n_rollouts;
          if (sink) sink(RolloutRecord(vocab, epoch, r, k));
        }
        buffer.Insert({epoch, g.task_id, g.mean_return, std::move(g)});
      }
      updater.Apply(params, grad);
      if (!params.AllFinite()) throw NumericError("Train: parameters became non-finite");
    }

    if (cfg.replay) {
      for (const ReplayEpisode* ep : ReplaySelect(buffer, epoch, cfg.replay_percentile)) {
        const GspoResult obj = GspoObjective(ep->batch, params, ref, cfg);
        updater.Apply(params, obj.gradient);
        ++m.replayed;
      }
      if (!params.AllFinite()) throw NumericError("Train: parameters became non-finite");
    }
    buffer.DropBefore(epoch + 1);

    const double nr = static_cast<double>(n_rollouts);
    m.mean_return /= nr;
    m.mean_u_star /= nr;
    m.mean_c_clarify /= nr;
    m.mean_c_compute /= nr;
    m.kl /= static_cast<double>(n_updates);
    m.clip_fraction /= static_cast<double>(n_updates);
    result.metrics.push_back(m);
  }
  return result;
}

}  // namespace rubricloop

#endif  // RUBRICLOOP_TRAINING_HPP_

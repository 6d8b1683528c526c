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

#include "rubricloop/training.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "rubricloop/env.hpp"
#include "test_util.hpp"

namespace rubricloop {
namespace {

using testutil::RandomParams;

SuiteConfig SmallConfig() {
  SuiteConfig cfg;
  cfg.d = 4;
  cfg.d_ctx = 3;
  cfg.k_star_min = cfg.k_star_max = 2;
  cfg.n_train = 6;
  cfg.n_eval = 2;
  return cfg;
}

TEST(ComputeReturnTest, SpecExamples) {
  const TrainConfig cfg;
  EXPECT_EQ(ComputeReturn(0.6, 0.0, 0.0, cfg), 0.6);
  EXPECT_NEAR(ComputeReturn(0.8, 1.0, 1.0, cfg), 0.74, 1e-15);
  EXPECT_LE(ComputeReturn(0.0, 0.3, 0.2, cfg), 0.0);
}

TEST(ComputeCostTest, SpecExamples) {
  TrainConfig cfg;
  EXPECT_EQ(ComputeCost(0.0, 0.0, cfg), 0.0);
  const double usd = 0.024, sec = 18.0;
  cfg.compute_alpha = cfg.w_cost * usd + cfg.w_time * sec;
  EXPECT_EQ(ComputeCost(usd, sec, cfg), 1.0);
  cfg.compute_alpha = 36.7;
  EXPECT_NEAR(ComputeCost(1.0, 10.0, cfg), std::log(8.3) / std::log(37.7), 1e-15);
  EXPECT_NEAR(ComputeCost(1.0, 10.0, cfg), 0.5830, 1e-4);
  cfg.compute_alpha = 0.0;
  EXPECT_THROW(ComputeCost(1.0, 1.0, cfg), ConfigError);
}

TEST(ComputeCostTest, DefaultAlphaSaturatesAtTwelveJudges) {
  const TrainConfig cfg;
  EXPECT_NEAR(cfg.compute_alpha, 12.6072, 1e-12);
  EXPECT_NEAR(ComputeCost(12 * 0.002, 12 * 1.5, cfg), 1.0, 1e-15);
}

TEST(AdvantagesTest, SpecExamples) {
  for (double a : Advantages(std::vector<double>{1, 1, 1, 1})) EXPECT_EQ(a, 0.0);
  const std::vector<double> two = Advantages(std::vector<double>{0, 1});
  EXPECT_DOUBLE_EQ(two[0], -1.0);
  EXPECT_DOUBLE_EQ(two[1], 1.0);
  const std::vector<double> four = Advantages(std::vector<double>{1, 2, 3, 4});
  const std::vector<double> expected = {-1.3416, -0.4472, 0.4472, 1.3416};
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(four[k], expected[k], 1e-4);
  EXPECT_THROW(Advantages(std::vector<double>{1}), InvalidArgument);
}

TEST(AdvantagesTest, StandardizedOnRandomGroups) {
  RandomStream rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> r(2 + rng.Index(7));
    for (double& v : r) v = rng.Normal(0.3, 0.2);
    const std::vector<double> a = Advantages(r);
    EXPECT_LT(std::abs(Mean(a)), 1e-9);
    EXPECT_LT(std::abs(PopulationStd(a) - 1.0), 1e-6);
  }
}

TEST(ClippedTermTest, SpecExamples) {
  EXPECT_DOUBLE_EQ(ClippedTerm(1.5, 1.0, 0.2), 1.2);
  EXPECT_DOUBLE_EQ(ClippedTerm(0.5, -1.0, 0.2), -0.8);
  EXPECT_DOUBLE_EQ(ClippedTerm(1.1, 1.0, 0.2), 1.1);
}

class GroupTest : public ::testing::Test {
 protected:
  GroupTest() : suite_(GenerateTaskSuite(SmallConfig(), 3)), vocab_(4, 3) {}

  GroupBatch Group(const PolicyParams& p, std::size_t task, std::uint64_t seed,
                   const TrainConfig& cfg = {}) const {
    return SampleGroup(vocab_, suite_.space, p, suite_.tasks[task], cfg, RandomStream(seed));
  }

  TaskSuite suite_;
  TokenVocab vocab_;
};

TEST_F(GroupTest, GroupSharesDialogueAndRatioIsOneAtBehavior) {
  const PolicyParams p = RandomParams(vocab_, 1, 0.5);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const GroupBatch g = Group(p, s % 6, s);
    ASSERT_EQ(g.rollouts.size(), 4u);
    const std::size_t start = RubricStart(vocab_, g.rollouts[0].sequence);
    for (const Rollout& r : g.rollouts) {
      EXPECT_EQ(RubricStart(vocab_, r.sequence), start);
      EXPECT_TRUE(std::equal(r.sequence.tokens.begin(), r.sequence.tokens.begin() + start,
                             g.rollouts[0].sequence.tokens.begin()));
      EXPECT_EQ(r.ratio_begin, start);
      EXPECT_EQ(SeqRatio(p, r), 1.0);
      EXPECT_GE(r.c_clarify, 0.0);
      EXPECT_GE(r.c_compute, 0.0);
      EXPECT_TRUE(std::isfinite(r.ret));
    }
    EXPECT_NEAR(g.mean_return,
                (g.rollouts[0].ret + g.rollouts[1].ret + g.rollouts[2].ret + g.rollouts[3].ret) / 4,
                1e-15);
  }
}

TEST_F(GroupTest, SeqRatioExamples) {
  const PolicyParams p = RandomParams(vocab_, 2, 0.5);
  Rollout r = Group(p, 0, 1).rollouts[0];
  // Replace the span by three points with log-ratios (0.1, -0.1, 0.3).
  r.points.resize(r.ratio_begin + 3);
  r.sequence.logprobs.resize(r.ratio_begin + 3);
  const double deltas[] = {0.1, -0.1, 0.3};
  for (int i = 0; i < 3; ++i) {
    r.sequence.logprobs[r.ratio_begin + i] = LogProbAt(p, r.points[r.ratio_begin + i]) - deltas[i];
  }
  EXPECT_NEAR(SeqRatio(p, r), std::exp(0.1), 1e-12);
  EXPECT_NEAR(SeqRatio(p, r), 1.1052, 1e-4);
  for (int i = 0; i < 3; ++i) {
    r.sequence.logprobs[r.ratio_begin + i] = LogProbAt(p, r.points[r.ratio_begin + i]) - std::log(2.0);
  }
  EXPECT_NEAR(SeqRatio(p, r), 2.0, 1e-12);
}

TEST_F(GroupTest, SurrogateZeroAtBehaviorWithoutKl) {
  TrainConfig cfg;
  cfg.kl_coef = 0.0;
  const PolicyParams p = RandomParams(vocab_, 3, 0.5);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const GspoResult r = GspoObjective(Group(p, s % 6, s), p, p, cfg);
    EXPECT_NEAR(r.surrogate, 0.0, 1e-12);
    EXPECT_EQ(r.kl, 0.0);
  }
}

TEST_F(GroupTest, KlExamplesAndNonnegativity) {
  DecisionPoint dp;
  dp.features = Eigen::VectorXd::Zero(vocab_.feature_dim());
  dp.features[vocab_.bias_offset()] = 1.0;
  dp.mask = {vocab_.StopAsk(), vocab_.End()};
  dp.token = vocab_.End();
  PolicyParams p_new = PolicyParams::Zeros(vocab_);
  p_new.theta(vocab_.StopAsk(), vocab_.bias_offset()) = std::log(9.0);
  const PolicyParams ref = PolicyParams::Zeros(vocab_);
  const std::vector<DecisionPoint> one = {dp};
  EXPECT_NEAR(KlToRef(p_new, ref, one), 0.9 * std::log(1.8) + 0.1 * std::log(0.2), 1e-12);
  EXPECT_NEAR(KlToRef(p_new, ref, one), 0.3681, 1e-4);
  EXPECT_EQ(KlToRef(ref, ref, one), 0.0);

  for (std::uint64_t s = 0; s < 30; ++s) {
    const PolicyParams a = RandomParams(vocab_, 10 + s, 0.5);
    const PolicyParams b = RandomParams(vocab_, 50 + s, 0.5);
    const GroupBatch g = Group(a, s % 6, s);
    EXPECT_GT(KlToRef(a, b, g.rollouts[0].points), 0.0);
    EXPECT_EQ(KlToRef(a, a, g.rollouts[0].points), 0.0);
  }
}

TEST_F(GroupTest, SurrogateInvariantToReturnShift) {
  const PolicyParams behavior = RandomParams(vocab_, 4, 0.5);
  const PolicyParams p_new = RandomParams(vocab_, 5, 0.5);
  GroupBatch g = Group(behavior, 1, 7);
  const double dyadic[] = {0.25, 0.5, 0.875, 0.125};
  for (int k = 0; k < 4; ++k) g.rollouts[k].ret = dyadic[k];
  FinalizeGroup(g, 1e-8);
  GroupBatch shifted = g;
  for (Rollout& r : shifted.rollouts) r.ret += 2.0;
  FinalizeGroup(shifted, 1e-8);
  for (int k = 0; k < 4; ++k) {
    const double s = SeqRatio(p_new, g.rollouts[k]);
    EXPECT_EQ(ClippedTerm(s, g.advantages[k], 0.2), ClippedTerm(s, shifted.advantages[k], 0.2));
  }
  TrainConfig cfg;
  EXPECT_EQ(GspoObjective(g, p_new, behavior, cfg).loss,
            GspoObjective(shifted, p_new, behavior, cfg).loss);
}

TEST_F(GroupTest, GspoGradientMatchesFiniteDifferences) {
  TrainConfig cfg;
  int checked = 0;
  for (std::uint64_t s = 0; checked < 20 && s < 200; ++s) {
    const PolicyParams behavior = RandomParams(vocab_, 200 + s, 0.5);
    const GroupBatch g = Group(behavior, s % 6, s);
    PolicyParams p_new = behavior;
    const PolicyParams noise = RandomParams(vocab_, 400 + s, 0.02);
    p_new.theta += noise.theta;
    const PolicyParams ref = RandomParams(vocab_, 600 + s, 0.3);
    bool near_boundary = false;
    for (const Rollout& r : g.rollouts) {
      const double ratio = SeqRatio(p_new, r);
      near_boundary = near_boundary || std::abs(ratio - 1.2) < 1e-3 || std::abs(ratio - 0.8) < 1e-3;
    }
    if (near_boundary) continue;
    const GspoResult res = GspoObjective(g, p_new, ref, cfg);
    const auto f = [&](const PolicyParams& q) { return GspoObjective(g, q, ref, cfg, false).loss; };
    EXPECT_LE(testutil::FdRelativeError(f, res.gradient, p_new, s), 1e-5) << "seed " << s;
    ++checked;
  }
  EXPECT_EQ(checked, 20);
}

TEST_F(GroupTest, ClipBindingRemovesSurrogateGradient) {
  TrainConfig cfg;
  cfg.kl_coef = 0.0;
  const PolicyParams behavior = RandomParams(vocab_, 9, 0.5);
  GroupBatch g = Group(behavior, 2, 3);
  g.rollouts.resize(1);
  g.rollouts.resize(2, g.rollouts[0]);
  g.advantages = {1.0, 1.0};
  // Raise the probability of every chosen rubric token so s >> 1 + eps.
  PolicyParams p_new = behavior;
  for (std::size_t t = g.rollouts[0].ratio_begin; t < g.rollouts[0].points.size(); ++t) {
    const DecisionPoint& dp = g.rollouts[0].points[t];
    if (dp.mask.size() > 1) p_new.theta.row(dp.token) += 6.0 * dp.features.transpose() / dp.features.squaredNorm();
  }
  const GspoResult r = GspoObjective(g, p_new, behavior, cfg);
  EXPECT_GT(SeqRatio(p_new, g.rollouts[0]), 1.2);
  EXPECT_EQ(r.clip_fraction, 1.0);
  EXPECT_NEAR(r.surrogate, 1.2, 1e-12);
  EXPECT_EQ(r.gradient.cwiseAbs().maxCoeff(), 0.0);
}

ReplayEpisode Episode(int epoch, std::string id, double mean) {
  ReplayEpisode e;
  e.epoch = epoch;
  e.task_id = std::move(id);
  e.mean_return = mean;
  return e;
}

TEST(ReplayTest, SpecExamples) {
  ReplayBuffer buf;
  buf.Insert(Episode(1, "a", 3));
  buf.Insert(Episode(1, "b", 1));
  buf.Insert(Episode(1, "c", 4));
  buf.Insert(Episode(1, "d", 2));
  buf.Insert(Episode(2, "a", 0));
  EXPECT_EQ(ReplaySelect(buf, 1, 100).size(), 4u);
  const auto bottom = ReplaySelect(buf, 1, 25);
  ASSERT_EQ(bottom.size(), 1u);
  EXPECT_EQ(bottom[0]->task_id, "b");

  ReplayBuffer flat;
  for (const char* id : {"x", "y", "z"}) flat.Insert(Episode(1, id, 0.5));
  EXPECT_EQ(ReplaySelect(flat, 1, 1).size(), 3u);
  flat.Insert(Episode(1, "x", 0.9));
  EXPECT_EQ(flat.size(), 3u);
  flat.DropBefore(2);
  EXPECT_EQ(flat.size(), 0u);
  EXPECT_THROW(ReplaySelect(flat, 1, 25), InvalidArgument);
}

TEST(ReplayTest, MatchesBruteForce) {
  RandomStream rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    ReplayBuffer buf;
    const std::size_t n = 1 + rng.Index(12);
    std::vector<std::pair<double, std::string>> rows;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = static_cast<double>(rng.Index(5)) / 4.0;  // many ties
      const std::string id = "t" + std::to_string(i);
      buf.Insert(Episode(3, id, r));
      rows.emplace_back(r, id);
    }
    const double p = static_cast<double>(rng.Index(101));
    std::sort(rows.begin(), rows.end());
    const std::size_t rank = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(p / 100.0 * n)));
    const double threshold = rows[rank - 1].first;
    std::vector<std::string> expected;
    for (const auto& [r, id] : rows) {
      if (r <= threshold) expected.push_back(id);
    }
    std::vector<std::string> got;
    for (const ReplayEpisode* e : ReplaySelect(buf, 3, p)) got.push_back(e->task_id);
    EXPECT_EQ(got, expected);
  }
}

class SftTest : public ::testing::Test {
 protected:
  SftTest() : suite_(GenerateTaskSuite(SmallConfig(), 8)), vocab_(4, 3) {}
  TaskSuite suite_;
  TokenVocab vocab_;
};

TEST_F(SftTest, ExpertDemonstrationShape) {
  const std::vector<Demonstration> demos = ExpertDemonstrations(suite_, vocab_, 1);
  ASSERT_EQ(demos.size(), 6u);
  for (const Demonstration& d : demos) {
    int hard_asks = 0;
    for (int tok : d.sequence.tokens) {
      if (vocab_.Kind(tok) == TokenKind::kAsk) {
        EXPECT_EQ(vocab_.LevelOf(tok), Level::kHard);
        ++hard_asks;
      }
    }
    EXPECT_EQ(hard_asks, 2);
    const Rubric r = DecodeRubric(vocab_, d.sequence, suite_.space);
    std::vector<int> got, want = d.task->stakeholder.Support();
    for (const Criterion& c : r.criteria) got.push_back(c.attribute_index);
    std::sort(got.begin(), got.end());
    EXPECT_EQ(got, want);
  }
}

TEST_F(SftTest, NearestBinRounding) {
  const std::vector<double> bins = vocab_.bins();
  EXPECT_EQ(bins[NearestBin(bins, 0.55)], 0.5);
  EXPECT_EQ(bins[NearestBin(bins, 0.45)], 0.5);
  std::vector<int> tokens = {vocab_.StopAsk(), vocab_.Crit(0), vocab_.WeightBin(NearestBin(bins, 0.55)),
                             vocab_.Crit(1), vocab_.WeightBin(NearestBin(bins, 0.45)), vocab_.End()};
  const Rubric r = DecodeRubric(vocab_, tokens, suite_.space);
  EXPECT_DOUBLE_EQ(r.criteria[0].weight, 0.5);
  EXPECT_DOUBLE_EQ(r.criteria[1].weight, 0.5);
}

TEST_F(SftTest, InitialLossIsUniformNll) {
  const std::vector<Demonstration> demos = ExpertDemonstrations(suite_, vocab_, 2);
  double expected = 0.0;
  for (const Demonstration& d : demos) {
    for (const DecisionPoint& dp : d.points) expected += std::log(static_cast<double>(dp.mask.size()));
  }
  expected /= static_cast<double>(demos.size());
  EXPECT_NEAR(SftLoss(PolicyParams::Zeros(vocab_), demos), expected, 1e-12);
}

TEST_F(SftTest, GradientMatchesFiniteDifferences) {
  const std::vector<Demonstration> demos = ExpertDemonstrations(suite_, vocab_, 3);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const PolicyParams p = RandomParams(vocab_, 700 + s, 0.5);
    Eigen::MatrixXd grad;
    SftLoss(p, demos, &grad);
    const auto f = [&](const PolicyParams& q) { return SftLoss(q, demos); };
    EXPECT_LE(testutil::FdRelativeError(f, grad, p, s), 1e-5);
  }
}

TEST_F(SftTest, LossTraceMonotoneAndSingleDemoConverges) {
  const std::vector<Demonstration> demos = ExpertDemonstrations(suite_, vocab_, 4);
  SftConfig cfg;
  cfg.epochs = 100;
  const SftResult all = SftFit(PolicyParams::Zeros(vocab_), demos, cfg);
  for (std::size_t i = 1; i < all.loss_trace.size(); ++i) {
    EXPECT_LE(all.loss_trace[i], all.loss_trace[i - 1] + 1e-6);
  }
  cfg.epochs = 500;
  const std::vector<Demonstration> one(demos.begin(), demos.begin() + 1);
  const SftResult single = SftFit(PolicyParams::Zeros(vocab_), one, cfg);
  EXPECT_LT(single.per_token_nll, 0.1);
}

class TrainTest : public ::testing::Test {
 protected:
  TrainTest() : suite_(GenerateTaskSuite(SmallConfig(), 9)), vocab_(4, 3) {}
  TaskSuite suite_;
  TokenVocab vocab_;
};

TEST_F(TrainTest, ZeroEpochsAndZeroRate) {
  const PolicyParams init = RandomParams(vocab_, 1, 0.3);
  TrainConfig cfg;
  cfg.epochs = 0;
  TrainResult r = Train(suite_, vocab_, init, cfg);
  EXPECT_EQ(r.params.theta, init.theta);
  EXPECT_TRUE(r.metrics.empty());
  cfg.epochs = 3;
  cfg.learning_rate = 0.0;
  r = Train(suite_, vocab_, init, cfg);
  EXPECT_EQ(r.params.theta, init.theta);
  ASSERT_EQ(r.metrics.size(), 3u);
  for (const EpochMetrics& m : r.metrics) EXPECT_EQ(m.kl, 0.0);
}

TEST_F(TrainTest, DeterministicAndThreadInvariant) {
  const PolicyParams init = RandomParams(vocab_, 2, 0.3);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.accumulation = 3;
  std::vector<std::string> logs;
  const TrainResult a = Train(suite_, vocab_, init, cfg, [&](const nlohmann::ordered_json& j) { logs.push_back(j.dump()); });
  cfg.threads = 4;
  std::vector<std::string> logs_mt;
  const TrainResult b = Train(suite_, vocab_, init, cfg, [&](const nlohmann::ordered_json& j) { logs_mt.push_back(j.dump()); });
  EXPECT_EQ(a.params.theta, b.params.theta);
  EXPECT_EQ(logs, logs_mt);
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    EXPECT_EQ(a.metrics[i].mean_return, b.metrics[i].mean_return);
    EXPECT_EQ(a.metrics[i].kl, b.metrics[i].kl);
  }
  EXPECT_EQ(logs.size(), 4u * 6u * 4u);
}

TrainResult ReferenceRun() {
  const TaskSuite suite = GenerateTaskSuite(SuiteConfig{}, 42);
  const TokenVocab vocab(12, 12);
  const std::vector<Demonstration> demos = ExpertDemonstrations(suite, vocab, 42);
  const SftResult sft = SftFit(PolicyParams::Zeros(vocab), demos, SftConfig{});
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.worker.noise_stddev = 0.2;
  return Train(suite, vocab, sft.params, cfg);
}

TEST(TrainReferenceRunTest, FrozenRegressionValues) {
  const TrainResult r = ReferenceRun();
  ASSERT_EQ(r.metrics.size(), 20u);
  EXPECT_NEAR(r.metrics.front().mean_return, 0.54659206060496957, 1e-9);
  EXPECT_NEAR(r.metrics.back().mean_return, 0.58515368506712007, 1e-9);
}

TEST(TrainReferenceRunTest, TwentyEpochsImproveMeanReturnByFiveHundredths) {
  const TrainResult r = ReferenceRun();
  ASSERT_EQ(r.metrics.size(), 20u);
  EXPECT_GE(r.metrics.back().mean_return - r.metrics.front().mean_return, 0.05)
      << "epoch 1 " << r.metrics.front().mean_return << ", epoch 20 " << r.metrics.back().mean_return;
}

}  // namespace
}  // namespace rubricloop

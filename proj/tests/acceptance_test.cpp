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

// Acceptance checks 1-8. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "rubricloop.hpp"
#include "test_util.hpp"

namespace {

namespace fs = std::filesystem;
namespace rl = rubricloop;
using Json = nlohmann::ordered_json;

int g_failures = 0;

void Report(int id, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Workspace {
 public:
  Workspace() : dir_(fs::temp_directory_path() / ("rubricloop_acceptance_" + std::to_string(::getpid()))) {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Workspace() { fs::remove_all(dir_); }

  bool Run(const std::string& args) const {
    const std::string cmd = "cd '" + dir_.string() + "' && '" + RUBRICLOOP_CLI_PATH + "' --config '" +
                            RUBRICLOOP_CONFIG_DIR + "/pinned.json' " + args + " >> cli.log 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) && WEXITSTATUS(status) == 0;
  }
  std::string Read(const std::string& rel) const { return Slurp(dir_ / rel); }

 private:
  fs::path dir_;
};

// Pinned pipeline: suite, SFT + GSPO training, four-condition evaluation.
bool RunPinned(const Workspace& ws, const std::string& tag, double* seconds) {
  const auto start = std::chrono::steady_clock::now();
  const bool ok = ws.Run("gen-suite --out " + tag + "/suite.json") &&
                  ws.Run("train --suite " + tag + "/suite.json --out-dir " + tag + "/run") &&
                  ws.Run("eval --suite " + tag + "/suite.json --out-dir " + tag + "/eval --sft " + tag +
                         "/run/sft_checkpoint.json --gspo " + tag + "/run/checkpoint.json");
  *seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return ok;
}

const Json& ConditionOf(const Json& report, const std::string& name) {
  for (const Json& c : report.at("conditions")) {
    if (c.at("condition") == name) return c;
  }
  throw std::runtime_error("missing condition " + name);
}

void Criterion1(const Json& report, double seconds) {
  const char* names[] = {"no_rubric", "sft", "gspo", "gold"};
  double v[4];
  for (int i = 0; i < 4; ++i) v[i] = ConditionOf(report, names[i]).at("curve").back().at("mean").get<double>();
  const double g1 = v[1] - v[0], g2 = v[2] - v[1], g3 = v[3] - v[2];
  const bool pass = g1 >= 0.02 && g2 >= 0.02 && g3 >= 0.0 && seconds <= 900.0;
  Report(1, pass,
         fmt::format("N=8 means no_rubric {:.4f} < sft {:.4f} < gspo {:.4f} <= gold {:.4f}; gaps "
                     "{:.4f}, {:.4f} (need >= 0.02), {:.4f} (need >= 0); pipeline {:.1f} s (limit 900 s)",
                     v[0], v[1], v[2], v[3], g1, g2, g3, seconds));
}

void Criterion2(const Json& report) {
  bool pass = true;
  std::string worst;
  for (const Json& c : report.at("conditions")) {
    const Json& curve = c.at("curve");
    for (std::size_t n = 1; n < curve.size(); ++n) {
      const double a = curve[n - 1].at("oracle_ranked_mean").get<double>();
      const double b = curve[n].at("oracle_ranked_mean").get<double>();
      if (b < a) {
        pass = false;
        worst += fmt::format(" {} N={}: {:.17g} < {:.17g};", c.at("condition").get<std::string>(),
                             n + 1, b, a);
      }
    }
  }
  Report(2, pass, pass ? "oracle-ranked best-of-N curve nondecreasing over N = 1..8 for all 4 "
                         "conditions (exact comparison)"
                       : "decrease found:" + worst);
}

void Criterion3(const Workspace& ws, const Json& report) {
  const bool ok = ws.Run("eval --suite c1/suite.json --out-dir ceiling --conditions gold "
                         "--noise-free-verifiers");
  if (!ok) {
    Report(3, false, "noise-free gold evaluation failed to run");
    return;
  }
  const Json ceiling = Json::parse(ws.Read("ceiling/eval.json"));
  int covered = 0, perfect = 0;
  double min_ndcg = 1.0;
  for (const Json& t : ceiling.at("conditions")[0].at("trials")) {
    if (!t.at("covers_support").get<bool>()) continue;
    ++covered;
    const double v = t.at("ndcg").get<double>();
    min_ndcg = std::min(min_ndcg, v);
    perfect += v == 1.0;
  }
  const double gspo = ConditionOf(report, "gspo").at("ndcg_mean").get<double>();
  const double uniform = ConditionOf(report, "no_rubric").at("ndcg_mean").get<double>();
  const bool pass = covered > 0 && perfect == covered && gspo - uniform >= 0.03;
  Report(3, pass,
         fmt::format("noise-free gold NDCG@8 = 1.0 on {}/{} covering trials (min {:.17g}); GSPO NDCG@8 "
                     "{:.4f} vs uniform {:.4f}, lead {:.4f} (need >= 0.03)",
                     perfect, covered, min_ndcg, gspo, uniform, gspo - uniform));
}

void Criterion4() {
  const rl::CalibrationProtocol p;
  const std::vector<rl::CalibrationRun> runs = rl::RunCalibrationProtocol(p);
  const double residual_cap = 0.05 * p.rationality_beta * (p.utility_high - p.utility_low);
  bool pass = runs.size() == 9;
  double min_tau = 1.0, max_residual = 0.0, min_sign = 1.0;
  for (const rl::CalibrationRun& r : runs) {
    if (!r.error.empty()) {
      pass = false;
      continue;
    }
    min_tau = std::min(min_tau, r.report.kendall_tau);
    if (r.op.kind == rl::OperatorKind::kListwise) {
      max_residual = std::max(max_residual, r.report.max_affine_residual);
    }
    if (r.op.kind == rl::OperatorKind::kPairwise) min_sign = std::min(min_sign, r.report.sign_agreement);
  }
  pass = pass && min_tau == 1.0 && max_residual <= residual_cap && min_sign == 1.0;
  Report(4, pass,
         fmt::format("|S| = {}, n = {}, seeds 1-3, 3 operators: min tau {:.3f}; listwise max affine "
                     "residual {:.4f} (cap {:.4f}); pairwise sign agreement {:.0f}%",
                     p.support_size, p.samples, min_tau, max_residual, residual_cap, 100 * min_sign));
}

void Criterion5() {
  const rl::TaskSuite suite = rl::GenerateTaskSuite(rl::SuiteConfig{}, 42);
  const rl::TokenVocab vocab(12, 12);
  const rl::TrainConfig cfg;
  double worst_seq = 0.0, worst_sft = 0.0, worst_gspo = 0.0;
  int gspo_points = 0;
  const std::vector<rl::Demonstration> demos = rl::ExpertDemonstrations(suite, vocab, 1);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const rl::PolicyParams p = rl::testutil::RandomParams(vocab, 1000 + s, 0.5);
    const rl::Task& task = suite.tasks[s % 32];
    const rl::ManagerPolicy policy(vocab, suite.space, p);
    rl::RandomStream rng(s);
    const rl::TokenSequence seq =
        policy.SampleSequence(task.context, rl::StakeholderHooks(task.stakeholder), rng);
    const std::vector<rl::DecisionPoint> points = rl::DecisionPoints(vocab, task.context, seq);
    worst_seq = std::max(worst_seq, rl::testutil::FdRelativeError(
                                        [&](const rl::PolicyParams& q) { return rl::SequenceLogProb(q, points); },
                                        rl::GradLogProb(p, points), p, s));
    Eigen::MatrixXd sft_grad;
    rl::SftLoss(p, demos, &sft_grad);
    worst_sft = std::max(worst_sft, rl::testutil::FdRelativeError(
                                        [&](const rl::PolicyParams& q) { return rl::SftLoss(q, demos); },
                                        sft_grad, p, s));
  }
  for (std::uint64_t s = 0; gspo_points < 20 && s < 200; ++s) {
    const rl::PolicyParams behavior = rl::testutil::RandomParams(vocab, 2000 + s, 0.5);
    const rl::GroupBatch g = rl::SampleGroup(vocab, suite.space, behavior, suite.tasks[s % 32], cfg,
                                             rl::RandomStream(s));
    rl::PolicyParams p_new = behavior;
    p_new.theta += rl::testutil::RandomParams(vocab, 3000 + s, 0.02).theta;
    const rl::PolicyParams ref = rl::testutil::RandomParams(vocab, 4000 + s, 0.3);
    bool near_clip = false;
    for (const rl::Rollout& r : g.rollouts) {
      const double ratio = rl::SeqRatio(p_new, r);
      near_clip = near_clip || std::abs(ratio - (1 + cfg.clip_epsilon)) < 1e-3 ||
                  std::abs(ratio - (1 - cfg.clip_epsilon)) < 1e-3;
    }
    if (near_clip) continue;
    const rl::GspoResult res = rl::GspoObjective(g, p_new, ref, cfg);
    worst_gspo = std::max(
        worst_gspo, rl::testutil::FdRelativeError(
                        [&](const rl::PolicyParams& q) { return rl::GspoObjective(g, q, ref, cfg, false).loss; },
                        res.gradient, p_new, s));
    ++gspo_points;
  }
  const bool pass = worst_seq <= 1e-5 && worst_sft <= 1e-5 && worst_gspo <= 1e-5 && gspo_points == 20;
  Report(5, pass,
         fmt::format("max relative FD error over 20 points: sequence log-prob {:.2e}, SFT loss {:.2e}, "
                     "GSPO objective {:.2e} ({} points off the clip boundary); limit 1e-5",
                     worst_seq, worst_sft, worst_gspo, gspo_points));
}

void Criterion6() {
  const double full = rl::ClarificationCost(0, 0, 15);
  const double mixed = rl::ClarificationCost(2, 1, 0);
  rl::TrainConfig tc;
  const double usd = 0.05, sec = 7.0;
  tc.compute_alpha = tc.w_cost * usd + tc.w_time * sec;
  const double compute = rl::ComputeCost(usd, sec, tc);
  const std::vector<double> adv = rl::Advantages(std::vector<double>{1, 2, 3, 4});
  const double expected_adv[] = {-1.3416, -0.4472, 0.4472, 1.3416};
  double adv_err = 0.0;
  for (int k = 0; k < 4; ++k) adv_err = std::max(adv_err, std::abs(adv[k] - expected_adv[k]));
  const rl::TaskSuite suite = rl::GenerateTaskSuite(rl::SuiteConfig{}, 42);
  const rl::TokenVocab vocab(12, 12);
  const rl::PolicyParams p = rl::testutil::RandomParams(vocab, 5, 0.5);
  const rl::GroupBatch g =
      rl::SampleGroup(vocab, suite.space, p, suite.tasks[0], rl::TrainConfig{}, rl::RandomStream(3));
  const double ratio = rl::SeqRatio(p, g.rollouts[0]);

  const bool ok_full = full == 1.0;
  const bool ok_mixed = std::abs(mixed - 0.19136) <= 1e-5;
  const bool ok_compute = compute == 1.0;
  const bool ok_adv = adv_err <= 1e-4;
  const bool ok_ratio = ratio == 1.0;
  std::string detail = fmt::format(
      "clarification_cost(0,0,15) = {:.17g} [{}]; clarification_cost(2,1,0) = {:.10f} vs 0.19136 +- 1e-5, "
      "off by {:.2e} [{}]; compute_cost at alpha = {:.17g} [{}]; advantages max err {:.1e} [{}]; "
      "seq_ratio identity = {:.17g} [{}]",
      full, ok_full ? "ok" : "bad", mixed, std::abs(mixed - 0.19136), ok_mixed ? "ok" : "bad", compute,
      ok_compute ? "ok" : "bad", adv_err, ok_adv ? "ok" : "bad", ratio, ok_ratio ? "ok" : "bad");
  if (!ok_mixed) {
    detail += fmt::format("; note: the defining formula gives log(1.7)/log(16) = {:.10f}, so the "
                          "stated literal is off by more than its tolerance",
                          std::log(1.7) / std::log(16.0));
  }
  Report(6, ok_full && ok_mixed && ok_compute && ok_adv && ok_ratio, detail);
}

void Criterion7(const Workspace& ws) {
  double seconds = 0.0;
  const bool ran = RunPinned(ws, "c2", &seconds);
  const bool suite = ran && ws.Read("c1/suite.json") == ws.Read("c2/suite.json");
  const bool metrics = ran && ws.Read("c1/run/metrics.csv") == ws.Read("c2/run/metrics.csv");
  const bool eval_csv = ran && ws.Read("c1/eval/eval.csv") == ws.Read("c2/eval/eval.csv");
  const bool eval_json = ran && ws.Read("c1/eval/eval.json") == ws.Read("c2/eval/eval.json");
  const bool ckpt = ran && ws.Read("c1/run/checkpoint.json") == ws.Read("c2/run/checkpoint.json");
  Report(7, suite && metrics && eval_csv && eval_json && ckpt,
         fmt::format("second pinned run byte-identical: gen-suite {}, train metrics.csv {}, checkpoint {}, "
                     "eval.csv {}, eval.json {}",
                     suite ? "yes" : "no", metrics ? "yes" : "no", ckpt ? "yes" : "no",
                     eval_csv ? "yes" : "no", eval_json ? "yes" : "no"));
}

// Independent NDCG: explicit 1-based positions and an insertion sort for the
// proxy order (stable, so ties keep the lower index first).
double BruteNdcg(const std::vector<double>& proxy, const std::vector<double>& rel, std::size_t k) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < proxy.size(); ++i) {
    auto pos = order.begin();
    while (pos != order.end() && proxy[*pos] >= proxy[i]) ++pos;
    order.insert(pos, i);
  }
  std::vector<double> ideal(rel);
  std::sort(ideal.begin(), ideal.end(), [](double a, double b) { return a > b; });
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t pos = 1; pos <= k; ++pos) {
    dcg += rel[order[pos - 1]] / std::log2(static_cast<double>(pos + 1));
    idcg += ideal[pos - 1] / std::log2(static_cast<double>(pos + 1));
  }
  return dcg / idcg;
}

void Criterion8() {
  rl::RandomStream rng(2024);
  int mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.Index(12);
    const std::size_t k = 1 + rng.Index(n);
    std::vector<double> proxy(n), rel(n);
    for (std::size_t i = 0; i < n; ++i) {
      proxy[i] = rng.Uniform() < 0.3 ? 0.5 : rng.Uniform();
      rel[i] = rng.Uniform();
    }
    mismatches += rl::NdcgAtK(proxy, rel, k) != BruteNdcg(proxy, rel, k);
  }
  Report(8, mismatches == 0,
         fmt::format("library NDCG equals brute-force formula exactly on {}/1000 random instances",
                     1000 - mismatches));
}

}  // namespace

int main() {
  Workspace ws;
  double seconds = 0.0;
  Json report;
  const bool ran = RunPinned(ws, "c1", &seconds);
  if (ran) report = Json::parse(ws.Read("c1/eval/eval.json"));
  if (ran) {
    Criterion1(report, seconds);
    Criterion2(report);
    Criterion3(ws, report);
  } else {
    for (int id = 1; id <= 3; ++id) Report(id, false, "pinned pipeline failed; see cli.log");
  }
  Criterion4();
  Criterion5();
  Criterion6();
  Criterion7(ws);
  Criterion8();
  std::printf("%d of 8 criteria passed\n", 8 - g_failures);
  return g_failures == 0 ? 0 : 1;
}

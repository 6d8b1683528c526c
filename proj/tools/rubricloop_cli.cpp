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

// rubricloop: suite generation, training, evaluation and calibration runs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "CLI11.hpp"
#include "rubricloop.hpp"

namespace rl = rubricloop;
namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// File helpers

std::string ReadText(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw rl::InvalidArgument("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteText(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.close();
  if (!out) throw rl::Error("failed writing " + path.string());
  if (ReadText(path) != text) throw rl::Error("readback mismatch for " + path.string());
}

void WriteJson(const fs::path& path, const Json& j) {
  WriteText(path, j.dump(2) + "\n");
  if (Json::parse(ReadText(path)) != j) throw rl::Error("JSON readback mismatch for " + path.string());
}

Json ParseJsonFile(const fs::path& path) {
  try {
    return Json::parse(ReadText(path));
  } catch (const Json::parse_error& e) {
    throw rl::FormatError(path.string() + ": " + e.what());
  }
}

rl::TaskSuite LoadSuite(const fs::path& path) {
  try {
    return ParseJsonFile(path).get<rl::TaskSuite>();
  } catch (const Json::exception& e) {
    throw rl::FormatError(path.string() + ": " + e.what());
  }
}

rl::PolicyParams LoadCheckpoint(const rl::TokenVocab& vocab, const fs::path& path) {
  try {
    return rl::CheckpointFromJson(vocab, ParseJsonFile(path));
  } catch (const Json::exception& e) {
    throw rl::FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Layered configuration: defaults < JSON config file < flags.

// Rejects keys of `patch` that the serialized defaults do not have.
void CheckKeys(const Json& patch, const Json& reference, const std::string& where,
               const std::vector<std::string>& extra = {}) {
  if (!patch.is_object()) throw rl::ConfigError(where + ": expected an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where + "." + key;
    if (std::find(extra.begin(), extra.end(), key) != extra.end()) continue;
    if (!reference.contains(key)) throw rl::ConfigError("unknown config key " + path);
    if (reference.at(key).is_object()) CheckKeys(value, reference.at(key), path);
  }
}

template <typename T>
void Patch(const Json& file, const char* section, T& cfg, const std::vector<std::string>& extra = {}) {
  if (!file.contains(section)) return;
  const Json& patch = file.at(section);
  CheckKeys(patch, Json(cfg), std::string("config.") + section, extra);
  try {
    patch.get_to(cfg);
  } catch (const Json::exception& e) {
    throw rl::ConfigError(std::string("config.") + section + ": " + e.what());
  }
}

template <typename T>
void Override(const std::optional<T>& flag, T& field) {
  if (flag) field = *flag;
}

struct GlobalOptions {
  std::string config_path;
  std::optional<int> threads;
  Json file = Json::object();

  void Load() {
    if (config_path.empty()) return;
    file = ParseJsonFile(config_path);
    if (!file.is_object()) throw rl::ConfigError("config file must hold a JSON object");
    for (const auto& [key, value] : file.items()) {
      static const std::vector<std::string> kSections = {"threads", "suite", "sft", "train",
                                                         "eval", "calibrate"};
      if (std::find(kSections.begin(), kSections.end(), key) == kSections.end()) {
        throw rl::ConfigError("unknown config section " + key);
      }
    }
  }
  int Threads() const {
    int t = file.value("threads", 1);
    if (threads) t = *threads;
    if (t < 1) throw rl::ConfigError("threads must be >= 1");
    return t;
  }
};

std::vector<rl::Condition> ParseConditions(const std::vector<std::string>& names) {
  std::vector<rl::Condition> out;
  for (const std::string& n : names) out.push_back(rl::ParseCondition(n));
  return out;
}

// ---------------------------------------------------------------------------
// gen-suite

struct GenSuiteOptions {
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> d, d_ctx, n_train, n_eval, k_star_min, k_star_max, hint_size;
  std::optional<double> context_noise, judge_fraction, gamma, accept_threshold;
};

int RunGenSuite(const GlobalOptions& g, const GenSuiteOptions& o) {
  rl::SuiteConfig cfg;
  std::uint64_t seed = 42;
  Patch(g.file, "suite", cfg, {"seed"});
  if (g.file.contains("suite")) seed = g.file.at("suite").value("seed", seed);
  Override(o.seed, seed);
  Override(o.d, cfg.d);
  Override(o.d_ctx, cfg.d_ctx);
  Override(o.n_train, cfg.n_train);
  Override(o.n_eval, cfg.n_eval);
  Override(o.k_star_min, cfg.k_star_min);
  Override(o.k_star_max, cfg.k_star_max);
  Override(o.hint_size, cfg.hint_size);
  Override(o.context_noise, cfg.context_noise);
  Override(o.judge_fraction, cfg.judge_fraction);
  Override(o.gamma, cfg.transform_gamma);
  Override(o.accept_threshold, cfg.accept_threshold);
  const rl::TaskSuite suite = rl::GenerateTaskSuite(cfg, seed);
  WriteJson(o.out, Json(suite));
  std::cout << fmt::format("wrote {} train + {} eval tasks (d = {}, seed {}) to {}\n",
                           suite.Select(rl::Split::kTrain).size(),
                           suite.Select(rl::Split::kEval).size(), suite.space.size(), seed, o.out);
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string suite, out_dir, init;
  bool sft = false;
  std::optional<int> sft_epochs, epochs, group_size, accumulation;
  std::optional<double> learning_rate, clip_epsilon, kl_coef, lambda_clarify, lambda_compute,
      replay_percentile, worker_noise;
  std::optional<std::uint64_t> seed;
  bool no_replay = false;
};

std::string MetricsCsv(const std::vector<rl::EpochMetrics>& metrics) {
  std::string out =
      "epoch,mean_return,mean_u_star,kl,clip_fraction,mean_c_clarify,mean_c_compute,replayed\n";
  for (const rl::EpochMetrics& m : metrics) {
    out += fmt::format("{},{:.10f},{:.10f},{:.10f},{:.10f},{:.10f},{:.10f},{}\n", m.epoch,
                       m.mean_return, m.mean_u_star, m.kl, m.clip_fraction, m.mean_c_clarify,
                       m.mean_c_compute, m.replayed);
  }
  return out;
}

int RunTrain(const GlobalOptions& g, const TrainOptions& o) {
  rl::TrainConfig cfg;
  rl::SftConfig sft_cfg;
  bool run_sft = false;
  Patch(g.file, "train", cfg);
  Patch(g.file, "sft", sft_cfg, {"enabled"});
  if (g.file.contains("sft")) run_sft = g.file.at("sft").value("enabled", run_sft);
  if (o.sft) run_sft = true;
  Override(o.sft_epochs, sft_cfg.epochs);
  Override(o.epochs, cfg.epochs);
  Override(o.group_size, cfg.group_size);
  Override(o.accumulation, cfg.accumulation);
  Override(o.learning_rate, cfg.learning_rate);
  Override(o.clip_epsilon, cfg.clip_epsilon);
  Override(o.kl_coef, cfg.kl_coef);
  Override(o.lambda_clarify, cfg.lambda_clarify);
  Override(o.lambda_compute, cfg.lambda_compute);
  Override(o.replay_percentile, cfg.replay_percentile);
  Override(o.worker_noise, cfg.worker.noise_stddev);
  Override(o.seed, cfg.seed);
  if (o.no_replay) cfg.replay = false;
  cfg.threads = g.Threads();
  cfg.Validate();

  const rl::TaskSuite suite = LoadSuite(o.suite);
  const rl::TokenVocab vocab(static_cast<int>(suite.space.size()),
                             static_cast<int>(suite.tasks.at(0).context.context_features.size()));
  rl::PolicyParams init = o.init.empty() ? rl::PolicyParams::Zeros(vocab) : LoadCheckpoint(vocab, o.init);
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);

  Json record{{"suite", o.suite}, {"init", o.init.empty() ? Json(nullptr) : Json(o.init)},
              {"sft", Json(sft_cfg)}, {"train", Json(cfg)}};
  record["sft"]["enabled"] = run_sft;
  if (run_sft) {
    const std::vector<rl::Demonstration> demos = rl::ExpertDemonstrations(suite, vocab, cfg.seed);
    const rl::SftResult fit = rl::SftFit(init, demos, sft_cfg);
    init = fit.params;
    WriteJson(dir / "sft_checkpoint.json", rl::CheckpointToJson(vocab, init));
    std::cout << fmt::format("sft: {} epochs, loss {:.6f} -> {:.6f}, per-token nll {:.6f}\n",
                             fit.loss_trace.size() - 1, fit.loss_trace.front(),
                             fit.loss_trace.back(), fit.per_token_nll);
  }

  std::string rollouts;
  const rl::TrainResult result =
      rl::Train(suite, vocab, init, cfg, [&](const Json& j) { rollouts += j.dump() + "\n"; });
  WriteJson(dir / "checkpoint.json", rl::CheckpointToJson(vocab, result.params));
  WriteText(dir / "rollouts.jsonl", rollouts);
  WriteText(dir / "metrics.csv", MetricsCsv(result.metrics));
  WriteJson(dir / "train_config.json", record);
  if (!result.metrics.empty()) {
    std::cout << fmt::format("gspo: {} epochs, mean return {:.6f} -> {:.6f}\n", cfg.epochs,
                             result.metrics.front().mean_return, result.metrics.back().mean_return);
  }
  std::cout << "wrote " << (dir / "checkpoint.json").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string suite, out_dir, sft, gspo;
  std::vector<std::string> conditions;
  std::optional<int> n_max, trials, n_boot;
  std::optional<std::uint64_t> seed;
  std::optional<double> worker_noise;
  bool noise_free = false;
};

int RunEval(const GlobalOptions& g, const EvalOptions& o) {
  rl::EvalConfig cfg;
  std::vector<std::string> names;
  Patch(g.file, "eval", cfg, {"conditions"});
  if (g.file.contains("eval") && g.file.at("eval").contains("conditions")) {
    names = g.file.at("eval").at("conditions").get<std::vector<std::string>>();
  }
  if (!o.conditions.empty()) names = o.conditions;
  if (names.empty()) {
    names.push_back("no_rubric");
    if (!o.sft.empty()) names.push_back("sft");
    if (!o.gspo.empty()) names.push_back("gspo");
    names.push_back("gold");
  }
  Override(o.n_max, cfg.n_max);
  Override(o.trials, cfg.trials);
  Override(o.n_boot, cfg.n_boot);
  Override(o.seed, cfg.seed);
  Override(o.worker_noise, cfg.worker.noise_stddev);
  if (o.noise_free) cfg.noise_free_verifiers = true;
  // The ranking window shrinks with N_max unless configured explicitly.
  if (o.n_max && !(g.file.contains("eval") && g.file.at("eval").contains("ndcg_k"))) {
    cfg.ndcg_k = std::min(cfg.ndcg_k, cfg.n_max);
    cfg.precision_k = std::min(cfg.precision_k, cfg.ndcg_k);
  }
  cfg.threads = g.Threads();
  cfg.Validate();
  const std::vector<rl::Condition> conditions = ParseConditions(names);

  const rl::TaskSuite suite = LoadSuite(o.suite);
  const rl::TokenVocab vocab(static_cast<int>(suite.space.size()),
                             static_cast<int>(suite.tasks.at(0).context.context_features.size()));
  std::map<rl::Condition, rl::PolicyParams> policies;
  if (!o.sft.empty()) policies.emplace(rl::Condition::kSft, LoadCheckpoint(vocab, o.sft));
  if (!o.gspo.empty()) policies.emplace(rl::Condition::kGspo, LoadCheckpoint(vocab, o.gspo));

  const rl::EvalReport report = rl::CompareConditions(suite, vocab, policies, conditions, cfg);
  const fs::path dir(o.out_dir);
  Json j{{"report_version", rl::kReportVersion}};
  const Json body = rl::EvalJson(report);
  for (const auto& [key, value] : body.items()) j[key] = value;
  WriteText(dir / "eval.csv", rl::EvalCsv(report));
  WriteJson(dir / "eval.json", j);
  for (const rl::ConditionReport& c : report.conditions) {
    std::cout << fmt::format("{:<10} N={} mean {:.4f} [{:.4f}, {:.4f}]  ndcg@{} {:.4f}\n",
                             rl::ConditionName(c.condition), c.curve.back().n, c.curve.back().mean,
                             c.curve.back().ci_low, c.curve.back().ci_high, cfg.ndcg_k, c.ndcg_mean);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateOptions {
  std::string out;
  std::optional<std::size_t> samples, support_size;
  std::vector<std::uint64_t> seeds;
  std::optional<double> beta, noise;
  std::optional<int> list_size;
};

int RunCalibrate(const GlobalOptions& g, const CalibrateOptions& o) {
  rl::CalibrationProtocol p;
  Patch(g.file, "calibrate", p);
  Override(o.samples, p.samples);
  Override(o.support_size, p.support_size);
  Override(o.beta, p.rationality_beta);
  Override(o.noise, p.pointwise_noise);
  Override(o.list_size, p.list_size);
  if (!o.seeds.empty()) p.seeds = o.seeds;
  if (p.seeds.empty()) throw rl::ConfigError("calibrate: need at least one seed");

  const std::vector<rl::CalibrationRun> runs = rl::RunCalibrationProtocol(p);
  Json j{{"report_version", rl::kReportVersion}, {"protocol", Json(p)}, {"runs", Json::array()}};
  int failed = 0;
  for (const rl::CalibrationRun& run : runs) {
    j["runs"].push_back(rl::ToJson(run));
    if (!run.error.empty()) {
      ++failed;
      std::cerr << "calibrate: " << run.error << "\n";
      continue;
    }
    std::cout << fmt::format("{:<9} seed {:<3} tau {} residual {:.4f} sign {:.3f}\n",
                             rl::OperatorName(run.op.kind), run.seed,
                             run.report.tau_defined ? fmt::format("{:.3f}", run.report.kendall_tau)
                                                    : std::string("undefined"),
                             run.report.max_affine_residual, run.report.sign_agreement);
  }
  WriteJson(o.out, j);
  return failed == 0 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rubric elicitation and training loop on a synthetic stakeholder environment",
               "rubricloop"};
  app.set_version_flag("--version",
                       fmt::format("rubricloop {}\nsuite schema {}\ncheckpoint schema {}\n"
                                   "report schema {}",
                                   rl::kLibraryVersion, rl::kSuiteVersion, rl::kCheckpointVersion,
                                   rl::kReportVersion));
  GlobalOptions global;
  app.add_option("--config", global.config_path, "JSON config file (sections: threads, suite, "
                                                  "sft, train, eval, calibrate)")
      ->check(CLI::ExistingFile);
  app.add_option("--threads", global.threads, "Worker threads (outputs do not depend on it)");
  app.require_subcommand(1);

  GenSuiteOptions gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-suite", "Generate a synthetic task suite");
  gen_cmd->add_option("--out", gen.out, "Output suite JSON")->required();
  gen_cmd->add_option("--seed", gen.seed, "Suite seed (default 42)");
  gen_cmd->add_option("--d", gen.d, "Number of attributes");
  gen_cmd->add_option("--d-ctx", gen.d_ctx, "Context dimension");
  gen_cmd->add_option("--n-train", gen.n_train, "Training tasks");
  gen_cmd->add_option("--n-eval", gen.n_eval, "Evaluation tasks");
  gen_cmd->add_option("--k-star-min", gen.k_star_min, "Smallest preference support");
  gen_cmd->add_option("--k-star-max", gen.k_star_max, "Largest preference support");
  gen_cmd->add_option("--hint-size", gen.hint_size, "Attributes in the public hint (0 = none)");
  gen_cmd->add_option("--context-noise", gen.context_noise, "Context noise stddev");
  gen_cmd->add_option("--judge-fraction", gen.judge_fraction, "Fraction of model-judge verifiers");
  gen_cmd->add_option("--gamma", gen.gamma, "Utility transform exponent");
  gen_cmd->add_option("--accept-threshold", gen.accept_threshold, "Stakeholder acceptance radius");

  TrainOptions train;
  CLI::App* train_cmd = app.add_subcommand("train", "Optional SFT, then GSPO training");
  train_cmd->add_option("--suite", train.suite, "Suite JSON")->required();
  train_cmd->add_option("--out-dir", train.out_dir, "Output directory")->required();
  train_cmd->add_option("--init", train.init, "Initial checkpoint (default: zeros)");
  train_cmd->add_flag("--sft", train.sft, "Run SFT on expert demonstrations first");
  train_cmd->add_option("--sft-epochs", train.sft_epochs, "SFT epochs");
  train_cmd->add_option("--epochs", train.epochs, "GSPO epochs");
  train_cmd->add_option("--lr", train.learning_rate, "GSPO learning rate");
  train_cmd->add_option("--group-size", train.group_size, "Rollouts per group (K)");
  train_cmd->add_option("--accumulation", train.accumulation, "Groups per update");
  train_cmd->add_option("--clip-epsilon", train.clip_epsilon, "Ratio clip epsilon");
  train_cmd->add_option("--kl-coef", train.kl_coef, "KL penalty coefficient");
  train_cmd->add_option("--lambda-clarify", train.lambda_clarify, "Clarification cost weight");
  train_cmd->add_option("--lambda-compute", train.lambda_compute, "Compute cost weight");
  train_cmd->add_option("--replay-percentile", train.replay_percentile, "Replay percentile");
  train_cmd->add_flag("--no-replay", train.no_replay, "Disable prioritized replay");
  train_cmd->add_option("--worker-noise", train.worker_noise, "Worker output noise stddev");
  train_cmd->add_option("--seed", train.seed, "Training seed (default 42)");

  EvalOptions eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Compare conditions by best-of-N and NDCG");
  eval_cmd->add_option("--suite", eval.suite, "Suite JSON")->required();
  eval_cmd->add_option("--out-dir", eval.out_dir, "Output directory")->required();
  eval_cmd->add_option("--sft", eval.sft, "SFT checkpoint");
  eval_cmd->add_option("--gspo", eval.gspo, "GSPO checkpoint");
  eval_cmd->add_option("--conditions", eval.conditions, "no_rubric, sft, gspo, gold")
      ->delimiter(',');
  eval_cmd->add_option("--n-max", eval.n_max, "Largest N for best-of-N");
  eval_cmd->add_option("--trials", eval.trials, "Trials per task");
  eval_cmd->add_option("--n-boot", eval.n_boot, "Bootstrap resamples");
  eval_cmd->add_option("--worker-noise", eval.worker_noise, "Worker output noise stddev");
  eval_cmd->add_flag("--noise-free-verifiers", eval.noise_free, "Rank with noise-free judges");
  eval_cmd->add_option("--seed", eval.seed, "Evaluation seed (default 7)");

  CalibrateOptions cal;
  CLI::App* cal_cmd = app.add_subcommand("calibrate", "Operator calibration experiments");
  cal_cmd->add_option("--out", cal.out, "Output report JSON")->required();
  cal_cmd->add_option("--samples", cal.samples, "Observations per fit");
  cal_cmd->add_option("--support-size", cal.support_size, "Candidates in the support");
  cal_cmd->add_option("--seeds", cal.seeds, "Seeds")->delimiter(',');
  cal_cmd->add_option("--beta", cal.beta, "Rationality of pairwise/listwise feedback");
  cal_cmd->add_option("--list-size", cal.list_size, "Listwise list size");
  cal_cmd->add_option("--noise", cal.noise, "Pointwise noise stddev");

  CLI11_PARSE(app, argc, argv);

  try {
    global.Load();
    if (gen_cmd->parsed()) return RunGenSuite(global, gen);
    if (train_cmd->parsed()) return RunTrain(global, train);
    if (eval_cmd->parsed()) return RunEval(global, eval);
    if (cal_cmd->parsed()) return RunCalibrate(global, cal);
  } catch (const rl::ConfigError& e) {
    std::cerr << "rubricloop: invalid configuration: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "rubricloop: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

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

// The manager (rubric decomposer) as a token-level autoregressive policy with
// a linear-softmax head. A sequence is
//
//   ASK(j, level)* STOP_ASK (CRIT(j) WBIN(b))+ END
//
// Each ASK is answered by the stakeholder before the next decision. Masks
// enforce the grammar, so every sampled sequence decodes to a valid rubric.
// Features at each step depend only on (context, transcript, prefix), never on
// the parameters, so log-probabilities and gradients can be re-evaluated
// exactly under any parameter value.

#ifndef RUBRICLOOP_POLICY_HPP_
#define RUBRICLOOP_POLICY_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rubricloop/dialogue.hpp"
#include "rubricloop/env.hpp"
#include "rubricloop/error.hpp"
#include "rubricloop/random.hpp"
#include "rubricloop/rubric.hpp"

namespace rubricloop {

inline constexpr int kCheckpointVersion = 1;

enum class TokenKind { kAsk, kStopAsk, kCrit, kWeightBin, kEnd };

// Token ids: ASK(j, level) = 3j + level, STOP_ASK = 3d, CRIT(j) = 3d + 1 + j,
// WBIN(b) = 4d + 1 + b, END = 4d + 1 + B.
class TokenVocab {
 public:
  TokenVocab(int num_attributes, int context_dim,
             std::vector<double> bins = {0.1, 0.2, 0.3, 0.4, 0.5}, int max_questions = 6,
             int max_criteria = static_cast<int>(kDefaultMaxCriteria))
      : d_(num_attributes),
        d_ctx_(context_dim),
        bins_(std::move(bins)),
        max_questions_(max_questions),
        max_criteria_(max_criteria) {
    detail::RequireConfig(d_ >= 2, "vocab: need d >= 2");
    detail::RequireConfig(d_ctx_ >= 0, "vocab: negative context dimension");
    detail::RequireConfig(!bins_.empty(), "vocab: need at least one weight bin");
    for (double b : bins_) detail::RequireConfig(b > 0.0 && b <= 1.0, "vocab: bins must lie in (0,1]");
    detail::RequireConfig(max_questions_ >= 0, "vocab: negative question cap");
    detail::RequireConfig(max_criteria_ >= 1, "vocab: criterion cap must be >= 1");
  }

  int num_attributes() const { return d_; }
  int context_dim() const { return d_ctx_; }
  int num_bins() const { return static_cast<int>(bins_.size()); }
  const std::vector<double>& bins() const { return bins_; }
  int max_questions() const { return max_questions_; }
  int max_criteria() const { return max_criteria_; }

  int size() const { return 4 * d_ + num_bins() + 2; }
  int Ask(int attribute, Level level) const { return 3 * attribute + static_cast<int>(level); }
  int StopAsk() const { return 3 * d_; }
  int Crit(int attribute) const { return 3 * d_ + 1 + attribute; }
  int WeightBin(int b) const { return 4 * d_ + 1 + b; }
  int End() const { return 4 * d_ + 1 + num_bins(); }

  TokenKind Kind(int token) const {
    detail::Require(token >= 0 && token < size(), "TokenVocab: token out of range");
    if (token < 3 * d_) return TokenKind::kAsk;
    if (token == StopAsk()) return TokenKind::kStopAsk;
    if (token < 4 * d_ + 1) return TokenKind::kCrit;
    if (token < End()) return TokenKind::kWeightBin;
    return TokenKind::kEnd;
  }
  int AttributeOf(int token) const {
    switch (Kind(token)) {
      case TokenKind::kAsk: return token / 3;
      case TokenKind::kCrit: return token - 3 * d_ - 1;
      default: throw InvalidArgument("TokenVocab: token has no attribute");
    }
  }
  Level LevelOf(int token) const { return static_cast<Level>(token % 3); }
  int BinOf(int token) const { return token - 4 * d_ - 1; }

  // Feature layout: context | weight estimate | level counts | previous token
  // one-hot | emitted-criteria indicator | phase flag | bias.
  int feature_dim() const { return d_ctx_ + 2 * d_ + size() + 5; }
  int estimate_offset() const { return d_ctx_; }
  int counts_offset() const { return d_ctx_ + d_; }
  int prev_token_offset() const { return counts_offset() + 3; }
  int emitted_offset() const { return prev_token_offset() + size(); }
  int phase_offset() const { return emitted_offset() + d_; }
  int bias_offset() const { return phase_offset() + 1; }

  std::string TokenName(int token) const {
    static const char* kLevels[] = {"easy", "medium", "hard"};
    switch (Kind(token)) {
      case TokenKind::kAsk:
        return "ASK(" + std::to_string(AttributeOf(token)) + "," +
               kLevels[static_cast<int>(LevelOf(token))] + ")";
      case TokenKind::kStopAsk: return "STOP_ASK";
      case TokenKind::kCrit: return "CRIT(" + std::to_string(AttributeOf(token)) + ")";
      case TokenKind::kWeightBin: {
        std::ostringstream os;
        os << "WBIN(" << bins_[BinOf(token)] << ")";
        return os.str();
      }
      case TokenKind::kEnd: return "END";
    }
    return "?";
  }

  // Identifies everything that fixes the meaning of a parameter matrix.
  std::string Description() const {
    std::ostringstream os;
    os.precision(17);
    os << "layout=v1;d=" << d_ << ";d_ctx=" << d_ctx_ << ";bins=";
    for (std::size_t i = 0; i < bins_.size(); ++i) os << (i ? "," : "") << bins_[i];
    os << ";max_questions=" << max_questions_ << ";max_criteria=" << max_criteria_;
    return os.str();
  }

  // FNV-1a 64 of Description(), hex.
  std::string Fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : Description()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
  }

 private:
  int d_;
  int d_ctx_;
  std::vector<double> bins_;
  int max_questions_;
  int max_criteria_;
};

struct PolicyParams {
  Eigen::MatrixXd theta;  // vocab size x feature dim

  static PolicyParams Zeros(const TokenVocab& vocab) {
    return {Eigen::MatrixXd::Zero(vocab.size(), vocab.feature_dim())};
  }
  bool AllFinite() const { return theta.allFinite(); }
};

// One decision: the state features, the valid-token mask, and the chosen token.
struct DecisionPoint {
  Eigen::VectorXd features;
  std::vector<int> mask;
  int token = -1;
};

// A sampled (or scripted) manager trajectory.
struct TokenSequence {
  std::vector<int> tokens;
  // log pi(token | prefix) under the generating (behavior) policy.
  std::vector<double> logprobs;
  // True where the satisfied check collapsed the mask to {STOP_ASK}.
  std::vector<char> forced_stop;
  // Questions asked and the stakeholder's answers, in ASK-token order.
  DialogueTranscript transcript;

  double total_logprob() const {
    double sum = 0.0;
    for (double lp : logprobs) sum += lp;
    return sum;
  }
};

namespace detail {

// Grammar state while walking a sequence.
struct GrammarState {
  enum class Phase { kAsking, kNeedCrit, kNeedBin, kDone };
  Phase phase = Phase::kAsking;
  std::vector<char> asked;
  std::vector<char> emitted;
  int n_questions = 0;
  int n_criteria = 0;
  int prev_token = -1;

  explicit GrammarState(int d) : asked(d, 0), emitted(d, 0) {}
};

inline std::vector<int> ValidTokens(const TokenVocab& vocab, const GrammarState& s,
                                    bool force_stop) {
  std::vector<int> mask;
  const int d = vocab.num_attributes();
  switch (s.phase) {
    case GrammarState::Phase::kAsking:
      if (!force_stop && s.n_questions < vocab.max_questions()) {
        for (int j = 0; j < d; ++j) {
          if (s.asked[j]) continue;
          for (int l = 0; l < 3; ++l) mask.push_back(vocab.Ask(j, static_cast<Level>(l)));
        }
      }
      mask.push_back(vocab.StopAsk());
      break;
    case GrammarState::Phase::kNeedCrit:
      if (s.n_criteria < vocab.max_criteria()) {
        for (int j = 0; j < d; ++j) {
          if (!s.emitted[j]) mask.push_back(vocab.Crit(j));
        }
      }
      if (s.n_criteria >= 1) mask.push_back(vocab.End());
      break;
    case GrammarState::Phase::kNeedBin:
      for (int b = 0; b < vocab.num_bins(); ++b) mask.push_back(vocab.WeightBin(b));
      break;
    case GrammarState::Phase::kDone:
      break;
  }
  return mask;
}

inline void Advance(const TokenVocab& vocab, GrammarState& s, int token) {
  switch (vocab.Kind(token)) {
    case TokenKind::kAsk:
      s.asked[vocab.AttributeOf(token)] = 1;
      ++s.n_questions;
      break;
    case TokenKind::kStopAsk: s.phase = GrammarState::Phase::kNeedCrit; break;
    case TokenKind::kCrit:
      s.emitted[vocab.AttributeOf(token)] = 1;
      ++s.n_criteria;
      s.phase = GrammarState::Phase::kNeedBin;
      break;
    case TokenKind::kWeightBin: s.phase = GrammarState::Phase::kNeedCrit; break;
    case TokenKind::kEnd: s.phase = GrammarState::Phase::kDone; break;
  }
  s.prev_token = token;
}

inline Eigen::VectorXd Features(const TokenVocab& vocab, const TaskContext& x,
                                const std::vector<double>& estimate,
                                const DialogueTranscript& transcript, const GrammarState& s) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(vocab.feature_dim());
  detail::Require(static_cast<int>(x.context_features.size()) == vocab.context_dim(),
                  "policy features: context dimension mismatch");
  for (int i = 0; i < vocab.context_dim(); ++i) f[i] = x.context_features[i];
  for (int j = 0; j < vocab.num_attributes(); ++j) f[vocab.estimate_offset() + j] = estimate[j];
  f[vocab.counts_offset() + 0] = transcript.n_easy;
  f[vocab.counts_offset() + 1] = transcript.n_medium;
  f[vocab.counts_offset() + 2] = transcript.n_hard;
  if (s.prev_token >= 0) f[vocab.prev_token_offset() + s.prev_token] = 1.0;
  for (int j = 0; j < vocab.num_attributes(); ++j) {
    f[vocab.emitted_offset() + j] = s.emitted[j] ? 1.0 : 0.0;
  }
  f[vocab.phase_offset()] = s.phase == GrammarState::Phase::kAsking ? 0.0 : 1.0;
  f[vocab.bias_offset()] = 1.0;
  return f;
}

// Masked log-softmax over `mask` (entries aligned with mask order).
inline std::vector<double> MaskedLogSoftmax(const PolicyParams& p, const Eigen::VectorXd& f,
                                            const std::vector<int>& mask) {
  std::vector<double> logits(mask.size());
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    logits[i] = p.theta.row(mask[i]).dot(f);
    max_logit = std::max(max_logit, logits[i]);
  }
  double z = 0.0;
  for (double l : logits) z += std::exp(l - max_logit);
  const double log_z = max_logit + std::log(z);
  for (double& l : logits) l -= log_z;
  return logits;
}

inline std::size_t MaskPosition(const std::vector<int>& mask, int token) {
  const auto it = std::find(mask.begin(), mask.end(), token);
  if (it == mask.end()) {
    throw InvalidArgument("token " + std::to_string(token) + " is masked out at this step");
  }
  return static_cast<std::size_t>(it - mask.begin());
}

inline int SampleIndex(const std::vector<double>& log_probs, RandomStream& rng) {
  const double u = rng.Uniform();
  double cumulative = 0.0;
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    cumulative += std::exp(log_probs[i]);
    if (u < cumulative) return static_cast<int>(i);
  }
  // Rounding left u above the total mass; take the last token with mass.
  for (std::size_t i = log_probs.size(); i-- > 0;) {
    if (std::exp(log_probs[i]) > 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(log_probs.size()) - 1;
}

inline int ArgMax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace detail

// Probability vector over the whole vocabulary: softmax of theta * features
// restricted to `mask`, zero elsewhere.
inline Eigen::VectorXd TokenDistribution(const PolicyParams& p, const Eigen::VectorXd& features,
                                         const std::vector<int>& mask) {
  if (mask.empty()) throw InvalidArgument("TokenDistribution: empty mask");
  const std::vector<double> lp = detail::MaskedLogSoftmax(p, features, mask);
  Eigen::VectorXd probs = Eigen::VectorXd::Zero(p.theta.rows());
  for (std::size_t i = 0; i < mask.size(); ++i) probs[mask[i]] = std::exp(lp[i]);
  return probs;
}

// Rubric from the CRIT/WBIN pairs of a sequence: bin values renormalized to
// sum to 1, stages by the shared allocation rule.
inline Rubric DecodeRubric(const TokenVocab& vocab, std::span<const int> tokens,
                           const AttributeSpace& space) {
  detail::Require(static_cast<int>(space.size()) == vocab.num_attributes(),
                  "DecodeRubric: attribute space mismatch");
  Rubric r;
  r.max_criteria = static_cast<std::size_t>(vocab.max_criteria());
  double total = 0.0;
  int pending = -1;
  for (int tok : tokens) {
    const TokenKind kind = vocab.Kind(tok);
    if (kind == TokenKind::kCrit) {
      pending = vocab.AttributeOf(tok);
    } else if (kind == TokenKind::kWeightBin) {
      detail::Require(pending >= 0, "DecodeRubric: WBIN without CRIT");
      const double w = vocab.bins()[vocab.BinOf(tok)];
      r.criteria.push_back(MakeCriterion(space, pending, w));
      total += w;
      pending = -1;
    }
  }
  if (r.criteria.empty()) throw InvalidArgument("DecodeRubric: sequence has no criteria");
  for (Criterion& c : r.criteria) c.weight /= total;
  AssignStages(r.criteria);
  return r;
}

inline Rubric DecodeRubric(const TokenVocab& vocab, const TokenSequence& t,
                           const AttributeSpace& space) {
  return DecodeRubric(vocab, std::span<const int>(t.tokens), space);
}

// Index of STOP_ASK; tokens from there on form the rubric.
inline std::size_t RubricStart(const TokenVocab& vocab, const TokenSequence& t) {
  const auto it = std::find(t.tokens.begin(), t.tokens.end(), vocab.StopAsk());
  return static_cast<std::size_t>(it - t.tokens.begin());
}

inline std::vector<Question> DecodeQuestions(const TokenVocab& vocab, const TokenSequence& t) {
  std::vector<Question> qs;
  for (int tok : t.tokens) {
    if (vocab.Kind(tok) == TokenKind::kAsk) qs.push_back({vocab.AttributeOf(tok), vocab.LevelOf(tok)});
  }
  return qs;
}

// Rebuilds every decision point of `t` (features, mask, chosen token).
// Throws if a token is not allowed by the grammar at its position.
inline std::vector<DecisionPoint> DecisionPoints(const TokenVocab& vocab, const TaskContext& x,
                                                 const TokenSequence& t) {
  const int d = vocab.num_attributes();
  detail::GrammarState state(d);
  DialogueTranscript partial;
  std::size_t next_turn = 0;
  std::vector<double> estimate = EstimateWeights(partial, d);
  std::vector<DecisionPoint> points;
  points.reserve(t.tokens.size());
  for (std::size_t i = 0; i < t.tokens.size(); ++i) {
    const bool forced = i < t.forced_stop.size() && t.forced_stop[i];
    DecisionPoint dp;
    dp.features = detail::Features(vocab, x, estimate, partial, state);
    dp.mask = detail::ValidTokens(vocab, state, forced);
    dp.token = t.tokens[i];
    detail::MaskPosition(dp.mask, dp.token);
    points.push_back(std::move(dp));
    detail::Advance(vocab, state, t.tokens[i]);
    if (vocab.Kind(t.tokens[i]) == TokenKind::kAsk) {
      detail::Require(next_turn < t.transcript.turns.size(),
                      "DecisionPoints: ASK token without a transcript answer");
      const auto& [q, a] = t.transcript.turns[next_turn++];
      partial.Append(q, a);
      estimate = EstimateWeights(partial, d);
    }
  }
  return points;
}

inline double LogProbAt(const PolicyParams& p, const DecisionPoint& dp) {
  const std::vector<double> lp = detail::MaskedLogSoftmax(p, dp.features, dp.mask);
  return lp[detail::MaskPosition(dp.mask, dp.token)];
}

// d log pi(token) / d theta accumulated into `grad` with multiplier `scale`:
// rows v in the mask get scale * (1[v = token] - pi(v)) * features.
inline void AccumulateGradLogProb(const PolicyParams& p, const DecisionPoint& dp, double scale,
                                  Eigen::MatrixXd& grad) {
  const std::vector<double> lp = detail::MaskedLogSoftmax(p, dp.features, dp.mask);
  for (std::size_t i = 0; i < dp.mask.size(); ++i) {
    const double coeff = (dp.mask[i] == dp.token ? 1.0 : 0.0) - std::exp(lp[i]);
    if (coeff != 0.0) grad.row(dp.mask[i]).noalias() += (scale * coeff) * dp.features.transpose();
  }
}

inline double SequenceLogProb(const PolicyParams& p, std::span<const DecisionPoint> points) {
  double total = 0.0;
  for (const DecisionPoint& dp : points) total += LogProbAt(p, dp);
  return total;
}

inline double SequenceLogProb(const TokenVocab& vocab, const PolicyParams& p, const TaskContext& x,
                              const TokenSequence& t) {
  const std::vector<DecisionPoint> points = DecisionPoints(vocab, x, t);
  return SequenceLogProb(p, points);
}

inline Eigen::MatrixXd GradLogProb(const PolicyParams& p, std::span<const DecisionPoint> points) {
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(p.theta.rows(), p.theta.cols());
  for (const DecisionPoint& dp : points) AccumulateGradLogProb(p, dp, 1.0, grad);
  return grad;
}

inline Eigen::MatrixXd GradLogProb(const TokenVocab& vocab, const PolicyParams& p,
                                   const TaskContext& x, const TokenSequence& t) {
  const std::vector<DecisionPoint> points = DecisionPoints(vocab, x, t);
  return GradLogProb(p, points);
}

// Environment callbacks used while sampling: the stakeholder's reply and the
// acceptance check on a draft rubric.
struct EnvHooks {
  std::function<Answer(const Question&, RandomStream&)> answer;
  std::function<bool(const Rubric&)> satisfied;
};

inline EnvHooks StakeholderHooks(const StakeholderModel& s) {
  return {[&s](const Question& q, RandomStream& rng) { return AnswerQuestion(s, q, rng); },
          [&s](const Rubric& r) { return Satisfied(s, r); }};
}

class ManagerPolicy {
 public:
  ManagerPolicy(const TokenVocab& vocab, const AttributeSpace& space, const PolicyParams& params)
      : vocab_(vocab), space_(space), params_(params) {
    detail::Require(params.theta.rows() == vocab.size() &&
                        params.theta.cols() == vocab.feature_dim(),
                    "ManagerPolicy: parameter shape does not match vocabulary");
  }

  // Asking phase only: ASK tokens (each answered immediately) until STOP_ASK.
  // Before every step the greedy draft rubric for the current transcript is
  // checked with hooks.satisfied; acceptance forces STOP_ASK.
  TokenSequence SampleDialogue(const TaskContext& x, const EnvHooks& hooks, RandomStream& rng,
                               bool check_satisfied = true) const {
    TokenSequence seq;
    detail::GrammarState state(vocab_.num_attributes());
    std::vector<double> estimate = EstimateWeights(seq.transcript, vocab_.num_attributes());
    while (state.phase == detail::GrammarState::Phase::kAsking) {
      bool forced = false;
      if (check_satisfied && hooks.satisfied && state.n_questions < vocab_.max_questions()) {
        forced = hooks.satisfied(GreedyDraft(x, seq.transcript, estimate));
      }
      const int tok = Step(x, estimate, seq.transcript, state, forced, rng, seq);
      if (vocab_.Kind(tok) == TokenKind::kAsk) {
        const Question q{vocab_.AttributeOf(tok), vocab_.LevelOf(tok)};
        seq.transcript.Append(q, hooks.answer(q, rng));
        estimate = EstimateWeights(seq.transcript, vocab_.num_attributes());
      }
    }
    return seq;
  }

  // Continues a dialogue prefix (ending in STOP_ASK) with sampled criteria.
  TokenSequence SampleEmission(const TaskContext& x, const TokenSequence& dialogue,
                               RandomStream& rng) const {
    TokenSequence seq = dialogue;
    detail::GrammarState state = Replay(seq);
    const std::vector<double> estimate = EstimateWeights(seq.transcript, vocab_.num_attributes());
    while (state.phase != detail::GrammarState::Phase::kDone) {
      Step(x, estimate, seq.transcript, state, false, rng, seq);
    }
    return seq;
  }

  TokenSequence SampleSequence(const TaskContext& x, const EnvHooks& hooks, RandomStream& rng,
                               bool check_satisfied = true) const {
    return SampleEmission(x, SampleDialogue(x, hooks, rng, check_satisfied), rng);
  }

  // Most likely emission given the transcript so far (ties to lowest id).
  Rubric GreedyDraft(const TaskContext& x, const DialogueTranscript& transcript,
                     const std::vector<double>& estimate) const {
    detail::GrammarState state(vocab_.num_attributes());
    state.phase = detail::GrammarState::Phase::kNeedCrit;
    state.prev_token = vocab_.StopAsk();
    state.n_questions = static_cast<int>(transcript.turns.size());
    std::vector<int> tokens;
    while (state.phase != detail::GrammarState::Phase::kDone) {
      const Eigen::VectorXd f = detail::Features(vocab_, x, estimate, transcript, state);
      const std::vector<int> mask = detail::ValidTokens(vocab_, state, false);
      const int tok = mask[detail::ArgMax(detail::MaskedLogSoftmax(params_, f, mask))];
      tokens.push_back(tok);
      detail::Advance(vocab_, state, tok);
    }
    return DecodeRubric(vocab_, tokens, space_);
  }

  Rubric Decode(const TokenSequence& t) const { return DecodeRubric(vocab_, t, space_); }

  const TokenVocab& vocab() const { return vocab_; }
  const PolicyParams& params() const { return params_; }

 private:
  detail::GrammarState Replay(const TokenSequence& seq) const {
    detail::GrammarState state(vocab_.num_attributes());
    for (int tok : seq.tokens) detail::Advance(vocab_, state, tok);
    return state;
  }

  int Step(const TaskContext& x, const std::vector<double>& estimate,
           const DialogueTranscript& transcript, detail::GrammarState& state, bool forced,
           RandomStream& rng, TokenSequence& seq) const {
    const Eigen::VectorXd f = detail::Features(vocab_, x, estimate, transcript, state);
    const std::vector<int> mask = detail::ValidTokens(vocab_, state, forced);
    const std::vector<double> lp = detail::MaskedLogSoftmax(params_, f, mask);
    // Singleton masks are deterministic and consume no randomness.
    const int idx = mask.size() == 1 ? 0 : detail::SampleIndex(lp, rng);
    const int tok = mask[idx];
    seq.tokens.push_back(tok);
    seq.logprobs.push_back(lp[idx]);
    seq.forced_stop.push_back(forced ? 1 : 0);
    detail::Advance(vocab_, state, tok);
    return tok;
  }

  const TokenVocab& vocab_;
  const AttributeSpace& space_;
  const PolicyParams& params_;
};

// ---------------------------------------------------------------------------
// Checkpoints: JSON with shape, vocabulary fingerprint and row-major theta.

inline nlohmann::ordered_json CheckpointToJson(const TokenVocab& vocab, const PolicyParams& p) {
  std::vector<double> flat;
  flat.reserve(p.theta.size());
  for (Eigen::Index r = 0; r < p.theta.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.theta.cols(); ++c) flat.push_back(p.theta(r, c));
  }
  return nlohmann::ordered_json{{"checkpoint_version", kCheckpointVersion},
                                {"vocab", vocab.Description()},
                                {"vocab_fingerprint", vocab.Fingerprint()},
                                {"rows", p.theta.rows()},
                                {"cols", p.theta.cols()},
                                {"theta", flat}};
}

inline PolicyParams CheckpointFromJson(const TokenVocab& vocab, const nlohmann::ordered_json& j) {
  if (j.at("checkpoint_version").get<int>() != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint_version");
  }
  if (j.at("vocab_fingerprint").get<std::string>() != vocab.Fingerprint()) {
    throw FormatError("checkpoint vocabulary fingerprint mismatch: checkpoint has '" +
                      j.value("vocab", std::string("?")) + "', expected '" + vocab.Description() +
                      "'");
  }
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto flat = j.at("theta").get<std::vector<double>>();
  if (rows != vocab.size() || cols != vocab.feature_dim() ||
      static_cast<Eigen::Index>(flat.size()) != rows * cols) {
    throw FormatError("checkpoint shape mismatch");
  }
  PolicyParams p{Eigen::MatrixXd(rows, cols)};
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) p.theta(r, c) = flat[r * cols + c];
  }
  return p;
}

}  // namespace rubricloop

#endif  // RUBRICLOOP_POLICY_HPP_

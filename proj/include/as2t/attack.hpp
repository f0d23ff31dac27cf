/*
 * Copyright 2026 The as2t Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef AS2T_ATTACK_HPP
#define AS2T_ATTACK_HPP

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "as2t/losses.hpp"
#include "as2t/srs.hpp"

namespace as2t {

enum class Optimizer { FGSM, PGD, CW2, NES };

std::string to_string(Optimizer o);
Optimizer optimizer_from_string(const std::string& s);

struct AttackConfig {
  Optimizer optimizer = Optimizer::PGD;
  double epsilon = 0.002;
  /// Step size. For CW2 this is the Adam learning rate in the tanh domain.
  double alpha = 0.0004;
  int iters = 10;
  double kappa = 0.0;
  double lambda_init = 0.1;
  int binary_search_steps = 9;
  int nes_samples = 50;
  double nes_sigma = 1e-3;
  bool random_start = false;
  bool adam = false;
  /// Unset means the optimizer default: off for white-box, on for NES.
  std::optional<bool> early_stop;
  /// Black-box query budget, 0 for none.
  long max_queries = 0;
  std::uint64_t seed = 0;

  void validate() const;
  bool early_stop_or_default() const {
    return early_stop.value_or(optimizer == Optimizer::NES);
  }
};

struct AttackOutcome {
  Waveform adversarial;
  bool success = false;
  int iterations_used = 0;
  /// Score queries spent on gradient estimation and threshold estimation.
  long queries_used = 0;
  /// Decision queries issued for early-stopping checks (not in queries_used).
  long decision_probes = 0;
  double final_loss = 0.0;
  double perturbation_linf = 0.0;
  double perturbation_l2 = 0.0;
  Decision decision = Decision::imposter();
  AttackSetting setting;
  std::optional<double> threshold_estimate;
};

/// Elementwise min(x + eps, 1, max(x', x - eps, -1)).
template <typename D1, typename D2>
Eigen::Matrix<typename D1::Scalar, Eigen::Dynamic, 1> clip_box(
    const Eigen::MatrixBase<D1>& x_orig, const Eigen::MatrixBase<D2>& x_cand,
    typename D1::Scalar epsilon) {
  using Scalar = typename D1::Scalar;
  if (x_orig.size() != x_cand.size()) throw std::invalid_argument("clip_box: length mismatch");
  const auto lower = (x_orig.array() - epsilon).max(Scalar(-1));
  const auto upper = (x_orig.array() + epsilon).min(Scalar(1));
  return x_cand.array().max(lower).min(upper).matrix();
}

Waveform clip_box(const Waveform& x_orig, const Waveform& x_cand, double epsilon);

/// sign with sign(0) = 0.
template <typename Derived>
auto signum(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  return v.unaryExpr([](Scalar a) { return Scalar((a > 0) - (a < 0)); });
}

/// Standard Adam update state.
class Adam {
 public:
  explicit Adam(Index n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(Vector::Zero(n)), v_(Vector::Zero(n)), b1_(beta1), b2_(beta2), eps_(eps) {}
  /// Returns the update direction m_hat / (sqrt(v_hat) + eps).
  Vector direction(const Vector& grad);

 private:
  Vector m_, v_;
  double b1_, b2_, eps_;
  int t_ = 0;
};

struct LossValueGrad {
  double loss = 0.0;
  Vector grad;
};

struct Probe {
  double loss = 0.0;
  Decision decision = Decision::imposter();
};

/// What a descent run needs from the model: a (possibly estimated) gradient
/// and a loss/decision probe at a point.
struct DescentObjective {
  std::function<LossValueGrad(const Vector&)> gradient;
  std::function<Probe(const Vector&)> probe;
};

/// Signed (or Adam) gradient descent projected onto the eps-ball around x
/// and the [-1, 1] box. Shared by FGSM, PGD, FAKEBOB and the robust attack.
AttackOutcome run_descent(const Waveform& x, const AttackSetting& setting,
                          const AttackConfig& cfg, const DescentObjective& objective);

/// White-box objective for a recognizer; `theta` overrides the database value.
DescentObjective white_box_objective(LossId loss, const SpeakerRecognizer& model,
                                     const AttackSetting& setting,
                                     std::optional<double> theta = std::nullopt);

AttackOutcome fgsm(const Waveform& x, LossId loss, const AttackSetting& setting,
                   const SpeakerRecognizer& model, const AttackConfig& cfg);
AttackOutcome pgd(const Waveform& x, LossId loss, const AttackSetting& setting,
                  const SpeakerRecognizer& model, const AttackConfig& cfg);
/// Requires a CW-eligible loss. cfg.iters is the Adam iteration count per
/// binary-search round.
AttackOutcome cw2(const Waveform& x, LossId loss, const AttackSetting& setting,
                  const SpeakerRecognizer& model, const AttackConfig& cfg);

/// Score-based black-box access: scores and decision per query, hidden θ.
class ScoreOracle {
 public:
  explicit ScoreOracle(const SpeakerRecognizer& model) : model_(&model) {}

  struct Response {
    ScoreVector scores;
    Decision decision = Decision::imposter();
  };

  Response query(const Vector& x) const;
  TaskKind task() const { return model_->database().task; }
  Index num_speakers() const { return model_->database().size(); }
  long queries() const { return count_.load(); }

 private:
  const SpeakerRecognizer* model_;
  mutable std::atomic<long> count_{0};
};

struct NesEstimate {
  Vector grad;
  long queries = 0;
};

/// Antithetic NES estimate (1 / (m sigma)) sum_j L(x + sigma u_j) u_j.
NesEstimate nes_gradient(const Vector& x, const std::function<double(const Vector&)>& loss,
                         int m, double sigma, std::uint64_t seed);

struct ThresholdEstimate {
  double theta = 0.0;
  double lo = 0.0;  // highest max-score seen rejected
  double hi = 0.0;  // lowest max-score seen accepted (inf if none)
  long queries = 0;
  bool converged = false;
  std::vector<std::pair<double, double>> bracket_history;
};

struct ThresholdSearchConfig {
  double tolerance = 0.005;
  double step = 0.002;
  /// Decay of the accumulated NES estimate that sets the ascent sign.
  double momentum = 0.9;
  int nes_samples = 50;
  double nes_sigma = 1e-3;
  long max_queries = 5000;
  std::uint64_t seed = 0;
};

/// Raises the probe's best score by NES ascent until it is accepted, then
/// bisects between the last rejected and first accepted points. Throws if
/// the probe is accepted to begin with.
ThresholdEstimate estimate_threshold(const ScoreOracle& oracle, const Waveform& probe,
                                     const ThresholdSearchConfig& cfg);

/// The rejected candidate with the highest best score, i.e. the one
/// closest to the threshold. One query per candidate; nullopt when every
/// candidate is accepted.
std::optional<Waveform> closest_rejected(const ScoreOracle& oracle,
                                         const std::vector<Waveform>& candidates);

struct FakebobOptions {
  /// Threshold to use in the losses; estimated when unset and needed.
  std::optional<double> theta;
  /// Rejected voice for threshold estimation (defaults to the attacked voice).
  std::optional<Waveform> threshold_probe;
  ThresholdSearchConfig threshold_search;
  /// Test hook: replaces the NES estimate (queries are then not counted).
  std::function<LossValueGrad(const Vector&)> gradient_override;
};

AttackOutcome fakebob(const Waveform& x, LossId loss, const AttackSetting& setting,
                      const ScoreOracle& oracle, const AttackConfig& cfg,
                      const FakebobOptions& options = {});

/// Dispatches on cfg.optimizer (NES runs FAKEBOB against a fresh oracle).
AttackOutcome run_attack(const Waveform& x, LossId loss, const AttackSetting& setting,
                         const SpeakerRecognizer& model, const AttackConfig& cfg,
                         const FakebobOptions& options = {});

}  // namespace as2t

#endif  // AS2T_ATTACK_HPP

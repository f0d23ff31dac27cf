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

#include "as2t/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "as2t/rng.hpp"

namespace as2t {

std::string to_string(Optimizer o) {
  switch (o) {
    case Optimizer::FGSM: return "FGSM";
    case Optimizer::PGD: return "PGD";
    case Optimizer::CW2: return "CW2";
    case Optimizer::NES: return "NES";
  }
  return "?";
}

Optimizer optimizer_from_string(const std::string& s) {
  if (s == "FGSM") return Optimizer::FGSM;
  if (s == "PGD") return Optimizer::PGD;
  if (s == "CW2") return Optimizer::CW2;
  if (s == "NES" || s == "FAKEBOB") return Optimizer::NES;
  throw std::invalid_argument("unknown optimizer: " + s);
}

void AttackConfig::validate() const {
  if (iters < 1) throw std::invalid_argument("iters must be >= 1");
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (optimizer == Optimizer::CW2) {
    if (binary_search_steps < 1) throw std::invalid_argument("binary_search_steps must be >= 1");
    if (!(lambda_init >= 0.0)) throw std::invalid_argument("lambda_init must be non-negative");
    return;
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  if (alpha > epsilon) throw std::invalid_argument("alpha must not exceed epsilon");
  if (optimizer == Optimizer::NES && (nes_samples < 2 || nes_samples % 2 != 0))
    throw std::invalid_argument("nes_samples must be even and >= 2");
  if (optimizer == Optimizer::NES && !(nes_sigma > 0.0))
    throw std::invalid_argument("nes_sigma must be positive");
}

Waveform clip_box(const Waveform& x_orig, const Waveform& x_cand, double epsilon) {
  return Waveform(clip_box(x_orig.samples, x_cand.samples, epsilon), x_orig.sample_rate);
}

Vector Adam::direction(const Vector& grad) {
  ++t_;
  m_ = b1_ * m_ + (1.0 - b1_) * grad;
  v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1_, t_);
  const double c2 = 1.0 - std::pow(b2_, t_);
  return ((m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_)).matrix();
}

namespace {

void fill_metrics(AttackOutcome& out, const Vector& x0, const Vector& adv, int fs) {
  out.adversarial = Waveform(adv, fs);
  const Vector d = adv - x0;
  out.perturbation_linf = d.size() ? d.cwiseAbs().maxCoeff() : 0.0;
  out.perturbation_l2 = d.norm();
}

}  // namespace

// ---------------------------------------------------------------------------
// Descent loop

AttackOutcome run_descent(const Waveform& x, const AttackSetting& setting,
                          const AttackConfig& cfg, const DescentObjective& objective) {
  cfg.validate();
  validate(x);
  const Vector& x0 = x.samples;
  Vector cur = x0;
  if (cfg.random_start) {
    Rng rng(split_seed(cfg.seed, 0x5747ull));
    cur = clip_box(x0, x0 + uniform_vector(rng, x0.size(), -cfg.epsilon, cfg.epsilon), cfg.epsilon);
  }
  std::optional<Adam> adam;
  if (cfg.adam) adam.emplace(x0.size());
  const bool early = cfg.early_stop_or_default();

  AttackOutcome out;
  out.setting = setting;
  for (int i = 0; i < cfg.iters; ++i) {
    if (early) {
      ++out.decision_probes;
      if (goal_met(setting, objective.probe(cur).decision)) break;
    }
    const LossValueGrad lg = objective.gradient(cur);
    if (lg.grad.size() != x0.size()) break;  // budget exhausted
    if (lg.grad.isZero(0.0)) break;          // degenerate, no descent direction
    const Vector step = adam ? adam->direction(lg.grad) : Vector(signum(lg.grad));
    cur = clip_box(x0, cur - cfg.alpha * step, cfg.epsilon);
    ++out.iterations_used;
  }
  ++out.decision_probes;
  const Probe final_probe = objective.probe(cur);
  out.final_loss = final_probe.loss;
  out.decision = final_probe.decision;
  out.success = goal_met(setting, out.decision);
  fill_metrics(out, x0, cur, x.sample_rate);
  return out;
}

DescentObjective white_box_objective(LossId loss, const SpeakerRecognizer& model,
                                     const AttackSetting& setting, std::optional<double> theta) {
  if (!theta) theta = model.database().threshold;
  DescentObjective obj;
  obj.gradient = [loss, &model, setting, theta](const Vector& v) {
    auto lg = input_loss_grad(loss, v, model, setting, theta);
    return LossValueGrad{lg.loss, std::move(lg.grad)};
  };
  obj.probe = [loss, &model, setting, theta](const Vector& v) {
    const ScoreVector s = score_embedding(model.embedder().forward(v).embedding, model.database());
    return Probe{eval_loss(loss, s, setting, theta), decide(s, model.database())};
  };
  return obj;
}

AttackOutcome fgsm(const Waveform& x, LossId loss, const AttackSetting& setting,
                   const SpeakerRecognizer& model, const AttackConfig& cfg) {
  AttackConfig one = cfg;
  one.optimizer = Optimizer::FGSM;
  one.iters = 1;
  one.alpha = cfg.epsilon;
  one.random_start = false;
  one.adam = false;
  one.early_stop = false;
  return run_descent(x, setting, one, white_box_objective(loss, model, setting));
}

AttackOutcome pgd(const Waveform& x, LossId loss, const AttackSetting& setting,
                  const SpeakerRecognizer& model, const AttackConfig& cfg) {
  AttackConfig c = cfg;
  c.optimizer = Optimizer::PGD;
  return run_descent(x, setting, c, white_box_objective(loss, model, setting));
}

// ---------------------------------------------------------------------------
// CW2

AttackOutcome cw2(const Waveform& x, LossId loss, const AttackSetting& setting,
                  const SpeakerRecognizer& model, const AttackConfig& cfg) {
  AttackConfig c = cfg;
  c.optimizer = Optimizer::CW2;
  c.validate();
  validate(x);
  if (!cw_eligible(loss, setting.id))
    throw std::invalid_argument("loss " + to_string(loss) + " is not CW-eligible for " +
                                to_string(setting.id));
  const auto& db = model.database();
  const Vector& x0 = x.samples;
  constexpr double kEdge = 1.0 - 1e-6;
  const Vector z0 = x0.cwiseMax(-kEdge).cwiseMin(kEdge).array().atanh().matrix();

  AttackOutcome out;
  out.setting = setting;
  bool found = false;
  double best_l2 = std::numeric_limits<double>::infinity();
  Vector best = z0.array().tanh().matrix();
  double best_loss = std::numeric_limits<double>::infinity();
  Vector last = best;
  double last_loss = 0.0;

  // λ weights the distance term: the search looks for the largest λ that
  // still succeeds, which gives the smallest perturbation.
  double lo = 0.0;
  double hi = 10.0 * c.lambda_init * std::pow(2.0, c.binary_search_steps);
  double lambda = c.lambda_init;
  for (int round = 0; round < c.binary_search_steps; ++round) {
    Vector z = z0;
    Adam adam(z.size());
    bool round_success = false;
    for (int it = 0; it <= c.iters; ++it) {
      const Vector xp = z.array().tanh().matrix();
      const LossWithGrad lg = input_loss_grad(loss, xp, model, setting);
      const Vector delta = xp - x0;
      const double l2 = delta.norm();
      if (lg.loss <= -c.kappa && goal_met(setting, decide(lg.scores, db))) {
        round_success = true;
        if (l2 < best_l2) {
          best_l2 = l2;
          best = xp;
          best_loss = lg.loss;
          found = true;
        }
      }
      last = xp;
      last_loss = lg.loss;
      ++out.iterations_used;
      if (it == c.iters) break;
      Vector grad_x = Vector::Zero(xp.size());
      if (lg.loss + c.kappa > 0.0) grad_x = lg.grad;
      if (l2 > 0.0) grad_x += lambda * delta / l2;
      const Vector grad_z = grad_x.cwiseProduct((1.0 - xp.array().square()).matrix());
      z -= c.alpha * adam.direction(grad_z);
    }
    if (round_success) lo = lambda;
    else hi = lambda;
    lambda = 0.5 * (lo + hi);
  }

  const Vector& adv = found ? best : last;
  const ScoreVector s = score_embedding(model.embedder().forward(adv).embedding, db);
  out.decision = decide(s, db);
  out.success = goal_met(setting, out.decision);
  out.final_loss = found ? best_loss : last_loss;
  fill_metrics(out, x0, adv, x.sample_rate);
  return out;
}

// ---------------------------------------------------------------------------
// Black-box

ScoreOracle::Response ScoreOracle::query(const Vector& x) const {
  ++count_;
  Response r;
  r.scores = score_embedding(model_->embedder().forward(x).embedding, model_->database());
  r.decision = decide(r.scores, model_->database());
  return r;
}

NesEstimate nes_gradient(const Vector& x, const std::function<double(const Vector&)>& loss,
                         int m, double sigma, std::uint64_t seed) {
  if (m < 2 || m % 2 != 0) throw std::invalid_argument("NES needs an even sample count >= 2");
  if (!(sigma > 0.0)) throw std::invalid_argument("NES sigma must be positive");
  Rng rng(seed);
  NesEstimate est;
  est.grad = Vector::Zero(x.size());
  // Antithetic pairs: the mean-loss baseline cancels inside each pair.
  for (int j = 0; j < m / 2; ++j) {
    const Vector u = gaussian_vector(rng, x.size());
    const double plus = loss(x + sigma * u);
    const double minus = loss(x - sigma * u);
    est.grad += (plus - minus) * u;
  }
  est.grad /= double(m) * sigma;
  est.queries = m;
  return est;
}

ThresholdEstimate estimate_threshold(const ScoreOracle& oracle, const Waveform& probe,
                                     const ThresholdSearchConfig& cfg) {
  validate(probe, false);
  if (oracle.task() == TaskKind::CSI) throw std::invalid_argument("CSI has no threshold");
  ThresholdEstimate est;
  est.hi = std::numeric_limits<double>::infinity();

  auto record = [&est](const ScoreOracle::Response& r) {
    const double best = r.scores.maxCoeff();
    bool changed = false;
    if (r.decision.is_imposter()) {
      if (best > est.lo) est.lo = best, changed = true;
    } else if (best < est.hi) {
      est.hi = best, changed = true;
    }
    if (changed) est.bracket_history.emplace_back(est.lo, est.hi);
  };

  const auto first = oracle.query(probe.samples);
  est.queries = 1;
  if (!first.decision.is_imposter())
    throw std::invalid_argument("threshold probe must be rejected initially");
  est.lo = first.scores.maxCoeff();
  est.bracket_history.emplace_back(est.lo, est.hi);

  Vector x = probe.samples;
  Vector x_rej = x;
  std::optional<Vector> x_acc;
  Vector velocity = Vector::Zero(x.size());

  // Ascent on the best score; every sampled query also tightens the bracket.
  for (std::uint64_t it = 0; !x_acc && est.queries + cfg.nes_samples + 1 <= cfg.max_queries; ++it) {
    std::optional<Vector> accepted_sample;
    double accepted_score = std::numeric_limits<double>::infinity();
    auto neg_best = [&](const Vector& v) {
      const auto r = oracle.query(v);
      record(r);
      const double best = r.scores.maxCoeff();
      if (!r.decision.is_imposter() && best < accepted_score) {
        accepted_score = best;
        accepted_sample = v;
      }
      return -best;
    };
    const NesEstimate g = nes_gradient(x, neg_best, cfg.nes_samples, cfg.nes_sigma,
                                       split_seed(cfg.seed, it));
    est.queries += g.queries;
    if (accepted_sample) {
      x_rej = x;
      x_acc = *accepted_sample;
      break;
    }
    velocity = cfg.momentum * velocity + g.grad;
    const Vector next = (x - cfg.step * Vector(signum(velocity))).cwiseMax(-1.0).cwiseMin(1.0);
    const auto r = oracle.query(next);
    ++est.queries;
    record(r);
    if (r.decision.is_imposter()) {
      x = next;
    } else {
      x_rej = x;
      x_acc = next;
    }
  }

  // Bisection on the segment between the rejected and accepted points.
  while (x_acc && est.hi - est.lo >= cfg.tolerance && est.queries < cfg.max_queries) {
    if ((*x_acc - x_rej).cwiseAbs().maxCoeff() < 1e-15) break;
    const Vector mid = 0.5 * (x_rej + *x_acc);
    const auto r = oracle.query(mid);
    ++est.queries;
    record(r);
    if (r.decision.is_imposter()) x_rej = mid;
    else *x_acc = mid;
  }

  est.converged = std::isfinite(est.hi) && est.hi - est.lo < cfg.tolerance;
  est.theta = std::isfinite(est.hi) ? 0.5 * (est.lo + est.hi) : est.lo;
  return est;
}

std::optional<Waveform> closest_rejected(const ScoreOracle& oracle,
                                         const std::vector<Waveform>& candidates) {
  std::optional<Waveform> best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto& w : candidates) {
    const auto r = oracle.query(w.samples);
    if (!r.decision.is_imposter()) continue;
    if (const double s = r.scores.maxCoeff(); s > best_score) {
      best_score = s;
      best = w;
    }
  }
  return best;
}

AttackOutcome fakebob(const Waveform& x, LossId loss, const AttackSetting& setting,
                      const ScoreOracle& oracle, const AttackConfig& cfg,
                      const FakebobOptions& options) {
  AttackConfig c = cfg;
  c.optimizer = Optimizer::NES;
  c.validate();
  if (oracle.task() != setting.task) throw std::invalid_argument("oracle task does not match setting");

  std::optional<double> theta = options.theta;
  long threshold_queries = 0;
  if (uses_threshold(loss) && !theta) {
    ThresholdSearchConfig ts = options.threshold_search;
    ts.seed = split_seed(c.seed, 0x7e7aull);
    const auto est = estimate_threshold(oracle, options.threshold_probe.value_or(x), ts);
    theta = est.theta;
    threshold_queries = est.queries;
  }

  auto loss_of = [loss, setting, theta](const ScoreVector& s) {
    return eval_loss(loss, s, setting, theta);
  };
  long nes_queries = 0;
  std::uint64_t step = 0;
  DescentObjective obj;
  if (options.gradient_override) {
    obj.gradient = options.gradient_override;
  } else {
    obj.gradient = [&](const Vector& v) -> LossValueGrad {
      if (c.max_queries > 0 && threshold_queries + nes_queries + c.nes_samples > c.max_queries)
        return {};
      auto query_loss = [&](const Vector& p) { return loss_of(oracle.query(p).scores); };
      NesEstimate est = nes_gradient(v, query_loss, c.nes_samples, c.nes_sigma,
                                     split_seed(c.seed, 0x4e45ull, step++));
      nes_queries += est.queries;
      return {0.0, std::move(est.grad)};
    };
  }
  obj.probe = [&](const Vector& v) {
    const auto r = oracle.query(v);
    return Probe{loss_of(r.scores), r.decision};
  };

  AttackOutcome out = run_descent(x, setting, c, obj);
  out.queries_used = nes_queries + threshold_queries;
  out.threshold_estimate = theta;
  return out;
}

AttackOutcome run_attack(const Waveform& x, LossId loss, const AttackSetting& setting,
                         const SpeakerRecognizer& model, const AttackConfig& cfg,
                         const FakebobOptions& options) {
  switch (cfg.optimizer) {
    case Optimizer::FGSM: return fgsm(x, loss, setting, model, cfg);
    case Optimizer::PGD: return pgd(x, loss, setting, model, cfg);
    case Optimizer::CW2: return cw2(x, loss, setting, model, cfg);
    case Optimizer::NES: {
      const ScoreOracle oracle(model);
      return fakebob(x, loss, setting, oracle, cfg, options);
    }
  }
  throw std::invalid_argument("unknown optimizer");
}

}  // namespace as2t

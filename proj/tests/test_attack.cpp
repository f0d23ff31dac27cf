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

#include <cmath>
#include <limits>
#include <vector>

#include <doctest.h>

#include "as2t/attack.hpp"
#include "as2t/rng.hpp"
#include "oracles.hpp"

using namespace as2t;

namespace {

const oracle::Toy& toy() {
  static const oracle::Toy t(4, 2, 2, 2);
  return t;
}

Vector vec(std::initializer_list<double> v) {
  Vector s(Index(v.size()));
  Index i = 0;
  for (double a : v) s[i++] = a;
  return s;
}

// Objective with a fixed gradient and a decision that never meets the goal.
DescentObjective constant_gradient(const Vector& g) {
  DescentObjective o;
  o.gradient = [g](const Vector&) { return LossValueGrad{0.0, g}; };
  o.probe = [](const Vector&) { return Probe{0.0, Decision::speaker(0)}; };
  return o;
}

Waveform tone(double hz) {
  Vector v(8000);
  for (Index i = 0; i < v.size(); ++i) v[i] = 0.3 * std::sin(2.0 * M_PI * hz * double(i) / 16000.0);
  return Waveform(v);
}

// Rejected-probe candidates: tones every 100 Hz.
std::vector<Waveform> tone_grid() {
  std::vector<Waveform> out;
  for (int hz = 100; hz < 8000; hz += 100) out.push_back(tone(hz));
  return out;
}

}  // namespace

TEST_CASE("clip_box on the worked cases") {
  CHECK(clip_box(vec({0.9995}), vec({1.5}), 0.002)[0] == 1.0);
  CHECK(clip_box(vec({0.9995}), vec({0.9}), 0.002)[0] == doctest::Approx(0.9975));
  const Vector x = vec({0.1, -0.3, 0.99});
  CHECK(clip_box(x, x, 0.002) == x);
  CHECK_THROWS(clip_box(vec({0.0}), vec({0.0, 1.0}), 0.1));
}

TEST_CASE("clip_box is idempotent and lands in the box") {
  Rng rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0), e(0.0, 0.1);
  for (int i = 0; i < 2000; ++i) {
    const Vector x = uniform_vector(rng, 4, -1.0, 1.0);
    const Vector c = uniform_vector(rng, 4, -1.5, 1.5);
    const double eps = e(rng);
    const Vector y = clip_box(x, c, eps);
    CHECK(clip_box(x, y, eps) == y);
    for (Index k = 0; k < 4; ++k) {
      CHECK(y[k] >= std::max(-1.0, x[k] - eps));
      CHECK(y[k] <= std::min(1.0, x[k] + eps));
    }
  }
}

TEST_CASE("signum maps zero to zero") {
  CHECK(Vector(signum(vec({-2.0, 0.0, 3.0}))) == vec({-1.0, 0.0, 1.0}));
}

TEST_CASE("one signed step: zero gradient stays, signs step against the gradient") {
  AttackConfig cfg;
  cfg.optimizer = Optimizer::FGSM;
  cfg.iters = 1;
  cfg.epsilon = 0.002;
  cfg.alpha = 0.002;
  const Waveform x(Vector::Zero(2));
  const AttackSetting st = AttackSetting::make(SettingId::C8, 0);
  CHECK(run_descent(x, st, cfg, constant_gradient(Vector::Zero(2))).adversarial.samples == x.samples);
  const AttackOutcome o = run_descent(x, st, cfg, constant_gradient(vec({1.0, -1.0})));
  CHECK(o.adversarial.samples == vec({-0.002, 0.002}));
  CHECK(o.perturbation_linf == 0.002);
}

TEST_CASE("fgsm and pgd on the toy recognizer") {
  const SpeakerRecognizer model = toy().model(TaskKind::CSI);
  const Waveform& x = toy().test_voice(1);
  const AttackSetting st = AttackSetting::make(SettingId::C8, 1);
  AttackConfig cfg;
  cfg.epsilon = 0.002;
  cfg.alpha = 0.0007;
  cfg.iters = 1;

  // One PGD step with alpha equals the sign step then clip.
  const AttackOutcome p1 = pgd(x, LossId::Ms, st, model, cfg);
  const Vector g = input_loss_grad(LossId::Ms, x.samples, model, st).grad;
  const Vector want = clip_box(x.samples, Vector(x.samples - cfg.alpha * Vector(signum(g))), cfg.epsilon);
  CHECK(p1.adversarial.samples == want);

  AttackConfig f = cfg;
  f.alpha = cfg.epsilon;
  CHECK(pgd(x, LossId::Ms, st, model, f).adversarial.samples == fgsm(x, LossId::Ms, st, model, cfg).adversarial.samples);

  cfg.iters = 5;
  const AttackOutcome p5 = pgd(x, LossId::Ms, st, model, cfg);
  CHECK(p5.iterations_used == 5);
  CHECK(p5.final_loss < p1.final_loss);
  CHECK(p5.perturbation_linf <= cfg.epsilon + 1e-15);
  CHECK(p5.decision == model.decide(p5.adversarial));
  CHECK(p5.success == goal_met(st, p5.decision));
}

TEST_CASE("random start is seeded and stays in budget") {
  const SpeakerRecognizer model = toy().model(TaskKind::CSI);
  const Waveform& x = toy().test_voice(2);
  const AttackSetting st = AttackSetting::make(SettingId::C8, 2);
  AttackConfig cfg;
  cfg.iters = 2;
  cfg.random_start = true;
  cfg.seed = 5;
  const AttackOutcome a = pgd(x, LossId::Ms, st, model, cfg);
  const AttackOutcome b = pgd(x, LossId::Ms, st, model, cfg);
  CHECK(a.adversarial.samples == b.adversarial.samples);
  cfg.seed = 6;
  CHECK(pgd(x, LossId::Ms, st, model, cfg).adversarial.samples != a.adversarial.samples);
  CHECK(a.perturbation_linf <= cfg.epsilon + 1e-15);
}

TEST_CASE("cw2 change of variables and trivial success") {
  CHECK(std::abs(std::tanh(std::atanh(0.5)) - 0.5) < 1e-12);

  const SpeakerRecognizer model = toy().model(TaskKind::CSI);
  const Waveform& x = toy().test_voice(0);
  AttackConfig cfg;
  cfg.iters = 3;
  cfg.binary_search_steps = 2;
  cfg.alpha = 1e-3;
  // C6 toward the speaker the voice is already recognized as is not allowed,
  // so attack C8 with the source set to a speaker the voice is not.
  const Decision d = model.decide(x);
  const Index other = (d.index() + 1) % model.database().size();
  const AttackSetting st = AttackSetting::make(SettingId::C8, other);
  const AttackOutcome o = cw2(x, LossId::Ms, st, model, cfg);
  CHECK(o.success);
  CHECK(o.perturbation_l2 < 1e-5);
  CHECK_THROWS(cw2(x, LossId::CEs, st, model, cfg));
}

TEST_CASE("cw2 finds a targeted example with a small perturbation") {
  const SpeakerRecognizer model = toy().model(TaskKind::CSI);
  const Waveform& x = toy().test_voice(0);
  const AttackSetting st = AttackSetting::make(SettingId::C6, 0, 1);
  AttackConfig cfg;
  cfg.iters = 30;
  cfg.binary_search_steps = 3;
  cfg.alpha = 1e-2;
  cfg.lambda_init = 0.1;
  const AttackOutcome o = cw2(x, LossId::M, st, model, cfg);
  CHECK(o.success);
  CHECK(o.decision == Decision::speaker(1));
  CHECK(o.final_loss <= 0.0);
}

TEST_CASE("NES: constant loss cancels exactly, quadratic aligns with the gradient") {
  const Vector x = vec({1.0, 0.0, 0.0, 0.0, 0.0});
  const NesEstimate c = nes_gradient(x, [](const Vector&) { return 3.0; }, 10, 1e-3, 1);
  CHECK(c.grad.isZero(0.0));
  CHECK(c.queries == 10);

  const NesEstimate q = nes_gradient(x, [](const Vector& v) { return v.squaredNorm(); }, 2000, 1e-3, 2);
  CHECK(oracle::cosine(q.grad, 2.0 * x) > 0.9);
  CHECK_THROWS(nes_gradient(x, [](const Vector&) { return 0.0; }, 3, 1e-3, 1));
  CHECK(nes_gradient(x, [](const Vector& v) { return v.sum(); }, 8, 1e-3, 9).grad ==
        nes_gradient(x, [](const Vector& v) { return v.sum(); }, 8, 1e-3, 9).grad);
}

TEST_CASE("fakebob with analytic gradients reproduces pgd") {
  const SpeakerRecognizer model = toy().model(TaskKind::CSI);
  const ScoreOracle oracle(model);
  const Waveform& x = toy().test_voice(3);
  const AttackSetting st = AttackSetting::make(SettingId::C8, 3);
  AttackConfig cfg;
  cfg.iters = 4;
  cfg.early_stop = false;
  FakebobOptions opt;
  const DescentObjective wb = white_box_objective(LossId::Ms, model, st);
  opt.gradient_override = wb.gradient;
  for (int iters = 1; iters <= 4; ++iters) {
    cfg.iters = iters;
    const AttackOutcome a = fakebob(x, LossId::Ms, st, oracle, cfg, opt);
    const AttackOutcome b = pgd(x, LossId::Ms, st, model, cfg);
    CHECK(a.adversarial.samples == b.adversarial.samples);
    CHECK(a.final_loss == b.final_loss);
  }
}

TEST_CASE("fakebob query accounting") {
  const SpeakerRecognizer model = toy().model(TaskKind::CSI);
  const Waveform& x = toy().test_voice(0);
  const AttackSetting st = AttackSetting::make(SettingId::C8, 0);
  AttackConfig cfg;
  cfg.optimizer = Optimizer::NES;
  cfg.iters = 2;
  cfg.nes_samples = 6;
  const ScoreOracle oracle(model);
  const AttackOutcome o = fakebob(x, LossId::Ms, st, oracle, cfg);
  CHECK(o.queries_used == long(o.iterations_used) * cfg.nes_samples);
  CHECK(oracle.queries() == o.queries_used + o.decision_probes);

  // Query budget smaller than one estimate: nothing moves.
  cfg.max_queries = 5;
  const ScoreOracle oracle2(model);
  const AttackOutcome none = fakebob(x, LossId::Ms, st, oracle2, cfg);
  CHECK(none.iterations_used == 0);
  CHECK(none.adversarial.samples == x.samples);
}

TEST_CASE("fakebob on OSI estimates the threshold and counts its queries") {
  SpeakerRecognizer model = toy().model(TaskKind::OSI);
  model.database().threshold = 0.5;
  const ScoreOracle oracle(model);
  const Waveform& x = toy().imposter_voice(0);
  const AttackSetting st = AttackSetting::make(SettingId::C5);
  AttackConfig cfg;
  cfg.optimizer = Optimizer::NES;
  cfg.iters = 1;
  cfg.nes_samples = 4;
  FakebobOptions opt;
  opt.threshold_probe = closest_rejected(ScoreOracle(model), tone_grid());
  const AttackOutcome o = fakebob(x, LossId::L3neg, st, oracle, cfg, opt);
  REQUIRE(o.threshold_estimate.has_value());
  CHECK(std::abs(*o.threshold_estimate - 0.5) < 0.01);
  CHECK(o.queries_used > long(o.iterations_used) * cfg.nes_samples);
  CHECK(oracle.queries() == o.queries_used + o.decision_probes);
}

TEST_CASE("threshold estimation recovers configured thresholds") {
  for (TaskKind task : {TaskKind::OSI, TaskKind::SV}) {
    for (double theta : {0.25, 0.5}) {
      SpeakerRecognizer model = toy().model(task);
      model.database().threshold = theta;
      const ScoreOracle oracle(model);
      const auto probe = closest_rejected(oracle, tone_grid());
      REQUIRE(probe.has_value());
      const long before = oracle.queries();
      CHECK(before == 79);
      ThresholdSearchConfig ts;
      ts.tolerance = 0.01;
      ts.seed = 3;
      const ThresholdEstimate est = estimate_threshold(oracle, *probe, ts);
      CHECK(est.converged);
      CHECK(std::abs(est.theta - theta) < 0.01);
      CHECK(est.queries == oracle.queries() - before);
      CHECK(oracle.queries() <= 5000);
      CHECK(est.lo < theta);
      CHECK(est.hi >= theta);
      for (std::size_t i = 1; i < est.bracket_history.size(); ++i)
        CHECK(est.bracket_history[i].second - est.bracket_history[i].first <=
              est.bracket_history[i - 1].second - est.bracket_history[i - 1].first);
    }
  }
}

TEST_CASE("threshold estimation rejects an accepted probe and CSI oracles") {
  const SpeakerRecognizer osi = toy().model(TaskKind::OSI);
  const ScoreOracle o(osi);
  CHECK_THROWS(estimate_threshold(o, toy().test_voice(0), {}));
  const SpeakerRecognizer csi = toy().model(TaskKind::CSI);
  CHECK_THROWS(estimate_threshold(ScoreOracle(csi), toy().imposter_voice(0), {}));
}

TEST_CASE("attack config validation and names") {
  AttackConfig c;
  c.epsilon = -1;
  CHECK_THROWS(c.validate());
  CHECK(optimizer_from_string("CW2") == Optimizer::CW2);
  CHECK(to_string(Optimizer::NES) == "NES");
  CHECK(AttackConfig{}.early_stop_or_default() == false);
  AttackConfig n;
  n.optimizer = Optimizer::NES;
  CHECK(n.early_stop_or_default());
}

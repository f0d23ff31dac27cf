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
#include <vector>

#include <doctest.h>

#include "as2t/losses.hpp"
#include "as2t/rng.hpp"
#include "oracles.hpp"

using namespace as2t;

namespace {

ScoreVector sv(std::initializer_list<double> v) {
  ScoreVector s(Index(v.size()));
  Index i = 0;
  for (double a : v) s[i++] = a;
  return s;
}

}  // namespace

TEST_CASE("settings table") {
  CHECK(task_of(SettingId::C1) == TaskKind::OSI);
  CHECK(task_of(SettingId::C7) == TaskKind::CSI);
  CHECK(task_of(SettingId::C10) == TaskKind::SV);
  CHECK(setting_from_string("C4") == SettingId::C4);
  CHECK(to_string(SettingId::C10) == "C10");
  CHECK_THROWS(setting_from_string("C11"));

  CHECK_THROWS(AttackSetting::make(SettingId::C6, 1, 1));
  CHECK_THROWS(AttackSetting::make(SettingId::C7, 0, 1));
  CHECK_THROWS(AttackSetting::make(SettingId::C8, 0, 1));
  const AttackSetting c10 = AttackSetting::make(SettingId::C10);
  CHECK(c10.source == -1);
  CHECK(c10.target == 0);
  const AttackSetting c9 = AttackSetting::make(SettingId::C9);
  CHECK(c9.source == 0);
  CHECK(c9.targeted());
  CHECK_FALSE(AttackSetting::make(SettingId::C5).targeted());
}

TEST_CASE("losses available per setting") {
  using L = LossId;
  CHECK(losses_for_setting(SettingId::C5) == std::vector<LossChoice>{{L::L3neg, true}});
  CHECK(losses_for_setting(SettingId::C6) ==
        std::vector<LossChoice>{{L::CE, false}, {L::M, true}, {L::L1, false}});
  CHECK(losses_for_setting(SettingId::C9) == std::vector<LossChoice>{{L::BCE, false}, {L::L3B, true}});
  CHECK(cw_eligible(L::L2, SettingId::C1));
  CHECK_FALSE(cw_eligible(L::CE, SettingId::C1));
  CHECK_FALSE(loss_applicable(L::BCE, SettingId::C8));
  CHECK(canonical_name(SettingId::C8, L::Ms) == "C8:Ms");
  CHECK(parse_canonical_name("C10:L3Bneg") == std::pair{SettingId::C10, L::L3Bneg});
  CHECK_THROWS(parse_canonical_name("C8:BCE"));
  for (int i = 0; i < 15; ++i) {
    const auto id = static_cast<LossId>(i);
    CHECK(loss_from_string(to_string(id)) == id);
  }
}

TEST_CASE("loss values on the worked cases") {
  const AttackSetting c1 = AttackSetting::make(SettingId::C1, 1, 0);
  CHECK(eval_loss(LossId::L2, sv({0.2, 0.5, 0.3}), c1, 0.4) == doctest::Approx(0.3));

  const AttackSetting c3 = AttackSetting::make(SettingId::C3, 0);
  SpeakerDatabase db;
  db.task = TaskKind::OSI;
  db.enrollments = Matrix::Identity(2, 2);
  db.speaker_ids = {"a", "b"};
  db.threshold = 0.5;
  CHECK(eval_loss(LossId::L3, sv({0.1, 0.2}), c3, 0.5) == doctest::Approx(-0.3));
  CHECK(decide(sv({0.1, 0.2}), db).is_imposter());

  const AttackSetting c6 = AttackSetting::make(SettingId::C6, 1, 0);
  CHECK(eval_loss(LossId::CE, sv({0.4, 0.4}), c6, std::nullopt) == doctest::Approx(std::log(2.0)));
  const AttackSetting c6b = AttackSetting::make(SettingId::C6, 0, 1);
  CHECK(eval_loss(LossId::M, sv({0.9, 0.1}), c6b, std::nullopt) == doctest::Approx(0.8));
}

TEST_CASE("score gradients on the worked cases") {
  const AttackSetting c6 = AttackSetting::make(SettingId::C6, 0, 1);
  const Vector g = loss_grad_scores(LossId::L1, sv({0.1, 0.7, 0.3}), c6, std::nullopt);
  CHECK(g == sv({0, -1, 0}));
  const AttackSetting c6a = AttackSetting::make(SettingId::C6, 1, 0);
  const Vector h = loss_grad_scores(LossId::CE, sv({0.3, 0.3}), c6a, std::nullopt);
  CHECK(h[0] == doctest::Approx(-0.5));
  CHECK(h[1] == doctest::Approx(0.5));
  // The threshold winning max{theta, .} contributes nothing.
  const AttackSetting c1 = AttackSetting::make(SettingId::C1, 1, 0);
  CHECK(loss_grad_scores(LossId::L2, sv({0.2, 0.3, 0.1}), c1, 0.6) == sv({-1, 0, 0}));
}

TEST_CASE("score gradients of every loss match central differences away from kinks") {
  Rng rng(31);
  struct Case {
    LossId id;
    SettingId setting;
  };
  const std::vector<Case> cases = {
      {LossId::CE, SettingId::C1},   {LossId::M, SettingId::C1},    {LossId::L1, SettingId::C2},
      {LossId::L2, SettingId::C1},   {LossId::CEs, SettingId::C3},  {LossId::L1s, SettingId::C4},
      {LossId::L3, SettingId::C3},   {LossId::Ms, SettingId::C8},   {LossId::L2s, SettingId::C4},
      {LossId::L4s, SettingId::C8},  {LossId::L3neg, SettingId::C5}, {LossId::BCE, SettingId::C9},
      {LossId::L3B, SettingId::C9},  {LossId::BCEp, SettingId::C10}, {LossId::L3Bneg, SettingId::C10}};
  for (const auto& c : cases) {
    for (int trial = 0; trial < 40; ++trial) {
      const TaskKind task = task_of(c.setting);
      const Index n = task == TaskKind::SV ? 1 : 2 + trial % 5;
      const Vector s = uniform_vector(rng, n, -1.0, 1.0);
      const double theta = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
      AttackSetting st;
      switch (c.setting) {
        case SettingId::C1: case SettingId::C6: st = AttackSetting::make(c.setting, 0, n - 1); break;
        case SettingId::C2: case SettingId::C7: st = AttackSetting::make(c.setting, -1, n - 1); break;
        case SettingId::C3: case SettingId::C4: case SettingId::C8: st = AttackSetting::make(c.setting, 0); break;
        default: st = AttackSetting::make(c.setting); break;
      }
      auto f = [&](const Vector& v) { return eval_loss(c.id, v, st, theta); };
      const Vector g = loss_grad_scores(c.id, s, st, theta);
      const double h = 1e-6;
      for (Index i = 0; i < n; ++i) {
        const double fd = oracle::central_difference(f, s, i, h);
        // Non-smooth losses are piecewise linear: skip points where the
        // difference straddles a kink.
        const double fd2 = oracle::central_difference(f, s, i, h / 4);
        if (std::abs(fd - fd2) > 1e-6) continue;
        CHECK(std::abs(g[i] - fd) < 1e-6);
      }
    }
  }
}

TEST_CASE("input_loss_grad vanishes when the loss is flat in the scores") {
  oracle::Toy toy(3, 1, 1, 1);
  const SpeakerRecognizer model = toy.model(TaskKind::CSI);
  const Waveform& x = toy.test_voice(0);
  // Two identical enrollments: Ms = s_0 - s_1 is identically zero.
  SpeakerDatabase twins;
  twins.task = TaskKind::CSI;
  twins.speaker_ids = {"a", "b"};
  twins.enrollments.resize(2, model.embedder().dim());
  twins.enrollments.row(0) = model.database().enrollments.row(0);
  twins.enrollments.row(1) = model.database().enrollments.row(0);
  const AttackSetting c8 = AttackSetting::make(SettingId::C8, 0);
  CHECK(input_loss_grad(LossId::Ms, x, twins, model.embedder(), c8).isZero(0.0));
  CHECK(input_loss_grad(LossId::L1s, x, twins, model.embedder(), c8).norm() > 0.0);
}

TEST_CASE("input_loss_grad matches finite differences of loss after score") {
  oracle::Toy toy(3, 1, 1, 1);
  const SpeakerRecognizer model = toy.model(TaskKind::CSI);
  const AttackSetting st = AttackSetting::make(SettingId::C6, 0, 2);
  const Waveform& x = toy.test_voice(0);
  const auto lg = input_loss_grad(LossId::CE, x.samples, model, st);
  auto f = [&](const Vector& v) { return eval_loss(LossId::CE, model.scores(Waveform(v)), st, std::nullopt); };
  Rng rng(9);
  std::uniform_int_distribution<Index> pick(0, x.size() - 1);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const Index i = pick(rng);
    worst = std::max(worst, oracle::relative_error(lg.grad[i], oracle::central_difference(f, x.samples, i, 1e-4), 1e-6));
  }
  CHECK(worst < 1e-2);
  CHECK(lg.loss == doctest::Approx(f(x.samples)));
}

TEST_CASE("loss sign agrees with the decision for threshold losses") {
  Rng rng(77);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const Index n = 2 + trial % 5;
    const Vector s = uniform_vector(rng, n, -1.0, 1.0);
    const double theta = u(rng);
    SpeakerDatabase db;
    db.task = TaskKind::OSI;
    db.enrollments = Matrix::Identity(n, n);
    for (Index i = 0; i < n; ++i) db.speaker_ids.push_back(speaker_id(int(i)));
    db.threshold = theta;
    const Decision d = decide(s, db);
    const Index t = trial % n, src = (t + 1) % n;
    CHECK((eval_loss(LossId::L2, s, AttackSetting::make(SettingId::C1, src, t), theta) <= 0) == d.is_speaker(t));
    CHECK((eval_loss(LossId::L3, s, AttackSetting::make(SettingId::C3, src), theta) <= 0) == d.is_imposter());
    CHECK((eval_loss(LossId::L2s, s, AttackSetting::make(SettingId::C4, src), theta) <= 0) ==
          (!d.is_imposter() && !d.is_speaker(src)));
    CHECK((eval_loss(LossId::L3neg, s, AttackSetting::make(SettingId::C5), theta) <= 0) == !d.is_imposter());
  }
}

TEST_CASE("goal_met per setting") {
  CHECK(goal_met(AttackSetting::make(SettingId::C4, 1), Decision::imposter()));
  CHECK(goal_met(AttackSetting::make(SettingId::C4, 1), Decision::speaker(0)));
  CHECK_FALSE(goal_met(AttackSetting::make(SettingId::C4, 1), Decision::speaker(1)));
  CHECK(goal_met(AttackSetting::make(SettingId::C5), Decision::speaker(3)));
  CHECK(goal_met(AttackSetting::make(SettingId::C9), Decision::imposter()));
  CHECK(goal_met(AttackSetting::make(SettingId::C10), Decision::speaker(0)));
  CHECK_FALSE(goal_met(AttackSetting::make(SettingId::C7, -1, 2), Decision::speaker(1)));
}

TEST_CASE("threshold losses require a threshold") {
  CHECK_THROWS(eval_loss(LossId::L3, sv({0.1, 0.2}), AttackSetting::make(SettingId::C3, 0), std::nullopt));
  CHECK_THROWS(eval_loss(LossId::BCE, sv({0.1, 0.2}), AttackSetting::make(SettingId::C9), std::nullopt));
}

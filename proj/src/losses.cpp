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

#include "as2t/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace as2t {

namespace {

constexpr std::array<const char*, 15> kLossNames = {
    "CE", "M", "L1", "L2", "CEs", "L1s", "L3", "Ms", "L2s", "L4s", "L3neg", "BCE", "L3B", "BCEp", "L3Bneg"};

struct SettingRow {
  TaskKind task;
  bool source_enrolled;
  TargetKind target;
};

SettingRow row_of(SettingId id) {
  switch (id) {
    case SettingId::C1: return {TaskKind::OSI, true, TargetKind::Enrolled};
    case SettingId::C2: return {TaskKind::OSI, false, TargetKind::Enrolled};
    case SettingId::C3: return {TaskKind::OSI, true, TargetKind::Imposter};
    case SettingId::C4: return {TaskKind::OSI, true, TargetKind::Untargeted};
    case SettingId::C5: return {TaskKind::OSI, false, TargetKind::Untargeted};
    case SettingId::C6: return {TaskKind::CSI, true, TargetKind::Enrolled};
    case SettingId::C7: return {TaskKind::CSI, false, TargetKind::Enrolled};
    case SettingId::C8: return {TaskKind::CSI, true, TargetKind::Untargeted};
    case SettingId::C9: return {TaskKind::SV, true, TargetKind::Imposter};
    case SettingId::C10: return {TaskKind::SV, false, TargetKind::Enrolled};
  }
  throw std::invalid_argument("invalid setting id");
}

double log_sum_exp(const Vector& s) {
  const double m = s.maxCoeff();
  return m + std::log((s.array() - m).exp().sum());
}

Vector softmax(const Vector& s) {
  const Vector e = (s.array() - s.maxCoeff()).exp().matrix();
  return e / e.sum();
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Vector unit(Index n, Index i) {
  Vector v = Vector::Zero(n);
  v[i] = 1.0;
  return v;
}

void check_call(LossId id, const ScoreVector& s, const AttackSetting& setting,
                std::optional<double> theta) {
  if (!loss_applicable(id, setting.id))
    throw std::invalid_argument("loss " + to_string(id) + " does not apply to setting " +
                                to_string(setting.id));
  if (uses_threshold(id) && !theta)
    throw std::invalid_argument("loss " + to_string(id) + " needs a threshold");
  if (s.size() == 0) throw std::invalid_argument("empty score vector");
  const Index n = s.size();
  if (setting.task == TaskKind::SV && n != 1)
    throw std::invalid_argument("SV score vector must have one entry");
  if (setting.source_enrolled && (setting.source < 0 || setting.source >= n))
    throw std::invalid_argument("source index out of range");
  if (setting.target_kind == TargetKind::Enrolled && (setting.target < 0 || setting.target >= n))
    throw std::invalid_argument("target index out of range");
}

}  // namespace

// ---------------------------------------------------------------------------
// Names

std::string to_string(SettingId id) { return "C" + std::to_string(static_cast<int>(id)); }

SettingId setting_from_string(const std::string& s) {
  for (int i = 1; i <= 10; ++i)
    if (s == "C" + std::to_string(i)) return static_cast<SettingId>(i);
  throw std::invalid_argument("unknown setting: " + s);
}

TaskKind task_of(SettingId id) { return row_of(id).task; }

std::string to_string(LossId id) { return kLossNames.at(static_cast<std::size_t>(id)); }

LossId loss_from_string(const std::string& s) {
  for (std::size_t i = 0; i < kLossNames.size(); ++i)
    if (s == kLossNames[i]) return static_cast<LossId>(i);
  throw std::invalid_argument("unknown loss: " + s);
}

std::string canonical_name(SettingId setting, LossId loss) {
  return to_string(setting) + ":" + to_string(loss);
}

std::pair<SettingId, LossId> parse_canonical_name(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("expected SETTING:LOSS, got " + s);
  const SettingId setting = setting_from_string(s.substr(0, colon));
  const LossId loss = loss_from_string(s.substr(colon + 1));
  if (!loss_applicable(loss, setting))
    throw std::invalid_argument(s + ": loss does not apply to setting");
  return {setting, loss};
}

AttackSetting AttackSetting::make(SettingId id, Index source, Index target) {
  const SettingRow row = row_of(id);
  AttackSetting s;
  s.id = id;
  s.task = row.task;
  s.source_enrolled = row.source_enrolled;
  s.target_kind = row.target;
  if (row.task == TaskKind::SV) {
    s.source = row.source_enrolled ? 0 : -1;
    s.target = row.target == TargetKind::Enrolled ? 0 : -1;
    return s;
  }
  if (row.source_enrolled) {
    if (source < 0) throw std::invalid_argument(to_string(id) + " requires an enrolled source");
    s.source = source;
  } else if (source >= 0) {
    throw std::invalid_argument(to_string(id) + " has an unenrolled source");
  }
  if (row.target == TargetKind::Enrolled) {
    if (target < 0) throw std::invalid_argument(to_string(id) + " requires an enrolled target");
    if (row.source_enrolled && target == source)
      throw std::invalid_argument(to_string(id) + " requires target != source");
    s.target = target;
  } else if (target >= 0) {
    throw std::invalid_argument(to_string(id) + " takes no enrolled target");
  }
  return s;
}

bool uses_threshold(LossId id) {
  switch (id) {
    case LossId::L2:
    case LossId::L3:
    case LossId::L2s:
    case LossId::L3neg:
    case LossId::L3B:
    case LossId::L3Bneg:
      return true;
    default:
      return false;
  }
}

// ---------------------------------------------------------------------------
// Registry

std::vector<LossChoice> losses_for_setting(SettingId setting) {
  using L = LossId;
  switch (setting) {
    case SettingId::C1:
    case SettingId::C2:
      return {{L::CE, false}, {L::M, false}, {L::L1, false}, {L::L2, true}};
    case SettingId::C3:
      return {{L::CEs, false}, {L::L1s, false}, {L::L3, true}};
    case SettingId::C4:
      // Misidentification losses, then the rejection variant shared with C3.
      return {{L::CEs, false}, {L::L1s, false}, {L::Ms, false}, {L::L2s, true}, {L::L4s, false}, {L::L3, true}};
    case SettingId::C5:
      return {{L::L3neg, true}};
    case SettingId::C6:
    case SettingId::C7:
      return {{L::CE, false}, {L::M, true}, {L::L1, false}};
    case SettingId::C8:
      return {{L::CEs, false}, {L::Ms, true}, {L::L1s, false}, {L::L4s, false}};
    case SettingId::C9:
      return {{L::BCE, false}, {L::L3B, true}};
    case SettingId::C10:
      return {{L::BCEp, false}, {L::L3Bneg, true}};
  }
  throw std::invalid_argument("invalid setting id");
}

bool loss_applicable(LossId id, SettingId setting) {
  const auto list = losses_for_setting(setting);
  return std::any_of(list.begin(), list.end(), [id](const LossChoice& c) { return c.id == id; });
}

bool cw_eligible(LossId id, SettingId setting) {
  for (const auto& c : losses_for_setting(setting))
    if (c.id == id) return c.cw_eligible;
  return false;
}

bool goal_met(const AttackSetting& setting, const Decision& d) {
  switch (setting.id) {
    case SettingId::C1:
    case SettingId::C2:
    case SettingId::C6:
    case SettingId::C7:
    case SettingId::C10:
      return d.is_speaker(setting.target);
    case SettingId::C3:
    case SettingId::C9:
      return d.is_imposter();
    case SettingId::C4:
    case SettingId::C8:
      return !d.is_speaker(setting.source);
    case SettingId::C5:
      return !d.is_imposter();
  }
  return false;
}

// ---------------------------------------------------------------------------
// Values and score gradients

double eval_loss(LossId id, const ScoreVector& s, const AttackSetting& setting,
                 std::optional<double> theta) {
  check_call(id, s, setting, theta);
  const Index src = setting.source, tgt = setting.target;
  switch (id) {
    case LossId::CE: return log_sum_exp(s) - s[tgt];
    case LossId::L1: return -s[tgt];
    case LossId::M: return s[argmax_excluding(s, tgt)] - s[tgt];
    case LossId::L2: return std::max(*theta, s[argmax_excluding(s, tgt)]) - s[tgt];
    case LossId::CEs: return s[src] - log_sum_exp(s);
    case LossId::L1s: return s[src];
    case LossId::L3: return s.maxCoeff() - *theta;
    case LossId::Ms: return s[src] - s[argmax_excluding(s, src)];
    case LossId::L2s: return std::max(*theta, s[src]) - s[argmax_excluding(s, src)];
    case LossId::L4s: return -s[argmax_excluding(s, src)];
    case LossId::L3neg: return *theta - s.maxCoeff();
    case LossId::BCE: return softplus(s[0]);    // -log(1 - sigmoid(s))
    case LossId::L3B: return s[0] - *theta;
    case LossId::BCEp: return softplus(-s[0]);  // -log sigmoid(s)
    case LossId::L3Bneg: return *theta - s[0];
  }
  throw std::invalid_argument("invalid loss id");
}

Vector loss_grad_scores(LossId id, const ScoreVector& s, const AttackSetting& setting,
                        std::optional<double> theta) {
  check_call(id, s, setting, theta);
  const Index n = s.size();
  const Index src = setting.source, tgt = setting.target;
  switch (id) {
    case LossId::CE: return softmax(s) - unit(n, tgt);
    case LossId::L1: return -unit(n, tgt);
    case LossId::M: return unit(n, argmax_excluding(s, tgt)) - unit(n, tgt);
    case LossId::L2: {
      const Index j = argmax_excluding(s, tgt);
      Vector g = -unit(n, tgt);
      if (s[j] > *theta) g += unit(n, j);
      return g;
    }
    case LossId::CEs: return unit(n, src) - softmax(s);
    case LossId::L1s: return unit(n, src);
    case LossId::L3: return unit(n, argmax_excluding(s));
    case LossId::Ms: return unit(n, src) - unit(n, argmax_excluding(s, src));
    case LossId::L2s: {
      Vector g = -unit(n, argmax_excluding(s, src));
      if (s[src] > *theta) g += unit(n, src);
      return g;
    }
    case LossId::L4s: return -unit(n, argmax_excluding(s, src));
    case LossId::L3neg: return -unit(n, argmax_excluding(s));
    case LossId::BCE: return Vector::Constant(1, sigmoid(s[0]));
    case LossId::L3B: return Vector::Constant(1, 1.0);
    case LossId::BCEp: return Vector::Constant(1, sigmoid(s[0]) - 1.0);
    case LossId::L3Bneg: return Vector::Constant(1, -1.0);
  }
  throw std::invalid_argument("invalid loss id");
}

// ---------------------------------------------------------------------------
// Input-space gradients

LossWithGrad input_loss_grad(LossId id, const Vector& x, const SpeakerRecognizer& model,
                             const AttackSetting& setting, std::optional<double> theta) {
  const auto& db = model.database();
  if (!theta) theta = db.threshold;
  const auto trace = model.embedder().forward(x);
  LossWithGrad out;
  out.scores = score_embedding(trace.embedding, db);
  out.loss = eval_loss(id, out.scores, setting, theta);
  const Vector g_scores = loss_grad_scores(id, out.scores, setting, theta);
  // Scores are <e_i, embedding>, so d/d(embedding) = E^T g.
  const Vector upstream = db.enrollments.transpose() * g_scores;
  const Vector g = model.embedder().backward(trace, upstream);
  out.grad = Vector::Zero(x.size());
  out.grad.head(g.size()) = g;
  return out;
}

Vector input_loss_grad(LossId id, const Waveform& x, const SpeakerDatabase& db,
                       const Embedder& embedder, const AttackSetting& setting) {
  validate(x, false);
  const auto trace = embedder.forward(x.samples);
  const ScoreVector s = score_embedding(trace.embedding, db);
  const Vector g_scores = loss_grad_scores(id, s, setting, db.threshold);
  const Vector g = embedder.backward(trace, db.enrollments.transpose() * g_scores);
  Vector out = Vector::Zero(x.size());
  out.head(g.size()) = g;
  return out;
}

}  // namespace as2t

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

#ifndef AS2T_LOSSES_HPP
#define AS2T_LOSSES_HPP

#include <optional>
#include <string>
#include <vector>

#include "as2t/srs.hpp"

namespace as2t {

/// Source/target settings C1..C10.
///
///   C1 OSI  enrolled s   -> enrolled t != s
///   C2 OSI  unenrolled   -> enrolled t
///   C3 OSI  enrolled s   -> imposter
///   C4 OSI  enrolled s   -> untargeted
///   C5 OSI  unenrolled   -> untargeted (any acceptance)
///   C6 CSI  enrolled s   -> enrolled t != s
///   C7 CSI  unenrolled   -> enrolled t
///   C8 CSI  enrolled s   -> untargeted
///   C9 SV   enrolled     -> imposter
///   C10 SV  unenrolled   -> enrolled
enum class SettingId { C1 = 1, C2, C3, C4, C5, C6, C7, C8, C9, C10 };

enum class TargetKind { Enrolled, Imposter, Untargeted };

struct AttackSetting {
  SettingId id = SettingId::C8;
  TaskKind task = TaskKind::CSI;
  bool source_enrolled = true;
  TargetKind target_kind = TargetKind::Untargeted;
  /// Enrollment index of the source speaker, -1 when unenrolled.
  Index source = -1;
  /// Enrollment index of the target speaker, -1 unless target_kind is Enrolled.
  Index target = -1;

  /// Builds a setting and checks it against the settings table. For SV the
  /// enrolled speaker is always index 0, so `source` / `target` are implied.
  static AttackSetting make(SettingId id, Index source = -1, Index target = -1);

  bool targeted() const { return target_kind != TargetKind::Untargeted; }
};

std::string to_string(SettingId id);
SettingId setting_from_string(const std::string& s);
TaskKind task_of(SettingId id);

enum class LossId { CE, M, L1, L2, CEs, L1s, L3, Ms, L2s, L4s, L3neg, BCE, L3B, BCEp, L3Bneg };

std::string to_string(LossId id);
LossId loss_from_string(const std::string& s);
/// "C8:Ms" style name.
std::string canonical_name(SettingId setting, LossId loss);
std::pair<SettingId, LossId> parse_canonical_name(const std::string& s);

bool uses_threshold(LossId id);

struct LossChoice {
  LossId id;
  bool cw_eligible;
  friend bool operator==(const LossChoice&, const LossChoice&) = default;
};

std::vector<LossChoice> losses_for_setting(SettingId setting);
bool loss_applicable(LossId id, SettingId setting);
bool cw_eligible(LossId id, SettingId setting);

/// Whether a decision meets the goal of the setting. C4 counts any decision
/// other than the source speaker (rejection or misidentification).
bool goal_met(const AttackSetting& setting, const Decision& d);

double eval_loss(LossId id, const ScoreVector& s, const AttackSetting& setting,
                 std::optional<double> theta);

/// Subgradient with respect to the scores. Max terms route the whole
/// gradient to the lowest-index maximizer; when the threshold wins a
/// max{θ, .} term, that term contributes nothing.
Vector loss_grad_scores(LossId id, const ScoreVector& s, const AttackSetting& setting,
                        std::optional<double> theta);

struct LossWithGrad {
  double loss = 0.0;
  ScoreVector scores;
  Vector grad;  // d loss / d samples
};

/// Loss on the recognizer's scores of x and its gradient with respect to x.
/// `theta` overrides the database threshold (used with estimated thresholds).
LossWithGrad input_loss_grad(LossId id, const Vector& x, const SpeakerRecognizer& model,
                             const AttackSetting& setting,
                             std::optional<double> theta = std::nullopt);
Vector input_loss_grad(LossId id, const Waveform& x, const SpeakerDatabase& db,
                       const Embedder& embedder, const AttackSetting& setting);

}  // namespace as2t

#endif  // AS2T_LOSSES_HPP

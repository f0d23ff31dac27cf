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

#ifndef AS2T_HARNESS_HPP
#define AS2T_HARNESS_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "as2t/attack.hpp"
#include "as2t/losses.hpp"
#include "as2t/ota.hpp"
#include "as2t/srs.hpp"

namespace as2t {

// ---------------------------------------------------------------------------
// Metrics

/// One recognition trial. truth = -1 marks an unenrolled speaker.
struct Trial {
  Index truth = -1;
  Decision decision = Decision::imposter();
  double score = 0.0;
};

/// Percentages; a rate is absent when its group is empty.
struct Rates {
  long enrolled = 0;
  long unenrolled = 0;
  std::optional<double> acc, far, frr, ier;
};

Rates compute_rates(const std::vector<Trial>& trials);

/// Whether a decision is a misbehavior for the setting's source: enrolled
/// sources misbehave on any other decision, unenrolled ones on acceptance.
bool untargeted_success(const AttackSetting& setting, const Decision& d);

struct AsrResult {
  long count = 0;
  std::optional<double> asr_t;  // absent for untargeted settings
  double asr_u = 0.0;
  /// C4 only: rejected and misidentified shares.
  std::optional<double> rejected, misidentified;
};

/// Rates over (setting, decision) pairs that share one setting id.
AsrResult compute_asr(const std::vector<std::pair<AttackSetting, Decision>>& results);
AsrResult compute_asr(const std::vector<AttackOutcome>& outcomes);

struct Stealth {
  double l2 = 0.0;
  double linf = 0.0;
  double snr_db = 0.0;  // +inf for a zero perturbation
};

Stealth stealth_metrics(const Waveform& x, const Waveform& adv);

enum class TargetPolicyKind { Random, LeastLikely, Fixed };

struct TargetPolicy {
  TargetPolicyKind kind = TargetPolicyKind::Random;
  Index fixed = -1;
};

std::string to_string(TargetPolicyKind k);
TargetPolicyKind target_policy_from_string(const std::string& s);

/// Random draws uniformly from the enrolled speakers other than `source`;
/// LeastLikely takes the lowest-scoring one (lowest index on ties).
Index select_target(const TargetPolicy& policy, Index source, const ScoreVector& scores,
                    std::uint64_t seed);

/// Remark-1 defaults: L1, L1, L3, L2s, L3neg, M, CE, Ms, L3B, L3Bneg for C1..C10.
LossId best_loss(SettingId setting);

// ---------------------------------------------------------------------------
// Jobs

struct AttackJob {
  std::string voice_id;
  Waveform voice;
  AttackSetting setting;
  std::uint64_t seed = 0;
};

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions are
/// rethrown after all threads join (the first by index wins).
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

/// Attacks every job with cfg.seed replaced by the job seed. Robust when
/// `transforms` is set.
std::vector<AttackOutcome> run_jobs(const std::vector<AttackJob>& jobs, LossId loss,
                                    const SpeakerRecognizer& model, const AttackConfig& cfg,
                                    int workers, const TransformSet* transforms = nullptr,
                                    const RobustOptions& robust = {},
                                    const FakebobOptions& fakebob = {});

// ---------------------------------------------------------------------------
// Transferability

/// Mean ||grad_x L||_1 over the jobs.
double input_gradient_size(const SpeakerRecognizer& model, LossId loss,
                           const std::vector<AttackJob>& jobs);

struct TransferResult {
  std::vector<std::string> model_names;
  /// cells(i, j): goal-rate increase (points) on model j of voices crafted on model i.
  Matrix cells;
  Vector gradient_size;
  /// epsilon * gradient_size(j): first-order bound on the loss change of model j.
  Vector loss_change_bound;
  std::vector<std::pair<Index, Index>> asymmetric_pairs;  // |c(i,j) - c(j,i)| > 5
};

/// Every model must enroll the same speakers in the same order.
TransferResult transfer_matrix(const std::vector<SpeakerRecognizer>& models, LossId loss,
                               const AttackConfig& cfg, const std::vector<AttackJob>& jobs,
                               int workers);

// ---------------------------------------------------------------------------
// Experiments

struct CorpusConfig {
  int num_speakers = 10;
  int enroll_utterances = 3;
  int test_utterances = 5;
  /// Unenrolled speakers, numbered after the enrolled ones.
  int num_imposters = 5;
  double duration_s = 0.5;
};

struct ExperimentCorpus {
  Corpus enroll, test, imposter;
};

ExperimentCorpus make_experiment_corpus(const CorpusConfig& cfg, std::uint64_t master_seed);

/// Enrolls and, for OSI/SV, tunes the EER threshold. SV enrolls the first
/// speaker only and treats every other voice as an imposter.
SpeakerRecognizer build_model(const EmbedderSpec& spec, TaskKind task,
                              const ExperimentCorpus& corpus);

/// EER threshold from genuine (own score of enrolled test voices) and
/// imposter (max score of unenrolled voices) trials.
EerResult tune_threshold(const SpeakerRecognizer& model, const Corpus& enrolled_test,
                         const Corpus& imposter);

/// Voices for a setting: enrolled test voices for enrolled sources,
/// imposter voices otherwise; targets picked by the policy.
std::vector<AttackJob> make_jobs(SettingId setting, const SpeakerRecognizer& model,
                                 const ExperimentCorpus& corpus, const TargetPolicy& policy,
                                 std::uint64_t master_seed);

struct RobustSection {
  bool enabled = false;
  int num_transforms = 10;
  int iters = 400;
  std::optional<double> alpha;  // min(eps, 5 eps / iters) when unset
  bool adam = true;
  TransformKind transform = TransformKind::NoiseAndRir;
  double snr_lo_db = 0.0;
  double snr_hi_db = 20.0;
  NoiseDist noise = NoiseDist::WhiteGaussian;
  int rir_pool_size = 20;
  bool snr_against_input = false;
};

struct OtaPool {
  std::string name = "heldout";
  int size = 10;
};

struct OtaSection {
  std::vector<OtaPool> pools;
  std::vector<NoiseDist> noise_kinds{NoiseDist::WhiteGaussian};
  std::vector<double> snr_db;  // empty disables the sweep
};

struct ExperimentConfig {
  std::string experiment_id = "experiment";
  std::uint64_t master_seed = 1;
  int workers = 1;
  std::filesystem::path output_dir = "as2t-out";
  CorpusConfig corpus;
  std::vector<EmbedderSpec> models{EmbedderSpec{}};
  SettingId setting = SettingId::C8;
  std::optional<LossId> loss;
  TargetPolicy target;
  std::optional<std::string> fixed_target_id;
  AttackConfig attack;
  RobustSection robust;
  OtaSection ota;
  std::vector<double> epsilon_sweep;
  /// Cross-model transfer matrix over `models` (needs >= 2).
  bool transfer = false;
  bool write_wavs = true;

  void validate() const;
  LossId loss_or_default() const { return loss.value_or(best_loss(setting)); }
};

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json_text(const ExperimentConfig& cfg);

/// One line of records.jsonl.
struct VoiceRecord {
  std::string experiment_id, model, voice_id, setting, loss, optimizer;
  double epsilon = 0.0;
  Index source = -1, target = -1;
  std::string source_id, target_id;
  bool success = false;
  Index decision = -1;
  double final_loss = 0.0;
  Stealth stealth;
  long queries = 0;
  int iterations = 0;
  std::string wav;
};

std::string record_to_json_line(const VoiceRecord& r);
VoiceRecord record_from_json_line(const std::string& line);
std::vector<VoiceRecord> load_records(const std::filesystem::path& path);

/// One summary row per (model, setting, loss, optimizer, epsilon) group of
/// records, in first-appearance order. Rates are recomputed from records.
std::string summary_csv(const std::vector<VoiceRecord>& records);

struct ExperimentFiles {
  std::filesystem::path records, summary, database;
  std::optional<std::filesystem::path> ota, transfer;
};

/// Corpus, enrollment, thresholds, attacks, optional epsilon sweep, OTA
/// sweep and transfer matrix. Deterministic bytes for a fixed config;
/// progress and timing go to `log` only.
ExperimentFiles run_experiment(const ExperimentConfig& cfg,
                               const std::function<void(const std::string&)>& log = {});

// ---------------------------------------------------------------------------
// Corpus directories

/// <dir>/{enroll,test,imposter}/<speaker>/<n>.wav plus manifest.json.
void save_experiment_corpus(const ExperimentCorpus& corpus, const CorpusConfig& cfg,
                            std::uint64_t master_seed, const std::filesystem::path& dir);
/// Loads one split ("enroll", "test" or "imposter").
Corpus load_corpus_split(const std::filesystem::path& dir, const std::string& split);

/// Fixed-precision decimal rendering used in every report ("%.6f"; inf as "inf").
std::string format_number(double v);

}  // namespace as2t

#endif  // AS2T_HARNESS_HPP

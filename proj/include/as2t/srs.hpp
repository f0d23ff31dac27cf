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

#ifndef AS2T_SRS_HPP
#define AS2T_SRS_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "as2t/audio.hpp"

namespace as2t {

struct FeatureConfig {
  int frame_len = 256;
  int hop = 128;
  int num_filters = 24;
  double log_floor = 1e-8;
  int sample_rate = kDefaultSampleRate;

  void validate() const;
  Index num_frames(Index num_samples) const {
    return 1 + (num_samples - frame_len) / hop;
  }
};

enum class Activation { Tanh, Softplus };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct EmbedderSpec {
  std::uint64_t weight_seed = 1;
  int embed_dim = 32;
  Activation activation = Activation::Tanh;
  FeatureConfig features;

  std::string name() const;
};

/// Log mel filterbank front end. Holds the precomputed window, DFT and
/// filterbank matrices for one configuration.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(FeatureConfig cfg);

  const FeatureConfig& config() const { return cfg_; }
  const Matrix& filterbank() const { return mel_; }
  /// Center frequency (Hz) of each triangular filter.
  const Vector& center_frequencies() const { return centers_hz_; }

  /// Intermediate values of one forward pass, kept for the backward pass.
  struct Trace {
    Matrix frames;    // frame_len x T, windowed
    Matrix re, im;    // bins x T
    Matrix energy;    // filters x T
    Matrix log_mel;   // filters x T
  };

  Trace forward(const Vector& x) const;
  /// Gradient with respect to the input samples given d(objective)/d(log_mel).
  Vector backward(const Trace& trace, const Matrix& grad_log_mel,
                  Index num_samples) const;

 private:
  FeatureConfig cfg_;
  Vector window_;
  Matrix cos_, sin_;  // bins x frame_len
  Matrix mel_;        // filters x bins
  Vector centers_hz_;
};

/// frames x num_filters log filterbank energies.
Matrix extract_features(const Waveform& x, const FeatureConfig& cfg);

/// Fixed, seeded embedding network: per-frame affine map of the log mel
/// frame, pointwise activation, mean pooling over frames, L2 normalization.
class Embedder {
 public:
  explicit Embedder(EmbedderSpec spec);

  const EmbedderSpec& spec() const { return spec_; }
  const FeatureExtractor& features() const { return features_; }
  int dim() const { return spec_.embed_dim; }

  struct Trace {
    FeatureExtractor::Trace features;
    Matrix pre;        // dim x T
    Vector pooled;     // dim
    Vector embedding;  // unit norm
  };

  Trace forward(const Vector& x) const;
  /// d<embedding, upstream>/dx for the input that produced `trace`.
  Vector backward(const Trace& trace, const Vector& upstream) const;

  Vector embed(const Waveform& x) const;
  Vector embed_input_grad(const Waveform& x, const Vector& upstream) const;

 private:
  EmbedderSpec spec_;
  FeatureExtractor features_;
  Matrix weight_;  // dim x filters, includes per-frame mean removal
  Vector bias_;
};

enum class TaskKind { OSI, CSI, SV };

std::string to_string(TaskKind t);
TaskKind task_from_string(const std::string& s);

struct SpeakerDatabase {
  TaskKind task = TaskKind::CSI;
  std::vector<std::string> speaker_ids;
  Matrix enrollments;  // one unit embedding per row, same order as speaker_ids
  std::optional<double> threshold;

  Index size() const { return enrollments.rows(); }
  Index index_of(const std::string& id) const;
  void validate() const;
};

/// Decision of the recognizer: an enrolled-speaker index or a rejection.
class Decision {
 public:
  static Decision speaker(Index i) { return Decision(i); }
  static Decision imposter() { return Decision(-1); }

  bool is_imposter() const { return index_ < 0; }
  Index index() const { return index_; }
  bool is_speaker(Index i) const { return index_ == i; }

  friend bool operator==(const Decision&, const Decision&) = default;

 private:
  explicit Decision(Index i) : index_(i) {}
  Index index_;
};

std::string to_string(const Decision& d, const SpeakerDatabase& db);

using ScoreVector = Vector;

SpeakerDatabase enroll(const std::vector<std::pair<std::string, std::vector<Waveform>>>& voices,
                       const Embedder& embedder, TaskKind task);
SpeakerDatabase enroll(const Corpus& voices, const Embedder& embedder, TaskKind task);

ScoreVector score(const Waveform& x, const SpeakerDatabase& db, const Embedder& embedder);
/// Cosine scores of an already computed unit embedding.
ScoreVector score_embedding(const Vector& embedding, const SpeakerDatabase& db);

Decision decide(const ScoreVector& s, const SpeakerDatabase& db);

/// Index of the largest entry, lowest index on ties. `skip` is excluded.
Index argmax_excluding(const Vector& v, Index skip = -1);
Index argmin_excluding(const Vector& v, Index skip = -1);

struct EerResult {
  double threshold = 0.0;
  double eer = 0.0;  // fraction
  double far = 0.0;
  double frr = 0.0;
};

/// Threshold sweep over midpoints of the sorted union of observed scores.
/// Acceptance is score >= threshold.
EerResult tune_threshold_eer(const std::vector<double>& genuine,
                             const std::vector<double>& imposter);

/// White-box recognizer: embedder plus enrolled database.
class SpeakerRecognizer {
 public:
  SpeakerRecognizer(Embedder embedder, SpeakerDatabase db);

  const Embedder& embedder() const { return embedder_; }
  const SpeakerDatabase& database() const { return db_; }
  SpeakerDatabase& database() { return db_; }

  ScoreVector scores(const Waveform& x) const { return score(x, db_, embedder_); }
  Decision decide(const Waveform& x) const { return as2t::decide(scores(x), db_); }

 private:
  Embedder embedder_;
  SpeakerDatabase db_;
};

void save_database(const SpeakerDatabase& db, const EmbedderSpec& spec,
                   const std::filesystem::path& path);
std::pair<SpeakerDatabase, EmbedderSpec> load_database(const std::filesystem::path& path);

}  // namespace as2t

#endif  // AS2T_SRS_HPP

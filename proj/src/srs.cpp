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

#include "as2t/srs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "json_io.hpp"

#include "as2t/rng.hpp"

namespace as2t {

using detail::json;
using detail::spec_from_json;
using detail::spec_to_json;

void FeatureConfig::validate() const {
  if (frame_len < 2 || (frame_len & (frame_len - 1)) != 0)
    throw std::invalid_argument("frame_len must be a power of two");
  if (hop < 1 || hop > frame_len) throw std::invalid_argument("hop must be in [1, frame_len]");
  if (num_filters < 4) throw std::invalid_argument("num_filters must be >= 4");
  if (!(log_floor > 0.0)) throw std::invalid_argument("log_floor must be positive");
  if (sample_rate <= 0) throw std::invalid_argument("sample_rate must be positive");
}

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "softplus"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "softplus") return Activation::Softplus;
  throw std::invalid_argument("unknown activation: " + s);
}

std::string EmbedderSpec::name() const {
  return to_string(activation) + "-s" + std::to_string(weight_seed);
}

// ---------------------------------------------------------------------------
// Features

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

FeatureExtractor::FeatureExtractor(FeatureConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const Index n = cfg_.frame_len;
  const Index bins = n / 2 + 1;

  window_.resize(n);
  for (Index i = 0; i < n; ++i)
    window_[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));

  cos_.resize(bins, n);
  sin_.resize(bins, n);
  for (Index k = 0; k < bins; ++k)
    for (Index i = 0; i < n; ++i) {
      // Reduce k*i mod n first so large products keep full precision.
      const double ang = 2.0 * std::numbers::pi * double((k * i) % n) / double(n);
      cos_(k, i) = std::cos(ang);
      sin_(k, i) = std::sin(ang);
    }

  const int nf = cfg_.num_filters;
  const double nyquist = cfg_.sample_rate / 2.0;
  const double mel_hi = hz_to_mel(nyquist);
  Vector edges(nf + 2);
  for (int i = 0; i < nf + 2; ++i) edges[i] = mel_to_hz(mel_hi * i / (nf + 1));
  centers_hz_ = edges.segment(1, nf);

  mel_ = Matrix::Zero(nf, bins);
  const double bin_hz = double(cfg_.sample_rate) / double(n);
  for (int m = 0; m < nf; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (Index k = 0; k < bins; ++k) {
      const double f = k * bin_hz;
      if (f > lo && f < hi)
        mel_(m, k) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
    if (mel_.row(m).sum() == 0.0)
      mel_(m, std::min<Index>(bins - 1, std::lround(mid / bin_hz))) = 1.0;
  }
}

FeatureExtractor::Trace FeatureExtractor::forward(const Vector& x) const {
  const Index n = cfg_.frame_len;
  if (x.size() < n) throw std::invalid_argument("waveform shorter than one frame");
  const Index frames = cfg_.num_frames(x.size());

  Trace tr;
  tr.frames.resize(n, frames);
  for (Index t = 0; t < frames; ++t)
    tr.frames.col(t) = window_.cwiseProduct(x.segment(t * cfg_.hop, n));
  tr.re.noalias() = cos_ * tr.frames;
  tr.im.noalias() = sin_ * tr.frames;
  const Matrix power = tr.re.cwiseAbs2() + tr.im.cwiseAbs2();
  tr.energy.noalias() = mel_ * power;
  tr.log_mel = (tr.energy.array() + cfg_.log_floor).log().matrix();
  return tr;
}

Vector FeatureExtractor::backward(const Trace& tr, const Matrix& grad_log_mel,
                                  Index num_samples) const {
  const Matrix d_energy =
      (grad_log_mel.array() / (tr.energy.array() + cfg_.log_floor)).matrix();
  const Matrix d_power = mel_.transpose() * d_energy;
  const Matrix d_re = 2.0 * tr.re.cwiseProduct(d_power);
  const Matrix d_im = 2.0 * tr.im.cwiseProduct(d_power);
  Matrix d_frames = cos_.transpose() * d_re;
  d_frames.noalias() += sin_.transpose() * d_im;

  Vector dx = Vector::Zero(num_samples);
  const Index n = cfg_.frame_len;
  for (Index t = 0; t < d_frames.cols(); ++t)
    dx.segment(t * cfg_.hop, n) += window_.cwiseProduct(d_frames.col(t));
  return dx;
}

Matrix extract_features(const Waveform& x, const FeatureConfig& cfg) {
  validate(x, false);
  FeatureExtractor fe(cfg);
  return fe.forward(x.samples).log_mel.transpose();
}

// ---------------------------------------------------------------------------
// Embedder

namespace {

constexpr double kWeightGain = 0.3;
constexpr double kBiasScale = 0.1;

// Softplus is shifted by log 2 so that the activation vanishes at zero.
double activate(Activation a, double z) {
  if (a == Activation::Tanh) return std::tanh(z);
  return (z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z))) - std::numbers::ln2;
}

double activate_grad(Activation a, double z) {
  if (a == Activation::Tanh) {
    const double t = std::tanh(z);
    return 1.0 - t * t;
  }
  return 1.0 / (1.0 + std::exp(-z));
}

}  // namespace

Embedder::Embedder(EmbedderSpec spec) : spec_(spec), features_(spec.features) {
  if (spec_.embed_dim < 1) throw std::invalid_argument("embed_dim must be >= 1");
  const int nf = spec_.features.num_filters;
  Rng rng(split_seed(spec_.weight_seed, 0xE3BEDull));
  const Matrix raw = gaussian_vector(rng, Index(spec_.embed_dim) * nf)
                         .reshaped(spec_.embed_dim, nf);
  // Right-multiplying by the centering projector makes each frame's
  // pre-activation invariant to its mean log energy (i.e. input gain).
  const Matrix centering =
      Matrix::Identity(nf, nf) - Matrix::Constant(nf, nf, 1.0 / nf);
  weight_ = (kWeightGain / std::sqrt(double(nf))) * raw * centering;
  bias_ = kBiasScale * gaussian_vector(rng, spec_.embed_dim);
}

Embedder::Trace Embedder::forward(const Vector& x) const {
  Trace tr;
  tr.features = features_.forward(x);
  tr.pre = weight_ * tr.features.log_mel;
  tr.pre.colwise() += bias_;
  const Matrix act = tr.pre.unaryExpr([a = spec_.activation](double z) { return activate(a, z); });
  tr.pooled = act.rowwise().mean();
  const double norm = tr.pooled.norm();
  if (!(norm > 0.0)) throw std::runtime_error("degenerate embedding (zero norm)");
  tr.embedding = tr.pooled / norm;
  return tr;
}

Vector Embedder::backward(const Trace& tr, const Vector& upstream) const {
  if (upstream.size() != spec_.embed_dim)
    throw std::invalid_argument("upstream gradient has wrong dimension");
  const double norm = tr.pooled.norm();
  const Vector d_pooled =
      (upstream - tr.embedding * tr.embedding.dot(upstream)) / norm;
  const double frames = double(tr.pre.cols());
  Matrix d_pre = tr.pre.unaryExpr([a = spec_.activation](double z) { return activate_grad(a, z); });
  d_pre.array().colwise() *= (d_pooled / frames).array();
  const Matrix d_log_mel = weight_.transpose() * d_pre;
  const Index samples = (tr.features.frames.cols() - 1) * spec_.features.hop + spec_.features.frame_len;
  return features_.backward(tr.features, d_log_mel, samples);
}

Vector Embedder::embed(const Waveform& x) const {
  validate(x, false);
  return forward(x.samples).embedding;
}

Vector Embedder::embed_input_grad(const Waveform& x, const Vector& upstream) const {
  validate(x, false);
  const Vector g = backward(forward(x.samples), upstream);
  // Samples past the last full frame do not influence the embedding.
  Vector out = Vector::Zero(x.size());
  out.head(g.size()) = g;
  return out;
}

// ---------------------------------------------------------------------------
// Enrollment, scoring, decisions

std::string to_string(TaskKind t) {
  switch (t) {
    case TaskKind::OSI: return "OSI";
    case TaskKind::CSI: return "CSI";
    case TaskKind::SV: return "SV";
  }
  return "?";
}

TaskKind task_from_string(const std::string& s) {
  if (s == "OSI") return TaskKind::OSI;
  if (s == "CSI") return TaskKind::CSI;
  if (s == "SV") return TaskKind::SV;
  throw std::invalid_argument("unknown task: " + s);
}

Index SpeakerDatabase::index_of(const std::string& id) const {
  const auto it = std::find(speaker_ids.begin(), speaker_ids.end(), id);
  if (it == speaker_ids.end()) return -1;
  return static_cast<Index>(it - speaker_ids.begin());
}

void SpeakerDatabase::validate() const {
  if (enrollments.rows() == 0) throw std::invalid_argument("database has no enrollments");
  if (Index(speaker_ids.size()) != enrollments.rows())
    throw std::invalid_argument("speaker id count does not match enrollments");
  if (task == TaskKind::SV && enrollments.rows() != 1)
    throw std::invalid_argument("SV database must hold exactly one speaker");
}

std::string to_string(const Decision& d, const SpeakerDatabase& db) {
  if (d.is_imposter()) return "imposter";
  return db.speaker_ids.at(static_cast<std::size_t>(d.index()));
}

SpeakerDatabase enroll(const std::vector<std::pair<std::string, std::vector<Waveform>>>& voices,
                       const Embedder& embedder, TaskKind task) {
  if (voices.empty()) throw std::invalid_argument("no speakers to enroll");
  if (task == TaskKind::SV && voices.size() != 1)
    throw std::invalid_argument("SV enrollment requires exactly one speaker");
  SpeakerDatabase db;
  db.task = task;
  db.enrollments.resize(Index(voices.size()), embedder.dim());
  for (std::size_t k = 0; k < voices.size(); ++k) {
    const auto& [id, list] = voices[k];
    if (list.empty()) throw std::invalid_argument("empty voice list for speaker " + id);
    Vector sum = Vector::Zero(embedder.dim());
    for (const auto& w : list) sum += embedder.embed(w);
    db.enrollments.row(Index(k)) = (sum / sum.norm()).transpose();
    db.speaker_ids.push_back(id);
  }
  return db;
}

SpeakerDatabase enroll(const Corpus& voices, const Embedder& embedder, TaskKind task) {
  return enroll(std::vector<std::pair<std::string, std::vector<Waveform>>>(voices.begin(), voices.end()),
                embedder, task);
}

ScoreVector score_embedding(const Vector& embedding, const SpeakerDatabase& db) {
  if (embedding.size() != db.enrollments.cols())
    throw std::invalid_argument("embedding dimension does not match database");
  return db.enrollments * embedding;
}

ScoreVector score(const Waveform& x, const SpeakerDatabase& db, const Embedder& embedder) {
  return score_embedding(embedder.embed(x), db);
}

Index argmax_excluding(const Vector& v, Index skip) {
  Index best = -1;
  for (Index i = 0; i < v.size(); ++i) {
    if (i == skip) continue;
    if (best < 0 || v[i] > v[best]) best = i;
  }
  return best;
}

Index argmin_excluding(const Vector& v, Index skip) {
  Index best = -1;
  for (Index i = 0; i < v.size(); ++i) {
    if (i == skip) continue;
    if (best < 0 || v[i] < v[best]) best = i;
  }
  return best;
}

Decision decide(const ScoreVector& s, const SpeakerDatabase& db) {
  if (s.size() != db.size() || s.size() == 0)
    throw std::invalid_argument("score vector length does not match database");
  if (db.task != TaskKind::CSI && !db.threshold)
    throw std::invalid_argument("threshold is not set for " + to_string(db.task));
  const Index best = argmax_excluding(s);
  if (db.task == TaskKind::CSI) return Decision::speaker(best);
  return s[best] >= *db.threshold ? Decision::speaker(best) : Decision::imposter();
}

EerResult tune_threshold_eer(const std::vector<double>& genuine,
                             const std::vector<double>& imposter) {
  if (genuine.empty() || imposter.empty())
    throw std::invalid_argument("EER needs non-empty genuine and imposter scores");
  std::vector<double> all(genuine);
  all.insert(all.end(), imposter.begin(), imposter.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  std::vector<double> candidates;
  for (std::size_t i = 0; i + 1 < all.size(); ++i) candidates.push_back(0.5 * (all[i] + all[i + 1]));
  if (candidates.empty()) candidates.push_back(all.front());

  auto rate = [](const std::vector<double>& v, auto pred) {
    return double(std::count_if(v.begin(), v.end(), pred)) / double(v.size());
  };
  EerResult best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (const double th : candidates) {  // ascending, so ties keep the lower θ
    const double far = rate(imposter, [th](double s) { return s >= th; });
    const double frr = rate(genuine, [th](double s) { return s < th; });
    const double gap = std::abs(far - frr);
    if (gap < best_gap) {
      best_gap = gap;
      best = {th, 0.5 * (far + frr), far, frr};
    }
  }
  return best;
}

SpeakerRecognizer::SpeakerRecognizer(Embedder embedder, SpeakerDatabase db)
    : embedder_(std::move(embedder)), db_(std::move(db)) {
  db_.validate();
  if (db_.enrollments.cols() != embedder_.dim())
    throw std::invalid_argument("database dimension does not match embedder");
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

json spec_to_json(const EmbedderSpec& s) {
  return {{"weight_seed", s.weight_seed},
          {"embed_dim", s.embed_dim},
          {"activation", to_string(s.activation)},
          {"frame_len", s.features.frame_len},
          {"hop", s.features.hop},
          {"num_filters", s.features.num_filters},
          {"log_floor", s.features.log_floor},
          {"sample_rate", s.features.sample_rate}};
}

EmbedderSpec spec_from_json(const json& j) {
  EmbedderSpec s;
  s.weight_seed = j.value("weight_seed", s.weight_seed);
  s.embed_dim = j.value("embed_dim", s.embed_dim);
  if (j.contains("activation"))
    s.activation = activation_from_string(j.at("activation").get<std::string>());
  s.features.frame_len = j.value("frame_len", s.features.frame_len);
  s.features.hop = j.value("hop", s.features.hop);
  s.features.num_filters = j.value("num_filters", s.features.num_filters);
  s.features.log_floor = j.value("log_floor", s.features.log_floor);
  s.features.sample_rate = j.value("sample_rate", s.features.sample_rate);
  return s;
}

}  // namespace detail

void save_database(const SpeakerDatabase& db, const EmbedderSpec& spec,
                   const std::filesystem::path& path) {
  db.validate();
  json j;
  j["format"] = "as2t-speaker-db/1";
  j["task"] = to_string(db.task);
  j["threshold"] = db.threshold ? json(*db.threshold) : json(nullptr);
  j["embedder"] = spec_to_json(spec);
  json speakers = json::array();
  for (Index i = 0; i < db.size(); ++i) {
    std::vector<double> e(db.enrollments.cols());
    for (Index c = 0; c < db.enrollments.cols(); ++c) e[std::size_t(c)] = db.enrollments(i, c);
    speakers.push_back({{"id", db.speaker_ids[std::size_t(i)]}, {"embedding", e}});
  }
  j["speakers"] = speakers;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write database: " + path.string());
  f << j.dump(2) << '\n';
}

std::pair<SpeakerDatabase, EmbedderSpec> load_database(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read database: " + path.string());
  const json j = json::parse(f);
  SpeakerDatabase db;
  db.task = task_from_string(j.at("task").get<std::string>());
  if (!j.at("threshold").is_null()) db.threshold = j.at("threshold").get<double>();
  const EmbedderSpec spec = spec_from_json(j.at("embedder"));
  const auto& speakers = j.at("speakers");
  db.enrollments.resize(Index(speakers.size()), spec.embed_dim);
  Index row = 0;
  for (const auto& s : speakers) {
    db.speaker_ids.push_back(s.at("id").get<std::string>());
    const auto e = s.at("embedding").get<std::vector<double>>();
    if (Index(e.size()) != spec.embed_dim) throw std::runtime_error("embedding size mismatch in database");
    for (Index c = 0; c < spec.embed_dim; ++c) db.enrollments(row, c) = e[std::size_t(c)];
    ++row;
  }
  db.validate();
  return {std::move(db), spec};
}

}  // namespace as2t

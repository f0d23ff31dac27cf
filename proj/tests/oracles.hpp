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

// Independent reference computations shared by the unit and acceptance tests.
// Nothing here calls into the library code it checks.

#ifndef AS2T_TESTS_ORACLES_HPP
#define AS2T_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "as2t/harness.hpp"

namespace as2t::oracle {

/// y[n] = sum_k x[k] r[n-k], truncated to x.size().
inline Vector direct_convolve(const Vector& x, const Vector& r) {
  Vector y = Vector::Zero(x.size());
  for (Index n = 0; n < x.size(); ++n)
    for (Index k = 0; k < r.size() && k <= n; ++k) y[n] += r[k] * x[n - k];
  return y;
}

/// Central difference of f along coordinate i.
inline double central_difference(const std::function<double(const Vector&)>& f, const Vector& x,
                                 Index i, double h) {
  Vector p = x, m = x;
  p[i] += h;
  m[i] -= h;
  return (f(p) - f(m)) / (2.0 * h);
}

/// |a - b| / max(|a|, |b|, floor).
inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Exhaustive threshold sweep over every observed score and every midpoint;
/// returns the smallest max(FAR, FRR). Acceptance is score >= threshold.
inline double exhaustive_eer(const std::vector<double>& genuine,
                             const std::vector<double>& imposter) {
  std::vector<double> all = genuine;
  all.insert(all.end(), imposter.begin(), imposter.end());
  std::sort(all.begin(), all.end());
  std::vector<double> cand = all;
  for (std::size_t i = 0; i + 1 < all.size(); ++i) cand.push_back(0.5 * (all[i] + all[i + 1]));
  cand.push_back(all.back() + 1.0);
  double best = 1.0;
  for (double t : cand) {
    double fa = 0, fr = 0;
    for (double s : imposter) fa += s >= t;
    for (double s : genuine) fr += s < t;
    best = std::min(best, std::max(fa / imposter.size(), fr / genuine.size()));
  }
  return best;
}

/// Smallest |FAR - FRR| over every threshold on the real line.
inline double min_rate_gap(const std::vector<double>& genuine,
                           const std::vector<double>& imposter) {
  std::vector<double> cand = genuine;
  cand.insert(cand.end(), imposter.begin(), imposter.end());
  const std::size_t n = cand.size();
  for (std::size_t i = 0; i < n; ++i) {
    cand.push_back(std::nextafter(cand[i], -1e9));
    cand.push_back(std::nextafter(cand[i], 1e9));
  }
  double best = 1.0;
  for (double t : cand) {
    double fa = 0, fr = 0;
    for (double s : imposter) fa += s >= t;
    for (double s : genuine) fr += s < t;
    best = std::min(best, std::abs(fa / imposter.size() - fr / genuine.size()));
  }
  return best;
}

inline double cosine(const Vector& a, const Vector& b) { return a.dot(b) / (a.norm() * b.norm()); }

/// Minimal 16-bit PCM writer with caller-chosen header fields.
inline void write_pcm(const std::filesystem::path& path, const std::vector<std::int16_t>& samples,
                      int fs = 16000, int channels = 1, int format = 1, int bits = 16) {
  std::ofstream f(path, std::ios::binary);
  auto u32 = [&f](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) f.put(char((v >> (8 * i)) & 0xff));
  };
  auto u16 = [&f](std::uint16_t v) {
    f.put(char(v & 0xff));
    f.put(char(v >> 8));
  };
  const std::uint32_t data_bytes = std::uint32_t(samples.size() * 2);
  f.write("RIFF", 4);
  u32(36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  u32(16);
  u16(std::uint16_t(format));
  u16(std::uint16_t(channels));
  u32(std::uint32_t(fs));
  u32(std::uint32_t(fs * channels * bits / 8));
  u16(std::uint16_t(channels * bits / 8));
  u16(std::uint16_t(bits));
  f.write("data", 4);
  u32(data_bytes);
  for (auto s : samples) u16(std::uint16_t(s));
}

/// Little-endian samples of the data chunk of a canonical 44-byte-header file.
inline std::vector<std::int16_t> read_pcm_samples(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(f)), {});
  std::vector<std::int16_t> out;
  for (std::size_t i = 44; i + 1 < b.size(); i += 2)
    out.push_back(std::int16_t(b[i] | (b[i + 1] << 8)));
  return out;
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), {});
}

/// Small fixed corpus and CSI/OSI/SV models for tests that need a recognizer.
struct Toy {
  ExperimentCorpus corpus;
  CorpusConfig cfg;
  EmbedderSpec spec;

  explicit Toy(int speakers = 4, int enroll = 2, int test = 2, int imposters = 2,
               std::uint64_t seed = 7) {
    cfg.num_speakers = speakers;
    cfg.enroll_utterances = enroll;
    cfg.test_utterances = test;
    cfg.num_imposters = imposters;
    cfg.duration_s = 0.5;
    corpus = make_experiment_corpus(cfg, seed);
  }

  SpeakerRecognizer model(TaskKind task, EmbedderSpec s = {}) const {
    return build_model(s, task, corpus);
  }
  const Waveform& test_voice(int speaker, int utt = 0) const {
    return corpus.test.at(speaker_id(speaker)).at(utt);
  }
  const Waveform& imposter_voice(int k, int utt = 0) const {
    return corpus.imposter.at(speaker_id(cfg.num_speakers + k)).at(utt);
  }
};

}  // namespace as2t::oracle

#endif  // AS2T_TESTS_ORACLES_HPP

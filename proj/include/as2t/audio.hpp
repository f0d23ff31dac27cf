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

#ifndef AS2T_AUDIO_HPP
#define AS2T_AUDIO_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace as2t {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Eigen::Index;

inline constexpr int kDefaultSampleRate = 16000;

/// Mono waveform. Valid waveforms hold samples in [-1, 1].
struct Waveform {
  Vector samples;
  int sample_rate = kDefaultSampleRate;

  Waveform() = default;
  explicit Waveform(Vector s, int fs = kDefaultSampleRate)
      : samples(std::move(s)), sample_rate(fs) {}

  Index size() const { return samples.size(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

/// Throws std::invalid_argument unless the waveform is non-empty, has a
/// positive rate and (when `require_box`) every sample lies in [-1, 1].
void validate(const Waveform& w, bool require_box = true);

/// Reads 16-bit PCM mono RIFF/WAVE.
Waveform load_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono. Samples are clamped to [-1, 1 - 2^-15] and
/// quantized as round(s * 32768).
void store_wav(const Waveform& w, const std::filesystem::path& path);

/// Harmonic signature of one synthetic speaker.
struct SynthSpeakerSpec {
  std::uint64_t speaker_seed = 0;
  int num_harmonics = 0;
  double base_freq_hz = 0.0;
  /// [0] spectral tilt in dB/octave, [1..] cosine weights of the log
  /// envelope over the normalized mel axis.
  std::vector<double> envelope_coeffs;
};

SynthSpeakerSpec make_speaker_spec(std::uint64_t speaker_seed,
                                   int sample_rate = kDefaultSampleRate);

/// Renders one utterance of `spec`. Deterministic in `utterance_seed`.
Waveform synthesize_utterance(const SynthSpeakerSpec& spec,
                              std::uint64_t utterance_seed, double duration_s,
                              int sample_rate = kDefaultSampleRate);

using Corpus = std::map<std::string, std::vector<Waveform>>;

std::string speaker_id(int index);

/// Speakers are numbered from `first_speaker`; ids are "spk%03d". Speaker k
/// has the same signature whatever range it is generated in.
Corpus generate_corpus(int num_speakers, int utterances_per_speaker,
                       double duration_s, std::uint64_t master_seed,
                       int first_speaker = 0,
                       int sample_rate = kDefaultSampleRate);

/// Full linear convolution via FFT, truncated to x.size() samples.
Vector convolve_full(const Vector& x, const Vector& kernel);
Waveform convolve_full(const Waveform& x, const Vector& kernel);

/// Adjoint of `convolve_full` with respect to x: correlation of `grad_out`
/// with `kernel`, truncated to grad_out.size().
Vector convolve_adjoint(const Vector& grad_out, const Vector& kernel);

/// Mean squared amplitude.
template <typename Derived>
double signal_power(const Eigen::MatrixBase<Derived>& v) {
  return v.squaredNorm() / static_cast<double>(v.size());
}

}  // namespace as2t

#endif  // AS2T_AUDIO_HPP

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

#include "as2t/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <unsupported/Eigen/FFT>

#include "as2t/rng.hpp"

namespace as2t {

void validate(const Waveform& w, bool require_box) {
  if (w.samples.size() == 0) throw std::invalid_argument("empty waveform");
  if (w.sample_rate <= 0) throw std::invalid_argument("sample rate must be positive");
  if (!w.samples.allFinite()) throw std::invalid_argument("non-finite sample");
  if (require_box && w.samples.cwiseAbs().maxCoeff() > 1.0)
    throw std::invalid_argument("sample outside [-1, 1]");
}

// ---------------------------------------------------------------------------
// WAV

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
std::uint16_t read_u16(const unsigned char* p) {
  return std::uint16_t(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

Waveform load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open wav file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::string(bytes.begin(), bytes.begin() + 4) != "RIFF" ||
      std::string(bytes.begin() + 8, bytes.begin() + 12) != "WAVE")
    throw std::runtime_error("not a RIFF/WAVE file: " + path.string());

  bool have_fmt = false;
  int channels = 0, bits = 0, rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string tag(bytes.begin() + pos, bytes.begin() + pos + 4);
    const std::size_t len = read_u32(&bytes[pos + 4]);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw std::runtime_error("truncated wav chunk: " + tag);
    if (tag == "fmt ") {
      if (len < 16) throw std::runtime_error("malformed fmt chunk");
      const int format = read_u16(&bytes[body]);
      if (format != 1) throw std::runtime_error("unsupported wav encoding (not PCM)");
      channels = read_u16(&bytes[body + 2]);
      rate = static_cast<int>(read_u32(&bytes[body + 4]));
      bits = read_u16(&bytes[body + 14]);
      have_fmt = true;
    } else if (tag == "data") {
      if (!have_fmt) throw std::runtime_error("data chunk before fmt chunk");
      if (channels != 1) throw std::runtime_error("channel count != 1");
      if (bits != 16) throw std::runtime_error("only 16-bit PCM is supported");
      const Index n = static_cast<Index>(len / 2);
      Vector s(n);
      for (Index i = 0; i < n; ++i) {
        const auto v = static_cast<std::int16_t>(read_u16(&bytes[body + 2 * i]));
        s[i] = v / 32768.0;
      }
      Waveform w(std::move(s), rate);
      validate(w);
      return w;
    }
    pos = body + len + (len & 1);
  }
  throw std::runtime_error("wav file has no data chunk: " + path.string());
}

void store_wav(const Waveform& w, const std::filesystem::path& path) {
  validate(w, false);
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  std::string out;
  out.reserve(44 + 2 * n);
  out += "RIFF";
  put_u32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, 2 * n);
  constexpr double kMax = 1.0 - 1.0 / 32768.0;
  for (Index i = 0; i < w.samples.size(); ++i) {
    const double c = std::clamp(w.samples[i], -1.0, kMax);
    const auto q = static_cast<std::int16_t>(std::lround(c * 32768.0));
    put_u16(out, static_cast<std::uint16_t>(q));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write wav file: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

constexpr int kEnvelopeTerms = 6;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double envelope_db(const SynthSpeakerSpec& spec, double freq_hz, double nyquist) {
  double db = spec.envelope_coeffs[0] * std::log2(freq_hz / spec.base_freq_hz);
  const double u = hz_to_mel(freq_hz) / hz_to_mel(nyquist);
  for (std::size_t j = 1; j < spec.envelope_coeffs.size(); ++j)
    db += spec.envelope_coeffs[j] * std::cos(std::numbers::pi * double(j) * u);
  return db;
}

}  // namespace

SynthSpeakerSpec make_speaker_spec(std::uint64_t speaker_seed, int sample_rate) {
  Rng rng(speaker_seed);
  std::uniform_real_distribution<double> f0(80.0, 300.0);
  std::uniform_real_distribution<double> tilt(-9.0, -3.0);
  std::normal_distribution<double> coeff(0.0, 6.0);

  SynthSpeakerSpec spec;
  spec.speaker_seed = speaker_seed;
  spec.base_freq_hz = f0(rng);
  spec.num_harmonics = std::min(
      60, static_cast<int>(0.95 * (sample_rate / 2.0) / spec.base_freq_hz));
  spec.envelope_coeffs.push_back(tilt(rng));
  for (int j = 0; j < kEnvelopeTerms; ++j) spec.envelope_coeffs.push_back(coeff(rng));
  return spec;
}

Waveform synthesize_utterance(const SynthSpeakerSpec& spec,
                              std::uint64_t utterance_seed, double duration_s,
                              int sample_rate) {
  if (duration_s < 0.5) throw std::invalid_argument("duration_s must be >= 0.5");
  if (spec.envelope_coeffs.empty() || spec.num_harmonics < 1)
    throw std::invalid_argument("speaker spec is not initialised");

  Rng rng(utterance_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double nyquist = sample_rate / 2.0;
  const double f0 = spec.base_freq_hz * (1.0 + 0.04 * (unit(rng) - 0.5));
  const double am_depth = 0.2 + 0.3 * unit(rng);
  const double am_rate = 2.0 + 4.0 * unit(rng);
  const double am_phase = 2.0 * std::numbers::pi * unit(rng);

  const auto n = static_cast<Index>(std::llround(duration_s * sample_rate));
  const Vector t = Vector::LinSpaced(n, 0.0, double(n - 1)) / double(sample_rate);
  Vector clean = Vector::Zero(n);
  for (int k = 1; k <= spec.num_harmonics; ++k) {
    const double f = k * f0;
    if (f >= 0.95 * nyquist) break;
    const double jitter_db = 2.0 * (unit(rng) - 0.5);
    const double amp = std::pow(10.0, (envelope_db(spec, f, nyquist) + jitter_db) / 20.0);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    clean.array() += amp * (2.0 * std::numbers::pi * f * t.array() + phase).sin();
  }
  clean.array() *= 1.0 + am_depth * (2.0 * std::numbers::pi * am_rate * t.array() + am_phase).sin();

  // Additive white noise 30 dB below the harmonic signal.
  Vector noise = gaussian_vector(rng, n);
  const double gain = std::sqrt(signal_power(clean) / (signal_power(noise) * 1e3));
  Vector s = clean + gain * noise;
  s *= 0.5 / s.cwiseAbs().maxCoeff();
  return Waveform(std::move(s), sample_rate);
}

std::string speaker_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "spk%03d", index);
  return buf;
}

Corpus generate_corpus(int num_speakers, int utterances_per_speaker,
                       double duration_s, std::uint64_t master_seed,
                       int first_speaker, int sample_rate) {
  if (num_speakers < 1 || utterances_per_speaker < 1)
    throw std::invalid_argument("corpus counts must be >= 1");
  if (duration_s < 0.5) throw std::invalid_argument("duration_s must be >= 0.5");
  Corpus corpus;
  for (int k = first_speaker; k < first_speaker + num_speakers; ++k) {
    const auto spec = make_speaker_spec(split_seed(master_seed, 1, std::uint64_t(k)), sample_rate);
    auto& list = corpus[speaker_id(k)];
    for (int u = 0; u < utterances_per_speaker; ++u)
      list.push_back(synthesize_utterance(
          spec, split_seed(master_seed, 2, split_seed(std::uint64_t(k), std::uint64_t(u))),
          duration_s, sample_rate));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

Index next_pow2(Index n) {
  Index p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Linear convolution of a and b, first `keep` outputs.
Vector fft_convolve(const Vector& a, const Vector& b, Index keep) {
  const Index nfft = next_pow2(a.size() + b.size() - 1);
  std::vector<double> pa(nfft, 0.0), pb(nfft, 0.0);
  std::copy(a.data(), a.data() + a.size(), pa.begin());
  std::copy(b.data(), b.data() + b.size(), pb.begin());
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> fa, fb;
  fft.fwd(fa, pa);
  fft.fwd(fb, pb);
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
  std::vector<double> y;
  fft.inv(y, fa);
  Vector out(keep);
  for (Index i = 0; i < keep; ++i) out[i] = y[static_cast<std::size_t>(i)];
  return out;
}

}  // namespace

Vector convolve_full(const Vector& x, const Vector& kernel) {
  if (kernel.size() == 0) throw std::invalid_argument("empty convolution kernel");
  if (x.size() == 0) throw std::invalid_argument("empty signal");
  if (kernel.size() == 1) return x * kernel[0];
  return fft_convolve(x, kernel, x.size());
}

Waveform convolve_full(const Waveform& x, const Vector& kernel) {
  validate(x, false);
  return Waveform(convolve_full(x.samples, kernel), x.sample_rate);
}

Vector convolve_adjoint(const Vector& grad_out, const Vector& kernel) {
  if (kernel.size() == 0) throw std::invalid_argument("empty convolution kernel");
  if (kernel.size() == 1) return grad_out * kernel[0];
  // dx[j] = sum_i g[i] r[i-j]: convolve reversed g with r, then reverse.
  const Vector rev = grad_out.reverse();
  return fft_convolve(rev, kernel, grad_out.size()).reverse();
}

}  // namespace as2t

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

#ifndef AS2T_OTA_HPP
#define AS2T_OTA_HPP

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "as2t/attack.hpp"
#include "as2t/audio.hpp"

namespace as2t {

struct RoomSpec {
  Eigen::Vector3d dims_m{5.0, 4.0, 3.0};
  double absorption = 0.5;
  Eigen::Vector3d source_pos_m{1.0, 1.0, 1.5};
  Eigen::Vector3d mic_pos_m{3.0, 2.0, 1.5};
  int max_order = 6;
  double speed_of_sound = 343.0;
  int fs = kDefaultSampleRate;

  void validate() const;
};

struct ImpulseResponse {
  Vector taps;
  int fs = kDefaultSampleRate;
  std::string id;
  std::optional<RoomSpec> room;
};

inline constexpr double kMinImageDistance = 0.1;

/// round(fs * |source - mic| / c).
Index direct_path_index(const RoomSpec& room);

/// Image-source method with nearest-sample taps, normalized so the direct
/// path has amplitude 1.
ImpulseResponse simulate_rir(const RoomSpec& room, std::string id = {});

/// Random rooms: dims in [3,8]x[3,6]x[2.5,3.5] m, absorption in [0.3,0.8],
/// positions at least 0.5 m from every wall. Ids are prefix + index.
std::vector<ImpulseResponse> generate_rir_pool(int count, std::uint64_t seed,
                                               const std::string& id_prefix,
                                               int fs = kDefaultSampleRate);

/// Writes <dir>/<id>.wav (taps scaled by 1/gain) and <dir>/manifest.json.
void save_rir_pool(const std::vector<ImpulseResponse>& pool, const std::filesystem::path& dir);
std::vector<ImpulseResponse> load_rir_pool(const std::filesystem::path& dir);

/// sqrt(P_x / (P_n 10^(snr/10))).
double noise_gain(double power_x, double power_n, double snr_db);

/// x + gamma n over the first x.size() noise samples. snr_db = +inf returns x.
Vector mix_at_snr(const Vector& x, const Vector& n, double snr_db);
Waveform mix_at_snr(const Waveform& x, const Vector& n, double snr_db);

enum class TransformKind { Identity, NoiseOnly, RirOnly, NoiseAndRir };
enum class NoiseDist { WhiteGaussian, Uniform };

std::string to_string(TransformKind k);
TransformKind transform_kind_from_string(const std::string& s);
std::string to_string(NoiseDist d);
NoiseDist noise_dist_from_string(const std::string& s);

/// Unit-scale noise realization (power is rescaled by mix_at_snr).
Vector draw_noise(NoiseDist dist, Index n, std::uint64_t seed);

struct TransformSet {
  TransformKind kind = TransformKind::NoiseAndRir;
  double snr_lo_db = 0.0;
  double snr_hi_db = 20.0;
  NoiseDist noise_dist = NoiseDist::WhiteGaussian;
  std::vector<ImpulseResponse> rir_pool;
  /// Measure the SNR against the dry input instead of the reverberated one.
  bool snr_against_input = false;

  void validate() const;
};

/// One sampled F(x) = r*x + gamma n. The noise realization is drawn lazily
/// from a fixed seed, so it only depends on the input length.
class Transform {
 public:
  Transform() = default;
  Transform(const ImpulseResponse* rir, double snr_db, NoiseDist dist,
            std::uint64_t noise_seed, bool snr_against_input);

  Vector apply(const Vector& x) const;
  /// r*x (or x when there is no RIR).
  Vector linear(const Vector& x) const;
  /// Adjoint of `linear`; the noise gain is held constant.
  Vector backprop(const Vector& grad_out) const;

  const ImpulseResponse* rir() const { return rir_; }
  double snr_db() const { return snr_db_; }

 private:
  const ImpulseResponse* rir_ = nullptr;
  double snr_db_ = std::numeric_limits<double>::infinity();
  NoiseDist dist_ = NoiseDist::WhiteGaussian;
  std::uint64_t noise_seed_ = 0;
  bool snr_against_input_ = false;
};

/// The returned transform refers into set.rir_pool, which must outlive it.
Transform sample_transform(const TransformSet& set, std::uint64_t seed);

struct RobustOptions {
  int num_transforms = 10;
  /// Weight of the L2 distance term; 0 under an L-inf budget.
  double distance_weight = 0.0;
};

/// Adam on, 400 iterations, alpha = 5 eps / iters.
AttackConfig robust_attack_defaults(double epsilon = 0.002);

/// Expectation over sampled transforms, descended with the shared
/// projected loop. Transforms are re-sampled every iteration.
AttackOutcome robust_attack(const Waveform& x, LossId loss, const AttackSetting& setting,
                            const SpeakerRecognizer& model, const AttackConfig& cfg,
                            const TransformSet& set, const RobustOptions& options = {});

struct NoiseSpec {
  NoiseDist dist = NoiseDist::WhiteGaussian;
  double snr_db = 20.0;
};

/// Convolve, add noise at snr_db against the reverberated signal, then
/// rescale to the input peak.
Waveform transmit(const Waveform& x, const ImpulseResponse& rir,
                  const std::optional<NoiseSpec>& noise, std::uint64_t seed);

}  // namespace as2t

#endif  // AS2T_OTA_HPP

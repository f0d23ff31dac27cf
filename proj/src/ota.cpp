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

#include "as2t/ota.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <random>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "as2t/rng.hpp"

namespace as2t {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Rooms

void RoomSpec::validate() const {
  if (!(dims_m.array() > 0.0).all()) throw std::invalid_argument("room dimensions must be positive");
  if (!(absorption > 0.0 && absorption < 1.0))
    throw std::invalid_argument("absorption must lie in (0, 1)");
  if (max_order < 0) throw std::invalid_argument("max_order must be >= 0");
  if (!(speed_of_sound > 0.0) || fs <= 0) throw std::invalid_argument("bad speed of sound or rate");
  for (int a = 0; a < 3; ++a) {
    if (!(source_pos_m[a] > 0.0 && source_pos_m[a] < dims_m[a]))
      throw std::invalid_argument("source outside the room");
    if (!(mic_pos_m[a] > 0.0 && mic_pos_m[a] < dims_m[a]))
      throw std::invalid_argument("microphone outside the room");
  }
}

Index direct_path_index(const RoomSpec& room) {
  room.validate();
  const double d = (room.source_pos_m - room.mic_pos_m).norm();
  return static_cast<Index>(std::llround(room.fs * d / room.speed_of_sound));
}

namespace {

// Image coordinate along one axis: k even -> kL + s, k odd -> (k+1)L - s.
double image_coord(int k, double length, double s) {
  return (k % 2 == 0) ? k * length + s : (k + 1) * length - s;
}

}  // namespace

ImpulseResponse simulate_rir(const RoomSpec& room, std::string id) {
  room.validate();
  const int n = room.max_order;
  struct Image {
    Index tap;
    double amp;
  };
  std::vector<Image> images;
  images.reserve(static_cast<std::size_t>((2 * n + 1) * (2 * n + 1) * (2 * n + 1)));
  Index last = 0;
  for (int kx = -n; kx <= n; ++kx)
    for (int ky = -n; ky <= n; ++ky)
      for (int kz = -n; kz <= n; ++kz) {
        const Eigen::Vector3d img(image_coord(kx, room.dims_m[0], room.source_pos_m[0]),
                                  image_coord(ky, room.dims_m[1], room.source_pos_m[1]),
                                  image_coord(kz, room.dims_m[2], room.source_pos_m[2]));
        const double d = (img - room.mic_pos_m).norm();
        const int reflections = std::abs(kx) + std::abs(ky) + std::abs(kz);
        const double amp = std::pow(1.0 - room.absorption, reflections) /
                           std::max(d, kMinImageDistance);
        const auto tap = static_cast<Index>(std::llround(room.fs * d / room.speed_of_sound));
        images.push_back({tap, amp});
        last = std::max(last, tap);
      }
  const double d0 = (room.source_pos_m - room.mic_pos_m).norm();
  const double direct_amp = 1.0 / std::max(d0, kMinImageDistance);

  ImpulseResponse ir;
  ir.taps = Vector::Zero(last + 1);
  for (const auto& im : images) ir.taps[im.tap] += im.amp / direct_amp;
  ir.fs = room.fs;
  ir.id = std::move(id);
  ir.room = room;
  return ir;
}

std::vector<ImpulseResponse> generate_rir_pool(int count, std::uint64_t seed,
                                               const std::string& id_prefix, int fs) {
  if (count < 1) throw std::invalid_argument("pool size must be >= 1");
  constexpr double kMargin = 0.5;
  std::vector<ImpulseResponse> pool;
  for (int i = 0; i < count; ++i) {
    Rng rng(split_seed(seed, std::uint64_t(i)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    RoomSpec room;
    room.fs = fs;
    room.dims_m = {3.0 + 5.0 * unit(rng), 3.0 + 3.0 * unit(rng), 2.5 + unit(rng)};
    room.absorption = 0.3 + 0.5 * unit(rng);
    for (int a = 0; a < 3; ++a) {
      const double span = room.dims_m[a] - 2.0 * kMargin;
      room.source_pos_m[a] = kMargin + span * unit(rng);
      room.mic_pos_m[a] = kMargin + span * unit(rng);
    }
    pool.push_back(simulate_rir(room, id_prefix + std::to_string(i)));
  }
  return pool;
}

namespace {

json vec3_to_json(const Eigen::Vector3d& v) { return json::array({v[0], v[1], v[2]}); }

Eigen::Vector3d vec3_from_json(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

}  // namespace

void save_rir_pool(const std::vector<ImpulseResponse>& pool, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json entries = json::array();
  std::set<std::string> seen;
  for (const auto& ir : pool) {
    if (ir.id.empty() || !seen.insert(ir.id).second)
      throw std::invalid_argument("RIR ids must be unique and non-empty");
    // Largest tap maps to full scale minus one step.
    const double gain = ir.taps.cwiseAbs().maxCoeff() * 32768.0 / 32767.0;
    if (!(gain > 0.0)) throw std::invalid_argument("all-zero RIR " + ir.id);
    const std::string file = ir.id + ".wav";
    store_wav(Waveform(ir.taps / gain, ir.fs), dir / file);
    json e = {{"id", ir.id}, {"file", file}, {"fs", ir.fs}, {"gain", gain}};
    if (ir.room) {
      const RoomSpec& r = *ir.room;
      e["room"] = {{"dims_m", vec3_to_json(r.dims_m)},
                   {"absorption", r.absorption},
                   {"source_pos_m", vec3_to_json(r.source_pos_m)},
                   {"mic_pos_m", vec3_to_json(r.mic_pos_m)},
                   {"max_order", r.max_order},
                   {"speed_of_sound", r.speed_of_sound}};
    }
    entries.push_back(std::move(e));
  }
  std::ofstream f(dir / "manifest.json");
  if (!f) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  f << json{{"format", "as2t-rir-pool/1"}, {"rirs", entries}}.dump(2) << '\n';
}

std::vector<ImpulseResponse> load_rir_pool(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw std::runtime_error("cannot read " + (dir / "manifest.json").string());
  const json j = json::parse(f);
  if (j.at("format") != "as2t-rir-pool/1") throw std::runtime_error("unknown RIR manifest format");
  std::vector<ImpulseResponse> pool;
  for (const auto& e : j.at("rirs")) {
    ImpulseResponse ir;
    ir.id = e.at("id").get<std::string>();
    const Waveform w = load_wav(dir / e.at("file").get<std::string>());
    ir.fs = w.sample_rate;
    ir.taps = w.samples * e.at("gain").get<double>();
    if (e.contains("room")) {
      const json& r = e.at("room");
      RoomSpec room;
      room.dims_m = vec3_from_json(r.at("dims_m"));
      room.absorption = r.at("absorption").get<double>();
      room.source_pos_m = vec3_from_json(r.at("source_pos_m"));
      room.mic_pos_m = vec3_from_json(r.at("mic_pos_m"));
      room.max_order = r.at("max_order").get<int>();
      room.speed_of_sound = r.at("speed_of_sound").get<double>();
      room.fs = ir.fs;
      ir.room = room;
    }
    pool.push_back(std::move(ir));
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Noise

double noise_gain(double power_x, double power_n, double snr_db) {
  if (!(power_x > 0.0)) throw std::invalid_argument("silent signal");
  if (!(power_n > 0.0)) throw std::invalid_argument("silent noise");
  return std::sqrt(power_x / (power_n * std::pow(10.0, snr_db / 10.0)));
}

Vector mix_at_snr(const Vector& x, const Vector& n, double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return x;
  if (n.size() < x.size()) throw std::invalid_argument("noise shorter than signal");
  const auto head = n.head(x.size());
  return x + noise_gain(signal_power(x), signal_power(head), snr_db) * head;
}

Waveform mix_at_snr(const Waveform& x, const Vector& n, double snr_db) {
  return Waveform(mix_at_snr(x.samples, n, snr_db), x.sample_rate);
}

std::string to_string(TransformKind k) {
  switch (k) {
    case TransformKind::Identity: return "identity";
    case TransformKind::NoiseOnly: return "noise";
    case TransformKind::RirOnly: return "rir";
    case TransformKind::NoiseAndRir: return "noise+rir";
  }
  return "?";
}

TransformKind transform_kind_from_string(const std::string& s) {
  for (auto k : {TransformKind::Identity, TransformKind::NoiseOnly, TransformKind::RirOnly,
                 TransformKind::NoiseAndRir})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown transform kind: " + s);
}

std::string to_string(NoiseDist d) {
  return d == NoiseDist::WhiteGaussian ? "white-gaussian" : "uniform";
}

NoiseDist noise_dist_from_string(const std::string& s) {
  if (s == "white-gaussian") return NoiseDist::WhiteGaussian;
  if (s == "uniform") return NoiseDist::Uniform;
  throw std::invalid_argument("unknown noise distribution: " + s);
}

Vector draw_noise(NoiseDist dist, Index n, std::uint64_t seed) {
  Rng rng(seed);
  if (dist == NoiseDist::WhiteGaussian) return gaussian_vector(rng, n);
  return uniform_vector(rng, n, -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Transforms

void TransformSet::validate() const {
  if (!(snr_lo_db <= snr_hi_db)) throw std::invalid_argument("snr_lo_db must be <= snr_hi_db");
  if ((kind == TransformKind::RirOnly || kind == TransformKind::NoiseAndRir) && rir_pool.empty())
    throw std::invalid_argument("RIR transform kinds need a non-empty rir_pool");
}

Transform::Transform(const ImpulseResponse* rir, double snr_db, NoiseDist dist,
                     std::uint64_t noise_seed, bool snr_against_input)
    : rir_(rir), snr_db_(snr_db), dist_(dist), noise_seed_(noise_seed),
      snr_against_input_(snr_against_input) {}

Vector Transform::linear(const Vector& x) const {
  return rir_ ? convolve_full(x, rir_->taps) : x;
}

Vector Transform::apply(const Vector& x) const {
  Vector y = linear(x);
  if (std::isinf(snr_db_)) return y;
  const Vector n = draw_noise(dist_, x.size(), noise_seed_);
  const double ref = signal_power(snr_against_input_ ? x : y);
  y += noise_gain(ref, signal_power(n), snr_db_) * n;
  return y;
}

Vector Transform::backprop(const Vector& grad_out) const {
  return rir_ ? convolve_adjoint(grad_out, rir_->taps) : grad_out;
}

Transform sample_transform(const TransformSet& set, std::uint64_t seed) {
  set.validate();
  Rng rng(seed);
  const ImpulseResponse* rir = nullptr;
  double snr = std::numeric_limits<double>::infinity();
  if (set.kind == TransformKind::RirOnly || set.kind == TransformKind::NoiseAndRir) {
    std::uniform_int_distribution<std::size_t> pick(0, set.rir_pool.size() - 1);
    rir = &set.rir_pool[pick(rng)];
  }
  if (set.kind == TransformKind::NoiseOnly || set.kind == TransformKind::NoiseAndRir) {
    std::uniform_real_distribution<double> u(set.snr_lo_db, set.snr_hi_db);
    snr = set.snr_lo_db == set.snr_hi_db ? set.snr_lo_db : u(rng);
  }
  return Transform(rir, snr, set.noise_dist, rng(), set.snr_against_input);
}

// ---------------------------------------------------------------------------
// Robust attack

AttackConfig robust_attack_defaults(double epsilon) {
  AttackConfig cfg;
  cfg.optimizer = Optimizer::PGD;
  cfg.epsilon = epsilon;
  cfg.iters = 400;
  cfg.alpha = 5.0 * epsilon / cfg.iters;
  cfg.adam = true;
  return cfg;
}

AttackOutcome robust_attack(const Waveform& x, LossId loss, const AttackSetting& setting,
                            const SpeakerRecognizer& model, const AttackConfig& cfg,
                            const TransformSet& set, const RobustOptions& options) {
  set.validate();
  if (options.num_transforms < 1) throw std::invalid_argument("K must be >= 1");
  DescentObjective base = white_box_objective(loss, model, setting);
  const Vector x0 = x.samples;
  // Iteration counter keyed into the transform seeds; shared with the closure copy.
  auto step = std::make_shared<std::uint64_t>(0);
  DescentObjective obj;
  obj.probe = base.probe;
  obj.gradient = [&, step, x0](const Vector& v) {
    const std::uint64_t it = (*step)++;
    LossValueGrad acc{0.0, Vector::Zero(v.size())};
    for (int k = 0; k < options.num_transforms; ++k) {
      const Transform t = sample_transform(set, split_seed(cfg.seed, 0x0a1ull + it, std::uint64_t(k)));
      const LossValueGrad lg = base.gradient(t.apply(v));
      acc.loss += lg.loss;
      acc.grad += t.backprop(lg.grad);
    }
    acc.loss /= options.num_transforms;
    acc.grad /= options.num_transforms;
    if (options.distance_weight != 0.0) {
      const Vector d = v - x0;
      const double l2 = d.norm();
      acc.loss += options.distance_weight * l2;
      if (l2 > 0.0) acc.grad += options.distance_weight * d / l2;
    }
    return acc;
  };
  return run_descent(x, setting, cfg, obj);
}

// ---------------------------------------------------------------------------
// Transmission

Waveform transmit(const Waveform& x, const ImpulseResponse& rir,
                  const std::optional<NoiseSpec>& noise, std::uint64_t seed) {
  validate(x);
  if (rir.taps.size() == 0) throw std::invalid_argument("empty RIR");
  Vector y = convolve_full(x.samples, rir.taps);
  if (noise) y = mix_at_snr(y, draw_noise(noise->dist, y.size(), seed), noise->snr_db);
  const double peak_in = x.samples.cwiseAbs().maxCoeff();
  const double peak_out = y.cwiseAbs().maxCoeff();
  if (peak_out > 0.0) y *= peak_in / peak_out;
  return Waveform(std::move(y), x.sample_rate);
}

}  // namespace as2t

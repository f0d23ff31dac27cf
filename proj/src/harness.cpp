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

#include "as2t/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json_io.hpp"

#include "as2t/rng.hpp"

namespace as2t {

using detail::json;

namespace {

double percent(long num, long den) { return 100.0 * double(num) / double(den); }

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

// Stream tags for seeds derived from the master seed.
constexpr std::uint64_t kJobStream = 0x6a6f62;
constexpr std::uint64_t kTrainPoolStream = 0x747261696e;
constexpr std::uint64_t kOtaPoolStream = 0x6f7461;
constexpr std::uint64_t kOtaNoiseStream = 0x6e6f697365;
constexpr std::uint64_t kSweepStream = 0x737765;

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Metrics

Rates compute_rates(const std::vector<Trial>& trials) {
  if (trials.empty()) throw std::invalid_argument("no trials");
  Rates r;
  long correct = 0, accepted_unenrolled = 0, rejected = 0, misidentified = 0;
  for (const auto& t : trials) {
    if (t.truth >= 0) {
      ++r.enrolled;
      if (t.decision.is_speaker(t.truth)) ++correct;
      else if (t.decision.is_imposter()) ++rejected;
      else ++misidentified;
    } else {
      ++r.unenrolled;
      if (t.decision.is_imposter()) ++correct;
      else ++accepted_unenrolled;
    }
  }
  r.acc = percent(correct, long(trials.size()));
  if (r.unenrolled > 0) r.far = percent(accepted_unenrolled, r.unenrolled);
  if (r.enrolled > 0) {
    r.frr = percent(rejected, r.enrolled);
    r.ier = percent(misidentified, r.enrolled);
  }
  return r;
}

bool untargeted_success(const AttackSetting& setting, const Decision& d) {
  return setting.source_enrolled ? !d.is_speaker(setting.source) : !d.is_imposter();
}

AsrResult compute_asr(const std::vector<std::pair<AttackSetting, Decision>>& results) {
  if (results.empty()) throw std::invalid_argument("no attack results");
  const SettingId id = results.front().first.id;
  long hit_t = 0, hit_u = 0, rejected = 0, misid = 0;
  for (const auto& [setting, d] : results) {
    if (setting.id != id) throw std::invalid_argument("mixed settings in one ASR group");
    if (setting.targeted() && goal_met(setting, d)) ++hit_t;
    if (untargeted_success(setting, d)) ++hit_u;
    if (d.is_imposter()) ++rejected;
    else if (!d.is_speaker(setting.source)) ++misid;
  }
  AsrResult r;
  r.count = long(results.size());
  if (results.front().first.targeted()) r.asr_t = percent(hit_t, r.count);
  r.asr_u = percent(hit_u, r.count);
  if (id == SettingId::C4) {
    r.rejected = percent(rejected, r.count);
    r.misidentified = percent(misid, r.count);
  }
  return r;
}

AsrResult compute_asr(const std::vector<AttackOutcome>& outcomes) {
  std::vector<std::pair<AttackSetting, Decision>> v;
  v.reserve(outcomes.size());
  for (const auto& o : outcomes) v.emplace_back(o.setting, o.decision);
  return compute_asr(v);
}

Stealth stealth_metrics(const Waveform& x, const Waveform& adv) {
  if (x.size() != adv.size()) throw std::invalid_argument("stealth_metrics: length mismatch");
  const Vector d = adv.samples - x.samples;
  Stealth s;
  s.l2 = d.norm();
  s.linf = d.size() ? d.cwiseAbs().maxCoeff() : 0.0;
  const double pd = signal_power(d);
  s.snr_db = pd > 0.0 ? 10.0 * std::log10(signal_power(x.samples) / pd)
                      : std::numeric_limits<double>::infinity();
  return s;
}

std::string to_string(TargetPolicyKind k) {
  switch (k) {
    case TargetPolicyKind::Random: return "random";
    case TargetPolicyKind::LeastLikely: return "least-likely";
    case TargetPolicyKind::Fixed: return "fixed";
  }
  return "?";
}

TargetPolicyKind target_policy_from_string(const std::string& s) {
  for (auto k : {TargetPolicyKind::Random, TargetPolicyKind::LeastLikely, TargetPolicyKind::Fixed})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown target policy: " + s);
}

Index select_target(const TargetPolicy& policy, Index source, const ScoreVector& scores,
                    std::uint64_t seed) {
  const Index n = scores.size();
  switch (policy.kind) {
    case TargetPolicyKind::Fixed:
      if (policy.fixed < 0 || policy.fixed >= n) throw std::invalid_argument("fixed target out of range");
      if (policy.fixed == source) throw std::invalid_argument("fixed target equals the source");
      return policy.fixed;
    case TargetPolicyKind::Random: {
      std::vector<Index> pool;
      for (Index i = 0; i < n; ++i)
        if (i != source) pool.push_back(i);
      if (pool.empty()) throw std::invalid_argument("no candidate target speaker");
      Rng rng(seed);
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      return pool[pick(rng)];
    }
    case TargetPolicyKind::LeastLikely:
      if (n - (source >= 0 && source < n ? 1 : 0) < 1)
        throw std::invalid_argument("no candidate target speaker");
      return argmin_excluding(scores, source);
  }
  throw std::invalid_argument("unknown target policy");
}

LossId best_loss(SettingId setting) {
  switch (setting) {
    case SettingId::C1:
    case SettingId::C2: return LossId::L1;
    case SettingId::C3: return LossId::L3;
    case SettingId::C4: return LossId::L2s;
    case SettingId::C5: return LossId::L3neg;
    case SettingId::C6: return LossId::M;
    case SettingId::C7: return LossId::CE;
    case SettingId::C8: return LossId::Ms;
    case SettingId::C9: return LossId::L3B;
    case SettingId::C10: return LossId::L3Bneg;
  }
  throw std::invalid_argument("invalid setting id");
}

// ---------------------------------------------------------------------------
// Jobs

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto body = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto count = std::min<std::size_t>(std::size_t(workers), n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < count; ++t) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<AttackOutcome> run_jobs(const std::vector<AttackJob>& jobs, LossId loss,
                                    const SpeakerRecognizer& model, const AttackConfig& cfg,
                                    int workers, const TransformSet* transforms,
                                    const RobustOptions& robust, const FakebobOptions& fakebob) {
  std::vector<AttackOutcome> out(jobs.size());
  parallel_for(jobs.size(), workers, [&](std::size_t i) {
    AttackConfig c = cfg;
    c.seed = jobs[i].seed;
    out[i] = transforms
                 ? robust_attack(jobs[i].voice, loss, jobs[i].setting, model, c, *transforms, robust)
                 : run_attack(jobs[i].voice, loss, jobs[i].setting, model, c, fakebob);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Transferability

double input_gradient_size(const SpeakerRecognizer& model, LossId loss,
                           const std::vector<AttackJob>& jobs) {
  if (jobs.empty()) throw std::invalid_argument("no voices");
  double total = 0.0;
  for (const auto& j : jobs)
    total += input_loss_grad(loss, j.voice.samples, model, j.setting).grad.lpNorm<1>();
  return total / double(jobs.size());
}

TransferResult transfer_matrix(const std::vector<SpeakerRecognizer>& models, LossId loss,
                               const AttackConfig& cfg, const std::vector<AttackJob>& jobs,
                               int workers) {
  if (models.size() < 2) throw std::invalid_argument("transfer matrix needs >= 2 models");
  if (jobs.empty()) throw std::invalid_argument("no voices");
  for (const auto& m : models)
    if (m.database().speaker_ids != models.front().database().speaker_ids)
      throw std::invalid_argument("models must enroll the same speakers in the same order");
  const auto n = Index(models.size());
  TransferResult r;
  r.cells = Matrix::Zero(n, n);
  r.gradient_size = Vector::Zero(n);
  for (Index j = 0; j < n; ++j) {
    r.model_names.push_back(models[j].embedder().spec().name());
    r.gradient_size[j] = input_gradient_size(models[j], loss, jobs);
  }
  r.loss_change_bound = cfg.epsilon * r.gradient_size;

  auto goal_rate = [&](const SpeakerRecognizer& m, const std::vector<Waveform>& voices) {
    long hits = 0;
    for (std::size_t k = 0; k < jobs.size(); ++k) hits += goal_met(jobs[k].setting, m.decide(voices[k]));
    return percent(hits, long(jobs.size()));
  };
  std::vector<Waveform> benign;
  for (const auto& j : jobs) benign.push_back(j.voice);
  Vector benign_rate(n);
  for (Index j = 0; j < n; ++j) benign_rate[j] = goal_rate(models[j], benign);

  for (Index i = 0; i < n; ++i) {
    const auto outcomes = run_jobs(jobs, loss, models[i], cfg, workers);
    std::vector<Waveform> adv;
    for (const auto& o : outcomes) adv.push_back(o.adversarial);
    for (Index j = 0; j < n; ++j) r.cells(i, j) = goal_rate(models[j], adv) - benign_rate[j];
  }
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      if (std::abs(r.cells(i, j) - r.cells(j, i)) > 5.0) r.asymmetric_pairs.emplace_back(i, j);
  return r;
}

// ---------------------------------------------------------------------------
// Corpus and models

ExperimentCorpus make_experiment_corpus(const CorpusConfig& cfg, std::uint64_t master_seed) {
  if (cfg.num_speakers < 1 || cfg.enroll_utterances < 1 || cfg.test_utterances < 1 ||
      cfg.num_imposters < 0)
    throw std::invalid_argument("invalid corpus configuration");
  ExperimentCorpus c;
  const Corpus full = generate_corpus(cfg.num_speakers, cfg.enroll_utterances + cfg.test_utterances,
                                      cfg.duration_s, master_seed);
  for (const auto& [id, list] : full) {
    c.enroll[id].assign(list.begin(), list.begin() + cfg.enroll_utterances);
    c.test[id].assign(list.begin() + cfg.enroll_utterances, list.end());
  }
  if (cfg.num_imposters > 0)
    c.imposter = generate_corpus(cfg.num_imposters, cfg.test_utterances, cfg.duration_s,
                                 master_seed, cfg.num_speakers);
  return c;
}

EerResult tune_threshold(const SpeakerRecognizer& model, const Corpus& enrolled_test,
                         const Corpus& imposter) {
  const auto& db = model.database();
  std::vector<double> genuine, impostor;
  for (const auto& [id, list] : enrolled_test) {
    const Index k = db.index_of(id);
    for (const auto& w : list) genuine.push_back(model.scores(w)[k]);
  }
  for (const auto& [id, list] : imposter)
    for (const auto& w : list) impostor.push_back(model.scores(w).maxCoeff());
  return tune_threshold_eer(genuine, impostor);
}

SpeakerRecognizer build_model(const EmbedderSpec& spec, TaskKind task,
                              const ExperimentCorpus& corpus) {
  Embedder embedder(spec);
  if (task == TaskKind::CSI) return SpeakerRecognizer(embedder, enroll(corpus.enroll, embedder, task));
  if (task == TaskKind::OSI) {
    if (corpus.imposter.empty()) throw std::invalid_argument("OSI needs imposter voices");
    SpeakerRecognizer m(embedder, enroll(corpus.enroll, embedder, task));
    m.database().threshold = tune_threshold(m, corpus.test, corpus.imposter).threshold;
    return m;
  }
  const auto& first = *corpus.enroll.begin();
  Corpus one{{first.first, first.second}};
  SpeakerRecognizer m(embedder, enroll(one, embedder, task));
  Corpus genuine{{first.first, corpus.test.at(first.first)}};
  Corpus others = corpus.imposter;
  for (const auto& [id, list] : corpus.test)
    if (id != first.first) others[id] = list;
  m.database().threshold = tune_threshold(m, genuine, others).threshold;
  return m;
}


namespace {

bool source_enrolled_in(SettingId s) {
  switch (s) {
    case SettingId::C1:
    case SettingId::C3:
    case SettingId::C4:
    case SettingId::C6:
    case SettingId::C8:
    case SettingId::C9: return true;
    default: return false;
  }
}

// Settings whose enrolled target is chosen by a policy (SV targets are implied).
bool policy_target_in(SettingId s) {
  switch (s) {
    case SettingId::C1:
    case SettingId::C2:
    case SettingId::C6:
    case SettingId::C7: return true;
    default: return false;
  }
}

}  // namespace

std::vector<AttackJob> make_jobs(SettingId setting, const SpeakerRecognizer& model,
                                 const ExperimentCorpus& corpus, const TargetPolicy& policy,
                                 std::uint64_t master_seed) {
  const auto& db = model.database();
  if (task_of(setting) != db.task)
    throw std::invalid_argument(to_string(setting) + " does not match the model task");
  std::vector<AttackJob> jobs;
  auto add = [&](const std::string& speaker, std::size_t u, const Waveform& w, Index source) {
    const std::uint64_t seed = split_seed(master_seed, kJobStream, jobs.size());
    Index target = -1;
    if (policy_target_in(setting))
      target = select_target(policy, source, model.scores(w), split_seed(seed, 1));
    jobs.push_back({speaker + "-" + std::to_string(u), w, AttackSetting::make(setting, source, target), seed});
  };
  if (source_enrolled_in(setting)) {
    for (const auto& [id, list] : corpus.test) {
      if (db.task == TaskKind::SV && id != db.speaker_ids.front()) continue;
      const Index source = db.index_of(id);
      for (std::size_t u = 0; u < list.size(); ++u) add(id, u, list[u], source);
    }
  } else {
    for (const auto& [id, list] : corpus.imposter)
      for (std::size_t u = 0; u < list.size(); ++u) add(id, u, list[u], -1);
  }
  if (jobs.empty()) throw std::invalid_argument("no voices for " + to_string(setting));
  return jobs;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

AttackConfig attack_from_json(const json& j) {
  AttackConfig c;
  if (j.contains("optimizer")) c.optimizer = optimizer_from_string(upper(j.at("optimizer").get<std::string>()));
  c.epsilon = j.value("epsilon", c.epsilon);
  c.alpha = j.contains("alpha") ? j.at("alpha").get<double>() : c.epsilon / 5.0;
  c.iters = j.value("iters", c.iters);
  c.kappa = j.value("kappa", c.kappa);
  c.lambda_init = j.value("lambda_init", c.lambda_init);
  c.binary_search_steps = j.value("binary_search_steps", c.binary_search_steps);
  c.nes_samples = j.value("nes_samples", c.nes_samples);
  c.nes_sigma = j.value("nes_sigma", c.nes_sigma);
  c.random_start = j.value("random_start", c.random_start);
  c.adam = j.value("adam", c.adam);
  if (j.contains("early_stop") && !j.at("early_stop").is_null())
    c.early_stop = j.at("early_stop").get<bool>();
  c.max_queries = j.value("max_queries", c.max_queries);
  return c;
}

json attack_to_json(const AttackConfig& c) {
  json j = {{"optimizer", to_string(c.optimizer)},
            {"epsilon", c.epsilon},
            {"alpha", c.alpha},
            {"iters", c.iters},
            {"kappa", c.kappa},
            {"lambda_init", c.lambda_init},
            {"binary_search_steps", c.binary_search_steps},
            {"nes_samples", c.nes_samples},
            {"nes_sigma", c.nes_sigma},
            {"random_start", c.random_start},
            {"adam", c.adam},
            {"max_queries", c.max_queries}};
  j["early_stop"] = c.early_stop ? json(*c.early_stop) : json(nullptr);
  return j;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (models.empty()) throw std::invalid_argument("at least one model spec is required");
  const LossId l = loss_or_default();
  if (!loss_applicable(l, setting))
    throw std::invalid_argument("loss " + to_string(l) + " does not apply to " + to_string(setting));
  if (attack.optimizer == Optimizer::CW2 && !cw_eligible(l, setting))
    throw std::invalid_argument("loss " + to_string(l) + " is not CW-eligible for " + to_string(setting));
  if (target.kind == TargetPolicyKind::Fixed && !policy_target_in(setting))
    throw std::invalid_argument("a fixed target needs an enrolled-target setting");
  if (transfer && models.size() < 2) throw std::invalid_argument("transfer needs >= 2 models");
  for (double e : epsilon_sweep)
    if (!(e > 0.0)) throw std::invalid_argument("epsilon sweep values must be positive");
  for (const auto& p : ota.pools)
    if (p.size < 1 || p.name == "train") throw std::invalid_argument("invalid OTA pool " + p.name);
  attack.validate();
}

ExperimentConfig config_from_json_text(const std::string& text) {
  const json j = json::parse(text);
  ExperimentConfig c;
  c.experiment_id = j.value("experiment_id", c.experiment_id);
  c.master_seed = j.value("master_seed", c.master_seed);
  c.workers = j.value("workers", c.workers);
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("corpus")) {
    const json& k = j.at("corpus");
    c.corpus.num_speakers = k.value("num_speakers", c.corpus.num_speakers);
    c.corpus.enroll_utterances = k.value("enroll_utterances", c.corpus.enroll_utterances);
    c.corpus.test_utterances = k.value("test_utterances", c.corpus.test_utterances);
    c.corpus.num_imposters = k.value("num_imposters", c.corpus.num_imposters);
    c.corpus.duration_s = k.value("duration_s", c.corpus.duration_s);
  }
  if (j.contains("models")) {
    c.models.clear();
    for (const auto& m : j.at("models")) c.models.push_back(detail::spec_from_json(m));
  }
  if (j.contains("setting")) c.setting = setting_from_string(j.at("setting").get<std::string>());
  if (j.contains("task") &&
      task_from_string(upper(j.at("task").get<std::string>())) != task_of(c.setting))
    throw std::invalid_argument("task does not match setting " + to_string(c.setting));
  if (j.contains("loss") && !j.at("loss").is_null())
    c.loss = loss_from_string(j.at("loss").get<std::string>());
  if (j.contains("target_policy")) {
    if (!policy_target_in(c.setting))
      throw std::invalid_argument("target_policy given for " + to_string(c.setting) +
                                  ", which has no policy-chosen target");
    c.target.kind = target_policy_from_string(j.at("target_policy").get<std::string>());
  }
  if (j.contains("fixed_target")) c.fixed_target_id = j.at("fixed_target").get<std::string>();
  if (j.contains("attack")) c.attack = attack_from_json(j.at("attack"));
  if (j.contains("robust")) {
    const json& r = j.at("robust");
    c.robust.enabled = r.value("enabled", c.robust.enabled);
    c.robust.num_transforms = r.value("num_transforms", c.robust.num_transforms);
    c.robust.iters = r.value("iters", c.robust.iters);
    if (r.contains("alpha")) c.robust.alpha = r.at("alpha").get<double>();
    c.robust.adam = r.value("adam", c.robust.adam);
    if (r.contains("transform"))
      c.robust.transform = transform_kind_from_string(r.at("transform").get<std::string>());
    c.robust.snr_lo_db = r.value("snr_lo_db", c.robust.snr_lo_db);
    c.robust.snr_hi_db = r.value("snr_hi_db", c.robust.snr_hi_db);
    if (r.contains("noise")) c.robust.noise = noise_dist_from_string(r.at("noise").get<std::string>());
    c.robust.rir_pool_size = r.value("rir_pool_size", c.robust.rir_pool_size);
    c.robust.snr_against_input = r.value("snr_against_input", c.robust.snr_against_input);
  }
  if (j.contains("ota")) {
    const json& o = j.at("ota");
    if (o.contains("pools")) {
      c.ota.pools.clear();
      for (const auto& p : o.at("pools"))
        c.ota.pools.push_back({p.value("name", std::string("heldout")), p.value("size", 10)});
    }
    if (o.contains("noise_kinds")) {
      c.ota.noise_kinds.clear();
      for (const auto& n : o.at("noise_kinds")) c.ota.noise_kinds.push_back(noise_dist_from_string(n));
    }
    if (o.contains("snr_db")) c.ota.snr_db = o.at("snr_db").get<std::vector<double>>();
  }
  if (j.contains("epsilon_sweep")) c.epsilon_sweep = j.at("epsilon_sweep").get<std::vector<double>>();
  c.transfer = j.value("transfer", c.transfer);
  c.write_wavs = j.value("write_wavs", c.write_wavs);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_to_json_text(const ExperimentConfig& c) {
  json models = json::array();
  for (const auto& m : c.models) models.push_back(detail::spec_to_json(m));
  json pools = json::array();
  for (const auto& p : c.ota.pools) pools.push_back({{"name", p.name}, {"size", p.size}});
  json kinds = json::array();
  for (auto k : c.ota.noise_kinds) kinds.push_back(to_string(k));
  json j = {
      {"experiment_id", c.experiment_id},
      {"master_seed", c.master_seed},
      {"workers", c.workers},
      {"output_dir", c.output_dir.string()},
      {"corpus",
       {{"num_speakers", c.corpus.num_speakers},
        {"enroll_utterances", c.corpus.enroll_utterances},
        {"test_utterances", c.corpus.test_utterances},
        {"num_imposters", c.corpus.num_imposters},
        {"duration_s", c.corpus.duration_s}}},
      {"models", models},
      {"setting", to_string(c.setting)},
      {"loss", to_string(c.loss_or_default())},
      {"attack", attack_to_json(c.attack)},
      {"robust",
       {{"enabled", c.robust.enabled},
        {"num_transforms", c.robust.num_transforms},
        {"iters", c.robust.iters},
        {"adam", c.robust.adam},
        {"transform", to_string(c.robust.transform)},
        {"snr_lo_db", c.robust.snr_lo_db},
        {"snr_hi_db", c.robust.snr_hi_db},
        {"noise", to_string(c.robust.noise)},
        {"rir_pool_size", c.robust.rir_pool_size},
        {"snr_against_input", c.robust.snr_against_input}}},
      {"ota", {{"pools", pools}, {"noise_kinds", kinds}, {"snr_db", c.ota.snr_db}}},
      {"epsilon_sweep", c.epsilon_sweep},
      {"transfer", c.transfer},
      {"write_wavs", c.write_wavs}};
  if (c.robust.alpha) j["robust"]["alpha"] = *c.robust.alpha;
  if (policy_target_in(c.setting)) j["target_policy"] = to_string(c.target.kind);
  if (c.fixed_target_id) j["fixed_target"] = *c.fixed_target_id;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Records

std::string record_to_json_line(const VoiceRecord& r) {
  nlohmann::ordered_json j;
  j["experiment_id"] = r.experiment_id;
  j["model"] = r.model;
  j["voice_id"] = r.voice_id;
  j["setting"] = r.setting;
  j["loss"] = r.loss;
  j["optimizer"] = r.optimizer;
  j["epsilon"] = r.epsilon;
  j["source"] = r.source;
  j["source_id"] = r.source_id;
  j["target"] = r.target;
  j["target_id"] = r.target_id;
  j["success"] = r.success;
  j["decision"] = r.decision;
  j["final_loss"] = r.final_loss;
  j["l2"] = r.stealth.l2;
  j["linf"] = r.stealth.linf;
  j["snr_db"] = std::isinf(r.stealth.snr_db) ? nlohmann::ordered_json(nullptr)
                                             : nlohmann::ordered_json(r.stealth.snr_db);
  j["queries"] = r.queries;
  j["iterations"] = r.iterations;
  j["wav"] = r.wav;
  return j.dump();
}

VoiceRecord record_from_json_line(const std::string& line) {
  const json j = json::parse(line);
  VoiceRecord r;
  r.experiment_id = j.at("experiment_id").get<std::string>();
  r.model = j.at("model").get<std::string>();
  r.voice_id = j.at("voice_id").get<std::string>();
  r.setting = j.at("setting").get<std::string>();
  r.loss = j.at("loss").get<std::string>();
  r.optimizer = j.at("optimizer").get<std::string>();
  r.epsilon = j.at("epsilon").get<double>();
  r.source = j.at("source").get<Index>();
  r.source_id = j.at("source_id").get<std::string>();
  r.target = j.at("target").get<Index>();
  r.target_id = j.at("target_id").get<std::string>();
  r.success = j.at("success").get<bool>();
  r.decision = j.at("decision").get<Index>();
  r.final_loss = j.at("final_loss").get<double>();
  r.stealth.l2 = j.at("l2").get<double>();
  r.stealth.linf = j.at("linf").get<double>();
  r.stealth.snr_db = j.at("snr_db").is_null() ? std::numeric_limits<double>::infinity()
                                              : j.at("snr_db").get<double>();
  r.queries = j.at("queries").get<long>();
  r.iterations = j.at("iterations").get<int>();
  r.wav = j.at("wav").get<std::string>();
  return r;
}

std::vector<VoiceRecord> load_records(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::vector<VoiceRecord> out;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) out.push_back(record_from_json_line(line));
  return out;
}

namespace {

std::string opt_number(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

Decision decision_of(Index d) { return d < 0 ? Decision::imposter() : Decision::speaker(d); }

}  // namespace

std::string summary_csv(const std::vector<VoiceRecord>& records) {
  std::ostringstream os;
  os << "experiment_id,model,setting,loss,optimizer,epsilon,count,asr_t,asr_u,c4_rejected,"
        "c4_misidentified,mean_l2,mean_linf,mean_snr_db,mean_queries,pesq,wall_time_s\n";
  std::vector<std::string> order;
  std::map<std::string, std::vector<const VoiceRecord*>> groups;
  for (const auto& r : records) {
    const std::string key = r.experiment_id + '\x1f' + r.model + '\x1f' + r.setting + '\x1f' + r.loss +
                            '\x1f' + r.optimizer + '\x1f' + format_number(r.epsilon);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  for (const auto& key : order) {
    const auto& g = groups.at(key);
    const VoiceRecord& h = *g.front();
    std::vector<std::pair<AttackSetting, Decision>> results;
    double l2 = 0, linf = 0, snr = 0, queries = 0;
    long finite = 0;
    for (const auto* r : g) {
      results.emplace_back(AttackSetting::make(setting_from_string(r->setting), r->source, r->target),
                           decision_of(r->decision));
      l2 += r->stealth.l2;
      linf += r->stealth.linf;
      queries += double(r->queries);
      if (std::isfinite(r->stealth.snr_db)) {
        snr += r->stealth.snr_db;
        ++finite;
      }
    }
    const AsrResult a = compute_asr(results);
    const double n = double(g.size());
    os << h.experiment_id << ',' << h.model << ',' << h.setting << ',' << h.loss << ','
       << h.optimizer << ',' << format_number(h.epsilon) << ',' << g.size() << ','
       << opt_number(a.asr_t) << ',' << format_number(a.asr_u) << ',' << opt_number(a.rejected)
       << ',' << opt_number(a.misidentified) << ',' << format_number(l2 / n) << ','
       << format_number(linf / n) << ',' << (finite ? format_number(snr / double(finite)) : "inf")
       << ',' << format_number(queries / n) << ",,\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Corpus directories

namespace {

const char* const kSplits[] = {"enroll", "test", "imposter"};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

std::string two_digits(std::size_t u) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02zu", u);
  return buf;
}

}  // namespace

void save_experiment_corpus(const ExperimentCorpus& corpus, const CorpusConfig& cfg,
                            std::uint64_t master_seed, const std::filesystem::path& dir) {
  const Corpus* parts[] = {&corpus.enroll, &corpus.test, &corpus.imposter};
  for (int p = 0; p < 3; ++p)
    for (const auto& [id, list] : *parts[p]) {
      const auto sub = dir / kSplits[p] / id;
      std::filesystem::create_directories(sub);
      for (std::size_t u = 0; u < list.size(); ++u) store_wav(list[u], sub / (two_digits(u) + ".wav"));
    }
  const json j = {{"format", "as2t-corpus/1"},
                  {"master_seed", master_seed},
                  {"num_speakers", cfg.num_speakers},
                  {"enroll_utterances", cfg.enroll_utterances},
                  {"test_utterances", cfg.test_utterances},
                  {"num_imposters", cfg.num_imposters},
                  {"duration_s", cfg.duration_s}};
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

Corpus load_corpus_split(const std::filesystem::path& dir, const std::string& split) {
  const auto root = dir / split;
  if (!std::filesystem::is_directory(root)) throw std::runtime_error("missing corpus split " + root.string());
  std::vector<std::filesystem::path> speakers;
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory()) speakers.push_back(e.path());
  std::sort(speakers.begin(), speakers.end());
  Corpus c;
  for (const auto& s : speakers) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(s))
      if (e.path().extension() == ".wav") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    auto& list = c[s.filename().string()];
    for (const auto& f : files) list.push_back(load_wav(f));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Experiment driver

ExperimentFiles run_experiment(const ExperimentConfig& cfg,
                               const std::function<void(const std::string&)>& log) {
  cfg.validate();
  auto say = [&](const std::string& m) {
    if (log) log(m);
  };
  auto stage = [](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("[") + name + "] " + e.what());
    }
  };

  const TaskKind task = task_of(cfg.setting);
  const LossId loss = cfg.loss_or_default();
  const auto out = cfg.output_dir;
  std::filesystem::create_directories(out);

  const ExperimentCorpus corpus =
      stage("corpus", [&] { return make_experiment_corpus(cfg.corpus, cfg.master_seed); });
  std::vector<SpeakerRecognizer> models = stage("enroll", [&] {
    std::vector<SpeakerRecognizer> v;
    for (const auto& spec : cfg.models) v.push_back(build_model(spec, task, corpus));
    return v;
  });
  const SpeakerRecognizer& model = models.front();
  ExperimentFiles files;
  files.database = out / "database.json";
  save_database(model.database(), model.embedder().spec(), files.database);

  TargetPolicy policy = cfg.target;
  if (cfg.fixed_target_id) {
    policy.kind = TargetPolicyKind::Fixed;
    policy.fixed = model.database().index_of(*cfg.fixed_target_id);
    if (policy.fixed < 0)
      throw std::invalid_argument("[targets] fixed target '" + *cfg.fixed_target_id + "' is not enrolled");
  }
  const std::vector<AttackJob> jobs =
      stage("targets", [&] { return make_jobs(cfg.setting, model, corpus, policy, cfg.master_seed); });

  AttackConfig attack = cfg.attack;
  std::optional<TransformSet> transforms;
  RobustOptions robust;
  if (cfg.robust.enabled) {
    transforms.emplace();
    transforms->kind = cfg.robust.transform;
    transforms->snr_lo_db = cfg.robust.snr_lo_db;
    transforms->snr_hi_db = cfg.robust.snr_hi_db;
    transforms->noise_dist = cfg.robust.noise;
    transforms->snr_against_input = cfg.robust.snr_against_input;
    if (cfg.robust.transform == TransformKind::RirOnly || cfg.robust.transform == TransformKind::NoiseAndRir)
      transforms->rir_pool = generate_rir_pool(cfg.robust.rir_pool_size,
                                               split_seed(cfg.master_seed, kTrainPoolStream), "train-");
    robust.num_transforms = cfg.robust.num_transforms;
    attack.iters = cfg.robust.iters;
    attack.adam = cfg.robust.adam;
  }
  FakebobOptions fakebob;
  if (task != TaskKind::CSI) {
    std::vector<Waveform> candidates;
    for (const auto& [id, list] : corpus.imposter) candidates.insert(candidates.end(), list.begin(), list.end());
    fakebob.threshold_probe = closest_rejected(ScoreOracle(model), candidates);
  }

  const std::vector<double> epsilons =
      cfg.epsilon_sweep.empty() ? std::vector<double>{cfg.attack.epsilon} : cfg.epsilon_sweep;
  const double alpha_ratio = cfg.attack.alpha / cfg.attack.epsilon;
  const auto& db = model.database();
  std::vector<VoiceRecord> records;
  std::vector<AttackOutcome> first_outcomes;
  for (std::size_t e = 0; e < epsilons.size(); ++e) {
    AttackConfig c = attack;
    c.epsilon = epsilons[e];
    c.alpha = cfg.robust.enabled ? cfg.robust.alpha.value_or(std::min(1.0, 5.0 / c.iters) * c.epsilon)
                                 : alpha_ratio * c.epsilon;
    say("attacking " + std::to_string(jobs.size()) + " voices at epsilon " + format_number(c.epsilon));
    std::vector<AttackJob> sweep_jobs = jobs;
    if (e > 0)
      for (std::size_t k = 0; k < sweep_jobs.size(); ++k)
        sweep_jobs[k].seed = split_seed(jobs[k].seed, kSweepStream, e);
    const auto outcomes = stage("attack", [&] {
      return run_jobs(sweep_jobs, loss, model, c, cfg.workers, transforms ? &*transforms : nullptr,
                      robust, fakebob);
    });
    const std::string sub = epsilons.size() > 1 ? "adv/eps" + std::to_string(e) : "adv";
    if (cfg.write_wavs) std::filesystem::create_directories(out / sub);
    for (std::size_t k = 0; k < jobs.size(); ++k) {
      const auto& o = outcomes[k];
      VoiceRecord r;
      r.experiment_id = cfg.experiment_id;
      r.model = model.embedder().spec().name();
      r.voice_id = jobs[k].voice_id;
      r.setting = to_string(cfg.setting);
      r.loss = to_string(loss);
      r.optimizer = cfg.robust.enabled ? "robust-" + to_string(c.optimizer) : to_string(c.optimizer);
      r.epsilon = c.epsilon;
      r.source = jobs[k].setting.source;
      r.target = jobs[k].setting.target;
      r.source_id = r.source >= 0 ? db.speaker_ids[r.source] : jobs[k].voice_id.substr(0, jobs[k].voice_id.rfind('-'));
      r.target_id = r.target >= 0 ? db.speaker_ids[r.target] : "";
      r.success = o.success;
      r.decision = o.decision.index();
      r.final_loss = o.final_loss;
      r.stealth = stealth_metrics(jobs[k].voice, o.adversarial);
      r.queries = o.queries_used;
      r.iterations = o.iterations_used;
      if (cfg.write_wavs) {
        r.wav = sub + "/" + jobs[k].voice_id + ".wav";
        store_wav(o.adversarial, out / r.wav);
      }
      records.push_back(std::move(r));
    }
    if (e == 0) first_outcomes = outcomes;
  }
  files.records = out / "records.jsonl";
  {
    std::string text;
    for (const auto& r : records) text += record_to_json_line(r) + "\n";
    write_text(files.records, text);
  }
  files.summary = out / "summary.csv";
  write_text(files.summary, summary_csv(records));

  if (!cfg.ota.snr_db.empty()) {
    stage("ota", [&] {
      std::ostringstream os;
      os << "pool,noise,snr_db,variant,count,asr_t,asr_u\n";
      const std::vector<OtaPool> pools = cfg.ota.pools.empty() ? std::vector<OtaPool>{OtaPool{}} : cfg.ota.pools;
      for (std::size_t p = 0; p < pools.size(); ++p) {
        const auto pool = generate_rir_pool(pools[p].size, split_seed(cfg.master_seed, kOtaPoolStream, p),
                                            pools[p].name + "-");
        for (std::size_t nk = 0; nk < cfg.ota.noise_kinds.size(); ++nk)
          for (std::size_t si = 0; si < cfg.ota.snr_db.size(); ++si) {
            const NoiseSpec noise{cfg.ota.noise_kinds[nk], cfg.ota.snr_db[si]};
            const std::pair<AttackSetting, Decision> blank{AttackSetting{}, Decision::imposter()};
            std::vector<std::pair<AttackSetting, Decision>> benign(jobs.size(), blank), adv(jobs.size(), blank);
            parallel_for(jobs.size(), cfg.workers, [&](std::size_t k) {
              const auto& rir = pool[k % pool.size()];
              const auto seed = split_seed(split_seed(cfg.master_seed, kOtaNoiseStream, p),
                                           nk * 1000003 + si, k);
              benign[k] = {jobs[k].setting, model.decide(transmit(jobs[k].voice, rir, noise, seed))};
              adv[k] = {jobs[k].setting, model.decide(transmit(first_outcomes[k].adversarial, rir, noise, seed))};
            });
            for (int v = 0; v < 2; ++v) {
              const AsrResult a = compute_asr(v == 0 ? benign : adv);
              os << pools[p].name << ',' << to_string(noise.dist) << ',' << format_number(noise.snr_db)
                 << ',' << (v == 0 ? "benign" : "adversarial") << ',' << a.count << ','
                 << opt_number(a.asr_t) << ',' << format_number(a.asr_u) << '\n';
            }
          }
      }
      files.ota = out / "ota.csv";
      write_text(*files.ota, os.str());
      return 0;
    });
  }

  if (cfg.transfer) {
    stage("transfer", [&] {
      AttackConfig c = cfg.attack;
      const TransferResult t = transfer_matrix(models, loss, c, jobs, cfg.workers);
      std::ostringstream os;
      os << "source_model,target_model,metric_increase,target_gradient_size,target_loss_change_bound,"
            "asymmetric\n";
      const auto n = Index(models.size());
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
          const bool asym = std::abs(t.cells(i, j) - t.cells(j, i)) > 5.0;
          os << t.model_names[i] << ',' << t.model_names[j] << ',' << format_number(t.cells(i, j)) << ','
             << format_number(t.gradient_size[j]) << ',' << format_number(t.loss_change_bound[j]) << ','
             << (asym ? 1 : 0) << '\n';
        }
      files.transfer = out / "transfer.csv";
      write_text(*files.transfer, os.str());
      return 0;
    });
  }
  return files;
}

}  // namespace as2t

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

// as2t command line front end.

#include <chrono>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "as2t/harness.hpp"

namespace {

using namespace as2t;

/// Flags shared by the experiment subcommands; each overrides the config file.
struct ExperimentFlags {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> setting, loss, optimizer, target_policy, fixed_target;
  std::optional<double> epsilon, alpha;
  std::optional<int> iters, workers, num_speakers, num_transforms;
  bool dump = false;

  void add(CLI::App* app) {
    app->add_option("-c,--config", config, "JSON experiment config (defaults for every flag)");
    app->add_option("-o,--out", out, "output directory");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--setting", setting, "attack setting C1..C10");
    app->add_option("--loss", loss, "loss name (default: best for the setting)");
    app->add_option("--optimizer", optimizer, "fgsm | pgd | cw2 | nes");
    app->add_option("--target-policy", target_policy, "random | least-likely | fixed");
    app->add_option("--fixed-target", fixed_target, "speaker id for the fixed policy");
    app->add_option("--epsilon", epsilon, "L-inf budget");
    app->add_option("--alpha", alpha, "step size");
    app->add_option("--iters", iters, "iterations");
    app->add_option("--workers", workers, "worker threads");
    app->add_option("--num-speakers", num_speakers, "enrolled speakers in the corpus");
    app->add_option("--num-transforms", num_transforms, "K for the robust attack");
    app->add_flag("--dump-config", dump, "print the effective config and exit");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = config.empty() ? ExperimentConfig{} : load_config(config);
    if (out) c.output_dir = *out;
    if (seed) c.master_seed = *seed;
    if (setting) c.setting = setting_from_string(*setting);
    if (loss) c.loss = loss_from_string(*loss);
    if (optimizer) {
      std::string s = *optimizer;
      for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      c.attack.optimizer = optimizer_from_string(s);
    }
    if (target_policy) c.target.kind = target_policy_from_string(*target_policy);
    if (fixed_target) c.fixed_target_id = *fixed_target;
    if (epsilon) {
      const double ratio = c.attack.alpha / c.attack.epsilon;
      c.attack.epsilon = *epsilon;
      c.attack.alpha = ratio * *epsilon;
    }
    if (alpha) c.attack.alpha = *alpha;
    if (iters) {
      c.attack.iters = *iters;
      c.robust.iters = *iters;
    }
    if (workers) c.workers = *workers;
    if (num_speakers) c.corpus.num_speakers = *num_speakers;
    if (num_transforms) c.robust.num_transforms = *num_transforms;
    return c;
  }
};

void log_line(const std::string& m) { std::cerr << "as2t: " << m << '\n'; }

int run(ExperimentConfig cfg, bool dump) {
  if (dump) {
    std::cout << config_to_json_text(cfg);
    return 0;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentFiles files = run_experiment(cfg, log_line);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log_line("records  " + files.records.string());
  log_line("summary  " + files.summary.string());
  if (files.ota) log_line("ota      " + files.ota->string());
  if (files.transfer) log_line("transfer " + files.transfer->string());
  log_line("wall time " + format_number(secs) + " s");
  std::cout << summary_csv(load_records(files.records));
  return 0;
}

EmbedderSpec spec_from_flags(std::uint64_t weight_seed, const std::string& activation, int dim) {
  EmbedderSpec s;
  s.weight_seed = weight_seed;
  s.activation = activation_from_string(activation);
  s.embed_dim = dim;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"as2t: adversarial attacks on toy speaker recognition"};
  app.require_subcommand(1);

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "write a synthetic enroll/test/imposter corpus");
  std::string gen_out;
  std::uint64_t gen_seed = 1;
  CorpusConfig gen_cfg;
  gen->add_option("-o,--out", gen_out, "corpus directory")->required();
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--num-speakers", gen_cfg.num_speakers);
  gen->add_option("--enroll-utterances", gen_cfg.enroll_utterances);
  gen->add_option("--test-utterances", gen_cfg.test_utterances);
  gen->add_option("--num-imposters", gen_cfg.num_imposters);
  gen->add_option("--duration", gen_cfg.duration_s, "seconds per utterance");

  // enroll
  auto* enr = app.add_subcommand("enroll", "enroll a corpus directory into a speaker database");
  std::string enr_corpus, enr_out, enr_task = "csi", enr_act = "tanh";
  std::uint64_t enr_wseed = 1;
  int enr_dim = 32;
  enr->add_option("--corpus", enr_corpus, "corpus directory")->required();
  enr->add_option("-o,--out", enr_out, "database JSON")->required();
  enr->add_option("--task", enr_task, "osi | csi | sv");
  enr->add_option("--weight-seed", enr_wseed);
  enr->add_option("--activation", enr_act, "tanh | softplus");
  enr->add_option("--embed-dim", enr_dim);

  // tune-threshold
  auto* tune = app.add_subcommand("tune-threshold", "set the EER threshold of an OSI/SV database");
  std::string tune_corpus, tune_db, tune_out, tune_report;
  tune->add_option("--corpus", tune_corpus, "corpus directory")->required();
  tune->add_option("--db", tune_db, "database JSON")->required();
  tune->add_option("-o,--out", tune_out, "output database JSON")->required();
  tune->add_option("--report", tune_report, "EER report JSON");

  // experiment subcommands
  ExperimentFlags attack_flags, robust_flags, ota_flags, transfer_flags;
  auto* att = app.add_subcommand("attack", "craft adversarial voices and write reports");
  attack_flags.add(att);
  auto* rob = app.add_subcommand("robust-attack", "craft voices robust to reverberation and noise");
  robust_flags.add(rob);
  auto* ota = app.add_subcommand("ota-eval", "attack, then evaluate through held-out rooms and noise");
  ota_flags.add(ota);
  auto* tra = app.add_subcommand("transfer-matrix", "cross-model transferability matrix");
  transfer_flags.add(tra);

  // report
  auto* rep = app.add_subcommand("report", "recompute the summary CSV from per-voice records");
  std::string rep_records, rep_out;
  rep->add_option("--records", rep_records, "records.jsonl")->required();
  rep->add_option("-o,--out", rep_out, "summary CSV (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      save_experiment_corpus(make_experiment_corpus(gen_cfg, gen_seed), gen_cfg, gen_seed, gen_out);
      log_line("wrote corpus to " + gen_out);
      return 0;
    }
    if (*enr) {
      std::string t = enr_task;
      for (auto& ch : t) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      const TaskKind task = task_from_string(t);
      const EmbedderSpec spec = spec_from_flags(enr_wseed, enr_act, enr_dim);
      Corpus voices = load_corpus_split(enr_corpus, "enroll");
      if (task == TaskKind::SV) voices = Corpus{*voices.begin()};
      save_database(enroll(voices, Embedder(spec), task), spec, enr_out);
      log_line("enrolled " + std::to_string(voices.size()) + " speakers into " + enr_out);
      return 0;
    }
    if (*tune) {
      auto [db, spec] = load_database(tune_db);
      if (db.task == TaskKind::CSI) throw std::invalid_argument("CSI databases carry no threshold");
      SpeakerRecognizer model(Embedder(spec), db);
      Corpus test = load_corpus_split(tune_corpus, "test");
      Corpus imposter = load_corpus_split(tune_corpus, "imposter");
      Corpus genuine;
      for (const auto& [id, list] : test) {
        bool enrolled = false;
        for (const auto& s : db.speaker_ids) enrolled |= (s == id);
        if (enrolled) genuine[id] = list;
        else imposter[id] = list;
      }
      const EerResult r = tune_threshold(model, genuine, imposter);
      model.database().threshold = r.threshold;
      save_database(model.database(), spec, tune_out);
      const std::string text = "{\"threshold\": " + format_number(r.threshold) + ", \"eer\": " +
                               format_number(100.0 * r.eer) + ", \"far\": " + format_number(100.0 * r.far) +
                               ", \"frr\": " + format_number(100.0 * r.frr) + "}\n";
      if (!tune_report.empty()) {
        std::ofstream f(tune_report, std::ios::binary);
        f << text;
      }
      std::cout << text;
      return 0;
    }
    if (*att) return run(attack_flags.resolve(), attack_flags.dump);
    if (*rob) {
      ExperimentConfig c = robust_flags.resolve();
      c.robust.enabled = true;
      return run(c, robust_flags.dump);
    }
    if (*ota) {
      ExperimentConfig c = ota_flags.resolve();
      if (c.ota.snr_db.empty()) c.ota.snr_db = {20, 15, 10, 5, 0};
      return run(c, ota_flags.dump);
    }
    if (*tra) {
      ExperimentConfig c = transfer_flags.resolve();
      if (c.models.size() < 2) {
        c.models.clear();
        for (std::uint64_t seed : {1, 2})
          for (auto act : {Activation::Tanh, Activation::Softplus}) {
            EmbedderSpec s;
            s.weight_seed = seed;
            s.activation = act;
            c.models.push_back(s);
          }
      }
      c.transfer = true;
      return run(c, transfer_flags.dump);
    }
    if (*rep) {
      const std::string csv = summary_csv(load_records(rep_records));
      if (rep_out.empty()) {
        std::cout << csv;
      } else {
        std::ofstream f(rep_out, std::ios::binary);
        f << csv;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "as2t: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

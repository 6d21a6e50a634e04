// Command-line front end. Every subcommand prints a JSON document (or JSON
// lines for training) on stdout and a short human summary on stderr.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "selm/config.h"
#include "selm/dataio.h"
#include "selm/errors.h"
#include "selm/formulation.h"
#include "selm/harness.h"
#include "selm/lm.h"
#include "selm/selm_model.h"
#include "selm/trainer.h"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void emit(const ordered_json& j) { std::cout << j.dump(2) << std::endl; }

void say(const std::string& line) { std::cerr << line << std::endl; }

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, item.find_last_not_of(" \t") - b + 1));
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_csv(s)) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw selm::ConfigError("bad seed '" + item + "'");
    }
  }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw selm::IoError("cannot read " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::shared_ptr<const selm::LanguageModel> load_lm(const std::string& path) {
  return std::make_shared<const selm::LanguageModel>(selm::LanguageModel::load(path));
}

selm::ExperimentConfig load_experiment(const std::string& path, std::uint64_t seed, bool seed_given) {
  selm::ExperimentConfig c = selm::experiment_config_from_json(selm::read_json_file(path));
  if (seed_given) c.seed = seed;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-conditioned language model for speech emotion recognition"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic feature dataset");
  std::string synth_config, synth_out;
  synth->add_option("--config", synth_config, "JSON synth config (defaults when omitted)");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", seed, "Sample seed (overrides the config)");

  // pretrain-lm
  auto* pretrain = app.add_subcommand("pretrain-lm", "Train the BPE vocabulary and the frozen LM");
  std::string corpus_path, lm_config_path, lm_out;
  pretrain->add_option("--corpus", corpus_path, "Text corpus, one line per record")->required();
  pretrain->add_option("--config", lm_config_path, "JSON LM config");
  pretrain->add_option("--out", lm_out, "Checkpoint path")->required();
  pretrain->add_option("--seed", seed, "Seed (overrides the config)");

  // train
  auto* train = app.add_subcommand("train", "Train the mappers against a frozen LM");
  std::string manifest_path, lm_path, train_config, train_out;
  bool all_splits = false;
  train->add_option("--manifest", manifest_path, "Manifest (JSON lines)")->required();
  train->add_option("--lm", lm_path, "LM checkpoint")->required();
  train->add_option("--config", train_config, "JSON experiment config");
  train->add_option("--out", train_out, "SELM checkpoint path")->required();
  train->add_flag("--all-splits", all_splits, "Also train on split=test rows");
  train->add_option("--seed", seed, "Seed");

  // generate
  auto* gen = app.add_subcommand("generate", "Generate text for one feature file");
  std::string ckpt_path, feature_path, prompt, lm_override;
  int beam = 3, max_tokens = 20;
  gen->add_option("--ckpt", ckpt_path, "SELM checkpoint")->required();
  gen->add_option("--feature", feature_path, "Feature file")->required();
  gen->add_option("--prompt", prompt, "Prompt text")->required();
  gen->add_option("--beam", beam, "Beam size")->capture_default_str();
  gen->add_option("--max-tokens", max_tokens, "Generation limit")->capture_default_str();
  gen->add_option("--lm", lm_override, "LM checkpoint (default: path recorded in the checkpoint)");
  gen->add_option("--seed", seed, "Unused; accepted for uniformity");

  // map-class
  auto* mapc = app.add_subcommand("map-class", "Map free text to one of the given classes");
  std::string text, classes_csv;
  bool hidden_source = false;
  mapc->add_option("--ckpt", ckpt_path, "SELM or LM checkpoint")->required();
  mapc->add_option("--text", text, "Text to map")->required();
  mapc->add_option("--classes", classes_csv, "Comma-separated class names")->required();
  mapc->add_option("--lm", lm_override, "LM checkpoint override for SELM checkpoints");
  mapc->add_flag("--hidden", hidden_source, "Embed with final hidden states instead of token rows");
  mapc->add_option("--seed", seed, "Unused; accepted for uniformity");

  // eval
  auto* eval = app.add_subcommand("eval", "Run an experiment protocol");
  eval->require_subcommand(1);
  std::string eval_config, train_manifest, test_manifest, base_ckpt, shots_csv = "4,8", seeds_csv = "0,1,2,3,4";
  std::string groups_csv, out_ckpt;
  bool ablation = false;
  auto* in_domain = eval->add_subcommand("in-domain", "Cross-validation over manifest folds");
  in_domain->add_option("--manifest", manifest_path, "Manifest")->required();
  in_domain->add_option("--lm", lm_path, "LM checkpoint")->required();
  in_domain->add_option("--config", eval_config, "JSON experiment config");
  in_domain->add_option("--seed", seed, "Seed");
  auto* ood = eval->add_subcommand("ood", "Train on a source manifest, score a shifted target");
  ood->add_option("--train-manifest", train_manifest, "Source manifest")->required();
  ood->add_option("--test-manifest", test_manifest, "Target manifest")->required();
  ood->add_option("--lm", lm_path, "LM checkpoint")->required();
  ood->add_option("--config", eval_config, "JSON experiment config");
  ood->add_option("--save", out_ckpt, "Write the trained source model here");
  ood->add_option("--seed", seed, "Seed");
  auto* fsl = eval->add_subcommand("fsl", "Few-shot finetuning on the target train split");
  fsl->add_option("--ckpt", base_ckpt, "Base SELM checkpoint")->required();
  fsl->add_option("--manifest", test_manifest, "Target manifest")->required();
  fsl->add_option("--shots", shots_csv, "Shots per class, comma-separated")->capture_default_str();
  fsl->add_option("--seeds", seeds_csv, "Sampling seeds, comma-separated")->capture_default_str();
  fsl->add_option("--groups", groups_csv, "Parameter groups (default from config)");
  fsl->add_flag("--ablation", ablation, "Finetune each listed group separately");
  fsl->add_option("--config", eval_config, "JSON experiment config");
  fsl->add_option("--lm", lm_override, "LM checkpoint override");
  fsl->add_option("--seed", seed, "Seed");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the assembled model");
  double eps = 1e-3;
  std::int64_t per_tensor = 64;
  gc->add_option("--eps", eps, "Perturbation")->capture_default_str();
  gc->add_option("--per-tensor", per_tensor, "Scalars sampled per tensor (-1 for all)")->capture_default_str();
  gc->add_option("--seed", seed, "Seed");

  // oracle-check
  auto* oc = app.add_subcommand("oracle-check", "Compare posterior and factored ranking on random joints");
  int trials = 200;
  oc->add_option("--trials", trials, "Random joints")->capture_default_str();
  oc->add_option("--seed", seed, "Seed");

  CLI11_PARSE(app, argc, argv);

  auto seed_given = [&](CLI::App* sub) { return sub->count("--seed") > 0; };

  try {
    if (*synth) {
      selm::SynthConfig c = selm::synth_config_from_json(selm::read_json_file(synth_config));
      if (seed_given(synth)) c.seed = seed;
      auto out = selm::synthesize_dataset(c, synth_out);
      ordered_json j;
      j["manifest"] = out.manifest_path;
      j["corpus"] = out.corpus_path;
      j["records"] = out.manifest.records.size();
      j["config"] = selm::to_json(c);
      emit(j);
      say("wrote " + std::to_string(out.manifest.records.size()) + " records to " + out.manifest_path);
    } else if (*pretrain) {
      selm::LmSetup setup = selm::lm_setup_from_json(selm::read_json_file(lm_config_path));
      if (seed_given(pretrain)) setup.pretrain.seed = seed;
      const auto corpus = read_lines(corpus_path);
      selm::Vocabulary vocab = selm::Vocabulary::train(corpus, setup.lm.vocab_size);
      setup.lm.vocab_size = vocab.size();
      auto result = selm::pretrain_lm(corpus, vocab, setup.lm, setup.pretrain, [](int step, double loss) {
        if (step % 100 == 0) say("step " + std::to_string(step) + " loss " + std::to_string(loss));
      });
      result.model.save(lm_out);
      ordered_json j;
      j["checkpoint"] = lm_out;
      j["sha256"] = selm::sha256_hex(selm::read_file_bytes(lm_out));
      j["vocab_size"] = vocab.size();
      j["heldout_loss_before"] = result.report.heldout_loss_before;
      j["heldout_loss_after"] = result.report.heldout_loss_after;
      j["final_train_loss"] = result.report.train_curve.back();
      j["config"] = selm::to_json(setup);
      emit(j);
      say("held-out loss " + std::to_string(result.report.heldout_loss_before) + " -> " +
          std::to_string(result.report.heldout_loss_after));
    } else if (*train) {
      auto config = load_experiment(train_config, seed, seed_given(train));
      config.train.seed = config.seed;
      auto lm = load_lm(lm_path);
      const auto manifest = selm::read_manifest(manifest_path);
      auto rows = selm::select_rows(manifest, config.view,
                                    all_splits ? std::nullopt : std::optional(selm::Split::kTrain));
      std::vector<selm::Triplet> triplets;
      for (const auto* r : rows) triplets.push_back(selm::to_triplet(manifest, *r));
      selm::FeatureStore store;
      auto examples = selm::prepare_examples(triplets, lm->vocabulary(), store);
      selm::TrainReport report;
      auto model = selm::train_new(examples, config.model, lm, config.train, &report,
                                   [](const selm::EpochRecord& r) {
                                     std::cout << selm::epoch_record_json(r) << std::endl;
                                   });
      model.save(train_out, fs::absolute(lm_path).string());
      const double final_loss = report.epochs.empty() ? 0.0 : report.epochs.back().mean_loss;
      say("trained on " + std::to_string(examples.size()) + " triplets; final loss " +
          std::to_string(final_loss) + "; wrote " + train_out);
    } else if (*gen) {
      auto model = selm::SelmModel::load(ckpt_path, lm_override);
      const auto feature = selm::read_feature(feature_path);
      auto g = selm::generate(model, feature, prompt, beam, max_tokens);
      ordered_json j;
      j["text"] = g.text;
      j["tokens"] = g.hypothesis.tokens;
      j["logprob"] = g.hypothesis.logprob;
      j["beam"] = beam;
      j["max_tokens"] = max_tokens;
      emit(j);
      say(g.text);
    } else if (*mapc) {
      const auto classes = split_csv(classes_csv);
      const auto data = selm::decode_checkpoint(selm::read_file_bytes(ckpt_path));
      std::shared_ptr<const selm::LanguageModel> lm;
      if (data.metadata.count("kind") && data.metadata.at("kind") == "language_model") {
        lm = std::make_shared<const selm::LanguageModel>(selm::LanguageModel::from_checkpoint(data));
      } else {
        lm = selm::SelmModel::load(ckpt_path, lm_override).shared_lm();
      }
      const auto source = hidden_source ? selm::EmbeddingSource::kFinalHidden
                                        : selm::EmbeddingSource::kTokenTable;
      const std::size_t index = selm::map_to_class(*lm, text, classes, source);
      ordered_json j;
      j["index"] = index;
      j["class"] = classes[index];
      ordered_json sims;
      const auto q = selm::text_embedding(*lm, text, source);
      for (const auto& c : classes) sims[c] = selm::cosine_similarity(q, selm::text_embedding(*lm, c, source));
      j["similarity"] = sims;
      emit(j);
      say("'" + text + "' -> " + classes[index]);
    } else if (*eval) {
      selm::FeatureStore store;
      auto progress = [](const std::string& s) { say(s); };
      if (*in_domain) {
        auto config = load_experiment(eval_config, seed, seed_given(in_domain));
        auto report = selm::run_in_domain(selm::read_manifest(manifest_path), load_lm(lm_path), config,
                                          store, progress);
        emit(selm::to_json(report));
        say("in-domain UA " + std::to_string(report.ua));
      } else if (*ood) {
        auto config = load_experiment(eval_config, seed, seed_given(ood));
        std::unique_ptr<selm::SelmModel> trained;
        auto report = selm::run_ood(selm::read_manifest(train_manifest), selm::read_manifest(test_manifest),
                                    load_lm(lm_path), config, store, &trained, progress);
        if (!out_ckpt.empty()) trained->save(out_ckpt, fs::absolute(lm_path).string());
        emit(selm::to_json(report));
        say("zero-shot UA " + std::to_string(report.ua));
      } else if (*fsl) {
        auto config = load_experiment(eval_config, seed, seed_given(fsl));
        auto base = selm::SelmModel::load(base_ckpt, lm_override);
        const auto manifest = selm::read_manifest(test_manifest);
        const auto seeds = parse_seeds(seeds_csv);
        if (!groups_csv.empty()) config.few_shot.groups = selm::parse_group_spec(groups_csv);
        ordered_json j = ordered_json::array();
        for (const auto& n : split_csv(shots_csv)) {
          const int shots = std::stoi(n);
          auto report = ablation ? selm::run_ablation(base, manifest, shots, seeds, config.few_shot.groups,
                                                      config, store, progress)
                                 : selm::run_fsl(base, manifest, shots, seeds, config, store, progress);
          say(report.setup + " mean UA " + std::to_string(report.ua) + " +- " +
              std::to_string(report.ua_stddev));
          j.push_back(selm::to_json(report));
        }
        emit(j);
      }
    } else if (*gc) {
      auto fixture = selm::make_grad_check_fixture(seed);
      auto r = selm::grad_check_model(*fixture.model, fixture.batch, eps, per_tensor, seed);
      ordered_json j;
      j["eps"] = eps;
      j["max_relative_error"] = r.max_relative_error;
      j["worst_parameter"] = r.worst_parameter;
      j["checked"] = r.checked;
      j["per_parameter"] = r.per_parameter;
      emit(j);
      say("max relative error " + std::to_string(r.max_relative_error) + " over " +
          std::to_string(r.checked) + " scalars");
      if (r.max_relative_error >= 1e-3) {
        throw selm::NumericalError("gradient check exceeded 1e-3");
      }
    } else if (*oc) {
      if (trials < 1) throw selm::ConfigError("trials must be >= 1");
      selm::Rng rng(seed);
      std::int64_t queries = 0, mismatches = 0, undefined = 0;
      for (int t = 0; t < trials; ++t) {
        const auto ne = static_cast<std::size_t>(rng.uniform_int(1, 6));
        const auto nx = static_cast<std::size_t>(rng.uniform_int(1, 6));
        const auto nw = static_cast<std::size_t>(rng.uniform_int(1, 6));
        auto joint = selm::JointDistribution::random(ne, nx, nw, rng.next());
        for (std::size_t x = 0; x < nx; ++x) {
          for (std::size_t w = 0; w < nw; ++w) {
            if (!(joint.p_xw(x, w) > 0.0)) {
              ++undefined;
              continue;
            }
            ++queries;
            if (selm::posterior_rank(joint, x, w) != selm::factored_rank(joint, x, w)) ++mismatches;
          }
        }
      }
      ordered_json j;
      j["trials"] = trials;
      j["queries"] = queries;
      j["skipped_zero_evidence"] = undefined;
      j["mismatches"] = mismatches;
      emit(j);
      say(std::to_string(mismatches) + " mismatches over " + std::to_string(queries) + " queries");
      if (mismatches > 0) throw selm::NumericalError("posterior and factored ranks disagree");
    }
  } catch (const selm::Error& e) {
    std::cerr << "error " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error internal: " << e.what() << std::endl;
    return 3;
  }
  return 0;
}

#ifndef SELM_HARNESS_H_
#define SELM_HARNESS_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "selm/dataio.h"
#include "selm/selm_model.h"
#include "selm/trainer.h"

namespace selm {

// Mean per-class recall. Every class index below n_classes must occur in
// `labels`.
double unweighted_accuracy(const std::vector<std::size_t>& predictions,
                           const std::vector<std::size_t>& labels, std::size_t n_classes);
std::vector<double> per_class_recall(const std::vector<std::size_t>& predictions,
                                     const std::vector<std::size_t>& labels, std::size_t n_classes);

struct ExperimentConfig {
  SelmConfig model;
  TrainConfig train;
  TrainConfig few_shot = default_few_shot_config();
  View view = View::kCategorical;
  int beam = 3;
  int max_tokens = 20;
  std::uint64_t seed = 0;
};

nlohmann::ordered_json to_json(const ExperimentConfig& config);
// Missing keys keep their defaults; unknown keys are a config error.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

struct EvalReport {
  std::string setup;
  std::string view;
  std::vector<std::string> classes;
  std::vector<double> recalls;  // aligned with classes; empty for aggregates
  double ua = 0.0;
  double ua_stddev = 0.0;  // population stddev over parts, for aggregates
  std::int64_t n_examples = 0;
  std::uint64_t seed = 0;
  nlohmann::ordered_json config;
  std::vector<EvalReport> parts;  // folds, seeds or groups
};

nlohmann::ordered_json to_json(const EvalReport& report);

struct Prediction {
  std::string text;
  std::size_t index = 0;
  bool parsed = false;  // the text matched the view's template
};

// Turns generated text into a class index: template parse first, then the
// cosine mapping over class-name embeddings. Sees features and prompts
// only.
class ClassPredictor {
 public:
  ClassPredictor(const SelmModel& model, std::vector<std::string> classes, View view, int beam,
                 int max_tokens);
  Prediction predict(const AudioFeature& x, const std::string& prompt) const;
  std::size_t classify_text(const std::string& text, bool* parsed = nullptr) const;
  const std::vector<std::string>& classes() const { return classes_; }

 private:
  const SelmModel& model_;
  std::vector<std::string> classes_;
  std::vector<std::vector<double>> embeddings_;
  View view_;
  int beam_;
  int max_tokens_;
};

using ProgressFn = std::function<void(const std::string&)>;

// Scores `model` on the given rows; `classes` fixes the label order.
EvalReport evaluate(const SelmModel& model, const Manifest& manifest,
                    const std::vector<const ManifestRecord*>& rows,
                    const std::vector<std::string>& classes, const ExperimentConfig& config,
                    FeatureStore& store);

std::vector<const ManifestRecord*> select_rows(const Manifest& manifest, View view,
                                               std::optional<Split> split = std::nullopt,
                                               std::optional<int> fold = std::nullopt,
                                               bool exclude_fold = false);

// Cross-validation over the manifest's folds: one report per fold plus the
// mean UA.
EvalReport run_in_domain(const Manifest& manifest, std::shared_ptr<const LanguageModel> lm,
                         const ExperimentConfig& config, FeatureStore& store,
                         const ProgressFn& progress = {});

// Train on every `view` row of the source manifest and score the test split
// of the target. Shared ids are a leakage error. The trained model is
// returned through `trained` when given.
EvalReport run_ood(const Manifest& train_manifest, const Manifest& test_manifest,
                   std::shared_ptr<const LanguageModel> lm, const ExperimentConfig& config,
                   FeatureStore& store, std::unique_ptr<SelmModel>* trained = nullptr,
                   const ProgressFn& progress = {});

// Throws LeakageError if any id occurs in both manifests.
void check_disjoint(const Manifest& train_manifest, const Manifest& test_manifest);

// Per seed: draw n shots per class from the target train split, finetune the
// config.few_shot groups, score the target test split. Aggregate UA is the
// mean over seeds with population stddev.
EvalReport run_fsl(const SelmModel& base, const Manifest& test_manifest, int n_per_class,
                   const std::vector<std::uint64_t>& seeds, const ExperimentConfig& config,
                   FeatureStore& store, const ProgressFn& progress = {});

// run_fsl once per group in `groups` (each finetuned alone).
EvalReport run_ablation(const SelmModel& base, const Manifest& test_manifest, int n_per_class,
                        const std::vector<std::uint64_t>& seeds,
                        const std::vector<ParamGroup>& groups, const ExperimentConfig& config,
                        FeatureStore& store, const ProgressFn& progress = {});

}  // namespace selm

#endif  // SELM_HARNESS_H_

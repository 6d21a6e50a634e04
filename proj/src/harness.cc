#include "selm/harness.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "selm/errors.h"

namespace selm {

std::vector<double> per_class_recall(const std::vector<std::size_t>& predictions,
                                     const std::vector<std::size_t>& labels, std::size_t n_classes) {
  if (predictions.size() != labels.size()) throw MetricError("predictions and labels differ in length");
  if (n_classes == 0) throw MetricError("no classes");
  std::vector<double> correct(n_classes, 0.0), total(n_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes || predictions[i] >= n_classes) {
      throw MetricError("class index out of range");
    }
    total[labels[i]] += 1.0;
    if (predictions[i] == labels[i]) correct[labels[i]] += 1.0;
  }
  std::vector<double> recall(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (total[c] == 0.0) throw MetricError("class " + std::to_string(c) + " has no examples");
    recall[c] = correct[c] / total[c];
  }
  return recall;
}

double unweighted_accuracy(const std::vector<std::size_t>& predictions,
                           const std::vector<std::size_t>& labels, std::size_t n_classes) {
  const auto recall = per_class_recall(predictions, labels, n_classes);
  double sum = 0.0;
  for (double r : recall) sum += r;
  return sum / static_cast<double>(n_classes);
}

// ---------------------------------------------------------------------------
// Config JSON.

namespace {

nlohmann::ordered_json train_json(const TrainConfig& t) {
  nlohmann::ordered_json j;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["lr"] = t.lr;
  j["clip_norm"] = t.clip_norm;
  j["seed"] = t.seed;
  j["groups"] = group_spec_string(t.groups);
  return j;
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(std::string("unknown key '") + key + "' in " + where);
    }
  }
}

TrainConfig train_from_json(const nlohmann::json& j, TrainConfig t, const char* where) {
  check_keys(j, {"epochs", "batch_size", "lr", "clip_norm", "seed", "groups"}, where);
  read_key(j, "epochs", t.epochs);
  read_key(j, "batch_size", t.batch_size);
  read_key(j, "lr", t.lr);
  read_key(j, "clip_norm", t.clip_norm);
  read_key(j, "seed", t.seed);
  if (j.contains("groups")) t.groups = parse_group_spec(j.at("groups").get<std::string>());
  t.validate();
  return t;
}

}  // namespace

nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json m;
  m["d_audio"] = c.model.d_audio;
  m["d_proj"] = c.model.d_proj;
  m["prefix_length"] = c.model.prefix_length;
  m["mapper_heads"] = c.model.mapper_heads;
  j["model"] = m;
  j["train"] = train_json(c.train);
  j["few_shot"] = train_json(c.few_shot);
  j["view"] = view_name(c.view);
  j["beam"] = c.beam;
  j["max_tokens"] = c.max_tokens;
  j["seed"] = c.seed;
  return j;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  try {
    ExperimentConfig c;
    check_keys(j, {"model", "train", "few_shot", "view", "beam", "max_tokens", "seed"}, "experiment config");
    if (j.contains("model")) {
      const auto& m = j.at("model");
      check_keys(m, {"d_audio", "d_proj", "prefix_length", "mapper_heads"}, "model config");
      read_key(m, "d_audio", c.model.d_audio);
      read_key(m, "d_proj", c.model.d_proj);
      read_key(m, "prefix_length", c.model.prefix_length);
      read_key(m, "mapper_heads", c.model.mapper_heads);
    }
    if (j.contains("train")) c.train = train_from_json(j.at("train"), c.train, "train config");
    if (j.contains("few_shot")) c.few_shot = train_from_json(j.at("few_shot"), c.few_shot, "few_shot config");
    if (j.contains("view")) c.view = parse_view(j.at("view").get<std::string>());
    read_key(j, "beam", c.beam);
    read_key(j, "max_tokens", c.max_tokens);
    read_key(j, "seed", c.seed);
    if (c.beam < 1 || c.max_tokens < 1) throw ConfigError("beam and max_tokens must be >= 1");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
}

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["setup"] = r.setup;
  j["view"] = r.view;
  j["classes"] = r.classes;
  if (!r.recalls.empty()) {
    nlohmann::ordered_json recall;
    for (std::size_t c = 0; c < r.classes.size(); ++c) recall[r.classes[c]] = r.recalls[c];
    j["per_class_recall"] = recall;
  }
  j["unweighted_accuracy"] = r.ua;
  if (!r.parts.empty()) j["ua_stddev"] = r.ua_stddev;
  j["n_examples"] = r.n_examples;
  j["seed"] = r.seed;
  if (!r.config.is_null()) j["config"] = r.config;
  if (!r.parts.empty()) {
    j["parts"] = nlohmann::ordered_json::array();
    for (const auto& p : r.parts) j["parts"].push_back(to_json(p));
  }
  return j;
}

// ---------------------------------------------------------------------------
// Prediction and evaluation.

ClassPredictor::ClassPredictor(const SelmModel& model, std::vector<std::string> classes, View view,
                               int beam, int max_tokens)
    : model_(model), classes_(std::move(classes)), view_(view), beam_(beam), max_tokens_(max_tokens) {
  if (classes_.empty()) throw InputError("class set is empty");
  if (std::set<std::string>(classes_.begin(), classes_.end()).size() != classes_.size()) {
    throw InputError("class names must be unique");
  }
  for (const auto& c : classes_) embeddings_.push_back(text_embedding(model_.lm(), c));
}

std::size_t ClassPredictor::classify_text(const std::string& text, bool* parsed) const {
  if (auto label = parse_target(view_, text)) {
    auto it = std::find(classes_.begin(), classes_.end(), *label);
    if (it != classes_.end()) {
      if (parsed) *parsed = true;
      return static_cast<std::size_t>(it - classes_.begin());
    }
  }
  if (parsed) *parsed = false;
  return argmax_cosine(text_embedding(model_.lm(), text), embeddings_);
}

Prediction ClassPredictor::predict(const AudioFeature& x, const std::string& prompt) const {
  Prediction p;
  p.text = generate(model_, x, prompt, beam_, max_tokens_).text;
  p.index = classify_text(p.text, &p.parsed);
  return p;
}

std::vector<const ManifestRecord*> select_rows(const Manifest& manifest, View view,
                                               std::optional<Split> split, std::optional<int> fold,
                                               bool exclude_fold) {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : manifest.records) {
    if (r.view != view) continue;
    if (split && r.split != *split) continue;
    if (fold && ((r.fold == *fold) == exclude_fold)) continue;
    out.push_back(&r);
  }
  return out;
}

EvalReport evaluate(const SelmModel& model, const Manifest& manifest,
                    const std::vector<const ManifestRecord*>& rows,
                    const std::vector<std::string>& classes, const ExperimentConfig& config,
                    FeatureStore& store) {
  if (rows.empty()) throw DataError("no evaluation rows");
  ClassPredictor predictor(model, classes, config.view, config.beam, config.max_tokens);
  std::vector<std::size_t> predictions, labels;
  for (const ManifestRecord* r : rows) {
    auto it = std::find(classes.begin(), classes.end(), r->label);
    if (it == classes.end()) throw MetricError("label '" + r->label + "' is not in the class set");
    const AudioFeature& x = store.get(manifest.resolve(*r));
    predictions.push_back(predictor.predict(x, r->prompt).index);
    labels.push_back(static_cast<std::size_t>(it - classes.begin()));
  }
  EvalReport report;
  report.view = view_name(config.view);
  report.classes = classes;
  report.recalls = per_class_recall(predictions, labels, classes.size());
  report.ua = unweighted_accuracy(predictions, labels, classes.size());
  report.n_examples = static_cast<std::int64_t>(rows.size());
  report.seed = config.seed;
  return report;
}

namespace {

std::vector<TrainExample> examples_for(const Manifest& manifest,
                                       const std::vector<const ManifestRecord*>& rows,
                                       const Vocabulary& vocab, FeatureStore& store) {
  std::vector<Triplet> triplets;
  for (const auto* r : rows) triplets.push_back(to_triplet(manifest, *r));
  return prepare_examples(triplets, vocab, store);
}

void aggregate(EvalReport& report) {
  double sum = 0.0, sq = 0.0;
  for (const auto& p : report.parts) {
    sum += p.ua;
    report.n_examples += p.n_examples;
  }
  const double n = static_cast<double>(report.parts.size());
  report.ua = sum / n;
  for (const auto& p : report.parts) sq += (p.ua - report.ua) * (p.ua - report.ua);
  report.ua_stddev = std::sqrt(sq / n);
}

}  // namespace

EvalReport run_in_domain(const Manifest& manifest, std::shared_ptr<const LanguageModel> lm,
                         const ExperimentConfig& config, FeatureStore& store,
                         const ProgressFn& progress) {
  const auto rows = select_rows(manifest, config.view);
  if (rows.empty()) throw DataError("manifest has no rows for view " + view_name(config.view));
  int n_folds = 0;
  for (const auto* r : rows) n_folds = std::max(n_folds, r->fold + 1);
  if (n_folds < 2) throw DataError("manifest needs at least two folds");
  const auto classes = class_labels(manifest, config.view);

  EvalReport report;
  report.setup = "in-domain";
  report.view = view_name(config.view);
  report.classes = classes;
  report.seed = config.seed;
  report.config = to_json(config);
  report.config["n_folds"] = n_folds;
  for (int f = 0; f < n_folds; ++f) {
    auto train_rows = select_rows(manifest, config.view, std::nullopt, f, true);
    auto test_rows = select_rows(manifest, config.view, std::nullopt, f, false);
    TrainConfig tc = config.train;
    tc.seed = derive_seed(config.seed, 100 + static_cast<std::uint64_t>(f));
    SelmModel model = train_new(examples_for(manifest, train_rows, lm->vocabulary(), store),
                                config.model, lm, tc);
    EvalReport fold = evaluate(model, manifest, test_rows, classes, config, store);
    fold.setup = "in-domain/fold-" + std::to_string(f);
    if (progress) progress(fold.setup + " UA " + std::to_string(fold.ua));
    report.parts.push_back(std::move(fold));
  }
  aggregate(report);
  return report;
}

void check_disjoint(const Manifest& train_manifest, const Manifest& test_manifest) {
  std::set<std::string> ids;
  for (const auto& r : train_manifest.records) ids.insert(r.id);
  for (const auto& r : test_manifest.records) {
    if (ids.count(r.id)) throw LeakageError("id '" + r.id + "' occurs in both train and test manifests");
  }
}

EvalReport run_ood(const Manifest& train_manifest, const Manifest& test_manifest,
                   std::shared_ptr<const LanguageModel> lm, const ExperimentConfig& config,
                   FeatureStore& store, std::unique_ptr<SelmModel>* trained,
                   const ProgressFn& progress) {
  check_disjoint(train_manifest, test_manifest);
  const auto train_rows = select_rows(train_manifest, config.view);
  const auto test_rows = select_rows(test_manifest, config.view, Split::kTest);
  TrainConfig tc = config.train;
  tc.seed = derive_seed(config.seed, 200);
  SelmModel model = train_new(examples_for(train_manifest, train_rows, lm->vocabulary(), store),
                              config.model, lm, tc);
  EvalReport report = evaluate(model, test_manifest, test_rows, class_labels(test_manifest, config.view),
                               config, store);
  report.setup = "ood";
  report.config = to_json(config);
  if (progress) progress("ood UA " + std::to_string(report.ua));
  if (trained) *trained = std::make_unique<SelmModel>(std::move(model));
  return report;
}

EvalReport run_fsl(const SelmModel& base, const Manifest& test_manifest, int n_per_class,
                   const std::vector<std::uint64_t>& seeds, const ExperimentConfig& config,
                   FeatureStore& store, const ProgressFn& progress) {
  if (seeds.empty()) throw ConfigError("few-shot evaluation needs at least one seed");
  const auto test_rows = select_rows(test_manifest, config.view, Split::kTest);
  const auto classes = class_labels(test_manifest, config.view);
  std::set<std::string> test_ids;
  for (const auto* r : test_rows) test_ids.insert(r->id);

  EvalReport report;
  report.setup = "fsl-" + std::to_string(n_per_class) + "shot";
  report.view = view_name(config.view);
  report.classes = classes;
  report.seed = config.seed;
  report.config = to_json(config);
  report.config["n_per_class"] = n_per_class;
  report.config["seeds"] = seeds;
  for (std::uint64_t seed : seeds) {
    const auto shots = sample_shots(test_manifest, n_per_class, seed, config.view);
    for (const auto& s : shots) {
      if (test_ids.count(s.id)) throw LeakageError("shot '" + s.id + "' is a test row");
    }
    TrainConfig tc = config.few_shot;
    tc.seed = derive_seed(seed, 300);
    SelmModel tuned = few_shot_finetune(
        base, prepare_examples(shots, base.lm().vocabulary(), store), tc);
    EvalReport part = evaluate(tuned, test_manifest, test_rows, classes, config, store);
    part.setup = report.setup + "/seed-" + std::to_string(seed);
    part.seed = seed;
    if (progress) progress(part.setup + " UA " + std::to_string(part.ua));
    report.parts.push_back(std::move(part));
  }
  aggregate(report);
  return report;
}

EvalReport run_ablation(const SelmModel& base, const Manifest& test_manifest, int n_per_class,
                        const std::vector<std::uint64_t>& seeds,
                        const std::vector<ParamGroup>& groups, const ExperimentConfig& config,
                        FeatureStore& store, const ProgressFn& progress) {
  if (groups.empty()) throw ConfigError("ablation needs at least one group");
  EvalReport report;
  report.setup = "ablation-" + std::to_string(n_per_class) + "shot";
  report.view = view_name(config.view);
  report.classes = class_labels(test_manifest, config.view);
  report.seed = config.seed;
  report.config = to_json(config);
  for (ParamGroup g : groups) {
    ExperimentConfig c = config;
    c.few_shot.groups = {g};
    EvalReport part = run_fsl(base, test_manifest, n_per_class, seeds, c, store, progress);
    part.setup = "ablation/" + group_name(g);
    report.parts.push_back(std::move(part));
  }
  aggregate(report);
  return report;
}

}  // namespace selm

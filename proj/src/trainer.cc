#include "selm/trainer.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "json.hpp"
#include "selm/errors.h"

namespace selm {

std::string group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::kAlEnc: return "AL-Enc";
    case ParamGroup::kAlDec: return "AL-Dec";
    case ParamGroup::kAt: return "AT";
    case ParamGroup::kTt: return "TT";
    case ParamGroup::kAll: return "ALL";
  }
  return "ALL";
}

ParamGroup parse_group(const std::string& name) {
  for (ParamGroup g : {ParamGroup::kAlEnc, ParamGroup::kAlDec, ParamGroup::kAt, ParamGroup::kTt,
                       ParamGroup::kAll}) {
    if (group_name(g) == name) return g;
  }
  throw ConfigError("unknown parameter group '" + name + "' (expected AL-Enc, AL-Dec, AT, TT or ALL)");
}

std::vector<ParamGroup> parse_group_spec(const std::string& csv) {
  std::vector<ParamGroup> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_group(item));
  }
  if (out.empty()) throw ConfigError("empty parameter-group spec");
  return out;
}

std::string group_spec_string(const std::vector<ParamGroup>& spec) {
  std::string out;
  for (std::size_t i = 0; i < spec.size(); ++i) out += (i ? "," : "") + group_name(spec[i]);
  return out;
}

std::set<std::string> select_param_groups(const std::vector<ParamGroup>& spec,
                                          const SelmModel& model) {
  if (spec.empty()) throw ConfigError("empty parameter-group spec");
  const ParameterTree& tree = model.mapper();
  std::set<std::string> out;
  for (ParamGroup g : spec) {
    std::set<std::string> names;
    switch (g) {
      case ParamGroup::kAlEnc: names = tree.names_with_prefix("audio_projection.linear1."); break;
      case ParamGroup::kAlDec: names = tree.names_with_prefix("audio_mapper.sequence."); break;
      case ParamGroup::kAt: names = tree.names_with_prefix("audio_mapper.transformer."); break;
      case ParamGroup::kTt: names = tree.names_with_prefix("text_mapper.transformer."); break;
      case ParamGroup::kAll: names = tree.names(); break;
    }
    out.insert(names.begin(), names.end());
  }
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 0) throw ConfigError("batch_size must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (groups.empty()) throw ConfigError("at least one parameter group required");
}

TrainConfig default_few_shot_config() {
  TrainConfig c;
  c.epochs = 20;
  c.batch_size = 0;
  c.lr = 1e-4;
  c.groups = {ParamGroup::kTt};
  return c;
}

std::vector<TrainExample> prepare_examples(const std::vector<Triplet>& triplets,
                                           const Vocabulary& vocab, FeatureStore& store) {
  std::vector<TrainExample> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) {
    TrainExample e;
    e.id = t.id;
    try {
      e.feature = store.get(t.feature_ref);
    } catch (const Error& err) {
      throw DataError("triplet '" + t.id + "': cannot load feature " + t.feature_ref + ": " + err.what());
    }
    if (t.target.empty()) throw DataError("triplet '" + t.id + "' has an empty target");
    e.prompt = t.prompt;
    e.target = vocab.encode(t.target);
    e.label = t.label;
    out.push_back(std::move(e));
  }
  return out;
}

double loss_and_gradients(const SelmModel& model, const std::vector<const TrainExample*>& batch,
                          Gradients& grads) {
  if (batch.empty()) throw DataError("empty batch");
  const double w = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const TrainExample* e : batch) {
    Graph g;
    Var loss = model.example_loss(g, e->feature, e->prompt, e->target);
    total += loss.value().data[0];
    g.backward(loss);
    accumulate(grads, g.gradients(), w);
  }
  return total * w;
}

double compute_loss(const SelmModel& model, const std::vector<TrainExample>& batch) {
  if (batch.empty()) throw DataError("empty batch");
  double total = 0.0;
  for (const auto& e : batch) {
    Graph g;
    total += model.example_loss(g, e.feature, e.prompt, e.target).value().data[0];
  }
  return total / static_cast<double>(batch.size());
}

std::string epoch_record_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["mean_loss"] = r.mean_loss;
  j["lr"] = r.lr;
  j["wall_ms"] = r.wall_ms;
  return j.dump();
}

namespace {

// Marks exactly `trainable` as trainable for the lifetime of the guard.
class TrainableScope {
 public:
  TrainableScope(ParameterTree& tree, const std::set<std::string>& trainable) : tree_(tree) {
    for (const auto& [name, p] : tree_) saved_[name] = p.frozen;
    for (const auto& [name, _] : saved_) tree_.set_frozen(name, trainable.count(name) == 0);
  }
  ~TrainableScope() {
    for (const auto& [name, frozen] : saved_) tree_.set_frozen(name, frozen);
  }

 private:
  ParameterTree& tree_;
  std::map<std::string, bool> saved_;
};

}  // namespace

TrainReport train(SelmModel& model, const std::vector<TrainExample>& data, const TrainConfig& config,
                  const EpochLogger& log) {
  config.validate();
  if (data.empty()) throw DataError("empty training set");
  const std::set<std::string> selected = select_param_groups(config.groups, model);
  TrainableScope scope(model.mutable_mapper(), selected);

  AdamState adam;
  adam.config.lr = config.lr;
  const std::size_t batch =
      config.batch_size == 0 ? data.size() : static_cast<std::size_t>(config.batch_size);
  TrainReport report;
  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, 0x5e1d0000ULL + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      std::vector<const TrainExample*> items;
      for (std::size_t i = begin; i < std::min(order.size(), begin + batch); ++i) {
        items.push_back(&data[order[i]]);
      }
      Gradients grads;
      loss_sum += loss_and_gradients(model, items, grads) * static_cast<double>(items.size());
      clip_by_global_norm(grads, config.clip_norm);
      adam_step(model.mutable_mapper(), grads, adam);
      ++report.steps;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(data.size());
    rec.lr = config.lr;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    report.epochs.push_back(rec);
    if (log) log(rec);
  }
  return report;
}

SelmModel train_new(const std::vector<TrainExample>& data, const SelmConfig& model_config,
                    std::shared_ptr<const LanguageModel> lm, const TrainConfig& config,
                    TrainReport* report, const EpochLogger& log) {
  SelmModel model = SelmModel::initialize(model_config, std::move(lm), derive_seed(config.seed, 7));
  TrainReport r = train(model, data, config, log);
  if (report) *report = std::move(r);
  return model;
}

SelmModel few_shot_finetune(const SelmModel& base, const std::vector<TrainExample>& shots,
                            const TrainConfig& config, TrainReport* report) {
  if (shots.empty()) throw DataError("no shots");
  std::map<std::string, int> per_class;
  for (const auto& s : shots) ++per_class[s.label];
  const int n = per_class.begin()->second;
  for (const auto& [label, count] : per_class) {
    if (count != n) {
      throw DataError("unequal shots per class: '" + label + "' has " + std::to_string(count) +
                      ", expected " + std::to_string(n));
    }
  }
  SelmModel model = base;
  if (config.epochs == 0) {
    config.validate();
    return model;
  }
  TrainReport r = train(model, shots, config);
  if (report) *report = std::move(r);
  return model;
}

GradCheckResult grad_check(ParameterTree& params, const Gradients& analytic, const LossFn& loss,
                           double eps, std::int64_t per_tensor, std::uint64_t seed) {
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  GradCheckResult result;
  Rng rng(seed);
  for (const auto& name : params.trainable_names()) {
    Tensor& value = params.at(name).value;
    auto it = analytic.find(name);
    std::vector<std::int64_t> indices(static_cast<std::size_t>(value.size()));
    for (std::int64_t i = 0; i < value.size(); ++i) indices[i] = i;
    if (per_tensor >= 0 && static_cast<std::int64_t>(indices.size()) > per_tensor) {
      rng.shuffle(indices);
      indices.resize(static_cast<std::size_t>(per_tensor));
    }
    for (std::int64_t i : indices) {
      const float original = value[i];
      // Storage is float32, so difference against the values actually set.
      const float plus = static_cast<float>(original + eps);
      const float minus = static_cast<float>(original - eps);
      value[i] = plus;
      const double lp = loss();
      value[i] = minus;
      const double lm = loss();
      value[i] = original;
      const double numeric = (lp - lm) / (static_cast<double>(plus) - static_cast<double>(minus));
      const double a = it == analytic.end() ? 0.0 : it->second.data[static_cast<std::size_t>(i)];
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-8);
      ++result.checked;
      double& worst = result.per_parameter[name];
      worst = std::max(worst, rel);
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

GradCheckResult grad_check_model(SelmModel& model, const std::vector<TrainExample>& batch,
                                 double eps, std::int64_t per_tensor, std::uint64_t seed) {
  std::vector<const TrainExample*> items;
  for (const auto& e : batch) items.push_back(&e);
  Gradients grads;
  loss_and_gradients(model, items, grads);
  return grad_check(model.mutable_mapper(), grads, [&] { return compute_loss(model, batch); }, eps,
                    per_tensor, seed);
}

GradCheckFixture make_grad_check_fixture(std::uint64_t seed) {
  LmConfig lm_config;
  lm_config.d_model = 32;
  lm_config.n_layers = 2;
  lm_config.n_heads = 2;
  lm_config.context_length = 48;
  lm_config.vocab_size = kMinVocabSize;
  Vocabulary vocab = Vocabulary::train({"byte level"}, kMinVocabSize);
  auto lm = std::make_shared<const LanguageModel>(
      LanguageModel::initialize(lm_config, vocab, derive_seed(seed, 1)));
  SelmConfig config;
  config.d_audio = 8;
  GradCheckFixture fixture;
  fixture.model = std::make_unique<SelmModel>(SelmModel::initialize(config, lm, derive_seed(seed, 2)));
  Rng rng(derive_seed(seed, 3));
  const std::pair<const char*, const char*> rows[] = {{"This person is", "feeling emotion of happy"},
                                                      {"This sentiment is", "negative"}};
  int frames = 5;
  for (const auto& [prompt, target] : rows) {
    TrainExample e;
    e.id = target;
    e.feature = AudioFeature(normal_tensor({frames, config.d_audio}, 1.0, rng));
    e.prompt = prompt;
    e.target = vocab.encode(target);
    e.label = target;
    fixture.batch.push_back(std::move(e));
    frames += 2;
  }
  return fixture;
}

}  // namespace selm

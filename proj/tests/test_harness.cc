#include <filesystem>

#include "doctest.h"
#include "selm/errors.h"
#include "selm/harness.h"

using namespace selm;
namespace fs = std::filesystem;

namespace {

std::shared_ptr<const LanguageModel> small_lm() {
  LmConfig c;
  c.d_model = 32;
  c.context_length = 48;
  Vocabulary v = Vocabulary::train(lm_corpus(), 320);
  c.vocab_size = v.size();
  auto lm = std::make_shared<LanguageModel>(LanguageModel::initialize(c, v, 5));
  lm->freeze();
  return lm;
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.model.d_audio = 8;
  c.train.epochs = 2;
  c.few_shot.epochs = 1;
  c.max_tokens = 8;
  c.beam = 2;
  return c;
}

SynthConfig tiny_synth(const std::string& name, double shift, std::uint64_t seed) {
  SynthConfig c;
  c.name = name;
  c.classes = {"happy", "sad", "angry"};
  c.feature_dim = 8;
  c.examples_per_class = 10;
  c.min_frames = 2;
  c.max_frames = 4;
  c.shift = shift;
  c.seed = seed;
  c.views = {View::kCategorical};
  return c;
}

// Recall of each class counted by hand, independent of the library.
std::vector<double> hand_recalls(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gold,
                                 std::size_t n) {
  std::vector<double> hit(n, 0.0), total(n, 0.0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    total[gold[i]] += 1.0;
    if (pred[i] == gold[i]) hit[gold[i]] += 1.0;
  }
  std::vector<double> out;
  for (std::size_t c = 0; c < n; ++c) out.push_back(hit[c] / total[c]);
  return out;
}

}  // namespace

TEST_CASE("unweighted accuracy") {
  CHECK(unweighted_accuracy({0, 1, 2}, {0, 1, 2}, 3) == 1.0);
  CHECK(unweighted_accuracy({0, 0}, {0, 1}, 2) == 0.5);
  // Recalls 1.0, 0.5, 0.0.
  CHECK(unweighted_accuracy({0, 1, 0, 0}, {0, 1, 1, 2}, 3) == 0.5);
  CHECK_THROWS_AS(unweighted_accuracy({0, 0}, {0, 0}, 2), MetricError);
  CHECK_THROWS_AS(unweighted_accuracy({0}, {0, 1}, 2), MetricError);
  CHECK_THROWS_AS(unweighted_accuracy({3}, {0}, 2), MetricError);
}

TEST_CASE("unweighted accuracy on random confusion tables") {
  Rng rng(31);
  for (int t = 0; t < 20; ++t) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 7));
    std::vector<std::size_t> pred, gold;
    for (std::size_t c = 0; c < n; ++c) {
      const auto count = rng.uniform_int(1, 12);
      for (int i = 0; i < count; ++i) {
        gold.push_back(c);
        pred.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1)));
      }
    }
    const auto recalls = hand_recalls(pred, gold, n);
    double mean = 0.0;
    for (double r : recalls) mean += r;
    mean /= double(n);
    CHECK(per_class_recall(pred, gold, n) == recalls);
    CHECK(unweighted_accuracy(pred, gold, n) == doctest::Approx(mean).epsilon(1e-15));
    const double ua = unweighted_accuracy(pred, gold, n);
    CHECK(ua >= 0.0);
    CHECK(ua <= 1.0);

    // Duplicating every example of one class leaves UA unchanged.
    const std::size_t dup = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    auto pred2 = pred;
    auto gold2 = gold;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (gold[i] == dup) {
        pred2.push_back(pred[i]);
        gold2.push_back(gold[i]);
      }
    }
    CHECK(unweighted_accuracy(pred2, gold2, n) == ua);
  }
}

TEST_CASE("experiment config JSON") {
  ExperimentConfig c;
  c.train.epochs = 7;
  c.few_shot.groups = {ParamGroup::kAt, ParamGroup::kTt};
  c.view = View::kSentiment;
  c.seed = 12;
  const auto back = experiment_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  CHECK(to_json(back) == to_json(c));
  CHECK(to_json(experiment_config_from_json(nlohmann::json::object())) == to_json(ExperimentConfig{}));
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json::parse(R"({"train":{"epoch":3}})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json::parse(R"({"beam":0})")), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json::parse(R"({"few_shot":{"groups":"XX"}})")),
                  ConfigError);
}

TEST_CASE("class predictor reads templates before falling back to cosine") {
  SelmModel model = SelmModel::initialize(tiny_experiment().model, small_lm(), 0);
  ClassPredictor p(model, {"happy", "sad", "angry"}, View::kCategorical, 1, 4);
  bool parsed = false;
  CHECK(p.classify_text("feeling emotion of sad", &parsed) == 1);
  CHECK(parsed);
  CHECK(p.classify_text("angry", &parsed) == 2);
  CHECK_FALSE(parsed);
  // A template naming a class outside the set goes through the fallback.
  p.classify_text("feeling emotion of calm", &parsed);
  CHECK_FALSE(parsed);
  CHECK_THROWS_AS(ClassPredictor(model, {}, View::kCategorical, 1, 4), InputError);
}

TEST_CASE("protocols on a tiny synthetic task") {
  const fs::path dir = fs::temp_directory_path() / "selm_harness_test";
  fs::remove_all(dir);
  const Manifest src = synthesize_dataset(tiny_synth("src", 0.0, 0), (dir / "src").string()).manifest;
  const Manifest tgt = synthesize_dataset(tiny_synth("tgt", 4.0, 1), (dir / "tgt").string()).manifest;
  auto lm = small_lm();
  const ExperimentConfig config = tiny_experiment();

  SUBCASE("in-domain emits one report per fold and reproduces byte for byte") {
    FeatureStore store;
    const EvalReport a = run_in_domain(src, lm, config, store);
    CHECK(a.parts.size() == 5);
    double mean = 0.0;
    std::int64_t n = 0;
    for (const auto& p : a.parts) {
      mean += p.ua / 5.0;
      n += p.n_examples;
      CHECK(p.recalls.size() == 3);
    }
    CHECK(a.ua == doctest::Approx(mean));
    CHECK(n == 30);
    CHECK(a.n_examples == 30);
    FeatureStore fresh;
    CHECK(to_json(run_in_domain(src, lm, config, fresh)).dump() == to_json(a).dump());
  }
  SUBCASE("out-of-domain guards against leakage") {
    FeatureStore store;
    std::unique_ptr<SelmModel> trained;
    const EvalReport r = run_ood(src, tgt, lm, config, store, &trained);
    CHECK(trained != nullptr);
    CHECK(r.n_examples == 6);
    CHECK_THROWS_AS(run_ood(src, src, lm, config, store), LeakageError);
    Manifest shared = tgt;
    shared.records[0].id = src.records[3].id;
    CHECK_THROWS_AS(check_disjoint(src, shared), LeakageError);

    SUBCASE("few-shot") {
      CHECK_THROWS_AS(run_fsl(*trained, tgt, 2, {}, config, store), ConfigError);
      const EvalReport f = run_fsl(*trained, tgt, 2, {0, 1}, config, store);
      CHECK(f.parts.size() == 2);
      CHECK(f.ua == doctest::Approx((f.parts[0].ua + f.parts[1].ua) / 2.0));
      const EvalReport again = run_fsl(*trained, tgt, 2, {0, 1}, config, store);
      CHECK(to_json(again).dump() == to_json(f).dump());

      const EvalReport ab = run_ablation(*trained, tgt, 2, {0},
                                         {ParamGroup::kAlEnc, ParamGroup::kAlDec, ParamGroup::kAt, ParamGroup::kTt},
                                         config, store);
      REQUIRE(ab.parts.size() == 4);
      CHECK(ab.parts[0].setup == "ablation/AL-Enc");
      CHECK(ab.parts[3].setup == "ablation/TT");
      for (const auto& p : ab.parts) CHECK(p.classes == ab.classes);

      // A manifest whose train rows are also tagged as test would leak.
      Manifest leaky = tgt;
      for (auto& r : leaky.records) r.split = Split::kTest;
      leaky.records[0].split = Split::kTrain;
      CHECK_THROWS(run_fsl(*trained, leaky, 1, {0}, config, store));
    }
  }
  fs::remove_all(dir);
}

#ifndef SELM_TRAINER_H_
#define SELM_TRAINER_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "selm/dataio.h"
#include "selm/selm_model.h"

namespace selm {

// Finetunable parts of the mapper stack.
//   AL-Enc  audio_projection.linear1 (first linear of the audio projection)
//   AL-Dec  audio_mapper.sequence    (linear that expands to k latents)
//   AT      audio_mapper.transformer
//   TT      text_mapper.transformer
//   ALL     every mapper parameter
enum class ParamGroup { kAlEnc, kAlDec, kAt, kTt, kAll };

std::string group_name(ParamGroup group);
ParamGroup parse_group(const std::string& name);
// Comma-separated names, e.g. "AT,TT".
std::vector<ParamGroup> parse_group_spec(const std::string& csv);
std::string group_spec_string(const std::vector<ParamGroup>& spec);

std::set<std::string> select_param_groups(const std::vector<ParamGroup>& spec, const SelmModel& model);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 8;  // 0 means the whole dataset
  double lr = 1e-3;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  std::vector<ParamGroup> groups = {ParamGroup::kAll};

  void validate() const;
};

// Few-shot defaults: whole-shot batches, small learning rate, text mapper.
TrainConfig default_few_shot_config();

struct TrainExample {
  std::string id;
  AudioFeature feature;
  std::string prompt;
  TokenSequence target;  // without <eos>
  std::string label;
};

// Resolves features and tokenizes targets; failures name the triplet.
std::vector<TrainExample> prepare_examples(const std::vector<Triplet>& triplets,
                                           const Vocabulary& vocab, FeatureStore& store);

// Mean teacher-forced loss over the batch.
double compute_loss(const SelmModel& model, const std::vector<TrainExample>& batch);

// Mean loss and its gradient with respect to the trainable mapper entries.
double loss_and_gradients(const SelmModel& model, const std::vector<const TrainExample*>& batch,
                          Gradients& grads);

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

std::string epoch_record_json(const EpochRecord& record);

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::int64_t steps = 0;
};

using EpochLogger = std::function<void(const EpochRecord&)>;

// Adam over the selected groups with a fresh optimizer state. Other mapper
// entries and the language model are never written. Epoch order is a
// shuffle seeded by (seed, epoch).
TrainReport train(SelmModel& model, const std::vector<TrainExample>& data, const TrainConfig& config,
                  const EpochLogger& log = {});

// Initializes a model from `seed` and trains it.
SelmModel train_new(const std::vector<TrainExample>& data, const SelmConfig& model_config,
                    std::shared_ptr<const LanguageModel> lm, const TrainConfig& config,
                    TrainReport* report = nullptr, const EpochLogger& log = {});

// Copy of `base` finetuned on `shots`; every class must contribute the same
// number of shots.
SelmModel few_shot_finetune(const SelmModel& base, const std::vector<TrainExample>& shots,
                            const TrainConfig& config, TrainReport* report = nullptr);

// Central-difference check of trainable scalars: all of them, or a seeded
// sample of up to `per_tensor` from each tensor. Reports the max relative
// error |a - n| / (|a| + |n| + 1e-8).
struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::int64_t checked = 0;
  std::map<std::string, double> per_parameter;  // max error per tensor
};

using LossFn = std::function<double()>;
GradCheckResult grad_check(ParameterTree& params, const Gradients& analytic, const LossFn& loss,
                           double eps, std::int64_t per_tensor = -1, std::uint64_t seed = 0);

GradCheckResult grad_check_model(SelmModel& model, const std::vector<TrainExample>& batch,
                                 double eps, std::int64_t per_tensor = -1, std::uint64_t seed = 0);

// Small assembled model for gradient checks: random 32-wide LM over the
// byte-level vocabulary, default mapper stack with d_audio = 8, and a
// two-example batch.
struct GradCheckFixture {
  std::unique_ptr<SelmModel> model;
  std::vector<TrainExample> batch;
};

GradCheckFixture make_grad_check_fixture(std::uint64_t seed);

}  // namespace selm

#endif  // SELM_TRAINER_H_

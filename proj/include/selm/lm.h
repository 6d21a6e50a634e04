#ifndef SELM_LM_H_
#define SELM_LM_H_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "selm/autograd.h"
#include "selm/checkpoint.h"
#include "selm/parameters.h"
#include "selm/tokenizer.h"

namespace selm {

struct LmConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int context_length = 96;
  int vocab_size = 512;

  void validate() const;
};

struct LmOutput {
  Tensor logits;  // n_total x V
  Tensor hidden;  // n_total x d_model, after the final layer norm
};

// Miniature decoder-only transformer: token and learned absolute position
// embeddings, pre-norm causal blocks, final layer norm, untied output head.
// Parameter names all start with "lm.".
class LanguageModel {
 public:
  LanguageModel(LmConfig config, Vocabulary vocab, ParameterTree params);

  static LanguageModel initialize(const LmConfig& config, Vocabulary vocab, std::uint64_t seed);

  const LmConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const ParameterTree& parameters() const { return params_; }
  ParameterTree& mutable_parameters() { return params_; }
  void freeze();

  // Rows of the token embedding table.
  Tensor embed_tokens(const TokenSequence& tokens) const;

  // Causal pass over [prefix rows; token embeddings]; the prefix takes
  // positions 0..m-1. `prefix` may be empty (0 rows).
  LmOutput forward(const Tensor& prefix, const TokenSequence& tokens) const;

  CheckpointData to_checkpoint() const;
  static LanguageModel from_checkpoint(const CheckpointData& data);
  std::vector<std::uint8_t> serialize() const;
  void save(const std::string& path) const;
  static LanguageModel load(const std::string& path);

 private:
  LmConfig config_;
  Vocabulary vocab_;
  ParameterTree params_;
};

inline constexpr const char* kTokenEmbedding = "lm.token_embedding.weight";
inline constexpr const char* kPositionEmbedding = "lm.position_embedding.weight";

// Graph-level pieces, parameterized by a tree that holds the "lm." entries.
Var lm_embed(Graph& g, const ParameterTree& tree, std::span<const TokenId> ids);
// Adds position embeddings to `inputs` (rows start at position 0), runs the
// blocks and the final layer norm.
Var lm_hidden(Graph& g, const ParameterTree& tree, const LmConfig& config, Var inputs);
Var lm_logits(Graph& g, const ParameterTree& tree, Var hidden);

void init_lm_parameters(ParameterTree& tree, const LmConfig& config, Rng& rng);

struct PretrainConfig {
  int steps = 800;
  int batch_size = 4;
  double lr = 2e-3;
  double clip_norm = 1.0;
  double heldout_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  double heldout_loss_before = 0.0;
  double heldout_loss_after = 0.0;
  std::vector<double> train_curve;  // mean loss per step
};

struct PretrainResult {
  LanguageModel model;
  PretrainReport report;
};

using StepLogger = std::function<void(int step, double loss)>;

// Next-token training on a packed stream of <bos> line <eos> records, sampled
// as random context-length windows so every position sees text.
PretrainResult pretrain_lm(const std::vector<std::string>& corpus, const Vocabulary& vocab,
                           const LmConfig& config, const PretrainConfig& train,
                           const StepLogger& log = {});

// Mean next-token loss over consecutive windows of a token stream.
double stream_loss(const LanguageModel& lm, const TokenSequence& stream);

// Greedy continuation until <eos> or max_tokens; returns generated ids
// without the <eos>.
TokenSequence greedy_continue(const LanguageModel& lm, const TokenSequence& context,
                              int max_tokens);

}  // namespace selm

#endif  // SELM_LM_H_

#ifndef SELM_SELM_MODEL_H_
#define SELM_SELM_MODEL_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "selm/audio_feature.h"
#include "selm/autograd.h"
#include "selm/checkpoint.h"
#include "selm/lm.h"
#include "selm/parameters.h"
#include "selm/tokenizer.h"

namespace selm {

struct SelmConfig {
  int d_audio = 32;
  int d_proj = 0;  // 0 means d_lm
  int prefix_length = 10;  // k, per modality
  int mapper_heads = 2;

  // Checks against the LM it will condition; returns d_proj resolved.
  int resolved_d_proj(const LmConfig& lm) const { return d_proj > 0 ? d_proj : lm.d_model; }
  void validate(const LmConfig& lm) const;
};

// Audio projection, audio mapper and text mapper in front of a frozen
// language model. The mapper parameters are owned here; the language model
// is shared and never written.
//
//   pooled = mean_frames(linear2(gelu(linear1(x))))
//   a      = transformer(reshape(sequence(pooled), k, d_lm))
//   t      = transformer(embed(pad_or_truncate(tokens(prompt), k)))
//   prefix = [a; t]
class SelmModel {
 public:
  SelmModel(SelmConfig config, std::shared_ptr<const LanguageModel> lm, ParameterTree mapper);

  static SelmModel initialize(const SelmConfig& config, std::shared_ptr<const LanguageModel> lm,
                              std::uint64_t seed);

  const SelmConfig& config() const { return config_; }
  const LanguageModel& lm() const { return *lm_; }
  std::shared_ptr<const LanguageModel> shared_lm() const { return lm_; }
  const ParameterTree& mapper() const { return mapper_; }
  ParameterTree& mutable_mapper() { return mapper_; }
  int prefix_length() const { return config_.prefix_length; }
  int d_lm() const { return lm_->config().d_model; }
  const std::string& lm_hash() const { return lm_hash_; }

  // Mapper and LM entries in one tree (LM entries frozen). A copy, for
  // inspection.
  ParameterTree combined_parameters() const;

  // Graph-level stages; mapper parameters bind from mapper(), LM parameters
  // from the language model.
  Var audio_project(Graph& g, const AudioFeature& x) const;
  Var audio_map(Graph& g, Var pooled) const;
  Var text_map(Graph& g, const std::string& prompt) const;
  Var prefix(Graph& g, const AudioFeature& x, const std::string& prompt) const;
  // Teacher-forced loss of one example: CE over the target tokens and a
  // final <eos>, conditioned on the prefix and <bos>.
  Var example_loss(Graph& g, const AudioFeature& x, const std::string& prompt,
                   const TokenSequence& target) const;

  // Plain-value versions.
  Tensor audio_project(const AudioFeature& x) const;  // [d_proj]
  Tensor audio_map(const Tensor& pooled) const;       // k x d_lm
  Tensor text_map(const std::string& prompt) const;   // k x d_lm
  Tensor prefix(const AudioFeature& x, const std::string& prompt) const;
  static Tensor build_prefix(const Tensor& audio, const Tensor& text);

  // Prompt token ids padded with <pad> or truncated to exactly k.
  TokenSequence prompt_tokens(const std::string& prompt) const;

  // Log-probabilities of the next token after [prefix; <bos>, generated...].
  std::vector<double> next_token_logprobs(const Tensor& prefix, const TokenSequence& generated) const;

  CheckpointData to_checkpoint(const std::string& lm_path) const;
  // Verifies that `lm` hashes to the recorded lm_sha256.
  static SelmModel from_checkpoint(const CheckpointData& data, std::shared_ptr<const LanguageModel> lm);
  void save(const std::string& path, const std::string& lm_path) const;
  // Loads the referenced LM (lm_path metadata, or `lm_path_override`).
  static SelmModel load(const std::string& path, const std::string& lm_path_override = "");

 private:
  SelmConfig config_;
  std::shared_ptr<const LanguageModel> lm_;
  ParameterTree mapper_;
  std::string lm_hash_;
};

void init_mapper_parameters(ParameterTree& tree, const SelmConfig& config, const LmConfig& lm,
                            Rng& rng);

// ---------------------------------------------------------------------------
// Decoding.

struct BeamHypothesis {
  TokenSequence tokens;  // includes the final <eos> when one was emitted
  double logprob = 0.0;
  bool finished = false;
};

// Log-probabilities over the vocabulary for the token after `generated`.
using NextTokenScorer = std::function<std::vector<double>(const TokenSequence& generated)>;

// Length-unnormalized beam search. Each step expands every live hypothesis
// over the full vocabulary and keeps the `beam` best candidates (ties: first
// in expansion order, i.e. by parent rank, then token id). A candidate
// finishes on <eos> or at max_tokens. Returns the best finished hypothesis,
// earliest-finished on ties.
BeamHypothesis beam_search(const NextTokenScorer& scorer, int beam, int max_tokens);

// Argmax decoding (ties: lowest id), independent of beam_search.
BeamHypothesis greedy_decode(const NextTokenScorer& scorer, int max_tokens);

struct Generation {
  std::string text;
  BeamHypothesis hypothesis;
};

Generation generate(const SelmModel& model, const AudioFeature& x, const std::string& prompt,
                    int beam = 3, int max_tokens = 20);

// ---------------------------------------------------------------------------
// Free text to class.

// Where text_embedding reads its per-token vectors from the frozen LM.
enum class EmbeddingSource {
  kTokenTable,   // input token-embedding rows (the text embedder)
  kFinalHidden,  // hidden states after the final layer norm
};

// Mean over the text's tokens of the chosen frozen-LM vectors. The text is
// encoded with a leading space so a bare word and the same word inside a
// sentence share tokens; empty text embeds as <bos>.
std::vector<double> text_embedding(const LanguageModel& lm, const std::string& text,
                                   EmbeddingSource source = EmbeddingSource::kTokenTable);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Index of the class whose embedding has the highest cosine similarity with
// the embedding of `text`; ties go to the lowest index.
std::size_t map_to_class(const LanguageModel& lm, const std::string& text,
                         const std::vector<std::string>& classes,
                         EmbeddingSource source = EmbeddingSource::kTokenTable);

// Same rule over precomputed embeddings.
std::size_t argmax_cosine(const std::vector<double>& query,
                          const std::vector<std::vector<double>>& class_embeddings);

}  // namespace selm

#endif  // SELM_SELM_MODEL_H_

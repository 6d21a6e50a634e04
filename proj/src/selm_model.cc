#include "selm/selm_model.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "selm/errors.h"
#include "selm/transformer.h"

namespace selm {

namespace {

constexpr const char* kLinear1 = "audio_projection.linear1";
constexpr const char* kLinear2 = "audio_projection.linear2";
constexpr const char* kSequence = "audio_mapper.sequence";
constexpr const char* kAudioTransformer = "audio_mapper.transformer";
constexpr const char* kTextTransformer = "text_mapper.transformer";

std::shared_ptr<const LanguageModel> frozen_copy(std::shared_ptr<const LanguageModel> lm) {
  if (!lm) throw ConfigError("SELM needs a language model");
  if (lm->parameters().trainable_names().empty()) return lm;
  auto copy = std::make_shared<LanguageModel>(*lm);
  copy->freeze();
  return copy;
}

}  // namespace

void SelmConfig::validate(const LmConfig& lm) const {
  if (d_audio < 1) throw ConfigError("d_audio must be positive");
  if (d_proj < 0) throw ConfigError("d_proj must be non-negative");
  if (prefix_length < 1) throw ConfigError("prefix length k must be >= 1");
  if (2 * prefix_length >= lm.context_length) {
    throw ConfigError("2k must be below the LM context length");
  }
  if (mapper_heads < 1 || lm.d_model % mapper_heads != 0) {
    throw ConfigError("mapper heads must divide d_lm");
  }
}

void init_mapper_parameters(ParameterTree& tree, const SelmConfig& config, const LmConfig& lm,
                            Rng& rng) {
  const std::int64_t d_proj = config.resolved_d_proj(lm);
  const std::int64_t d = lm.d_model;
  init_linear(tree, kLinear1, config.d_audio, d_proj, rng, false);
  init_linear(tree, kLinear2, d_proj, d_proj, rng, false);
  init_linear(tree, kSequence, d_proj, config.prefix_length * d, rng, false);
  init_transformer_layer(tree, kAudioTransformer, d, rng, false);
  init_transformer_layer(tree, kTextTransformer, d, rng, false);
}

SelmModel::SelmModel(SelmConfig config, std::shared_ptr<const LanguageModel> lm,
                     ParameterTree mapper)
    : config_(config), lm_(frozen_copy(std::move(lm))), mapper_(std::move(mapper)) {
  config_.validate(lm_->config());
  for (const auto& [name, _] : mapper_) {
    if (name.rfind("lm.", 0) == 0) throw ConfigError("mapper tree holds LM entry " + name);
  }
  lm_hash_ = sha256_hex(lm_->serialize());
}

SelmModel SelmModel::initialize(const SelmConfig& config, std::shared_ptr<const LanguageModel> lm,
                                std::uint64_t seed) {
  if (!lm) throw ConfigError("SELM needs a language model");
  config.validate(lm->config());
  Rng rng(seed);
  ParameterTree tree;
  init_mapper_parameters(tree, config, lm->config(), rng);
  return SelmModel(config, std::move(lm), std::move(tree));
}

ParameterTree SelmModel::combined_parameters() const {
  ParameterTree out;
  for (const auto& [name, p] : mapper_) out.add(name, p.value, p.frozen);
  for (const auto& [name, p] : lm_->parameters()) out.add(name, p.value, true);
  return out;
}

// ---------------------------------------------------------------------------
// Graph stages.

Var SelmModel::audio_project(Graph& g, const AudioFeature& x) const {
  if (x.dim() != config_.d_audio) {
    throw ShapeError("feature width " + std::to_string(x.dim()) + " but model expects " +
                     std::to_string(config_.d_audio));
  }
  Var h = g.constant(Matrix::from_tensor(x.data()));
  h = gelu(apply_linear(g, mapper_, kLinear1, h));
  h = apply_linear(g, mapper_, kLinear2, h);
  return mean_rows(h);
}

Var SelmModel::audio_map(Graph& g, Var pooled) const {
  const std::int64_t d = d_lm();
  if (pooled.rows() != 1 || pooled.cols() != config_.resolved_d_proj(lm_->config())) {
    throw ShapeError("pooled audio must be 1 x d_proj");
  }
  Var s = apply_linear(g, mapper_, kSequence, pooled);
  s = reshape(s, config_.prefix_length, d);
  return transformer_layer(g, mapper_, kAudioTransformer, s, config_.mapper_heads, false);
}

TokenSequence SelmModel::prompt_tokens(const std::string& prompt) const {
  TokenSequence ids = lm_->vocabulary().encode(prompt);
  if (ids.empty()) throw InputError("prompt tokenizes to no tokens");
  ids.resize(static_cast<std::size_t>(config_.prefix_length), kPadId);
  return ids;
}

Var SelmModel::text_map(Graph& g, const std::string& prompt) const {
  const TokenSequence ids = prompt_tokens(prompt);
  Var t = lm_embed(g, lm_->parameters(), ids);
  return transformer_layer(g, mapper_, kTextTransformer, t, config_.mapper_heads, false);
}

Var SelmModel::prefix(Graph& g, const AudioFeature& x, const std::string& prompt) const {
  Var a = audio_map(g, audio_project(g, x));
  return concat_rows(a, text_map(g, prompt));
}

Var SelmModel::example_loss(Graph& g, const AudioFeature& x, const std::string& prompt,
                            const TokenSequence& target) const {
  const std::int64_t m = 2LL * config_.prefix_length;
  const auto l = static_cast<std::int64_t>(target.size());
  if (m + l + 1 > lm_->config().context_length) {
    throw ContextOverflowError("target of " + std::to_string(l) + " tokens overflows context after a " +
                               std::to_string(m) + "-row prefix");
  }
  TokenSequence inputs;
  inputs.reserve(target.size() + 1);
  inputs.push_back(kBosId);
  inputs.insert(inputs.end(), target.begin(), target.end());
  Var seq = concat_rows(prefix(g, x, prompt), lm_embed(g, lm_->parameters(), inputs));
  Var logits = lm_logits(g, lm_->parameters(), lm_hidden(g, lm_->parameters(), lm_->config(), seq));

  const auto n = static_cast<std::size_t>(m + l + 1);
  std::vector<TokenId> targets(n, kPadId);
  std::vector<bool> mask(n, false);
  for (std::int64_t i = 0; i <= l; ++i) {
    targets[m + i] = i < l ? target[i] : kEosId;
    mask[m + i] = true;
  }
  return softmax_cross_entropy(logits, targets, mask);
}

// ---------------------------------------------------------------------------
// Plain-value stages.

Tensor SelmModel::audio_project(const AudioFeature& x) const {
  Graph g;
  return audio_project(g, x).value().to_tensor({config_.resolved_d_proj(lm_->config())});
}

Tensor SelmModel::audio_map(const Tensor& pooled) const {
  Graph g;
  Matrix row = Matrix::from_tensor(pooled);
  row = Matrix(1, row.size(), row.data);
  return audio_map(g, g.constant(std::move(row))).value().to_tensor();
}

Tensor SelmModel::text_map(const std::string& prompt) const {
  Graph g;
  return text_map(g, prompt).value().to_tensor();
}

Tensor SelmModel::prefix(const AudioFeature& x, const std::string& prompt) const {
  Graph g;
  return prefix(g, x, prompt).value().to_tensor();
}

Tensor SelmModel::build_prefix(const Tensor& audio, const Tensor& text) {
  if (audio.rank() != 2 || text.rank() != 2 || audio.cols() != text.cols()) {
    throw ShapeError("prefix halves must be matrices of equal width");
  }
  if (audio.rows() != text.rows()) throw ShapeError("prefix halves must both have k rows");
  Tensor out({audio.rows() + text.rows(), audio.cols()});
  std::copy(audio.data().begin(), audio.data().end(), out.data().begin());
  std::copy(text.data().begin(), text.data().end(), out.data().begin() + audio.size());
  return out;
}

std::vector<double> SelmModel::next_token_logprobs(const Tensor& prefix,
                                                   const TokenSequence& generated) const {
  TokenSequence tokens;
  tokens.reserve(generated.size() + 1);
  tokens.push_back(kBosId);
  tokens.insert(tokens.end(), generated.begin(), generated.end());
  LmOutput out = lm_->forward(prefix, tokens);
  auto last = out.logits.row(out.logits.rows() - 1);
  std::vector<double> row(last.begin(), last.end());
  return log_softmax_row(row);
}

// ---------------------------------------------------------------------------
// Checkpoints.

CheckpointData SelmModel::to_checkpoint(const std::string& lm_path) const {
  CheckpointData data;
  data.config = {{"d_audio", config_.d_audio},
                 {"d_proj", config_.resolved_d_proj(lm_->config())},
                 {"prefix_length", config_.prefix_length},
                 {"mapper_heads", config_.mapper_heads},
                 {"d_lm", d_lm()}};
  data.metadata = {{"kind", "selm"}, {"lm_sha256", lm_hash_}, {"lm_path", lm_path}};
  for (const auto& [name, p] : mapper_) data.tensors.emplace(name, p.value);
  return data;
}

SelmModel SelmModel::from_checkpoint(const CheckpointData& data,
                                     std::shared_ptr<const LanguageModel> lm) {
  auto kind = data.metadata.find("kind");
  if (kind == data.metadata.end() || kind->second != "selm") {
    throw FormatError("checkpoint is not a SELM model", 0);
  }
  auto field = [&](const char* key) {
    auto it = data.config.find(key);
    if (it == data.config.end()) throw FormatError(std::string("missing config field ") + key, 0);
    return static_cast<int>(it->second);
  };
  SelmConfig config;
  config.d_audio = field("d_audio");
  config.d_proj = field("d_proj");
  config.prefix_length = field("prefix_length");
  config.mapper_heads = field("mapper_heads");
  if (!lm) throw ConfigError("SELM checkpoint needs a language model");
  if (field("d_lm") != lm->config().d_model) {
    throw CheckpointMismatchError("checkpoint d_lm disagrees with the language model");
  }
  auto frozen_lm = frozen_copy(std::move(lm));
  const std::string expected = data.metadata.count("lm_sha256") ? data.metadata.at("lm_sha256") : "";
  const std::string actual = sha256_hex(frozen_lm->serialize());
  if (expected != actual) {
    throw CheckpointMismatchError("language model hash " + actual + " does not match recorded " +
                                  expected);
  }
  config.validate(frozen_lm->config());
  ParameterTree reference;
  Rng rng(0);
  init_mapper_parameters(reference, config, frozen_lm->config(), rng);
  ParameterTree tree;
  for (const auto& [name, p] : reference) {
    auto it = data.tensors.find(name);
    if (it == data.tensors.end()) throw FormatError("missing tensor " + name, 0);
    if (it->second.shape() != p.value.shape()) throw FormatError("bad shape for tensor " + name, 0);
    tree.add(name, it->second, false);
  }
  if (data.tensors.size() != reference.size()) throw FormatError("unexpected extra tensors", 0);
  return SelmModel(config, std::move(frozen_lm), std::move(tree));
}

void SelmModel::save(const std::string& path, const std::string& lm_path) const {
  write_file_bytes(path, encode_checkpoint(to_checkpoint(lm_path)));
}

SelmModel SelmModel::load(const std::string& path, const std::string& lm_path_override) {
  namespace fs = std::filesystem;
  CheckpointData data = decode_checkpoint(read_file_bytes(path));
  std::string lm_path = lm_path_override;
  if (lm_path.empty()) {
    auto it = data.metadata.find("lm_path");
    if (it == data.metadata.end() || it->second.empty()) {
      throw FormatError("checkpoint records no language model path", 0);
    }
    lm_path = it->second;
    if (fs::path(lm_path).is_relative() && !fs::exists(lm_path)) {
      lm_path = (fs::path(path).parent_path() / lm_path).string();
    }
  }
  auto lm = std::make_shared<const LanguageModel>(LanguageModel::load(lm_path));
  return from_checkpoint(data, std::move(lm));
}

// ---------------------------------------------------------------------------
// Decoding.

namespace {

void check_scores(const std::vector<double>& lp) {
  if (std::none_of(lp.begin(), lp.end(), [](double v) { return std::isfinite(v); })) {
    throw NumericalError("model produced no finite log-probability");
  }
}

}  // namespace

BeamHypothesis beam_search(const NextTokenScorer& scorer, int beam, int max_tokens) {
  if (beam < 1) throw ConfigError("beam must be >= 1");
  if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  struct Candidate {
    std::size_t parent;
    TokenId token;
    double logprob;
  };
  std::vector<BeamHypothesis> live{BeamHypothesis{}};
  std::vector<BeamHypothesis> finished;
  for (int step = 0; step < max_tokens && !live.empty(); ++step) {
    std::vector<Candidate> candidates;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const std::vector<double> lp = scorer(live[h].tokens);
      check_scores(lp);
      for (std::size_t v = 0; v < lp.size(); ++v) {
        if (std::isfinite(lp[v])) {
          candidates.push_back({h, static_cast<TokenId>(v), live[h].logprob + lp[v]});
        }
      }
    }
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(beam), candidates.size());
    // Candidates are already in expansion order, so a stable sort keeps it
    // as the tie-break.
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.logprob > b.logprob; });
    std::vector<BeamHypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      BeamHypothesis h;
      h.tokens = live[candidates[i].parent].tokens;
      h.tokens.push_back(candidates[i].token);
      h.logprob = candidates[i].logprob;
      h.finished = candidates[i].token == kEosId || static_cast<int>(h.tokens.size()) >= max_tokens;
      (h.finished ? finished : next).push_back(std::move(h));
    }
    live = std::move(next);
    if (!finished.empty() && !live.empty()) {
      // Extensions only lose log-probability, so no live hypothesis can
      // overtake a finished one that already scores at least as high.
      double best_finished = -std::numeric_limits<double>::infinity();
      for (const auto& f : finished) best_finished = std::max(best_finished, f.logprob);
      double best_live = -std::numeric_limits<double>::infinity();
      for (const auto& h : live) best_live = std::max(best_live, h.logprob);
      if (best_finished >= best_live) break;
    }
  }
  if (finished.empty()) throw NumericalError("beam search finished no hypothesis");
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i) {
    if (finished[i].logprob > finished[best].logprob) best = i;
  }
  return finished[best];
}

BeamHypothesis greedy_decode(const NextTokenScorer& scorer, int max_tokens) {
  if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  BeamHypothesis h;
  while (!h.finished) {
    const std::vector<double> lp = scorer(h.tokens);
    check_scores(lp);
    std::size_t best = lp.size();
    for (std::size_t v = 0; v < lp.size(); ++v) {
      if (std::isfinite(lp[v]) && (best == lp.size() || lp[v] > lp[best])) best = v;
    }
    h.tokens.push_back(static_cast<TokenId>(best));
    h.logprob += lp[best];
    h.finished = h.tokens.back() == kEosId || static_cast<int>(h.tokens.size()) >= max_tokens;
  }
  return h;
}

Generation generate(const SelmModel& model, const AudioFeature& x, const std::string& prompt,
                    int beam, int max_tokens) {
  const Tensor z = model.prefix(x, prompt);
  const std::int64_t needed = z.rows() + max_tokens;
  if (needed > model.lm().config().context_length) {
    throw ContextOverflowError("prefix plus " + std::to_string(max_tokens) +
                               " generated tokens exceeds the LM context");
  }
  NextTokenScorer scorer = [&](const TokenSequence& generated) {
    return model.next_token_logprobs(z, generated);
  };
  Generation out;
  out.hypothesis = beam_search(scorer, beam, max_tokens);
  out.text = model.lm().vocabulary().decode(out.hypothesis.tokens);
  return out;
}

// ---------------------------------------------------------------------------
// Class mapping.

std::vector<double> text_embedding(const LanguageModel& lm, const std::string& text,
                                   EmbeddingSource source) {
  TokenSequence ids = text.empty() ? TokenSequence{kBosId} : lm.vocabulary().encode(" " + text);
  const Tensor rows =
      source == EmbeddingSource::kTokenTable ? lm.embed_tokens(ids) : lm.forward(Tensor(), ids).hidden;
  std::vector<double> mean(static_cast<std::size_t>(lm.config().d_model), 0.0);
  for (std::int64_t r = 0; r < rows.rows(); ++r) {
    auto row = rows.row(r);
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += row[j];
  }
  for (double& v : mean) v /= static_cast<double>(rows.rows());
  return mean;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different lengths");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::size_t argmax_cosine(const std::vector<double>& query,
                          const std::vector<std::vector<double>>& class_embeddings) {
  if (class_embeddings.empty()) throw InputError("class set is empty");
  std::size_t best = 0;
  double best_sim = cosine_similarity(query, class_embeddings[0]);
  for (std::size_t c = 1; c < class_embeddings.size(); ++c) {
    const double sim = cosine_similarity(query, class_embeddings[c]);
    if (sim > best_sim) {
      best = c;
      best_sim = sim;
    }
  }
  return best;
}

std::size_t map_to_class(const LanguageModel& lm, const std::string& text,
                         const std::vector<std::string>& classes, EmbeddingSource source) {
  if (classes.empty()) throw InputError("class set is empty");
  if (std::set<std::string>(classes.begin(), classes.end()).size() != classes.size()) {
    throw InputError("class names must be unique");
  }
  std::vector<std::vector<double>> embeddings;
  embeddings.reserve(classes.size());
  for (const auto& c : classes) embeddings.push_back(text_embedding(lm, c, source));
  return argmax_cosine(text_embedding(lm, text, source), embeddings);
}

}  // namespace selm

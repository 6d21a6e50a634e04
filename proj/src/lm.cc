#include "selm/lm.h"

#include <algorithm>

#include "selm/errors.h"
#include "selm/transformer.h"

namespace selm {

void LmConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || context_length < 2 ||
      vocab_size < kMinVocabSize) {
    throw ConfigError("language model dimensions must be positive and vocab >= 259");
  }
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
}

LanguageModel::LanguageModel(LmConfig config, Vocabulary vocab, ParameterTree params)
    : config_(config), vocab_(std::move(vocab)), params_(std::move(params)) {
  config_.validate();
  if (vocab_.size() != config_.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(vocab_.size()) +
                      " ids, config expects " + std::to_string(config_.vocab_size));
  }
  const Tensor& emb = params_.at(kTokenEmbedding).value;
  if (emb.rows() != config_.vocab_size || emb.cols() != config_.d_model) {
    throw ShapeError("token embedding shape " + emb.shape_string() + " disagrees with config");
  }
}

void init_lm_parameters(ParameterTree& tree, const LmConfig& config, Rng& rng) {
  const std::int64_t d = config.d_model;
  tree.add(kTokenEmbedding, normal_tensor({config.vocab_size, d}, 0.02, rng), false);
  tree.add(kPositionEmbedding, normal_tensor({config.context_length, d}, 0.02, rng), false);
  for (int l = 0; l < config.n_layers; ++l) {
    init_transformer_layer(tree, "lm.blocks." + std::to_string(l), d, rng, false);
  }
  init_layer_norm(tree, "lm.ln_f", d, false);
  tree.add("lm.head.weight", xavier_uniform(d, config.vocab_size, rng), false);
}

LanguageModel LanguageModel::initialize(const LmConfig& config, Vocabulary vocab,
                                        std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ParameterTree tree;
  init_lm_parameters(tree, config, rng);
  return LanguageModel(config, std::move(vocab), std::move(tree));
}

void LanguageModel::freeze() {
  for (const auto& name : params_.names()) params_.set_frozen(name, true);
}

Var lm_embed(Graph& g, const ParameterTree& tree, std::span<const TokenId> ids) {
  return embedding(g.parameter(tree, kTokenEmbedding), ids);
}

Var lm_hidden(Graph& g, const ParameterTree& tree, const LmConfig& config, Var inputs) {
  const std::int64_t n = inputs.rows();
  if (n > config.context_length) {
    throw ContextOverflowError("sequence of " + std::to_string(n) + " rows exceeds context " +
                               std::to_string(config.context_length));
  }
  if (inputs.cols() != config.d_model) throw ShapeError("lm input width mismatch");
  std::vector<TokenId> positions(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) positions[i] = static_cast<TokenId>(i);
  Var x = add(inputs, embedding(g.parameter(tree, kPositionEmbedding), positions));
  for (int l = 0; l < config.n_layers; ++l) {
    x = transformer_layer(g, tree, "lm.blocks." + std::to_string(l), x, config.n_heads, true);
  }
  return apply_layer_norm(g, tree, "lm.ln_f", x);
}

Var lm_logits(Graph& g, const ParameterTree& tree, Var hidden) {
  return matmul(hidden, g.parameter(tree, "lm.head.weight"));
}

Tensor LanguageModel::embed_tokens(const TokenSequence& tokens) const {
  const Tensor& table = params_.at(kTokenEmbedding).value;
  Tensor out({static_cast<std::int64_t>(tokens.size()), config_.d_model});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= config_.vocab_size) {
      throw VocabularyError("token id " + std::to_string(tokens[i]) + " outside vocabulary");
    }
    auto src = table.row(tokens[i]);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::int64_t>(i) * config_.d_model);
  }
  return out;
}

LmOutput LanguageModel::forward(const Tensor& prefix, const TokenSequence& tokens) const {
  const std::int64_t m = prefix.empty() ? 0 : prefix.rows();
  if (m > 0 && prefix.cols() != config_.d_model) throw ShapeError("prefix width mismatch");
  if (m + static_cast<std::int64_t>(tokens.size()) > config_.context_length) {
    throw ContextOverflowError("prefix + tokens exceed context length");
  }
  Graph g;
  Var x = g.constant(Matrix(0, config_.d_model));
  if (m > 0) x = g.constant(Matrix::from_tensor(prefix));
  if (!tokens.empty()) {
    Var emb = lm_embed(g, params_, tokens);
    x = m > 0 ? concat_rows(x, emb) : emb;
  }
  Var hidden = lm_hidden(g, params_, config_, x);
  Var logits = lm_logits(g, params_, hidden);
  return LmOutput{logits.value().to_tensor(), hidden.value().to_tensor()};
}

CheckpointData LanguageModel::to_checkpoint() const {
  CheckpointData data;
  data.config = {{"d_model", config_.d_model},
                 {"n_layers", config_.n_layers},
                 {"n_heads", config_.n_heads},
                 {"context_length", config_.context_length},
                 {"vocab_size", config_.vocab_size}};
  data.metadata = {{"kind", "language_model"}, {"vocabulary", vocab_.serialize()}};
  for (const auto& [name, p] : params_) data.tensors.emplace(name, p.value);
  return data;
}

LanguageModel LanguageModel::from_checkpoint(const CheckpointData& data) {
  auto kind = data.metadata.find("kind");
  if (kind == data.metadata.end() || kind->second != "language_model") {
    throw FormatError("checkpoint is not a language model", 0);
  }
  auto field = [&](const char* key) {
    auto it = data.config.find(key);
    if (it == data.config.end()) throw FormatError(std::string("missing config field ") + key, 0);
    return static_cast<int>(it->second);
  };
  LmConfig config;
  config.d_model = field("d_model");
  config.n_layers = field("n_layers");
  config.n_heads = field("n_heads");
  config.context_length = field("context_length");
  config.vocab_size = field("vocab_size");
  Vocabulary vocab = Vocabulary::parse(data.metadata.at("vocabulary"));
  ParameterTree reference;
  Rng rng(0);
  init_lm_parameters(reference, config, rng);
  ParameterTree tree;
  for (const auto& [name, p] : reference) {
    auto it = data.tensors.find(name);
    if (it == data.tensors.end()) throw FormatError("missing tensor " + name, 0);
    if (it->second.shape() != p.value.shape()) throw FormatError("bad shape for tensor " + name, 0);
    tree.add(name, it->second, false);
  }
  if (data.tensors.size() != reference.size()) throw FormatError("unexpected extra tensors", 0);
  return LanguageModel(config, std::move(vocab), std::move(tree));
}

std::vector<std::uint8_t> LanguageModel::serialize() const { return encode_checkpoint(to_checkpoint()); }

void LanguageModel::save(const std::string& path) const { write_file_bytes(path, serialize()); }

LanguageModel LanguageModel::load(const std::string& path) {
  return from_checkpoint(decode_checkpoint(read_file_bytes(path)));
}

namespace {

// Loss and gradients for one window: inputs stream[begin, begin+len), targets
// shifted by one.
double window_step(const LanguageModel& lm, const ParameterTree& tree, const TokenSequence& stream,
                   std::size_t begin, std::size_t len, Gradients* grads, double grad_scale) {
  std::span<const TokenId> inputs(stream.data() + begin, len);
  std::span<const TokenId> targets(stream.data() + begin + 1, len);
  Graph g;
  Var h = lm_hidden(g, tree, lm.config(), lm_embed(g, tree, inputs));
  Var loss = softmax_cross_entropy(lm_logits(g, tree, h), targets, std::vector<bool>(len, true));
  const double value = loss.value().data[0];
  if (grads != nullptr) {
    g.backward(loss);
    accumulate(*grads, g.gradients(), grad_scale);
  }
  return value;
}

TokenSequence pack(const Vocabulary& vocab, const std::vector<std::string>& lines) {
  TokenSequence stream;
  for (const auto& line : lines) {
    stream.push_back(kBosId);
    auto ids = vocab.encode(line);
    stream.insert(stream.end(), ids.begin(), ids.end());
    stream.push_back(kEosId);
  }
  return stream;
}

}  // namespace

double stream_loss(const LanguageModel& lm, const TokenSequence& stream) {
  if (stream.size() < 2) throw DataError("stream too short to score");
  const std::size_t window = static_cast<std::size_t>(lm.config().context_length);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin + 1 < stream.size(); begin += window) {
    const std::size_t len = std::min(window, stream.size() - 1 - begin);
    total += window_step(lm, lm.parameters(), stream, begin, len, nullptr, 0.0) * static_cast<double>(len);
    count += len;
  }
  return total / static_cast<double>(count);
}

PretrainResult pretrain_lm(const std::vector<std::string>& corpus, const Vocabulary& vocab,
                           const LmConfig& config, const PretrainConfig& train,
                           const StepLogger& log) {
  if (train.steps < 1 || train.batch_size < 1) throw ConfigError("steps and batch must be >= 1");
  if (corpus.empty()) throw DataError("empty pretraining corpus");
  LanguageModel lm = LanguageModel::initialize(config, vocab, derive_seed(train.seed, 1));

  std::vector<std::string> lines = corpus;
  Rng split_rng(derive_seed(train.seed, 2));
  split_rng.shuffle(lines);
  const auto heldout_n = static_cast<std::size_t>(static_cast<double>(lines.size()) * train.heldout_fraction);
  std::vector<std::string> heldout(lines.begin(), lines.begin() + static_cast<std::ptrdiff_t>(heldout_n));
  std::vector<std::string> train_lines(lines.begin() + static_cast<std::ptrdiff_t>(heldout_n), lines.end());
  const TokenSequence stream = pack(vocab, train_lines);
  const TokenSequence heldout_stream = heldout.empty() ? stream : pack(vocab, heldout);
  const std::size_t window = static_cast<std::size_t>(config.context_length);
  if (stream.size() < window + 1) {
    throw DataError("corpus of " + std::to_string(stream.size()) +
                    " tokens is shorter than one context window of " + std::to_string(window));
  }

  PretrainReport report;
  report.heldout_loss_before = stream_loss(lm, heldout_stream);
  AdamState adam;
  adam.config.lr = train.lr;
  Rng rng(derive_seed(train.seed, 3));
  for (int step = 0; step < train.steps; ++step) {
    Gradients grads;
    double loss = 0.0;
    for (int b = 0; b < train.batch_size; ++b) {
      const auto begin = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(stream.size() - window - 1)));
      loss += window_step(lm, lm.parameters(), stream, begin, window, &grads,
                          1.0 / train.batch_size);
    }
    loss /= train.batch_size;
    clip_by_global_norm(grads, train.clip_norm);
    adam_step(lm.mutable_parameters(), grads, adam);
    report.train_curve.push_back(loss);
    if (log) log(step, loss);
  }
  report.heldout_loss_after = stream_loss(lm, heldout_stream);
  lm.freeze();
  return PretrainResult{std::move(lm), std::move(report)};
}

TokenSequence greedy_continue(const LanguageModel& lm, const TokenSequence& context,
                              int max_tokens) {
  TokenSequence seq = context;
  TokenSequence out;
  for (int t = 0; t < max_tokens; ++t) {
    if (static_cast<int>(seq.size()) >= lm.config().context_length) break;
    LmOutput o = lm.forward(Tensor(), seq);
    auto last = o.logits.row(o.logits.rows() - 1);
    const auto best = static_cast<TokenId>(std::max_element(last.begin(), last.end()) - last.begin());
    if (best == kEosId) break;
    seq.push_back(best);
    out.push_back(best);
  }
  return out;
}

}  // namespace selm

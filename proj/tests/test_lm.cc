#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "selm/checkpoint.h"
#include "selm/dataio.h"
#include "selm/errors.h"
#include "selm/lm.h"

using namespace selm;

namespace {

LmConfig small_config(int vocab_size) {
  LmConfig c;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 2;
  c.context_length = 48;
  c.vocab_size = vocab_size;
  return c;
}

LanguageModel small_lm(std::uint64_t seed) {
  Vocabulary v = Vocabulary::train(lm_corpus(), 320);
  return LanguageModel::initialize(small_config(v.size()), v, seed);
}

bool rows_equal(const Tensor& a, const Tensor& b, std::int64_t rows) {
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < a.cols(); ++c) {
      if (a.at(r, c) != b.at(r, c)) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("config validation") {
  LmConfig c = small_config(300);
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(100);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  Vocabulary v;
  CHECK_THROWS_AS(LanguageModel::initialize(small_config(300), v, 0), ConfigError);
}

TEST_CASE("parameter names are prefixed and frozen after freeze()") {
  LanguageModel lm = small_lm(1);
  for (const auto& [name, p] : lm.parameters()) {
    CHECK(name.rfind("lm.", 0) == 0);
    CHECK_FALSE(p.frozen);
  }
  lm.freeze();
  CHECK(lm.parameters().trainable_names().empty());
  CHECK(lm.parameters().contains(kTokenEmbedding));
  CHECK(lm.parameters().contains(kPositionEmbedding));
}

TEST_CASE("embed_tokens") {
  LanguageModel lm = small_lm(2);
  Tensor empty = lm.embed_tokens({});
  CHECK(empty.rows() == 0);
  CHECK(empty.cols() == 32);
  Tensor twice = lm.embed_tokens({5, 5});
  CHECK(twice.rows() == 2);
  for (int c = 0; c < 32; ++c) CHECK(twice.at(0, c) == twice.at(1, c));
  CHECK_THROWS_AS(lm.embed_tokens({TokenId(lm.vocabulary().size())}), VocabularyError);
}

TEST_CASE("every embedding row is its own nearest neighbour") {
  LanguageModel lm = small_lm(3);
  const Tensor& table = lm.parameters().at(kTokenEmbedding).value;
  const int V = lm.vocabulary().size();
  int misses = 0;
  for (TokenId id = 0; id < V; ++id) {
    Tensor row = lm.embed_tokens({id});
    TokenId best = -1;
    double best_d = 1e300;
    for (TokenId j = 0; j < V; ++j) {
      double d = 0.0;
      for (int c = 0; c < table.cols(); ++c) {
        const double diff = row.at(0, c) - table.at(j, c);
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    misses += best == id ? 0 : 1;
  }
  CHECK(misses == 0);
}

TEST_CASE("forward shapes and context overflow") {
  LanguageModel lm = small_lm(4);
  LmOutput out = lm.forward(Tensor({0, 32}), {kBosId});
  CHECK(out.logits.rows() == 1);
  CHECK(out.logits.cols() == lm.vocabulary().size());
  CHECK(out.hidden.cols() == 32);
  Rng rng(1);
  Tensor prefix = normal_tensor({20, 32}, 1.0, rng);
  CHECK(lm.forward(prefix, TokenSequence(28, kPadId)).logits.rows() == 48);
  CHECK_THROWS_AS(lm.forward(prefix, TokenSequence(29, kPadId)), ContextOverflowError);
  CHECK_THROWS_AS(lm.forward(normal_tensor({2, 16}, 1.0, rng), {kBosId}), ShapeError);
}

TEST_CASE("causal mask: later inputs never change earlier logits") {
  LanguageModel lm = small_lm(5);
  Rng rng(6);
  const Tensor prefix = normal_tensor({6, 32}, 1.0, rng);
  const TokenSequence tokens = lm.vocabulary().encode("this person is feeling");
  const LmOutput base = lm.forward(prefix, tokens);
  const std::int64_t n = base.logits.rows();
  for (std::int64_t j = 0; j < n; ++j) {
    Tensor p = prefix;
    TokenSequence t = tokens;
    if (j < prefix.rows()) {
      for (int c = 0; c < 32; ++c) p.at(j, c) += 0.5f;
    } else {
      auto& id = t[static_cast<std::size_t>(j - prefix.rows())];
      id = id == 100 ? 101 : 100;
    }
    const LmOutput changed = lm.forward(p, t);
    CHECK(rows_equal(base.logits, changed.logits, j));
    CHECK_FALSE(rows_equal(base.logits, changed.logits, j + 1));
  }
}

TEST_CASE("softmax of every logits row sums to one") {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    LanguageModel lm = small_lm(10 + trial);
    TokenSequence tokens;
    for (int i = 0; i < 12; ++i) tokens.push_back(static_cast<TokenId>(rng.uniform_int(0, lm.vocabulary().size() - 1)));
    const LmOutput out = lm.forward(normal_tensor({4, 32}, 1.0, rng), tokens);
    for (std::int64_t r = 0; r < out.logits.rows(); ++r) {
      double mx = -1e300;
      for (std::int64_t c = 0; c < out.logits.cols(); ++c) mx = std::max(mx, double(out.logits.at(r, c)));
      double z = 0.0;
      for (std::int64_t c = 0; c < out.logits.cols(); ++c) z += std::exp(out.logits.at(r, c) - mx);
      double total = 0.0;
      for (std::int64_t c = 0; c < out.logits.cols(); ++c) total += std::exp(out.logits.at(r, c) - mx) / z;
      CHECK(std::abs(total - 1.0) < 1e-5);
    }
  }
}

TEST_CASE("checkpoint round-trip is bit-identical") {
  LanguageModel lm = small_lm(12);
  const auto bytes = lm.serialize();
  const LanguageModel back = LanguageModel::from_checkpoint(decode_checkpoint(bytes));
  CHECK(back.parameters().bit_equal(lm.parameters()));
  CHECK(back.vocabulary() == lm.vocabulary());
  CHECK(back.serialize() == bytes);
  const auto path = (std::filesystem::temp_directory_path() / "selm_lm_test.ckpt").string();
  lm.save(path);
  CHECK(LanguageModel::load(path).serialize() == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("pretraining lowers held-out loss and is deterministic") {
  Vocabulary v = Vocabulary::train(lm_corpus(), 320);
  PretrainConfig p;
  p.steps = 40;
  auto a = pretrain_lm(lm_corpus(), v, small_config(v.size()), p);
  CHECK(a.report.heldout_loss_after < a.report.heldout_loss_before);
  CHECK(a.report.train_curve.size() == 40);
  CHECK(a.model.parameters().trainable_names().empty());
  auto b = pretrain_lm(lm_corpus(), v, small_config(v.size()), p);
  CHECK(a.model.serialize() == b.model.serialize());
}

TEST_CASE("pretraining needs a corpus longer than one window") {
  Vocabulary v;
  PretrainConfig p;
  p.steps = 1;
  CHECK_THROWS_AS(pretrain_lm({"hi"}, v, small_config(v.size()), p), DataError);
  CHECK_THROWS_AS(pretrain_lm({}, v, small_config(v.size()), p), DataError);
}

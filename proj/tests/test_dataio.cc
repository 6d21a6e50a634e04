#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <set>

#include "doctest.h"
#include "selm/checkpoint.h"
#include "selm/config.h"
#include "selm/dataio.h"
#include "selm/errors.h"

using namespace selm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

// Mean over frames, one vector per example.
std::vector<double> frame_mean(const AudioFeature& x) {
  std::vector<double> m(static_cast<std::size_t>(x.dim()), 0.0);
  for (std::int64_t f = 0; f < x.frames(); ++f) {
    for (std::int64_t j = 0; j < x.dim(); ++j) m[j] += x.data().at(f, j) / double(x.frames());
  }
  return m;
}

}  // namespace

TEST_CASE("emotion templates") {
  CHECK(prompt_for(View::kCategorical) == "This person is");
  CHECK(prompt_for(View::kSentiment) == "This sentiment is");
  CHECK(prompt_for(View::kDimensional) == "Describe emotion parameters");
  CHECK(target_for(View::kCategorical, "happy") == "feeling emotion of happy");
  CHECK(sentiment_of("happy") == "positive");
  CHECK(sentiment_of("sad") == "negative");
  CHECK(sentiment_of("angry") == "negative");
  CHECK(sentiment_of("neutral") == "neutral");
  CHECK(parse_view("sentiment") == View::kSentiment);
  CHECK_THROWS_AS(parse_view("mood"), DataError);
  const std::regex dim("valence (low|mid|high) arousal (low|mid|high)");
  for (const auto& e : known_emotions()) {
    CHECK(std::regex_match(dimensional_label_of(e), dim));
    for (View v : {View::kCategorical, View::kSentiment, View::kDimensional}) {
      const std::string label = label_for(v, e);
      const auto parsed = parse_target(v, target_for(v, label));
      REQUIRE(parsed.has_value());
      CHECK(*parsed == label);
    }
  }
  CHECK_FALSE(parse_target(View::kCategorical, "feeling emotion of").has_value());
  CHECK_FALSE(parse_target(View::kSentiment, "very positive").has_value());
}

TEST_CASE("feature files") {
  TempDir dir("selm_feature_test");
  Rng rng(1);
  AudioFeature x(normal_tensor({7, 5}, 3.0, rng));
  write_feature(dir / "a.feat", x);
  CHECK(read_feature(dir / "a.feat").data().bit_equal(x.data()));

  const auto one = encode_feature(AudioFeature(Tensor({1, 1}, {2.5f})));
  CHECK(one.size() == 8u + 16u + 4u);
  CHECK(fs::file_size(dir / "a.feat") == 8u + 16u + 4u * 7u * 5u);

  auto bytes = encode_feature(x);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_feature(truncated), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_feature(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[8] = 9;
  try {
    decode_feature(bad_version);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 8);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_feature(trailing), FormatError);
  CHECK_THROWS_AS(decode_feature(std::vector<std::uint8_t>(4, 0)), FormatError);
  CHECK_THROWS_AS(AudioFeature(Tensor({0, 3})), InputError);
  CHECK_THROWS_AS(AudioFeature(Tensor({1, 1}, {NAN})), InvalidValueError);
  CHECK_THROWS_AS(read_feature(dir / "missing.feat"), IoError);
}

TEST_CASE("checkpoint container round-trips") {
  CheckpointData d;
  d.config["a"] = -5;
  d.config["b"] = 1LL << 40;
  d.metadata["kind"] = "test";
  Rng rng(2);
  d.tensors["x.weight"] = normal_tensor({3, 4}, 1.0, rng);
  d.tensors["a.bias"] = normal_tensor({4}, 1.0, rng);
  const auto bytes = encode_checkpoint(d);
  const CheckpointData back = decode_checkpoint(bytes);
  CHECK(back.config == d.config);
  CHECK(back.metadata == d.metadata);
  CHECK(encode_checkpoint(back) == bytes);
  auto cut = bytes;
  cut.resize(cut.size() - 1);
  CHECK_THROWS_AS(decode_checkpoint(cut), FormatError);
  CHECK(sha256_hex(std::vector<std::uint8_t>{'a', 'b', 'c'}) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("manifest lines round-trip") {
  ManifestRecord r;
  r.id = "x-1";
  r.feature_path = "features/x.feat";
  r.prompt = "This sentiment is";
  r.target = "negative";
  r.view = View::kSentiment;
  r.label = "negative";
  r.fold = 3;
  r.split = Split::kTest;
  const std::string line = manifest_line(r);
  CHECK(line ==
        R"({"id":"x-1","feature_path":"features/x.feat","prompt":"This sentiment is","target":"negative",)"
        R"("view":"sentiment","label":"negative","fold":3,"split":"test"})");
  CHECK(manifest_line(parse_manifest_line(line)) == line);
  CHECK_THROWS_AS(parse_manifest_line("{not json"), FormatError);
  CHECK_THROWS_AS(parse_manifest_line(R"({"id":"a"})"), DataError);

  TempDir dir("selm_manifest_test");
  Manifest m;
  m.records = {r, r};
  m.records[1].id = "x-2";
  write_manifest(dir / "m.jsonl", m);
  Manifest back = read_manifest(dir / "m.jsonl");
  CHECK(back.records.size() == 2);
  CHECK(back.resolve(back.records[0]) == (dir.path / "features/x.feat").string());
  m.records[1].id = "x-1";
  write_manifest(dir / "dup.jsonl", m);
  CHECK_THROWS_AS(read_manifest(dir / "dup.jsonl"), DataError);
}

TEST_CASE("synthesis is deterministic and well formed") {
  TempDir dir("selm_synth_test");
  SynthConfig c;
  c.seed = 3;
  const auto a = synthesize_dataset(c, dir / "a");
  const auto b = synthesize_dataset(c, dir / "b");
  CHECK(slurp(a.manifest_path) == slurp(b.manifest_path));
  for (const auto& r : a.manifest.records) {
    CHECK(slurp(a.manifest.resolve(r)) == slurp(b.manifest.resolve(r)));
  }
  c.seed = 4;
  CHECK(slurp(synthesize_dataset(c, dir / "c").manifest_path) != slurp(a.manifest_path));

  const Manifest m = read_manifest(a.manifest_path);
  CHECK(m.records.size() == 6u * 20u * 3u);
  std::set<std::string> ids;
  for (const auto& r : m.records) {
    ids.insert(r.id);
    CHECK(r.fold >= 0);
    CHECK(r.fold < 5);
    CHECK(r.prompt == prompt_for(r.view));
    CHECK(r.target == target_for(r.view, r.label));
  }
  CHECK(ids.size() == m.records.size());
  CHECK(class_labels(m) == c.classes);
  CHECK(slurp(a.corpus_path).find("feeling emotion of happy") != std::string::npos);

  SynthConfig bad;
  bad.classes = {"happy"};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = SynthConfig{};
  bad.sigma = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = SynthConfig{};
  bad.shift = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("synth config JSON round-trips and rejects unknown keys") {
  SynthConfig c;
  c.shift = 4.0;
  c.views = {View::kSentiment};
  const SynthConfig back = synth_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  CHECK(to_json(back) == to_json(c));
  CHECK_THROWS_AS(synth_config_from_json(nlohmann::json::parse(R"({"shfit":4})")), ConfigError);
}

TEST_CASE("a shift moves every class mean by shift * sigma") {
  TempDir dir("selm_shift_test");
  SynthConfig c;
  c.examples_per_class = 100;
  c.views = {View::kCategorical};
  const auto base = synthesize_dataset(c, dir / "base");
  c.shift = 4.0;
  c.seed = 1;
  const auto shifted = synthesize_dataset(c, dir / "shifted");
  const auto geo = synth_geometry(c);

  auto class_means = [](const Manifest& m) {
    std::map<std::string, std::vector<double>> sum;
    std::map<std::string, double> rows;
    for (const auto& r : m.records) {
      const AudioFeature x = read_feature(m.resolve(r));
      auto& s = sum[r.label];
      s.resize(static_cast<std::size_t>(x.dim()), 0.0);
      for (std::int64_t f = 0; f < x.frames(); ++f) {
        for (std::int64_t j = 0; j < x.dim(); ++j) s[j] += x.data().at(f, j);
      }
      rows[r.label] += double(x.frames());
    }
    for (auto& [label, s] : sum) for (auto& v : s) v /= rows[label];
    return sum;
  };
  const auto m0 = class_means(base.manifest);
  const auto m4 = class_means(shifted.manifest);
  for (const auto& label : c.classes) {
    double norm = 0.0, along = 0.0;
    for (std::size_t j = 0; j < geo.shift_direction.size(); ++j) {
      const double diff = m4.at(label)[j] - m0.at(label)[j];
      norm += diff * diff;
      along += diff * geo.shift_direction[j];
    }
    CHECK(std::abs(std::sqrt(norm) - 4.0) < 0.2);
    CHECK(std::abs(along - 4.0) < 0.2);
  }
}

TEST_CASE("nearest class mean separates the unshifted test split") {
  TempDir dir("selm_centroid_test");
  SynthConfig c;
  c.views = {View::kCategorical};
  const auto out = synthesize_dataset(c, dir / "d");
  std::map<std::string, std::vector<double>> centroid;
  std::map<std::string, int> count;
  for (const auto& r : out.manifest.records) {
    if (r.split != Split::kTrain) continue;
    const auto m = frame_mean(read_feature(out.manifest.resolve(r)));
    auto& cen = centroid[r.label];
    cen.resize(m.size(), 0.0);
    for (std::size_t j = 0; j < m.size(); ++j) cen[j] += m[j];
    ++count[r.label];
  }
  for (auto& [label, cen] : centroid) for (auto& v : cen) v /= count[label];
  int correct = 0, total = 0;
  for (const auto& r : out.manifest.records) {
    if (r.split != Split::kTest) continue;
    const auto m = frame_mean(read_feature(out.manifest.resolve(r)));
    std::string best;
    double best_d = 1e300;
    for (const auto& [label, cen] : centroid) {
      double d = 0.0;
      for (std::size_t j = 0; j < m.size(); ++j) d += (m[j] - cen[j]) * (m[j] - cen[j]);
      if (d < best_d) {
        best_d = d;
        best = label;
      }
    }
    correct += best == r.label ? 1 : 0;
    ++total;
  }
  CHECK(total == 24);
  CHECK(double(correct) / total >= 0.99);
}

TEST_CASE("folds are stratified and deterministic") {
  Manifest m;
  for (int i = 0; i < 100; ++i) {
    ManifestRecord r;
    r.id = "e" + std::to_string(i);
    r.feature_path = r.id + ".feat";
    r.label = "c" + std::to_string(i % 4);
    r.target = target_for(View::kCategorical, r.label);
    m.records.push_back(r);
  }
  const Manifest a = make_folds(m, 5, 9);
  std::map<int, int> sizes;
  std::map<std::string, std::map<int, int>> per_class;
  for (const auto& r : a.records) {
    ++sizes[r.fold];
    ++per_class[r.label][r.fold];
  }
  CHECK(sizes == std::map<int, int>{{0, 20}, {1, 20}, {2, 20}, {3, 20}, {4, 20}});
  for (const auto& [label, folds] : per_class) {
    CHECK(folds.size() == 5);
    int lo = 1 << 30, hi = 0;
    for (auto [f, n] : folds) {
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    CHECK(hi - lo <= 1);
  }
  const Manifest b = make_folds(m, 5, 9);
  for (std::size_t i = 0; i < a.records.size(); ++i) CHECK(a.records[i].fold == b.records[i].fold);
  Manifest small = m;
  small.records.resize(8);
  CHECK_THROWS_AS(make_folds(small, 5, 0), DataError);
}

TEST_CASE("folds keep the views of one example together") {
  TempDir dir("selm_fold_views");
  SynthConfig c;
  const auto out = synthesize_dataset(c, dir / "d");
  std::map<std::string, int> fold_of;
  for (const auto& r : out.manifest.records) {
    auto [it, inserted] = fold_of.emplace(r.feature_path, r.fold);
    CHECK(it->second == r.fold);
  }
}

TEST_CASE("shot sampling") {
  TempDir dir("selm_shots_test");
  SynthConfig c;
  const Manifest m = synthesize_dataset(c, dir / "d").manifest;
  std::set<std::string> test_ids;
  for (const auto& r : m.records) {
    if (r.split == Split::kTest) test_ids.insert(r.id);
  }
  CHECK(sample_shots(m, 4, 0).size() == 24);
  CHECK(sample_shots(m, 8, 0).size() == 48);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto shots = sample_shots(m, 16, seed);
    std::map<std::string, int> per_class;
    std::set<std::string> ids;
    for (const auto& s : shots) {
      CHECK(test_ids.count(s.id) == 0);
      CHECK(s.view == View::kCategorical);
      ++per_class[s.label];
      ids.insert(s.id);
    }
    CHECK(ids.size() == shots.size());
    for (const auto& [label, n] : per_class) CHECK(n == 16);
    // Smaller samples are prefixes of larger ones for the same seed.
    const auto four = sample_shots(m, 4, seed);
    const auto eight = sample_shots(m, 8, seed);
    for (std::size_t cls = 0; cls < 6; ++cls) {
      for (std::size_t i = 0; i < 4; ++i) CHECK(four[cls * 4 + i].id == eight[cls * 8 + i].id);
    }
    CHECK(sample_shots(m, 8, seed)[0].id == eight[0].id);
  }
  int differing = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    std::vector<std::string> a, b;
    for (const auto& t : sample_shots(m, 4, 2 * s)) a.push_back(t.id);
    for (const auto& t : sample_shots(m, 4, 2 * s + 1)) b.push_back(t.id);
    differing += a != b ? 1 : 0;
  }
  CHECK(differing >= 1);
  CHECK_THROWS_AS(sample_shots(m, 17, 0), DataError);
  CHECK_THROWS_AS(sample_shots(m, 0, 0), ConfigError);
}

#include "selm/dataio.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>

#include "json.hpp"
#include "selm/checkpoint.h"
#include "selm/errors.h"

namespace selm {

namespace fs = std::filesystem;

AudioFeature::AudioFeature(Tensor frames) : data_(std::move(frames)) {
  if (data_.rank() != 2) throw ShapeError("audio feature must be frames x dim");
  if (data_.rows() < 1 || data_.cols() < 1) throw InputError("audio feature needs >= 1 frame");
  if (!data_.all_finite()) throw InvalidValueError("audio feature has non-finite values");
}

// ---------------------------------------------------------------------------
// Templates.

namespace {

struct EmotionTraits {
  const char* sentiment;
  const char* valence;
  const char* arousal;
};

const std::map<std::string, EmotionTraits>& emotion_table() {
  static const std::map<std::string, EmotionTraits> table = {
      {"angry", {"negative", "low", "high"}},     {"calm", {"neutral", "mid", "low"}},
      {"disgusted", {"negative", "low", "mid"}},  {"excited", {"positive", "high", "high"}},
      {"fearful", {"negative", "low", "high"}},   {"frustrated", {"negative", "low", "mid"}},
      {"happy", {"positive", "high", "high"}},    {"neutral", {"neutral", "mid", "mid"}},
      {"sad", {"negative", "low", "low"}},        {"surprised", {"positive", "high", "high"}},
  };
  return table;
}

const EmotionTraits& traits_of(const std::string& emotion) {
  static const EmotionTraits fallback{"neutral", "mid", "mid"};
  auto it = emotion_table().find(emotion);
  return it == emotion_table().end() ? fallback : it->second;
}

constexpr const char* kCategoricalLead = "feeling emotion of ";

}  // namespace

std::string view_name(View view) {
  switch (view) {
    case View::kCategorical: return "categorical";
    case View::kSentiment: return "sentiment";
    case View::kDimensional: return "dimensional";
  }
  return "categorical";
}

View parse_view(const std::string& name) {
  if (name == "categorical") return View::kCategorical;
  if (name == "sentiment") return View::kSentiment;
  if (name == "dimensional") return View::kDimensional;
  throw DataError("unknown view '" + name + "'");
}

std::string prompt_for(View view) {
  switch (view) {
    case View::kCategorical: return "This person is";
    case View::kSentiment: return "This sentiment is";
    case View::kDimensional: return "Describe emotion parameters";
  }
  return "This person is";
}

std::string sentiment_of(const std::string& emotion) { return traits_of(emotion).sentiment; }

std::string dimensional_label_of(const std::string& emotion) {
  const auto& t = traits_of(emotion);
  return std::string("valence ") + t.valence + " arousal " + t.arousal;
}

std::string label_for(View view, const std::string& emotion) {
  switch (view) {
    case View::kCategorical: return emotion;
    case View::kSentiment: return sentiment_of(emotion);
    case View::kDimensional: return dimensional_label_of(emotion);
  }
  return emotion;
}

std::string target_for(View view, const std::string& label) {
  if (view == View::kCategorical) return kCategoricalLead + label;
  return label;
}

std::optional<std::string> parse_target(View view, const std::string& text) {
  static const std::regex categorical("^feeling emotion of ([a-z]+)$");
  static const std::regex sentiment("^(positive|neutral|negative)$");
  static const std::regex dimensional("^valence (low|mid|high) arousal (low|mid|high)$");
  std::smatch m;
  switch (view) {
    case View::kCategorical:
      if (std::regex_match(text, m, categorical)) return m[1].str();
      break;
    case View::kSentiment:
      if (std::regex_match(text, m, sentiment)) return m[1].str();
      break;
    case View::kDimensional:
      if (std::regex_match(text, m, dimensional)) return text;
      break;
  }
  return std::nullopt;
}

const std::vector<std::string>& known_emotions() {
  static const std::vector<std::string> emotions = [] {
    std::vector<std::string> out;
    for (const auto& [name, _] : emotion_table()) out.push_back(name);
    return out;
  }();
  return emotions;
}

std::vector<std::string> lm_corpus() {
  std::vector<std::string> lines;
  for (const auto& e : known_emotions()) {
    const std::string target = target_for(View::kCategorical, e);
    lines.push_back(prompt_for(View::kCategorical) + " " + target);
    lines.push_back("this person is " + target);
    lines.push_back(target);
    lines.push_back(e);
  }
  for (const char* s : {"positive", "neutral", "negative"}) {
    lines.push_back(prompt_for(View::kSentiment) + " " + s);
    lines.push_back(s);
  }
  for (const char* v : {"low", "mid", "high"}) {
    for (const char* a : {"low", "mid", "high"}) {
      const std::string d = std::string("valence ") + v + " arousal " + a;
      lines.push_back(prompt_for(View::kDimensional) + " " + d);
      lines.push_back(d);
    }
  }
  return lines;
}

// ---------------------------------------------------------------------------
// Feature files.

std::vector<std::uint8_t> encode_feature(const AudioFeature& feature) {
  ByteWriter w;
  w.bytes("SELMFEAT");
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(feature.frames()));
  w.u32(static_cast<std::uint32_t>(feature.dim()));
  w.u32(kFeatureDtypeF32);
  for (float v : feature.data().data()) w.f32(v);
  return std::move(w.buffer());
}

AudioFeature decode_feature(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 8 || r.bytes(8) != "SELMFEAT") throw FormatError("bad feature magic", 0);
  if (r.u32() != kFeatureVersion) throw FormatError("unsupported feature version", 8);
  const std::uint32_t frames = r.u32();
  const std::uint32_t dim = r.u32();
  if (r.u32() != kFeatureDtypeF32) throw FormatError("unsupported feature dtype", 20);
  if (frames == 0 || dim == 0) throw FormatError("feature with zero frames or dim", 12);
  const std::uint64_t payload = 4ULL * frames * dim;
  if (bytes.size() - r.offset() < payload) {
    throw FormatError("truncated feature payload: expected " + std::to_string(payload) + " bytes",
                      bytes.size());
  }
  if (bytes.size() - r.offset() > payload) {
    throw FormatError("trailing bytes after feature payload", r.offset() + payload);
  }
  std::vector<float> values(static_cast<std::size_t>(frames) * dim);
  for (auto& v : values) v = r.f32();
  return AudioFeature(Tensor({frames, dim}, std::move(values)));
}

void write_feature(const std::string& path, const AudioFeature& feature) {
  write_file_bytes(path, encode_feature(feature));
}

AudioFeature read_feature(const std::string& path) { return decode_feature(read_file_bytes(path)); }

void FeatureStore::put(const std::string& key, AudioFeature feature) {
  cache_[key] = std::move(feature);
}

const AudioFeature& FeatureStore::get(const std::string& key) {
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  return cache_.emplace(key, read_feature(key)).first->second;
}

// ---------------------------------------------------------------------------
// Manifests.

std::string Manifest::resolve(const ManifestRecord& r) const {
  fs::path p(r.feature_path);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (fs::path(base_dir) / p).string();
}

std::string manifest_line(const ManifestRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["feature_path"] = r.feature_path;
  j["prompt"] = r.prompt;
  j["target"] = r.target;
  j["view"] = view_name(r.view);
  j["label"] = r.label;
  j["fold"] = r.fold;
  j["split"] = r.split == Split::kTrain ? "train" : "test";
  return j.dump();
}

ManifestRecord parse_manifest_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("manifest line is not JSON: ") + e.what(), e.byte);
  }
  try {
    ManifestRecord r;
    r.id = j.at("id").get<std::string>();
    r.feature_path = j.at("feature_path").get<std::string>();
    r.prompt = j.at("prompt").get<std::string>();
    r.target = j.at("target").get<std::string>();
    r.view = parse_view(j.at("view").get<std::string>());
    r.label = j.at("label").get<std::string>();
    r.fold = j.at("fold").get<int>();
    const auto split = j.at("split").get<std::string>();
    if (split != "train" && split != "test") throw DataError("split must be train or test");
    r.split = split == "train" ? Split::kTrain : Split::kTest;
    if (r.fold < 0) throw DataError("negative fold");
    if (r.target.empty()) throw DataError("empty target for " + r.id);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest record: ") + e.what());
  }
}

void write_manifest(const std::string& path, const Manifest& manifest) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  for (const auto& r : manifest.records) f << manifest_line(r) << '\n';
  if (!f) throw IoError("write failed for " + path);
}

Manifest read_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  Manifest m;
  m.base_dir = fs::path(path).parent_path().string();
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    ManifestRecord r;
    try {
      r = parse_manifest_line(line);
    } catch (const Error& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!ids.insert(r.id).second) throw DataError("duplicate manifest id '" + r.id + "'");
    m.records.push_back(std::move(r));
  }
  return m;
}

Triplet to_triplet(const Manifest& manifest, const ManifestRecord& r) {
  return Triplet{r.id, manifest.resolve(r), r.prompt, r.target, r.view, r.label};
}

std::vector<std::string> class_labels(const Manifest& manifest, View view) {
  std::vector<std::string> out;
  for (const auto& r : manifest.records) {
    if (r.view == view && std::find(out.begin(), out.end(), r.label) == out.end()) {
      out.push_back(r.label);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthesis.

void SynthConfig::validate() const {
  if (classes.size() < 2) throw ConfigError("need at least two classes");
  if (sigma <= 0.0) throw ConfigError("sigma must be positive");
  if (shift < 0.0) throw ConfigError("shift must be non-negative");
  if (feature_dim < 1 || min_frames < 1 || max_frames < min_frames) {
    throw ConfigError("bad feature dimension or frame range");
  }
  if (examples_per_class < 1) throw ConfigError("examples_per_class must be positive");
  if (test_fraction < 0.0 || test_fraction >= 1.0) throw ConfigError("test_fraction in [0, 1)");
  if (views.empty()) throw ConfigError("at least one view required");
  std::set<std::string> unique(classes.begin(), classes.end());
  if (unique.size() != classes.size()) throw ConfigError("class names must be unique");
}

SynthGeometry synth_geometry(const SynthConfig& config) {
  // Class means sit at even spacing along a seeded unit axis, ordered as
  // listed; the shift moves every class along the same axis. A shift of
  // more than half the spacing therefore pushes each class toward its
  // neighbour while leaving the class layout intact.
  Rng rng(derive_seed(config.geometry_seed, 11));
  const auto d = static_cast<std::size_t>(config.feature_dim);
  std::vector<double> axis(d);
  double norm = 0.0;
  for (auto& v : axis) {
    v = rng.normal(0.0, 1.0);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : axis) v /= norm;
  SynthGeometry geo;
  const double centre = 0.5 * static_cast<double>(config.classes.size() - 1);
  for (std::size_t c = 0; c < config.classes.size(); ++c) {
    const double offset = (static_cast<double>(c) - centre) * config.class_separation * config.sigma;
    std::vector<double> mean(d);
    for (std::size_t i = 0; i < d; ++i) mean[i] = offset * axis[i];
    geo.class_means.push_back(std::move(mean));
  }
  geo.shift_direction = axis;
  return geo;
}

SynthOutput synthesize_dataset(const SynthConfig& config, const std::string& out_dir) {
  config.validate();
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "features", ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  const SynthGeometry geo = synth_geometry(config);
  Rng rng(derive_seed(config.seed, 21));
  const auto d = static_cast<std::int64_t>(config.feature_dim);

  SynthOutput out;
  out.manifest.base_dir = out_dir;
  int example = 0;
  for (std::size_t c = 0; c < config.classes.size(); ++c) {
    const std::string& emotion = config.classes[c];
    std::vector<int> order(static_cast<std::size_t>(config.examples_per_class));
    for (int i = 0; i < config.examples_per_class; ++i) order[i] = i;
    const int n_test = static_cast<int>(
        std::lround(config.test_fraction * static_cast<double>(config.examples_per_class)));
    std::vector<bool> is_test(order.size(), false);
    {
      std::vector<int> shuffled = order;
      rng.shuffle(shuffled);
      for (int i = 0; i < n_test; ++i) is_test[shuffled[i]] = true;
    }
    for (int i = 0; i < config.examples_per_class; ++i, ++example) {
      const auto frames = rng.uniform_int(config.min_frames, config.max_frames);
      Tensor x({frames, d});
      for (std::int64_t f = 0; f < frames; ++f) {
        for (std::int64_t j = 0; j < d; ++j) {
          const double mu = geo.class_means[c][j] +
                            config.shift * config.sigma * geo.shift_direction[j];
          x.at(f, j) = static_cast<float>(mu + rng.normal(0.0, config.sigma));
        }
      }
      char stem[64];
      std::snprintf(stem, sizeof(stem), "%05d", example);
      const std::string rel = "features/" + config.name + "-" + stem + ".feat";
      write_feature((fs::path(out_dir) / rel).string(), AudioFeature(std::move(x)));
      for (View view : config.views) {
        ManifestRecord r;
        r.id = config.name + "-" + stem + "-" + view_name(view);
        r.feature_path = rel;
        r.prompt = prompt_for(view);
        r.label = label_for(view, emotion);
        r.target = target_for(view, r.label);
        r.view = view;
        r.split = is_test[i] ? Split::kTest : Split::kTrain;
        out.manifest.records.push_back(std::move(r));
      }
    }
  }
  if (config.n_folds >= 2) out.manifest = make_folds(std::move(out.manifest), config.n_folds, config.seed);
  out.manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
  write_manifest(out.manifest_path, out.manifest);
  out.corpus_path = (fs::path(out_dir) / "lm_corpus.txt").string();
  std::ofstream corpus(out.corpus_path, std::ios::binary);
  if (!corpus) throw IoError("cannot write " + out.corpus_path);
  for (const auto& line : lm_corpus()) corpus << line << '\n';
  return out;
}

namespace {

// Categorical label of each example (rows grouped by feature file), in
// first-appearance order.
std::vector<std::pair<std::string, std::string>> example_classes(const Manifest& m) {
  std::vector<std::pair<std::string, std::string>> out;
  std::map<std::string, std::size_t> index;
  for (const auto& r : m.records) {
    auto [it, inserted] = index.emplace(r.feature_path, out.size());
    if (inserted) out.emplace_back(r.feature_path, r.label);
    if (r.view == View::kCategorical) out[it->second].second = r.label;
  }
  return out;
}

}  // namespace

Manifest make_folds(Manifest manifest, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw ConfigError("n_folds must be >= 2");
  auto examples = example_classes(manifest);
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::string>> by_class;
  for (const auto& [path, label] : examples) {
    if (!by_class.count(label)) order.push_back(label);
    by_class[label].push_back(path);
  }
  std::map<std::string, int> fold_of;
  Rng rng(derive_seed(seed, 31));
  int offset = 0;
  for (const auto& label : order) {
    auto& paths = by_class[label];
    if (static_cast<int>(paths.size()) < n_folds) {
      throw DataError("class '" + label + "' has " + std::to_string(paths.size()) +
                      " examples, fewer than " + std::to_string(n_folds) + " folds");
    }
    rng.shuffle(paths);
    for (std::size_t i = 0; i < paths.size(); ++i) {
      fold_of[paths[i]] = static_cast<int>((offset + static_cast<int>(i)) % n_folds);
    }
    offset += static_cast<int>(paths.size());
  }
  for (auto& r : manifest.records) r.fold = fold_of.at(r.feature_path);
  return manifest;
}

std::vector<Triplet> sample_shots(const Manifest& manifest, int n_per_class, std::uint64_t seed,
                                  View view) {
  if (n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ManifestRecord*>> by_class;
  for (const auto& r : manifest.records) {
    if (r.view != view) continue;
    if (!by_class.count(r.label)) order.push_back(r.label);
    auto& bucket = by_class[r.label];
    if (r.split == Split::kTrain) bucket.push_back(&r);
  }
  std::vector<Triplet> shots;
  for (std::size_t c = 0; c < order.size(); ++c) {
    auto& rows = by_class[order[c]];
    if (static_cast<int>(rows.size()) < n_per_class) {
      throw DataError("class '" + order[c] + "' has " + std::to_string(rows.size()) +
                      " train examples, needs " + std::to_string(n_per_class));
    }
    std::sort(rows.begin(), rows.end(),
              [](const ManifestRecord* a, const ManifestRecord* b) { return a->id < b->id; });
    Rng rng(derive_seed(seed, 1000 + c));
    rng.shuffle(rows);
    for (int i = 0; i < n_per_class; ++i) shots.push_back(to_triplet(manifest, *rows[i]));
  }
  return shots;
}

}  // namespace selm

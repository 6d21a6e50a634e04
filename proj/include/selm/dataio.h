#ifndef SELM_DATAIO_H_
#define SELM_DATAIO_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selm/audio_feature.h"

namespace selm {

// ---------------------------------------------------------------------------
// Emotion views and text templates.

enum class View { kCategorical, kSentiment, kDimensional };

std::string view_name(View view);
View parse_view(const std::string& name);

// Prompt fed to the text mapper for each view.
std::string prompt_for(View view);

// Categorical emotion -> derived labels. Unknown emotions map to
// neutral / (mid, mid).
std::string sentiment_of(const std::string& emotion);
std::string dimensional_label_of(const std::string& emotion);

// View-specific label of a categorical emotion (the emotion itself for the
// categorical view).
std::string label_for(View view, const std::string& emotion);
// Target text for a view-specific label.
std::string target_for(View view, const std::string& label);
// Inverse of target_for: the label if `text` matches the view's template.
std::optional<std::string> parse_target(View view, const std::string& text);

// Emotion words the language-model corpus covers.
const std::vector<std::string>& known_emotions();

// Template corpus for pretraining the frozen language model.
std::vector<std::string> lm_corpus();

// ---------------------------------------------------------------------------
// Feature files: "SELMFEAT" | u32 version | u32 frames | u32 dim | u32 dtype
// (1 = float32) | frames*dim little-endian f32, row-major.

inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::uint32_t kFeatureDtypeF32 = 1;

std::vector<std::uint8_t> encode_feature(const AudioFeature& feature);
AudioFeature decode_feature(std::span<const std::uint8_t> bytes);
void write_feature(const std::string& path, const AudioFeature& feature);
AudioFeature read_feature(const std::string& path);

// Loads features by path on first use; in-memory entries can be inserted
// directly.
class FeatureStore {
 public:
  void put(const std::string& key, AudioFeature feature);
  const AudioFeature& get(const std::string& key);

 private:
  std::map<std::string, AudioFeature> cache_;
};

// ---------------------------------------------------------------------------
// Manifests (JSON lines).

enum class Split { kTrain, kTest };

struct ManifestRecord {
  std::string id;
  std::string feature_path;  // relative paths resolve against the manifest directory
  std::string prompt;
  std::string target;
  View view = View::kCategorical;
  std::string label;
  int fold = 0;
  Split split = Split::kTrain;
};

struct Manifest {
  std::vector<ManifestRecord> records;
  std::string base_dir;  // directory relative feature paths resolve against

  std::string resolve(const ManifestRecord& r) const;
};

std::string manifest_line(const ManifestRecord& record);
ManifestRecord parse_manifest_line(const std::string& line);
void write_manifest(const std::string& path, const Manifest& manifest);
Manifest read_manifest(const std::string& path);

// One training or evaluation example with its feature reference resolved.
struct Triplet {
  std::string id;
  std::string feature_ref;
  std::string prompt;
  std::string target;
  View view = View::kCategorical;
  std::string label;
};

Triplet to_triplet(const Manifest& manifest, const ManifestRecord& record);

// Distinct labels of `view` rows in order of first appearance.
std::vector<std::string> class_labels(const Manifest& manifest, View view = View::kCategorical);

// ---------------------------------------------------------------------------
// Synthetic corpus.

struct SynthConfig {
  std::string name = "synth";
  std::vector<std::string> classes = {"happy", "sad", "angry", "neutral", "fearful", "disgusted"};
  int feature_dim = 32;
  // Distance between neighbouring class means, in sigma units.
  double class_separation = 6.0;
  double sigma = 1.0;
  int min_frames = 8;
  int max_frames = 16;
  int examples_per_class = 20;
  // Covariate shift added to every class mean, in sigma units.
  double shift = 0.0;
  double test_fraction = 0.2;
  int n_folds = 5;
  std::vector<View> views = {View::kCategorical, View::kSentiment, View::kDimensional};
  // Class means and shift direction depend only on this seed, so datasets
  // that share it describe the same task under different shifts.
  std::uint64_t geometry_seed = 7;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthGeometry {
  std::vector<std::vector<double>> class_means;  // one per class, length feature_dim
  std::vector<double> shift_direction;           // unit vector
};

SynthGeometry synth_geometry(const SynthConfig& config);

struct SynthOutput {
  Manifest manifest;
  std::string manifest_path;
  std::string corpus_path;
};

// Writes features/, manifest.jsonl and lm_corpus.txt under out_dir.
SynthOutput synthesize_dataset(const SynthConfig& config, const std::string& out_dir);

// Stratified fold assignment over examples (rows sharing a feature file stay
// together); fold sizes per class differ by at most one.
Manifest make_folds(Manifest manifest, int n_folds, std::uint64_t seed);

// n_per_class train-split rows of `view` per class, uniform without
// replacement. For one seed, smaller samples are prefixes of larger ones.
std::vector<Triplet> sample_shots(const Manifest& manifest, int n_per_class, std::uint64_t seed,
                                  View view = View::kCategorical);

}  // namespace selm

#endif  // SELM_DATAIO_H_

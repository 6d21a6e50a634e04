#include "selm/config.h"

#include <algorithm>
#include <fstream>

#include "selm/errors.h"

namespace selm {

namespace {

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  try {
    check_keys(j,
               {"name", "classes", "feature_dim", "class_separation", "sigma", "min_frames",
                "max_frames", "examples_per_class", "shift", "test_fraction", "n_folds", "views",
                "geometry_seed", "seed"},
               "synth config");
    SynthConfig c;
    read_key(j, "name", c.name);
    read_key(j, "classes", c.classes);
    read_key(j, "feature_dim", c.feature_dim);
    read_key(j, "class_separation", c.class_separation);
    read_key(j, "sigma", c.sigma);
    read_key(j, "min_frames", c.min_frames);
    read_key(j, "max_frames", c.max_frames);
    read_key(j, "examples_per_class", c.examples_per_class);
    read_key(j, "shift", c.shift);
    read_key(j, "test_fraction", c.test_fraction);
    read_key(j, "n_folds", c.n_folds);
    read_key(j, "geometry_seed", c.geometry_seed);
    read_key(j, "seed", c.seed);
    if (j.contains("views")) {
      c.views.clear();
      for (const auto& v : j.at("views")) c.views.push_back(parse_view(v.get<std::string>()));
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
}

nlohmann::ordered_json to_json(const SynthConfig& c) {
  nlohmann::ordered_json j;
  j["name"] = c.name;
  j["classes"] = c.classes;
  j["feature_dim"] = c.feature_dim;
  j["class_separation"] = c.class_separation;
  j["sigma"] = c.sigma;
  j["min_frames"] = c.min_frames;
  j["max_frames"] = c.max_frames;
  j["examples_per_class"] = c.examples_per_class;
  j["shift"] = c.shift;
  j["test_fraction"] = c.test_fraction;
  j["n_folds"] = c.n_folds;
  j["views"] = nlohmann::ordered_json::array();
  for (View v : c.views) j["views"].push_back(view_name(v));
  j["geometry_seed"] = c.geometry_seed;
  j["seed"] = c.seed;
  return j;
}

LmSetup lm_setup_from_json(const nlohmann::json& j) {
  try {
    check_keys(j, {"vocab_size", "lm", "pretrain"}, "language-model config");
    LmSetup s;
    read_key(j, "vocab_size", s.lm.vocab_size);
    if (j.contains("lm")) {
      const auto& l = j.at("lm");
      check_keys(l, {"d_model", "n_layers", "n_heads", "context_length"}, "lm config");
      read_key(l, "d_model", s.lm.d_model);
      read_key(l, "n_layers", s.lm.n_layers);
      read_key(l, "n_heads", s.lm.n_heads);
      read_key(l, "context_length", s.lm.context_length);
    }
    if (j.contains("pretrain")) {
      const auto& p = j.at("pretrain");
      check_keys(p, {"steps", "batch_size", "lr", "clip_norm", "heldout_fraction", "seed"},
                 "pretrain config");
      read_key(p, "steps", s.pretrain.steps);
      read_key(p, "batch_size", s.pretrain.batch_size);
      read_key(p, "lr", s.pretrain.lr);
      read_key(p, "clip_norm", s.pretrain.clip_norm);
      read_key(p, "heldout_fraction", s.pretrain.heldout_fraction);
      read_key(p, "seed", s.pretrain.seed);
    }
    s.lm.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("language-model config: ") + e.what());
  }
}

nlohmann::ordered_json to_json(const LmSetup& s) {
  nlohmann::ordered_json j;
  j["vocab_size"] = s.lm.vocab_size;
  j["lm"] = {{"d_model", s.lm.d_model},
             {"n_layers", s.lm.n_layers},
             {"n_heads", s.lm.n_heads},
             {"context_length", s.lm.context_length}};
  j["pretrain"] = {{"steps", s.pretrain.steps},
                   {"batch_size", s.pretrain.batch_size},
                   {"lr", s.pretrain.lr},
                   {"clip_norm", s.pretrain.clip_norm},
                   {"heldout_fraction", s.pretrain.heldout_fraction},
                   {"seed", s.pretrain.seed}};
  return j;
}

nlohmann::json read_json_file(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": " + e.what(), e.byte);
  }
}

}  // namespace selm

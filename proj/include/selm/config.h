#ifndef SELM_CONFIG_H_
#define SELM_CONFIG_H_

#include <string>

#include "json.hpp"
#include "selm/dataio.h"
#include "selm/lm.h"

namespace selm {

// JSON config files. Missing keys keep defaults; unknown keys are errors.

SynthConfig synth_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const SynthConfig& config);

// Language-model file: {"vocab_size", "lm": {...}, "pretrain": {...}}. The
// vocabulary size also sets lm.vocab_size.
struct LmSetup {
  LmConfig lm;
  PretrainConfig pretrain;
};

LmSetup lm_setup_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const LmSetup& setup);

// Parses a file, or "{}" when path is empty.
nlohmann::json read_json_file(const std::string& path);

}  // namespace selm

#endif  // SELM_CONFIG_H_

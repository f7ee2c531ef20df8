#pragma once

#include <cstdint>
#include <string>

#include "memo/evaluation.hpp"
#include "memo/inference.hpp"
#include "memo/network.hpp"
#include "memo/synthdata.hpp"
#include "memo/training.hpp"

namespace memo {

struct EvalSettings {
  EvalProtocol protocol = EvalProtocol::Standard;
  int threshold_count = 33;
  double tolerance_fraction = 0.0075;
  int jobs = 1;
};

// Everything a run needs, with usable defaults. Loaded from a small
// `[section] key = value` text file; see default_run_config_text() for the
// full key list with defaults.
struct RunConfig {
  ModelConfig model;
  uint64_t model_init_seed = 0x3ede5;
  TrainingConfig train;
  InferenceConfig infer;
  bool infer_full = false;  // steps = H*W, i.e. iterate to natural completion
  EvalSettings eval;
  SceneConfig data;
  int data_jobs = 1;
};

// Sections: [model], [train], [infer], [eval], [data]. Lines are
// `key = value`; '#' starts a comment. Unknown sections or keys are hard
// errors so typos never pass silently.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Template listing every key with its default; parses back to RunConfig{}.
std::string default_run_config_text();

}  // namespace memo

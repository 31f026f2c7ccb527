// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sandglasset/model.hpp"
#include "sandglasset/training.hpp"

namespace sandglasset::cli {

// Everything a command can be configured with. Plain-text `key = value`
// lines, `#` comments; every key is optional.
struct RunConfig {
  std::string preset = "full";  // full | desk | tiny; applied before other keys
  model::ModelConfig model = model::ModelConfig::full();
  training::TrainConfig train;

  // Synthetic data.
  std::size_t speakers = 8;
  std::size_t train_count = 2000;
  std::size_t val_count = 100;
  std::size_t test_count = 100;
  std::size_t samples = 8000;
  double snr_low = 0.0;
  double snr_high = 5.0;
  std::uint64_t test_seed = 1000003;

  // Checkpoint a post-training run resumes from.
  std::string init_checkpoint;

  std::vector<std::pair<std::string, std::string>> fields() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string format_run_config(const RunConfig& config);

}  // namespace sandglasset::cli

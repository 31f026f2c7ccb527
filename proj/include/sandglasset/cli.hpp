// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sandglasset/run_config.hpp"

namespace sandglasset::cli {

// Stable contract for scripts.
enum ExitCode : int {
  kSuccess = 0,
  kCheckFailed = 1,
  kUsageError = 2,
  kNumericFailure = 3,
};

struct CommonOptions {
  std::string config_path;         // empty: defaults (full preset)
  std::optional<std::uint64_t> seed;
  std::string out_dir = "runs";
  int threads = 1;
};

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

// Resolves --config and --seed, applies --threads, and echoes the result.
RunConfig resolve(const CommonOptions& options, Streams io);

// Creates <out>/<UTC timestamp>_seed<seed>, suffixing -2, -3, ... on clashes.
std::string make_run_dir(const std::string& out_dir, std::uint64_t seed);

struct TrainOutcome {
  std::string run_dir;
  std::string checkpoint;  // best checkpoint
  double val_si_snri = 0.0;
};

// Each command maps exceptions to exit codes itself.
int cmd_train(const CommonOptions& options, Streams io, TrainOutcome* outcome = nullptr);
int cmd_separate(const CommonOptions& options, const std::string& checkpoint,
                 const std::string& input, const std::string& output_dir, Streams io);
int cmd_report_params(const CommonOptions& options, Streams io);
int cmd_report_flops(const CommonOptions& options, double seconds, Streams io);
int cmd_grad_check(const CommonOptions& options, const std::string& fault_op, Streams io);
int cmd_synth_data(const CommonOptions& options, std::size_t count, Streams io);
int cmd_eval(const CommonOptions& options, const std::string& checkpoint, Streams io,
             double* mean_si_snri = nullptr);

// Full command-line entry point (CLI11 front end).
int run(int argc, const char* const* argv, Streams io);

}  // namespace sandglasset::cli

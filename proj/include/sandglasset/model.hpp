// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sandglasset/autodiff.hpp"
#include "sandglasset/framing.hpp"
#include "sandglasset/param_table.hpp"
#include "sandglasset/rng.hpp"
#include "sandglasset/tensor.hpp"

namespace sandglasset::model {

// Which earlier block output is added after block b in the second half.
enum class ResidualPairing {
  kMirror,  // b <-> N + 1 - b: partners share a granularity factor
  kOffset,  // b <-> b - N/2
};

// Channel structure of the down/up-sampling convolutions.
enum class Resampler {
  kDepthwise,  // D x f kernels
  kDense,      // D x D x f kernels
};

struct ModelConfig {
  std::size_t window = 4;            // M, samples per encoder frame
  std::size_t encoder_dim = 256;     // E
  std::size_t bottleneck_dim = 128;  // D
  std::size_t segment = 256;         // K, initial segment length
  std::size_t blocks = 6;            // N
  std::size_t hidden = 128;          // H, per LSTM direction
  std::size_t heads = 8;             // J
  std::size_t sources = 2;           // C
  double dropout = 0.1;
  std::size_t granularity_base = 4;  // 1 gives the single-granularity model
  ResidualPairing pairing = ResidualPairing::kMirror;
  bool residuals = true;             // same-granularity inter-block residuals
  Resampler resampler = Resampler::kDepthwise;
  bool encoder_bias = true;

  // Throws ConfigError naming the first violated constraint.
  void validate() const;

  static ModelConfig full();
  // The smallest model used for gradient checks.
  static ModelConfig tiny();
  // Desk-scale model trained on synthetic mixtures.
  static ModelConfig desk();

  bool operator==(const ModelConfig&) const = default;
};

// Resampling factor of each block, 1-based blocks: base^b for b <= N/2 and
// base^(N+1-b) after, e.g. N = 6 -> 4, 16, 64, 64, 16, 4.
std::vector<std::size_t> granularity_factors(std::size_t blocks,
                                             std::size_t base = 4);

// Earlier block whose output is added after `block` (1-based), or 0 if none.
std::size_t residual_partner(const ModelConfig& config, std::size_t block);

// Key/value view of a config, used by checkpoints and run configs.
std::vector<std::pair<std::string, std::string>> config_fields(
    const ModelConfig& config);
// Returns false if `key` is not a model field; throws ConfigError on a bad value.
bool set_config_field(ModelConfig& config, const std::string& key,
                      const std::string& value);

// Ordered (path, shape) list of every learnable tensor.
std::vector<std::pair<std::string, Shape>> parameter_manifest(
    const ModelConfig& config);

// Glorot-uniform weights, unit LayerNorm gains, zero biases except the LSTM
// forget gates (1.0), PReLU slope 0.25.
ParamTable<float> init_params(const ModelConfig& config, std::uint64_t seed);

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // dropout stream; required when training
};

template <typename Real>
struct Encoded {
  Var<Real> features;    // X-hat, E x L, non-negative
  Var<Real> bottleneck;  // X, D x L
  framing::FrameLayout layout;
};

template <typename Real>
struct ForwardResult {
  std::vector<Var<Real>> sources;  // C waveforms of length T
  Var<Real> features;              // E x L
  Var<Real> masks;                 // C x E x L
  std::vector<Var<Real>> block_outputs;  // resampled SAN outputs, one per block
  framing::FrameLayout frame_layout;
  framing::SegmentLayout segment_layout;
};

template <typename Real>
Encoded<Real> encode(Tape<Real>& tape, ParamTable<Real>& params,
                     const ModelConfig& config, const Tensor<Real>& waveform);

// One block (1-based index) with resampling factor `factor`; D x K x S in and
// out.
template <typename Real>
Var<Real> forward_block(Tape<Real>& tape, ParamTable<Real>& params,
                        const ModelConfig& config, std::size_t block,
                        Var<Real> input, std::size_t factor,
                        const ForwardOptions& options);

// D x K x S block output to C x E x L non-negative masks.
template <typename Real>
Var<Real> mask_head(Tape<Real>& tape, ParamTable<Real>& params,
                    const ModelConfig& config, Var<Real> blocks_out,
                    const framing::SegmentLayout& layout);

template <typename Real>
std::vector<Var<Real>> decode(Tape<Real>& tape, ParamTable<Real>& params,
                              const ModelConfig& config, Var<Real> features,
                              Var<Real> masks,
                              const framing::FrameLayout& layout);

template <typename Real>
ForwardResult<Real> forward(Tape<Real>& tape, ParamTable<Real>& params,
                            const ModelConfig& config,
                            const Tensor<Real>& waveform,
                            const ForwardOptions& options = {});

// Inference convenience: C separated waveforms for a mono mixture.
std::vector<std::vector<float>> separate(ParamTable<float>& params,
                                         const ModelConfig& config,
                                         std::span<const float> mixture);

// ---- cost accounting -------------------------------------------------------

struct CostEntry {
  std::string module;     // "encoder", "block3", "mask_head", ...
  std::string primitive;  // "lstm", "attention_scores", ...
  double params = 0;
  double flops = 0;
};

struct CostReport {
  std::vector<CostEntry> entries;
  double total_params = 0;
  double total_flops = 0;  // for `seconds` of audio at `sample_rate`
  double seconds = 0;
  double sample_rate = 0;
  // Encoder bias is an open modelling choice; both totals are reported.
  double params_without_encoder_bias = 0;
  std::string convention;

  double params_of(const std::string& module) const;
  double flops_of_primitive(const std::string& prefix) const;
};

// Closed-form parameter count (shape algebra, independent of parameter_manifest).
CostReport count_parameters(const ModelConfig& config);

// Analytic FLOPs: multiply-accumulate = 2, elementwise = 1, transcendental = 5.
CostReport estimate_flops(const ModelConfig& config, double seconds = 1.0,
                          double sample_rate = 8000.0);

// ---- checkpoints ------------------------------------------------------------

// Text header (format version, config fields, "param <path> <shape> <offset>"
// manifest) followed by little-endian float32 data in manifest order.
void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const ParamTable<float>& params);

struct Checkpoint {
  ModelConfig config;
  ParamTable<float> params;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace sandglasset::model

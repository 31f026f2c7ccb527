// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <string>

#include "sandglasset/framing.hpp"
#include "sandglasset/model.hpp"

namespace sandglasset::model {

namespace {

constexpr double kTranscendental = 5.0;

struct Builder {
  CostReport report;
  void add(const std::string& module, const std::string& primitive,
           double params, double flops) {
    report.entries.push_back({module, primitive, params, flops});
    report.total_params += params;
    report.total_flops += flops;
  }
};

// Layer norm over `dim` features at one position: mean, centre, square,
// variance sum, scale, gain, offset, plus one reciprocal square root.
double layer_norm_flops(double dim) { return 7.0 * dim + kTranscendental; }

CostReport build(const ModelConfig& c, double seconds, double sample_rate) {
  c.validate();
  const double m = c.window, e = c.encoder_dim, d = c.bottleneck_dim;
  const double h = c.hidden, j = c.heads, cs = c.sources;
  const double k = c.segment;

  const auto samples = static_cast<std::size_t>(std::llround(seconds * sample_rate));
  const auto frame_layout = framing::make_frame_layout(samples, c.window);
  const auto seg_layout = framing::make_segment_layout(frame_layout.frames, c.segment);
  const double l = frame_layout.frames;
  const double s = seg_layout.segments;
  const double positions = k * s;

  Builder b;
  b.add("encoder", "weight", e * m, 2.0 * e * m * l);
  if (c.encoder_bias) b.add("encoder", "bias", e, e * l);
  b.add("encoder", "relu", 0, e * l);
  b.add("bottleneck", "weight", d * e, 2.0 * d * e * l);

  const auto factors = granularity_factors(c.blocks, c.granularity_base);
  for (std::size_t blk = 1; blk <= c.blocks; ++blk) {
    const std::string mod = "block" + std::to_string(blk);
    const double f = static_cast<double>(factors[blk - 1]);

    // Per direction and position: gate matmuls, bias, 3 sigmoids + 2 tanh,
    // cell and hidden updates.
    const double lstm_step = 8.0 * h * (d + h) + 4.0 * h +
                             5.0 * h * kTranscendental + 4.0 * h;
    b.add(mod, "lstm", 2.0 * (4.0 * h * d + 4.0 * h * h + 4.0 * h),
          2.0 * lstm_step * positions);
    b.add(mod, "projection", d * 2.0 * h + d, (2.0 * d * 2.0 * h + d) * positions);
    b.add(mod, "layer_norm", 2.0 * d, layer_norm_flops(d) * positions);
    b.add(mod, "residual", 0, d * positions);

    const double kernel = c.resampler == Resampler::kDepthwise ? d * f : d * d * f;
    const double resample_flops = c.resampler == Resampler::kDepthwise
                                      ? 2.0 * d * positions
                                      : 2.0 * d * d * positions;
    b.add(mod, "downsample", kernel, resample_flops);

    // SAN over K/f maps, each a length-S sequence.
    const double maps = k / f;
    const double coarse = maps * s;
    b.add(mod, "san_norm", 4.0 * d, 2.0 * layer_norm_flops(d) * coarse);
    b.add(mod, "san_positional", 0, d * coarse);
    b.add(mod, "san_qkv", 3.0 * (d * d + d), 3.0 * (2.0 * d * d + d) * coarse);
    b.add(mod, "san_scores", 0, (2.0 * s * s * d + s * s * j) * maps);
    // max-subtract, exp, sum, normalize
    b.add(mod, "san_softmax", 0, (3.0 + kTranscendental) * s * s * j * maps);
    b.add(mod, "san_context", 0, 2.0 * s * s * d * maps);
    b.add(mod, "san_output", d * d, (2.0 * d * d + d) * coarse);

    b.add(mod, "upsample", kernel, resample_flops);
    if (residual_partner(c, blk) != 0) b.add(mod, "block_residual", 0, d * positions);
  }

  b.add("mask_head", "prelu", 1, 2.0 * d * positions);
  b.add("mask_head", "weight", cs * e * d, 2.0 * cs * e * d * positions);
  b.add("mask_head", "bias", cs * e, cs * e * positions);
  b.add("mask_head", "merge", 0, cs * e * positions);
  b.add("mask_head", "relu", 0, cs * e * l);
  b.add("decoder", "mask_multiply", 0, cs * e * l);
  b.add("decoder", "weight", m * e, cs * 2.0 * m * e * l);
  b.add("decoder", "overlap_add", 0, cs * m * l);

  CostReport& r = b.report;
  r.seconds = seconds;
  r.sample_rate = sample_rate;
  r.params_without_encoder_bias = r.total_params - (c.encoder_bias ? e : 0.0);
  r.convention =
      "inference forward pass; multiply-accumulate = 2 FLOPs, add/multiply/"
      "compare = 1, exp/tanh/sigmoid/rsqrt = 5; dropout inactive";
  return r;
}

}  // namespace

double CostReport::params_of(const std::string& module) const {
  double total = 0;
  for (const auto& e : entries)
    if (e.module == module) total += e.params;
  return total;
}

double CostReport::flops_of_primitive(const std::string& prefix) const {
  double total = 0;
  for (const auto& e : entries)
    if (e.primitive.rfind(prefix, 0) == 0) total += e.flops;
  return total;
}

CostReport count_parameters(const ModelConfig& config) {
  return build(config, 1.0, 8000.0);
}

CostReport estimate_flops(const ModelConfig& config, double seconds,
                          double sample_rate) {
  if (!(seconds > 0.0) || !(sample_rate > 0.0))
    throw ConfigError("estimate_flops: duration and sample rate must be positive");
  return build(config, seconds, sample_rate);
}

}  // namespace sandglasset::model

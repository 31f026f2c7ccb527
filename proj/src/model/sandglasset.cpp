// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <optional>
#include <string>

#include "sandglasset/model.hpp"
#include "sandglasset/ops.hpp"

namespace sandglasset::model {

namespace {

// Framing ops lifted onto the tape. Each backward is the adjoint split/merge.

template <typename Real>
Var<Real> segment_var(Var<Real> frames, const framing::SegmentLayout& layout) {
  Tensor<Real> out = framing::segment_with_layout(frames.value(), layout);
  return frames.tape->push(std::move(out), {frames},
                           [frames, layout](Tape<Real>& t, std::size_t self) {
    add_into(t.grad(frames.id), framing::merge_segments(t.grad(self), layout));
  }, "segment");
}

template <typename Real>
Var<Real> merge_var(Var<Real> segments, const framing::SegmentLayout& layout) {
  Tensor<Real> out = framing::merge_segments(segments.value(), layout);
  return segments.tape->push(std::move(out), {segments},
                             [segments, layout](Tape<Real>& t, std::size_t self) {
    add_into(t.grad(segments.id),
             framing::segment_with_layout(t.grad(self), layout));
  }, "merge");
}

template <typename Real>
Var<Real> overlap_add_var(Var<Real> frames, const framing::FrameLayout& layout) {
  Tensor<Real> out = framing::overlap_add_frames(frames.value(), layout);
  return frames.tape->push(std::move(out), {frames},
                           [frames, layout](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto split = framing::frame_signal<Real>(g.values(), layout.window);
    add_into(t.grad(frames.id), split.frames);
  }, "overlap_add");
}

std::string block_prefix(std::size_t block) {
  return "block" + std::to_string(block) + ".";
}

}  // namespace

template <typename Real>
Encoded<Real> encode(Tape<Real>& tape, ParamTable<Real>& params,
                     const ModelConfig& config, const Tensor<Real>& waveform) {
  if (waveform.rank() != 1)
    throw DimensionError("encode: waveform must be 1-D, got " +
                         shape_string(waveform.shape()));
  auto framed = framing::frame_signal<Real>(waveform.values(), config.window);
  Var<Real> frames = tape.constant(std::move(framed.frames));
  std::optional<Var<Real>> bias;
  if (config.encoder_bias) bias = tape.param(params, "encoder.bias");
  Var<Real> features =
      ops::relu(ops::linear(frames, tape.param(params, "encoder.weight"), bias));
  Var<Real> bottleneck =
      ops::linear(features, tape.param(params, "bottleneck.weight"));
  return {features, bottleneck, framed.layout};
}

template <typename Real>
Var<Real> forward_block(Tape<Real>& tape, ParamTable<Real>& params,
                        const ModelConfig& config, std::size_t block,
                        Var<Real> input, std::size_t factor,
                        const ForwardOptions& options) {
  const auto& shape = input.shape();
  if (shape.size() != 3 || shape[0] != config.bottleneck_dim)
    throw DimensionError("forward_block: expected D x K x S with D = " +
                         std::to_string(config.bottleneck_dim) + ", got " +
                         shape_string(shape));
  if (factor == 0 || shape[1] % factor != 0)
    throw ConfigError("forward_block: segment length " + std::to_string(shape[1]) +
                      " is not divisible by factor " + std::to_string(factor));
  const bool training = options.training && config.dropout > 0.0;
  if (training && options.rng == nullptr)
    throw ConfigError("forward_block: training with dropout needs an rng");

  const std::string p = block_prefix(block);
  auto param = [&](const std::string& name) { return tape.param(params, p + name); };

  // Intra-segment BiLSTM, projection back to D, normalized residual.
  Var<Real> local = ops::bilstm(
      input, param("lstm.fwd.w_ih"), param("lstm.fwd.w_hh"), param("lstm.fwd.bias"),
      param("lstm.bwd.w_ih"), param("lstm.bwd.w_hh"), param("lstm.bwd.bias"));
  Var<Real> projected = ops::linear(local, param("proj.weight"),
                                    std::optional<Var<Real>>(param("proj.bias")));
  Var<Real> mixed = ops::add(
      ops::layer_norm(projected, param("norm.gain"), param("norm.offset")), input);

  // Coarsen along K, attend across segments, restore K.
  const bool depthwise = config.resampler == Resampler::kDepthwise;
  Var<Real> coarse = ops::conv1d(mixed, param("ds.kernel"),
                                 ops::Conv1dSpec{factor, factor, depthwise, false});
  Var<Real> normed =
      ops::layer_norm(coarse, param("san.norm_in.gain"), param("san.norm_in.offset"));
  Var<Real> positioned = ops::add_broadcast_middle(
      normed, ops::positional_encoding<Real>(shape[2], config.bottleneck_dim));
  ops::AttentionWeights<Real> w{
      param("san.q.weight"), param("san.q.bias"),   param("san.k.weight"),
      param("san.k.bias"),   param("san.v.weight"), param("san.v.bias"),
      param("san.out.weight"), param("san.norm_out.gain"),
      param("san.norm_out.offset")};
  Rng unused(0);
  Var<Real> attended = ops::multi_head_attention(
      positioned, w, ops::AttentionParams{config.heads, config.dropout},
      options.rng ? *options.rng : unused, training);
  return ops::conv1d(attended, param("us.kernel"),
                     ops::Conv1dSpec{factor, factor, depthwise, true});
}

template <typename Real>
Var<Real> mask_head(Tape<Real>& tape, ParamTable<Real>& params,
                    const ModelConfig& config, Var<Real> blocks_out,
                    const framing::SegmentLayout& layout) {
  Var<Real> gated = ops::prelu(blocks_out, tape.param(params, "mask.prelu"));
  Var<Real> logits =
      ops::linear(gated, tape.param(params, "mask.weight"),
                  std::optional<Var<Real>>(tape.param(params, "mask.bias")));
  // CE x K x S -> CE x L: every row merges independently.
  Var<Real> merged = ops::relu(merge_var(logits, layout));
  return ops::reshape(merged, Shape{config.sources, config.encoder_dim, layout.frames});
}

template <typename Real>
std::vector<Var<Real>> decode(Tape<Real>& tape, ParamTable<Real>& params,
                              const ModelConfig& config, Var<Real> features,
                              Var<Real> masks, const framing::FrameLayout& layout) {
  const std::size_t c_count = masks.shape().at(0);
  const std::size_t e = config.encoder_dim;
  Var<Real> stacked = ops::reshape(masks, Shape{c_count * e, layout.frames});
  Var<Real> weight = tape.param(params, "decoder.weight");
  std::vector<Var<Real>> out;
  out.reserve(c_count);
  for (std::size_t c = 0; c < c_count; ++c) {
    Var<Real> masked = ops::mul(features, ops::slice_rows(stacked, c * e, e));
    out.push_back(overlap_add_var(ops::linear(masked, weight), layout));
  }
  return out;
}

template <typename Real>
ForwardResult<Real> forward(Tape<Real>& tape, ParamTable<Real>& params,
                            const ModelConfig& config, const Tensor<Real>& waveform,
                            const ForwardOptions& options) {
  config.validate();
  Encoded<Real> enc = encode(tape, params, config, waveform);
  const auto seg_layout =
      framing::make_segment_layout(enc.layout.frames, config.segment);
  Var<Real> current = segment_var(enc.bottleneck, seg_layout);

  const auto factors = granularity_factors(config.blocks, config.granularity_base);
  ForwardResult<Real> result;
  for (std::size_t b = 1; b <= config.blocks; ++b) {
    Var<Real> y = forward_block(tape, params, config, b, current, factors[b - 1], options);
    result.block_outputs.push_back(y);
    if (std::size_t partner = residual_partner(config, b))
      current = ops::add(y, result.block_outputs[partner - 1]);
    else
      current = y;
  }
  result.masks = mask_head(tape, params, config, current, seg_layout);
  result.features = enc.features;
  result.sources = decode(tape, params, config, enc.features, result.masks, enc.layout);
  result.frame_layout = enc.layout;
  result.segment_layout = seg_layout;
  return result;
}

std::vector<std::vector<float>> separate(ParamTable<float>& params,
                                         const ModelConfig& config,
                                         std::span<const float> mixture) {
  Tape<float> tape(false);
  Tensor<float> wave({mixture.size()},
                     std::vector<float>(mixture.begin(), mixture.end()));
  auto result = forward(tape, params, config, wave);
  std::vector<std::vector<float>> out;
  for (const auto& s : result.sources) out.push_back(s.value().storage());
  return out;
}

#define SANDGLASSET_INSTANTIATE(Real)                                          \
  template Encoded<Real> encode(Tape<Real>&, ParamTable<Real>&,                \
                                const ModelConfig&, const Tensor<Real>&);      \
  template Var<Real> forward_block(Tape<Real>&, ParamTable<Real>&,             \
                                   const ModelConfig&, std::size_t, Var<Real>, \
                                   std::size_t, const ForwardOptions&);        \
  template Var<Real> mask_head(Tape<Real>&, ParamTable<Real>&,                 \
                               const ModelConfig&, Var<Real>,                  \
                               const framing::SegmentLayout&);                 \
  template std::vector<Var<Real>> decode(Tape<Real>&, ParamTable<Real>&,       \
                                         const ModelConfig&, Var<Real>,        \
                                         Var<Real>,                            \
                                         const framing::FrameLayout&);         \
  template ForwardResult<Real> forward(Tape<Real>&, ParamTable<Real>&,         \
                                       const ModelConfig&, const Tensor<Real>&, \
                                       const ForwardOptions&);

SANDGLASSET_INSTANTIATE(float)
SANDGLASSET_INSTANTIATE(double)

#undef SANDGLASSET_INSTANTIATE

}  // namespace sandglasset::model

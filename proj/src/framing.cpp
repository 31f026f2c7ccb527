// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "sandglasset/framing.hpp"

#include <string>

namespace sandglasset::framing {

FrameLayout make_frame_layout(std::size_t samples, std::size_t window) {
  if (window == 0 || window % 2 != 0)
    throw ConfigError("frame window M must be even and positive, got " +
                      std::to_string(window));
  if (samples == 0) throw ConfigError("cannot frame an empty signal");
  FrameLayout layout;
  layout.samples = samples;
  layout.window = window;
  layout.hop = window / 2;
  layout.frames = (2 * samples + window - 1) / window;
  layout.tail_pad = (layout.frames + 1) * layout.hop - samples;
  return layout;
}

SegmentLayout make_segment_layout(std::size_t frames, std::size_t segment) {
  if (segment < 2 || segment % 2 != 0)
    throw ConfigError("segment size K must be even and >= 2, got " +
                      std::to_string(segment));
  if (frames == 0) throw ConfigError("cannot segment an empty frame sequence");
  SegmentLayout layout;
  layout.frames = frames;
  layout.segment = segment;
  layout.hop = segment / 2;
  layout.front_pad = layout.hop;
  // Frame l sits in segments floor(l/P) and floor(l/P) + 1.
  layout.segments = (frames - 1) / layout.hop + 2;
  layout.end_pad = layout.segments * layout.hop - frames;
  return layout;
}

template <typename Real>
Framed<Real> frame_signal(std::span<const Real> signal, std::size_t window) {
  FrameLayout layout = make_frame_layout(signal.size(), window);
  Tensor<Real> frames({window, layout.frames});
  for (std::size_t l = 0; l < layout.frames; ++l)
    for (std::size_t m = 0; m < window; ++m) {
      const std::size_t n = l * layout.hop + m;
      if (n < signal.size()) frames.at(m, l) = signal[n];
    }
  return {std::move(frames), layout};
}

template <typename Real>
Tensor<Real> overlap_add_frames(const Tensor<Real>& frames,
                                const FrameLayout& layout) {
  if (frames.shape() != Shape{layout.window, layout.frames})
    throw LayoutError("overlap_add_frames: frames " + shape_string(frames.shape()) +
                      " do not match layout M=" + std::to_string(layout.window) +
                      " L=" + std::to_string(layout.frames));
  Tensor<Real> out({layout.samples});
  for (std::size_t l = 0; l < layout.frames; ++l)
    for (std::size_t m = 0; m < layout.window; ++m) {
      const std::size_t n = l * layout.hop + m;
      if (n < layout.samples) out[n] += frames.at(m, l);
    }
  return out;
}

template <typename Real>
Tensor<Real> segment_with_layout(const Tensor<Real>& frames,
                                 const SegmentLayout& layout) {
  if (frames.rank() != 2 || frames.dim(1) != layout.frames)
    throw LayoutError("segment: frames " + shape_string(frames.shape()) +
                      " do not match layout L=" + std::to_string(layout.frames));
  const std::size_t d = frames.dim(0);
  const std::size_t k_len = layout.segment, s_len = layout.segments;
  Tensor<Real> out({d, k_len, s_len});
  for (std::size_t c = 0; c < d; ++c) {
    const Real* src = frames.data() + c * layout.frames;
    Real* dst = out.data() + c * k_len * s_len;
    for (std::size_t k = 0; k < k_len; ++k)
      for (std::size_t s = 0; s < s_len; ++s) {
        const std::size_t padded = s * layout.hop + k;
        if (padded >= layout.front_pad && padded - layout.front_pad < layout.frames)
          dst[k * s_len + s] = src[padded - layout.front_pad];
      }
  }
  return out;
}

template <typename Real>
Segmented<Real> segment_frames(const Tensor<Real>& frames, std::size_t segment) {
  if (frames.rank() != 2)
    throw DimensionError("segment_frames: expected D x L, got " +
                         shape_string(frames.shape()));
  SegmentLayout layout = make_segment_layout(frames.dim(1), segment);
  return {segment_with_layout(frames, layout), layout};
}

template <typename Real>
Tensor<Real> merge_segments(const Tensor<Real>& segments,
                            const SegmentLayout& layout) {
  if (segments.rank() != 3 || segments.dim(1) != layout.segment ||
      segments.dim(2) != layout.segments)
    throw LayoutError("merge_segments: tensor " + shape_string(segments.shape()) +
                      " does not match layout K=" + std::to_string(layout.segment) +
                      " S=" + std::to_string(layout.segments));
  const std::size_t d = segments.dim(0);
  const std::size_t k_len = layout.segment, s_len = layout.segments;
  Tensor<Real> out({d, layout.frames});
  for (std::size_t c = 0; c < d; ++c) {
    const Real* src = segments.data() + c * k_len * s_len;
    Real* dst = out.data() + c * layout.frames;
    for (std::size_t k = 0; k < k_len; ++k)
      for (std::size_t s = 0; s < s_len; ++s) {
        const std::size_t padded = s * layout.hop + k;
        if (padded >= layout.front_pad && padded - layout.front_pad < layout.frames)
          dst[padded - layout.front_pad] += src[k * s_len + s];
      }
  }
  return out;
}

#define SANDGLASSET_INSTANTIATE(Real)                                            \
  template Framed<Real> frame_signal(std::span<const Real>, std::size_t);        \
  template Tensor<Real> overlap_add_frames(const Tensor<Real>&, const FrameLayout&); \
  template Segmented<Real> segment_frames(const Tensor<Real>&, std::size_t);     \
  template Tensor<Real> segment_with_layout(const Tensor<Real>&, const SegmentLayout&); \
  template Tensor<Real> merge_segments(const Tensor<Real>&, const SegmentLayout&);

SANDGLASSET_INSTANTIATE(float)
SANDGLASSET_INSTANTIATE(double)

#undef SANDGLASSET_INSTANTIATE

}  // namespace sandglasset::framing

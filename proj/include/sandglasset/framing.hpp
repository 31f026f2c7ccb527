// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <span>

#include "sandglasset/tensor.hpp"

// Index bookkeeping between waveforms, 50%-overlap frames and 50%-overlap
// segments. Every split has an overlap-add partner that is its exact adjoint.
namespace sandglasset::framing {

struct FrameLayout {
  std::size_t samples = 0;  // T
  std::size_t window = 0;   // M
  std::size_t hop = 0;      // M / 2
  std::size_t frames = 0;   // L = ceil(2T / M)
  std::size_t tail_pad = 0; // zeros appended past T: (L + 1) * hop - T

  bool operator==(const FrameLayout&) const = default;
};

// Frame l covers padded indices [l * P, l * P + K) with P = K / 2; P zero
// frames are prepended and the minimal number appended so that every real
// frame lies in exactly two segments.
struct SegmentLayout {
  std::size_t frames = 0;     // L
  std::size_t segment = 0;    // K
  std::size_t hop = 0;        // P = K / 2
  std::size_t front_pad = 0;  // P
  std::size_t end_pad = 0;
  std::size_t segments = 0;   // S

  bool operator==(const SegmentLayout&) const = default;
};

FrameLayout make_frame_layout(std::size_t samples, std::size_t window);
SegmentLayout make_segment_layout(std::size_t frames, std::size_t segment);

template <typename Real>
struct Framed {
  Tensor<Real> frames;  // M x L
  FrameLayout layout;
};

template <typename Real>
struct Segmented {
  Tensor<Real> segments;  // D x K x S
  SegmentLayout layout;
};

// Splits a waveform into L = ceil(2T/M) half-overlapping frames of length M,
// zero-padded past the end. M must be even and positive, T >= 1.
template <typename Real>
Framed<Real> frame_signal(std::span<const Real> signal, std::size_t window);

// Adjoint of frame_signal: out[n] = sum_l frames[n - l*hop, l], truncated to T.
template <typename Real>
Tensor<Real> overlap_add_frames(const Tensor<Real>& frames,
                                const FrameLayout& layout);

// Packs D x L frames into D x K x S half-overlapping segments.
template <typename Real>
Segmented<Real> segment_frames(const Tensor<Real>& frames, std::size_t segment);

// Same split for a tensor whose layout is already known.
template <typename Real>
Tensor<Real> segment_with_layout(const Tensor<Real>& frames,
                                 const SegmentLayout& layout);

// Adjoint of segment_frames: hop-P overlap-add of the S segments with the
// pads stripped. Raw sums, so merge(segment(X)) == 2 X.
template <typename Real>
Tensor<Real> merge_segments(const Tensor<Real>& segments,
                            const SegmentLayout& layout);

}  // namespace sandglasset::framing

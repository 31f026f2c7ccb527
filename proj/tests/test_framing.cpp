// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "sandglasset/framing.hpp"
#include "test_util.hpp"

using namespace sandglasset;
using namespace sandglasset::framing;
using testutil::random_tensor;

namespace {

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

TEST_CASE("frame layout examples") {
  auto a = make_frame_layout(8000, 16);
  CHECK(a.frames == 1000);
  CHECK(a.hop == 8);
  CHECK(a.tail_pad == 8);
  auto b = make_frame_layout(5, 4);  // ceil(10/4) = 3 frames, covering 8 samples
  CHECK(b.frames == 3);
  CHECK(b.tail_pad == 3);
  auto c = make_frame_layout(1, 2);
  CHECK(c.frames == 1);
  CHECK(c.tail_pad == 1);
}

TEST_CASE("segment layout examples") {
  auto a = make_segment_layout(1000, 250);
  CHECK(a.hop == 125);
  CHECK(a.front_pad == 125);
  CHECK(a.segments == 9);
  CHECK(a.end_pad == 125);
  auto b = make_segment_layout(2, 2);
  CHECK(b.segments == 3);
  CHECK(b.end_pad == 1);
  auto c = make_segment_layout(1, 4);
  CHECK(c.segments == 2);
}

TEST_CASE("layouts reject invalid geometry") {
  CHECK_THROWS_AS(make_frame_layout(100, 15), ConfigError);
  CHECK_THROWS_AS(make_frame_layout(100, 0), ConfigError);
  CHECK_THROWS_AS(make_frame_layout(0, 16), ConfigError);
  CHECK_THROWS_AS(make_segment_layout(10, 5), ConfigError);
  CHECK_THROWS_AS(make_segment_layout(10, 0), ConfigError);
  CHECK_THROWS_AS(make_segment_layout(0, 4), ConfigError);
  auto layout = make_frame_layout(20, 4);
  CHECK_THROWS_AS(overlap_add_frames(Tensor<double>({4, layout.frames + 1}), layout),
                  LayoutError);
  auto seg = make_segment_layout(7, 4);
  CHECK_THROWS_AS(segment_with_layout(Tensor<double>({3, 8}), seg), LayoutError);
  CHECK_THROWS_AS(merge_segments(Tensor<double>({3, 4, seg.segments + 1}), seg),
                  LayoutError);
}

TEST_CASE("frames hold shifted copies of the signal") {
  Rng rng(1);
  for (std::size_t trial = 0; trial < 50; ++trial) {
    const std::size_t m = 2 * (1 + rng.below(10));
    const std::size_t t = 1 + rng.below(120);
    auto x = random_tensor({t}, rng);
    auto framed = frame_signal<double>(x.values(), m);
    const auto& lay = framed.layout;
    CHECK(lay.frames == (2 * t + m - 1) / m);
    // Every real sample lies inside some frame; no frame is entirely padding.
    CHECK(lay.frames * lay.hop + lay.hop >= t);
    CHECK((lay.frames - 1) * lay.hop < t);
    for (std::size_t l = 0; l < lay.frames; ++l)
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t n = l * lay.hop + k;
        CHECK(framed.frames.at(k, l) == (n < t ? x[n] : 0.0));
      }
  }
}

TEST_CASE("overlap-add of framing counts each sample once in the first hop, twice after") {
  Rng rng(2);
  for (std::size_t trial = 0; trial < 50; ++trial) {
    const std::size_t m = 2 * (1 + rng.below(10));
    const std::size_t t = 1 + rng.below(120);
    auto x = random_tensor({t}, rng);
    auto framed = frame_signal<double>(x.values(), m);
    auto back = overlap_add_frames(framed.frames, framed.layout);
    REQUIRE(back.size() == t);
    for (std::size_t n = 0; n < t; ++n)
      CHECK(back[n] == doctest::Approx((n < m / 2 ? 1.0 : 2.0) * x[n]));
  }
}

TEST_CASE("overlap-add is the adjoint of framing") {
  Rng rng(3);
  for (std::size_t trial = 0; trial < 30; ++trial) {
    const std::size_t m = 2 * (1 + rng.below(8));
    const std::size_t t = 1 + rng.below(100);
    auto x = random_tensor({t}, rng);
    auto framed = frame_signal<double>(x.values(), m);
    auto f = random_tensor({m, framed.layout.frames}, rng);
    CHECK(dot(framed.frames, f) ==
          doctest::Approx(dot(x, overlap_add_frames(f, framed.layout))));
  }
}

TEST_CASE("segments match an index oracle and every frame appears twice") {
  Rng rng(4);
  for (std::size_t trial = 0; trial < 60; ++trial) {
    const std::size_t k = 2 * (1 + rng.below(8));
    const std::size_t l = 1 + rng.below(60);
    const std::size_t d = 1 + rng.below(3);
    auto x = random_tensor({d, l}, rng);
    auto seg = segment_frames(x, k);
    const auto& lay = seg.layout;
    REQUIRE(seg.segments.shape() == Shape{d, k, lay.segments});
    CHECK(lay.front_pad == k / 2);
    CHECK(lay.front_pad + l + lay.end_pad == (lay.segments + 1) * lay.hop);
    std::vector<int> seen(l, 0);
    for (std::size_t s = 0; s < lay.segments; ++s)
      for (std::size_t j = 0; j < k; ++j) {
        const long idx = static_cast<long>(s * lay.hop + j) - static_cast<long>(lay.hop);
        const bool real = idx >= 0 && idx < static_cast<long>(l);
        if (real) ++seen[idx];
        for (std::size_t c = 0; c < d; ++c)
          CHECK(seg.segments.at(c, j, s) == (real ? x.at(c, idx) : 0.0));
      }
    for (int count : seen) CHECK(count == 2);
    // No segment is pure padding.
    CHECK((lay.segments - 1) * lay.hop < lay.hop + l);
  }
}

TEST_CASE("merge of segmentation doubles the frames") {
  Rng rng(5);
  for (std::size_t trial = 0; trial < 40; ++trial) {
    const std::size_t k = 2 * (1 + rng.below(8));
    const std::size_t l = 1 + rng.below(60);
    auto x = random_tensor({2, l}, rng);
    auto seg = segment_frames(x, k);
    auto back = merge_segments(seg.segments, seg.layout);
    REQUIRE(back.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(back[i] == doctest::Approx(2 * x[i]));
  }
}

TEST_CASE("merge is the adjoint of segmentation") {
  Rng rng(6);
  for (std::size_t trial = 0; trial < 30; ++trial) {
    const std::size_t k = 2 * (1 + rng.below(8));
    const std::size_t l = 1 + rng.below(60);
    auto x = random_tensor({3, l}, rng);
    auto seg = segment_frames(x, k);
    auto y = random_tensor(seg.segments.shape(), rng);
    CHECK(dot(seg.segments, y) == doctest::Approx(dot(x, merge_segments(y, seg.layout))));
  }
}

TEST_CASE("float and double framing agree") {
  std::vector<float> xf = {0.5f, -1.0f, 0.25f, 2.0f, 3.0f};
  std::vector<double> xd(xf.begin(), xf.end());
  auto a = frame_signal<float>(xf, 4);
  auto b = frame_signal<double>(xd, 4);
  CHECK(a.layout == b.layout);
  for (std::size_t i = 0; i < a.frames.size(); ++i)
    CHECK(static_cast<double>(a.frames[i]) == b.frames[i]);
}

TEST_CASE("overlap-add of a ramp") {
  std::vector<double> ramp = {1, 2, 3, 4, 5, 6, 7, 8};
  auto framed = frame_signal<double>(ramp, 4);
  auto back = overlap_add_frames(framed.frames, framed.layout);
  CHECK(back == Tensor<double>::vector({1, 2, 6, 8, 10, 12, 14, 16}));

  auto single = frame_signal<double>(std::vector<double>{0.25, -0.5}, 4);
  REQUIRE(single.layout.frames == 1);
  auto once = overlap_add_frames(single.frames, single.layout);
  CHECK(once[0] == 0.25);
  CHECK(once[1] == -0.5);
}

TEST_CASE("six frames in segments of four") {
  Tensor<double> x({1, 6});
  for (std::size_t i = 0; i < 6; ++i) x[i] = static_cast<double>(i + 1);
  auto seg = segment_frames(x, 4);
  REQUIRE(seg.layout.segments == 4);
  const double expected[4][4] = {{0, 0, 1, 2}, {1, 2, 3, 4}, {3, 4, 5, 6}, {5, 6, 0, 0}};
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t j = 0; j < 4; ++j) CHECK(seg.segments.at(0, j, s) == expected[s][j]);
}

TEST_CASE("thirty-seven frames in segments of sixteen are each covered twice") {
  Rng rng(7);
  const std::size_t d = 3, l = 37, k = 16;
  // Tag every frame with its index so coverage can be read back from the values.
  Tensor<double> x({d, l});
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t i = 0; i < l; ++i) x.at(c, i) = static_cast<double>(i + 1);
  auto seg = segment_frames(x, k);
  std::vector<int> count(l + 1, 0);
  for (std::size_t s = 0; s < seg.layout.segments; ++s)
    for (std::size_t j = 0; j < k; ++j) ++count[static_cast<std::size_t>(seg.segments.at(0, j, s))];
  for (std::size_t i = 1; i <= l; ++i) CHECK(count[i] == 2);
  auto y = random_tensor({d, l}, rng);
  CHECK(merge_segments(segment_frames(y, k).segments, seg.layout).shape() == y.shape());
}

TEST_CASE("merge of zeros is zero and both overlap-adds are linear") {
  Rng rng(8);
  auto layout = make_segment_layout(23, 6);
  const auto zero = merge_segments(Tensor<double>({2, 6, layout.segments}), layout);
  for (double v : zero.values()) CHECK(v == 0.0);
  // Integer-valued data keeps every sum exact.
  auto ints = [&](Shape shape) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.storage()) v = static_cast<double>(rng.below(21)) - 10.0;
    return t;
  };
  auto a = ints({2, 6, layout.segments}), b = ints({2, 6, layout.segments});
  Tensor<double> mix(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) mix[i] = 3 * a[i] - 2 * b[i];
  auto ma = merge_segments(a, layout), mb = merge_segments(b, layout);
  auto mm = merge_segments(mix, layout);
  for (std::size_t i = 0; i < mm.size(); ++i) CHECK(mm[i] == 3 * ma[i] - 2 * mb[i]);

  auto frames = make_frame_layout(31, 6);
  auto fa = ints({6, frames.frames}), fb = ints({6, frames.frames});
  Tensor<double> fmix(fa.shape());
  for (std::size_t i = 0; i < fa.size(); ++i) fmix[i] = 3 * fa[i] - 2 * fb[i];
  auto oa = overlap_add_frames(fa, frames), ob = overlap_add_frames(fb, frames);
  auto om = overlap_add_frames(fmix, frames);
  for (std::size_t i = 0; i < om.size(); ++i) CHECK(om[i] == 3 * oa[i] - 2 * ob[i]);
}

TEST_CASE("segment round trip is exact on integer data") {
  Rng rng(9);
  for (std::size_t trial = 0; trial < 25; ++trial) {
    const std::size_t k = 2 * (1 + rng.below(10));
    const std::size_t l = 1 + rng.below(80);
    const std::size_t d = 1 + rng.below(4);
    Tensor<double> x({d, l});
    for (auto& v : x.storage()) v = static_cast<double>(rng.below(2001)) - 1000.0;
    auto seg = segment_frames(x, k);
    CHECK(seg.layout.segments == (l - 1) / (k / 2) + 2);
    auto back = merge_segments(seg.segments, seg.layout);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(back[i] == 2 * x[i]);
  }
}

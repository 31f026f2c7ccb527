// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "sandglasset/blas.hpp"
#include "sandglasset/ops.hpp"
#include "test_util.hpp"

using namespace sandglasset;
using testutil::check_op;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("tensor element count matches its shape") {
  Tensor<float> t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>(3)), DimensionError);
  CHECK_THROWS_AS(t.reshape({5, 5}), DimensionError);
  t.reshape({4, 6});
  CHECK(t.shape() == Shape{4, 6});
  auto m = Tensor<double>::matrix({{1, 2}, {3, 4}});
  CHECK(m.at(1, 0) == 3);
  CHECK_THROWS_AS(Tensor<double>::matrix({{1, 2}, {3}}), DimensionError);
}

TEST_CASE("elementwise ops reject mismatched shapes") {
  Tape<double> tape;
  auto a = tape.variable(Tensor<double>({2, 3}));
  auto b = tape.variable(Tensor<double>({3, 2}));
  CHECK_THROWS_AS(ops::add(a, b), DimensionError);
  CHECK_THROWS_AS(ops::mul(a, b), DimensionError);
}

TEST_CASE("rng streams depend only on (seed, counter)") {
  Rng a(42), b(42), c(43);
  std::vector<std::uint64_t> xs, ys;
  for (int i = 0; i < 100; ++i) {
    xs.push_back(a.next_u64());
    ys.push_back(b.next_u64());
  }
  CHECK(xs == ys);
  CHECK(c.next_u64() != xs[0]);
  // Resuming from a saved state continues the same stream.
  Rng d(42);
  for (int i = 0; i < 50; ++i) d.next_u64();
  Rng e(d.state());
  CHECK(e.next_u64() == xs[50]);
  CHECK(Rng(42, 7).next_u64() != Rng(42, 8).next_u64());
}

TEST_CASE("rng distributions have the expected moments") {
  Rng rng(7);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
  std::set<std::size_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto k = rng.below(7);
    CHECK(k < 7);
    seen.insert(k);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("gemm handles transposes and strided leading dimensions") {
  // 2x3 block inside a 2x4 buffer, times 3x2.
  std::vector<double> a = {1, 2, 3, 99, 4, 5, 6, 99};
  std::vector<double> b = {1, 0, 0, 1, 1, 1};
  std::vector<double> c(4, 0.0);
  blas::gemm(false, false, 2, 2, 3, 1.0, a.data(), 4, b.data(), 2, 0.0, c.data(), 2);
  CHECK(c == std::vector<double>{4, 5, 10, 11});
  std::vector<double> at = {1, 4, 2, 5, 3, 6};  // a^T stored 3x2
  std::vector<double> c2(4, 0.0);
  blas::gemm(true, false, 2, 2, 3, 1.0, at.data(), 2, b.data(), 2, 0.0, c2.data(), 2);
  CHECK(c2 == c);
}

TEST_CASE("linear matches a triple-loop oracle") {
  Rng rng(1);
  auto x = random_tensor({5, 3, 4}, rng);
  auto w = random_tensor({6, 5}, rng);
  auto b = random_tensor({6}, rng);
  Tape<double> tape;
  auto y = ops::linear(tape.constant(x), tape.constant(w),
                       std::optional<Var<double>>(tape.constant(b)));
  REQUIRE(y.shape() == Shape{6, 3, 4});
  double worst = 0;
  for (std::size_t o = 0; o < 6; ++o)
    for (std::size_t p = 0; p < 12; ++p) {
      double acc = b[o];
      for (std::size_t i = 0; i < 5; ++i) acc += w.at(o, i) * x[i * 12 + p];
      worst = std::max(worst, std::abs(acc - y.value()[o * 12 + p]));
    }
  CHECK(worst < 1e-12);
  CHECK_THROWS_AS(ops::linear(tape.constant(x), tape.constant(random_tensor({6, 4}, rng))),
                  DimensionError);
}

TEST_CASE("layer_norm matches a two-pass oracle") {
  Rng rng(2);
  const std::size_t d = 8, n = 13;
  auto x = random_tensor({d, n}, rng, 3.0);
  auto gain = random_tensor({d}, rng);
  auto offset = random_tensor({d}, rng);
  Tape<double> tape;
  auto y = ops::layer_norm(tape.constant(x), tape.constant(gain), tape.constant(offset));
  double worst = 0;
  for (std::size_t p = 0; p < n; ++p) {
    double mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += x.at(c, p);
    mean /= d;
    double var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (x.at(c, p) - mean) * (x.at(c, p) - mean);
    var /= d;
    for (std::size_t c = 0; c < d; ++c) {
      const double ref = (x.at(c, p) - mean) / std::sqrt(var + 1e-5) * gain[c] + offset[c];
      worst = std::max(worst, std::abs(ref - y.value().at(c, p)) / std::max(1.0, std::abs(ref)));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("conv1d matches a sliding-window oracle") {
  Rng rng(3);
  const std::size_t d = 3, len = 8, cols = 2;
  auto x = random_tensor({d, len, cols}, rng);

  SUBCASE("depthwise, kernel == stride") {
    auto w = random_tensor({d, 4}, rng);
    Tape<double> tape;
    auto y = ops::conv1d(tape.constant(x), tape.constant(w), {4, 4, true, false});
    REQUIRE(y.shape() == Shape{d, 2, cols});
    double worst = 0;
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t s = 0; s < cols; ++s) {
          double acc = 0;
          for (std::size_t j = 0; j < 4; ++j) acc += w.at(c, j) * x.at(c, a * 4 + j, s);
          worst = std::max(worst, std::abs(acc - y.value().at(c, a, s)));
        }
    CHECK(worst < 1e-12);
  }

  SUBCASE("depthwise transposed scatters each input over f outputs") {
    auto w = random_tensor({d, 4}, rng);
    Tape<double> tape;
    auto y = ops::conv1d(tape.constant(x), tape.constant(w), {4, 4, true, true});
    REQUIRE(y.shape() == Shape{d, 32, cols});
    double worst = 0;
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t t = 0; t < 32; ++t)
        for (std::size_t s = 0; s < cols; ++s)
          worst = std::max(worst, std::abs(w.at(c, t % 4) * x.at(c, t / 4, s) -
                                           y.value().at(c, t, s)));
    CHECK(worst < 1e-12);
  }

  SUBCASE("dense, overlapping kernel") {
    auto w = random_tensor({2, d, 3}, rng);
    Tape<double> tape;
    auto y = ops::conv1d(tape.constant(x), tape.constant(w), {3, 1, false, false});
    REQUIRE(y.shape() == Shape{2, 6, cols});
    double worst = 0;
    for (std::size_t o = 0; o < 2; ++o)
      for (std::size_t a = 0; a < 6; ++a)
        for (std::size_t s = 0; s < cols; ++s) {
          double acc = 0;
          for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < 3; ++j) acc += w.at(o, i, j) * x.at(i, a + j, s);
          worst = std::max(worst, std::abs(acc - y.value().at(o, a, s)));
        }
    CHECK(worst < 1e-12);
  }

  SUBCASE("invalid geometry") {
    Tape<double> tape;
    auto w = random_tensor({d, 3}, rng);
    CHECK_THROWS_AS(ops::conv1d(tape.constant(x), tape.constant(w), {3, 3, true, false}),
                    LayoutError);
    CHECK_THROWS_AS(ops::conv1d(tape.constant(x), tape.constant(w), {3, 0, true, false}),
                    ConfigError);
  }
}

TEST_CASE("bilstm matches a scalar straight-line oracle") {
  Rng rng(4);
  const std::size_t d = 3, h = 2, k = 4, s = 2;
  auto x = random_tensor({d, k, s}, rng);
  std::vector<Tensor<double>> w;
  for (int dir = 0; dir < 2; ++dir) {
    w.push_back(random_tensor({4 * h, d}, rng, 0.5));
    w.push_back(random_tensor({4 * h, h}, rng, 0.5));
    w.push_back(random_tensor({4 * h}, rng, 0.5));
  }
  Tape<double> tape;
  std::vector<Var<double>> wv;
  for (auto& t : w) wv.push_back(tape.constant(t));
  auto y = ops::bilstm(tape.constant(x), wv[0], wv[1], wv[2], wv[3], wv[4], wv[5]);
  REQUIRE(y.shape() == Shape{2 * h, k, s});

  double worst = 0;
  for (int dir = 0; dir < 2; ++dir) {
    const auto& wih = w[3 * dir];
    const auto& whh = w[3 * dir + 1];
    const auto& bias = w[3 * dir + 2];
    for (std::size_t col = 0; col < s; ++col) {
      std::vector<double> hs(h, 0.0), cs(h, 0.0);
      for (std::size_t step = 0; step < k; ++step) {
        const std::size_t t = dir == 0 ? step : k - 1 - step;
        std::vector<double> pre(4 * h);
        for (std::size_t r = 0; r < 4 * h; ++r) {
          pre[r] = bias[r];
          for (std::size_t i = 0; i < d; ++i) pre[r] += wih.at(r, i) * x.at(i, t, col);
          for (std::size_t u = 0; u < h; ++u) pre[r] += whh.at(r, u) * hs[u];
        }
        for (std::size_t u = 0; u < h; ++u) {
          const double in = sigmoid(pre[u]), forget = sigmoid(pre[h + u]);
          const double cand = std::tanh(pre[2 * h + u]), out = sigmoid(pre[3 * h + u]);
          cs[u] = forget * cs[u] + in * cand;
          hs[u] = out * std::tanh(cs[u]);
        }
        for (std::size_t u = 0; u < h; ++u)
          worst = std::max(worst, std::abs(hs[u] - y.value().at(dir * h + u, t, col)));
      }
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("attention matches a brute-force oracle") {
  Rng rng(5);
  const std::size_t d = 4, a_len = 2, s_len = 3, heads = 2, dh = 2;
  auto q = random_tensor({d, a_len, s_len}, rng);
  auto k = random_tensor({d, a_len, s_len}, rng);
  auto v = random_tensor({d, a_len, s_len}, rng);
  Tape<double> tape;
  auto y = ops::attention(tape.constant(q), tape.constant(k), tape.constant(v), heads);
  double worst = 0;
  for (std::size_t a = 0; a < a_len; ++a)
    for (std::size_t j = 0; j < heads; ++j)
      for (std::size_t s = 0; s < s_len; ++s) {
        std::vector<double> score(s_len);
        double peak = -1e300, total = 0;
        for (std::size_t t = 0; t < s_len; ++t) {
          double acc = 0;
          for (std::size_t c = j * dh; c < (j + 1) * dh; ++c) acc += q.at(c, a, s) * k.at(c, a, t);
          score[t] = acc / std::sqrt(double(dh));
          peak = std::max(peak, score[t]);
        }
        for (auto& sc : score) total += (sc = std::exp(sc - peak));
        for (std::size_t c = j * dh; c < (j + 1) * dh; ++c) {
          double acc = 0;
          for (std::size_t t = 0; t < s_len; ++t) acc += score[t] / total * v.at(c, a, t);
          worst = std::max(worst, std::abs(acc - y.value().at(c, a, s)));
        }
      }
  CHECK(worst < 1e-12);
  CHECK_THROWS_AS(
      ops::attention(tape.constant(q), tape.constant(k), tape.constant(v), 3), ConfigError);
}

TEST_CASE("attention over a single segment copies the values") {
  // One key: every weight is exactly 1.
  Rng rng(6);
  auto q = random_tensor({4, 3, 1}, rng);
  auto k = random_tensor({4, 3, 1}, rng);
  auto v = random_tensor({4, 3, 1}, rng);
  Tape<double> tape;
  auto y = ops::attention(tape.constant(q), tape.constant(k), tape.constant(v), 2);
  CHECK(y.value() == v);
}

TEST_CASE("softmax rows sum to one and survive large logits") {
  std::vector<double> m = {1000, 1001, 1002, -5, 0, 5};
  ops::softmax_rows(m.data(), 2, 3);
  CHECK(std::abs(m[0] + m[1] + m[2] - 1.0) < 1e-15);
  CHECK(std::abs(m[3] + m[4] + m[5] - 1.0) < 1e-15);
  CHECK(m[2] > m[1]);
}

TEST_CASE("positional encoding table") {
  auto p = ops::positional_encoding<double>(5, 4);
  REQUIRE(p.shape() == Shape{4, 5});
  CHECK(p.at(0, 0) == 0.0);
  CHECK(p.at(1, 0) == 1.0);
  CHECK(std::abs(p.at(0, 3) - std::sin(3.0)) < 1e-15);
  CHECK(std::abs(p.at(3, 2) - std::cos(2.0 / 100.0)) < 1e-15);
  CHECK_THROWS_AS(ops::positional_encoding<double>(5, 3), ConfigError);
}

TEST_CASE("dropout is the identity in evaluation and unbiased in training") {
  Rng rng(8);
  Tape<double> tape;
  const std::size_t n = 1000000;
  auto x = tape.variable(Tensor<double>({n}, 1.0));
  auto same = ops::dropout(x, 0.1, rng, false);
  CHECK(same.id == x.id);
  CHECK(ops::dropout(x, 0.0, rng, true).value() == x.value());
  auto dropped = ops::dropout(x, 0.1, rng, true);
  double mean = 0;
  std::size_t zeros = 0, off_scale = 0;
  for (double v : dropped.value().values()) {
    mean += v;
    zeros += v == 0.0;
    off_scale += v != 0.0 && std::abs(v - 1.0 / 0.9) > 1e-12;
  }
  CHECK(off_scale == 0);
  CHECK(std::abs(mean / n - 1.0) < 0.01);
  CHECK(std::abs(zeros / double(n) - 0.1) < 0.002);
  CHECK_THROWS_AS(ops::dropout(x, 1.0, rng, true), ConfigError);
}

TEST_CASE("backward rules agree with finite differences") {
  Rng rng(9);
  auto check = [](const GradCheckResult& r) {
    INFO("worst " << r.worst_path << "[" << r.worst_index << "] analytic "
                  << r.worst_analytic << " numeric " << r.worst_numeric);
    CHECK(r.max_relative_error < 1e-6);
  };
  using V = std::vector<Var<double>>;

  SUBCASE("linear") {
    check(check_op({random_tensor({3, 2, 2}, rng), random_tensor({4, 3}, rng),
                    random_tensor({4}, rng)},
                   [](Tape<double>&, V& v) {
                     return ops::linear(v[0], v[1], std::optional<Var<double>>(v[2]));
                   }));
  }
  SUBCASE("layer_norm") {
    check(check_op({random_tensor({5, 3}, rng), random_tensor({5}, rng),
                    random_tensor({5}, rng)},
                   [](Tape<double>&, V& v) { return ops::layer_norm(v[0], v[1], v[2]); }));
  }
  SUBCASE("prelu away from the kink") {
    auto x = random_tensor({12}, rng);
    for (auto& e : x.storage()) e += e > 0 ? 0.1 : -0.1;
    check(check_op({x, Tensor<double>({1}, 0.3)},
                   [](Tape<double>&, V& v) { return ops::prelu(v[0], v[1]); }));
  }
  SUBCASE("conv1d") {
    auto x = random_tensor({2, 8, 3}, rng);
    check(check_op({x, random_tensor({2, 4}, rng)}, [](Tape<double>&, V& v) {
      return ops::conv1d(v[0], v[1], {4, 4, true, false});
    }));
    check(check_op({x, random_tensor({2, 2}, rng)}, [](Tape<double>&, V& v) {
      return ops::conv1d(v[0], v[1], {2, 2, true, true});
    }));
    check(check_op({x, random_tensor({3, 2, 2}, rng)}, [](Tape<double>&, V& v) {
      return ops::conv1d(v[0], v[1], {2, 2, false, false});
    }));
    check(check_op({x, random_tensor({3, 2, 2}, rng)}, [](Tape<double>&, V& v) {
      return ops::conv1d(v[0], v[1], {2, 2, false, true});
    }));
  }
  SUBCASE("bilstm") {
    std::vector<Tensor<double>> in{random_tensor({3, 4, 2}, rng)};
    for (int dir = 0; dir < 2; ++dir) {
      in.push_back(random_tensor({8, 3}, rng, 0.5));
      in.push_back(random_tensor({8, 2}, rng, 0.5));
      in.push_back(random_tensor({8}, rng, 0.5));
    }
    check(check_op(in, [](Tape<double>&, V& v) {
      return ops::bilstm(v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
    }));
  }
  SUBCASE("attention") {
    check(check_op({random_tensor({4, 2, 3}, rng), random_tensor({4, 2, 3}, rng),
                    random_tensor({4, 2, 3}, rng)},
                   [](Tape<double>&, V& v) { return ops::attention(v[0], v[1], v[2], 2); }));
  }
  SUBCASE("multi-head attention block with fixed dropout mask") {
    const std::size_t d = 4;
    std::vector<Tensor<double>> in{random_tensor({d, 2, 3}, rng)};
    for (int i = 0; i < 3; ++i) {
      in.push_back(random_tensor({d, d}, rng, 0.5));
      in.push_back(random_tensor({d}, rng, 0.5));
    }
    in.push_back(random_tensor({d, d}, rng, 0.5));
    in.push_back(random_tensor({d}, rng));
    in.push_back(random_tensor({d}, rng));
    check(check_op(in, [](Tape<double>&, V& v) {
      ops::AttentionWeights<double> w{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
      Rng mask_rng(3);
      return ops::multi_head_attention(v[0], w, {2, 0.2}, mask_rng, true);
    }));
  }
  SUBCASE("reshaping and slicing") {
    check(check_op({random_tensor({4, 6}, rng)}, [](Tape<double>&, V& v) {
      return ops::slice_rows(ops::reshape(v[0], Shape{2, 12}), 1, 1);
    }));
    auto table = random_tensor({3, 4}, rng);
    check(check_op({random_tensor({3, 2, 4}, rng)}, [table](Tape<double>&, V& v) {
      return ops::add_broadcast_middle(v[0], table);
    }));
  }
}

TEST_CASE("adam step matches a hand-computed update") {
  ParamTable<double> table;
  auto& p = table.add("w", Tensor<double>::vector({1.0, -2.0}));
  p.grad = Tensor<double>::vector({0.5, -4.0});
  AdamOptions opt;
  opt.lr = 0.1;
  opt.clip_norm = 0;  // unclipped
  auto report = adam_step(table, opt);
  CHECK(report.grad_norm == doctest::Approx(std::sqrt(0.25 + 16.0)));
  // First step: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(p.value[1] == doctest::Approx(-2.0 + 0.1 * 4.0 / (4.0 + 1e-8)).epsilon(1e-12));
  CHECK(p.grad[0] == 0.0);
  CHECK(table.adam_steps() == 1);
}

TEST_CASE("adam clips the global gradient norm") {
  ParamTable<double> table;
  auto& a = table.add("a", Tensor<double>::vector({0.0}));
  auto& b = table.add("b", Tensor<double>::vector({0.0}));
  a.grad[0] = 30.0;
  b.grad[0] = 40.0;
  AdamOptions opt;
  opt.clip_norm = 5.0;
  auto report = adam_step(table, opt);
  CHECK(report.grad_norm == doctest::Approx(50.0));
  CHECK(report.applied_norm == doctest::Approx(5.0));
  CHECK(a.moment1[0] == doctest::Approx(0.1 * 3.0));
}

TEST_CASE("adam refuses non-finite gradients without touching weights") {
  ParamTable<float> table;
  auto& a = table.add("ok", Tensor<float>::vector({1.0f}));
  auto& b = table.add("bad", Tensor<float>::vector({2.0f}));
  a.grad[0] = 1.0f;
  b.grad[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(adam_step(table, AdamOptions{}), doctest::Contains("bad"),
                       NumericError);
  CHECK(a.value[0] == 1.0f);
  CHECK(table.adam_steps() == 0);
}

TEST_CASE("param table paths are unique and ordered") {
  ParamTable<float> table;
  table.add("b", Tensor<float>({2}));
  table.add("a", Tensor<float>({3}));
  CHECK_THROWS_AS(table.add("b", Tensor<float>({1})), ConfigError);
  CHECK_THROWS_AS(table.get("missing"), ConfigError);
  CHECK(table.entries()[0].path == "b");
  CHECK(table.total_elements() == 5);
  auto copy = table;
  copy.get("a").value[0] = 9.0f;
  CHECK(table.get("a").value[0] == 0.0f);
  for (const auto& p : table.entries()) {
    CHECK(p.grad.shape() == p.value.shape());
    CHECK(p.moment1.shape() == p.value.shape());
    CHECK(p.moment2.shape() == p.value.shape());
  }
}

TEST_CASE("grad_check flags a wrong derivative") {
  ParamTable<double> table;
  table.add("x", Tensor<double>::vector({0.7, -1.3}));
  LossFunction loss = [](ParamTable<double>& t, bool with_grad) {
    auto& p = t.get("x");
    if (with_grad) {
      p.grad[0] += 2 * p.value[0];
      p.grad[1] += 3 * p.value[1];  // should be 2x
    }
    return p.value[0] * p.value[0] + p.value[1] * p.value[1];
  };
  auto r = grad_check(loss, table);
  CHECK(r.worst_path == "x");
  CHECK(r.worst_index == 1);
  CHECK(r.max_relative_error == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("tape fault injection corrupts exactly the named op") {
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>::vector({1.0, 2.0}));
  auto y = ops::sum(ops::scale(x, 3.0));
  tape.inject_backward_fault("scale");
  tape.backward(y);
  CHECK(tape.grad(x)[0] == doctest::Approx(3.75));
}

TEST_CASE("linear: small closed-form cases") {
  Tape<double> tape;
  auto w = Tensor<double>({2, 2});
  w.at(0, 0) = 1, w.at(0, 1) = 2, w.at(1, 0) = 3, w.at(1, 1) = 4;
  auto eye = Tensor<double>({2, 2});
  eye.at(0, 0) = eye.at(1, 1) = 1;
  CHECK(ops::linear(tape.constant(eye), tape.constant(w)).value() == w);
  auto y = ops::linear(tape.constant(Tensor<double>({2, 5})), tape.constant(w),
                       std::optional<Var<double>>(tape.constant(Tensor<double>::vector({1, -1}))));
  for (std::size_t p = 0; p < 5; ++p) {
    CHECK(y.value().at(0, p) == 1.0);
    CHECK(y.value().at(1, p) == -1.0);
  }
}

TEST_CASE("linear and depthwise conv are exact on integer-valued data") {
  // Small integers keep every partial sum exact, so summation order cannot matter.
  Rng rng(21);
  auto ints = [&](Shape shape) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.storage()) v = static_cast<double>(rng.below(11)) - 5.0;
    return t;
  };
  Tape<double> tape;
  auto x = ints({5, 7});
  auto w = ints({3, 5});
  auto y = ops::linear(tape.constant(x), tape.constant(w));
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t p = 0; p < 7; ++p) {
      double acc = 0;
      for (std::size_t i = 0; i < 5; ++i) acc += w.at(o, i) * x.at(i, p);
      CHECK(y.value().at(o, p) == acc);
    }
  auto seq = ints({4, 12, 3});
  auto k = ints({4, 3});
  auto z = ops::conv1d(tape.constant(seq), tape.constant(k), {3, 3, true, false});
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t s = 0; s < 3; ++s) {
        double acc = 0;
        for (std::size_t j = 0; j < 3; ++j) acc += k.at(c, j) * seq.at(c, a * 3 + j, s);
        CHECK(z.value().at(c, a, s) == acc);
      }
}

TEST_CASE("conv1d: averaging and interleaving filters") {
  Tape<double> tape;
  Tensor<double> x({2, 8, 1});
  for (std::size_t t = 0; t < 8; ++t) x.at(0, t, 0) = 1.5, x.at(1, t, 0) = -2.0;
  auto avg = ops::conv1d(tape.constant(x), tape.constant(Tensor<double>({2, 4}, 0.25)),
                         {4, 4, true, false});
  REQUIRE(avg.shape() == Shape{2, 2, 1});
  for (std::size_t a = 0; a < 2; ++a) {
    CHECK(avg.value().at(0, a, 0) == 1.5);
    CHECK(avg.value().at(1, a, 0) == -2.0);
  }
  auto short_x = Tensor<double>({1, 3, 1});
  short_x[0] = 1, short_x[1] = 2, short_x[2] = 3;
  auto up = ops::conv1d(tape.constant(short_x), tape.constant(Tensor<double>({1, 2}, {1.0, 0.0})),
                        {2, 2, true, true});
  REQUIRE(up.shape() == Shape{1, 6, 1});
  CHECK(up.value() == Tensor<double>({1, 6, 1}, {1, 0, 2, 0, 3, 0}));
}

TEST_CASE("bilstm: zero fixed point and direction symmetry") {
  const std::size_t d = 3, h = 2, k = 5;
  Tape<double> tape;
  {
    auto zero_w = [&](Shape s) { return tape.constant(Tensor<double>(std::move(s))); };
    auto y = ops::bilstm(tape.constant(Tensor<double>({d, 1, 1})), zero_w({4 * h, d}),
                         zero_w({4 * h, h}), zero_w({4 * h}), zero_w({4 * h, d}),
                         zero_w({4 * h, h}), zero_w({4 * h}));
    for (double v : y.value().values()) CHECK(v == 0.0);
  }
  Rng rng(22);
  auto x = random_tensor({d, k, 1}, rng);
  Tensor<double> rev({d, k, 1});
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t t = 0; t < k; ++t) rev.at(c, t, 0) = x.at(c, k - 1 - t, 0);
  // Same weights in both directions, so reversing time swaps the two halves.
  auto wih = tape.constant(random_tensor({4 * h, d}, rng));
  auto whh = tape.constant(random_tensor({4 * h, h}, rng));
  auto b = tape.constant(random_tensor({4 * h}, rng));
  auto y = ops::bilstm(tape.constant(x), wih, whh, b, wih, whh, b).value();
  auto yr = ops::bilstm(tape.constant(rev), wih, whh, b, wih, whh, b).value();
  double worst = 0;
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t t = 0; t < k; ++t) {
      worst = std::max(worst, std::abs(y.at(u, t, 0) - yr.at(h + u, k - 1 - t, 0)));
      worst = std::max(worst, std::abs(y.at(h + u, t, 0) - yr.at(u, k - 1 - t, 0)));
    }
  CHECK(worst < 1e-14);
}

TEST_CASE("layer_norm: degenerate and unit columns") {
  Tape<double> tape;
  auto offset = Tensor<double>::vector({0.5, -1.0, 2.0});
  auto gain = Tensor<double>::vector({3.0, 3.0, 3.0});
  auto y = ops::layer_norm(tape.constant(Tensor<double>({3, 4}, 7.0)), tape.constant(gain),
                           tape.constant(offset));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < 4; ++p) CHECK(y.value().at(c, p) == offset[c]);

  Rng rng(23);
  auto z = ops::layer_norm(tape.constant(random_tensor({16, 5}, rng, 4.0)),
                           tape.constant(Tensor<double>({16}, 1.0)),
                           tape.constant(Tensor<double>({16})));
  for (std::size_t p = 0; p < 5; ++p) {
    double mean = 0, sq = 0;
    for (std::size_t c = 0; c < 16; ++c) mean += z.value().at(c, p);
    mean /= 16;
    for (std::size_t c = 0; c < 16; ++c) sq += std::pow(z.value().at(c, p) - mean, 2);
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(sq / 16 - 1.0) < 1e-5);
  }
}

TEST_CASE("attention with one head, two channels and two segments") {
  Rng rng(24);
  auto q = random_tensor({2, 1, 2}, rng);
  auto k = random_tensor({2, 1, 2}, rng);
  auto v = random_tensor({2, 1, 2}, rng);
  Tape<double> tape;
  auto y = ops::attention(tape.constant(q), tape.constant(k), tape.constant(v), 1).value();
  for (std::size_t s = 0; s < 2; ++s) {
    const double l0 = (q.at(0, 0, s) * k.at(0, 0, 0) + q.at(1, 0, s) * k.at(1, 0, 0)) / std::sqrt(2.0);
    const double l1 = (q.at(0, 0, s) * k.at(0, 0, 1) + q.at(1, 0, s) * k.at(1, 0, 1)) / std::sqrt(2.0);
    const double w0 = 1.0 / (1.0 + std::exp(l1 - l0));
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(std::abs(y.at(c, 0, s) - (w0 * v.at(c, 0, 0) + (1 - w0) * v.at(c, 0, 1))) < 1e-6);
  }
}

TEST_CASE("softmax rows are non-negative distributions") {
  Rng rng(25);
  std::vector<double> m(7 * 9);
  for (auto& v : m) v = 10 * rng.normal();
  ops::softmax_rows(m.data(), 7, 9);
  for (std::size_t r = 0; r < 7; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 9; ++c) {
      CHECK(m[r * 9 + c] >= 0.0);
      total += m[r * 9 + c];
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("positional encoding: four channels over three segments") {
  auto p = ops::positional_encoding<double>(3, 4);
  REQUIRE(p.shape() == Shape{4, 3});
  for (std::size_t s = 0; s < 3; ++s) {
    CHECK(std::abs(p.at(0, s) - std::sin(s / std::pow(10000.0, 0.0))) < 1e-15);
    CHECK(std::abs(p.at(1, s) - std::cos(s / std::pow(10000.0, 0.0))) < 1e-15);
    CHECK(std::abs(p.at(2, s) - std::sin(s / std::pow(10000.0, 0.5))) < 1e-15);
    CHECK(std::abs(p.at(3, s) - std::cos(s / std::pow(10000.0, 0.5))) < 1e-15);
  }
  const auto wide = ops::positional_encoding<double>(50, 16);
  for (double v : wide.values()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("adam: zero gradients and the first unit step") {
  ParamTable<double> table;
  auto& p = table.add("x", Tensor<double>::vector({0.3, -0.2}));
  AdamOptions opt;
  opt.lr = 0.1;
  adam_step(table, opt);
  CHECK(p.value[0] == 0.3);
  CHECK(p.value[1] == -0.2);

  ParamTable<double> scalar;
  auto& s = scalar.add("s", Tensor<double>::vector({2.0}));
  s.grad[0] = 1.0;
  adam_step(scalar, opt);
  CHECK(s.value[0] == doctest::Approx(1.9).epsilon(1e-6));
}

TEST_CASE("adam drives x^2 to zero from x = 1 within 100 steps") {
  ParamTable<double> table;
  auto& p = table.add("x", Tensor<double>::vector({1.0}));
  AdamOptions opt;
  opt.lr = 0.1;
  opt.clip_norm = 0;
  for (int step = 0; step < 100; ++step) {
    p.grad[0] = 2 * p.value[0];
    adam_step(table, opt);
  }
  CHECK(std::abs(p.value[0]) < 0.05);
}

TEST_CASE("grad_check on closed-form losses") {
  ParamTable<double> table;
  table.add("x", Tensor<double>::vector({0.4, -1.1, 2.3}));
  LossFunction sum = [](ParamTable<double>& t, bool with_grad) {
    auto& p = t.get("x");
    if (with_grad)
      for (auto& g : p.grad.storage()) g += 1.0;
    return p.value[0] + p.value[1] + p.value[2];
  };
  CHECK(grad_check(sum, table).max_relative_error < 1e-9);

  // Symmetric A: gradient of x'Ax is 2Ax.
  const double a[3][3] = {{2.0, 0.5, -1.0}, {0.5, 3.0, 0.25}, {-1.0, 0.25, 1.5}};
  LossFunction quad = [&](ParamTable<double>& t, bool with_grad) {
    auto& p = t.get("x");
    double f = 0;
    for (int i = 0; i < 3; ++i) {
      double ax = 0;
      for (int j = 0; j < 3; ++j) ax += a[i][j] * p.value[j];
      f += p.value[i] * ax;
      if (with_grad) p.grad[i] += 2 * ax;
    }
    return f;
  };
  auto r = grad_check(quad, table);
  CHECK(r.coords_checked == 3);
  CHECK(r.max_relative_error < 1e-8);
}

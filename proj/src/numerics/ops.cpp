// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "sandglasset/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <string>

#include "sandglasset/blas.hpp"

namespace sandglasset::ops {

namespace {

template <typename Real>
Real sigmoid(Real x) {
  return Real(1) / (Real(1) + std::exp(-x));
}

// Positions per channel: product of all extents after axis 0.
std::size_t positions(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) n *= shape[i];
  return n;
}

void expect(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace

// ---- elementwise ---------------------------------------------------------

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<Real> out = a.value();
  add_into(out, b.value());
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id)) add_into(t.grad(a.id), g);
    if (t.requires_grad(b.id)) add_into(t.grad(b.id), g);
  }, "add");
}

template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  require_same_shape(a.value(), b.value(), "mul");
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<Real> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      auto& ga = t.grad(a.id);
      const auto& bv = t.value(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b.id)) {
      auto& gb = t.grad(b.id);
      const auto& av = t.value(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  }, "mul");
}

template <typename Real>
Var<Real> scale(Var<Real> a, Real factor) {
  return a.tape->push(scaled(a.value(), factor), {a},
                      [a, factor](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  }, "scale");
}

template <typename Real>
Var<Real> relu(Var<Real> x) {
  Tensor<Real> out = x.value();
  for (auto& v : out.storage()) v = v > Real(0) ? v : Real(0);
  return x.tape->push(std::move(out), {x}, [x](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(x.id);
    auto& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > Real(0)) gx[i] += g[i];
  }, "relu");
}

template <typename Real>
Var<Real> prelu(Var<Real> x, Var<Real> slope) {
  expect(slope.value().size() == 1, "prelu: slope must have one element");
  const Real a = slope.value()[0];
  Tensor<Real> out = x.value();
  for (auto& v : out.storage()) v = v > Real(0) ? v : a * v;
  return x.tape->push(std::move(out), {x, slope}, [x, slope](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(x.id);
    const Real a = t.value(slope.id)[0];
    if (t.requires_grad(x.id)) {
      auto& gx = t.grad(x.id);
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += xv[i] > Real(0) ? g[i] : a * g[i];
    }
    if (t.requires_grad(slope.id)) {
      Real acc = 0;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] <= Real(0)) acc += xv[i] * g[i];
      t.grad(slope.id)[0] += acc;
    }
  }, "prelu");
}

template <typename Real>
Var<Real> sum_scalars(const std::vector<Var<Real>>& terms) {
  expect(!terms.empty(), "sum_scalars: no terms");
  Real total = 0;
  for (const auto& v : terms) {
    expect(v.value().size() == 1, "sum_scalars: term is not a scalar");
    total += v.value()[0];
  }
  std::vector<std::size_t> ids;
  for (const auto& v : terms) ids.push_back(v.id);
  return terms.front().tape->push(Tensor<Real>({1}, total), terms,
                                  [ids](Tape<Real>& t, std::size_t self) {
    const Real g = t.grad(self)[0];
    for (auto id : ids)
      if (t.requires_grad(id)) t.grad(id)[0] += g;
  }, "sum_scalars");
}

template <typename Real>
Var<Real> sum(Var<Real> x) {
  Real total = 0;
  for (auto v : x.value().values()) total += v;
  return x.tape->push(Tensor<Real>({1}, total), {x}, [x](Tape<Real>& t, std::size_t self) {
    const Real g = t.grad(self)[0];
    for (auto& v : t.grad(x.id).storage()) v += g;
  }, "sum");
}

template <typename Real>
Var<Real> reshape(Var<Real> x, Shape shape) {
  Tensor<Real> out = x.value().reshaped(std::move(shape));
  return x.tape->push(std::move(out), {x}, [x](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  }, "reshape");
}

template <typename Real>
Var<Real> slice_rows(Var<Real> x, std::size_t begin, std::size_t count) {
  const auto& xv = x.value();
  expect(xv.rank() >= 1 && begin + count <= xv.dim(0),
         "slice_rows: rows [" + std::to_string(begin) + ", " +
             std::to_string(begin + count) + ") out of range for " +
             shape_string(xv.shape()));
  const std::size_t stride = positions(xv.shape());
  Shape shape = xv.shape();
  shape[0] = count;
  std::vector<Real> data(xv.data() + begin * stride,
                         xv.data() + (begin + count) * stride);
  return x.tape->push(Tensor<Real>(shape, std::move(data)), {x},
                      [x, begin, stride](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    Real* gx = t.grad(x.id).data() + begin * stride;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  }, "slice_rows");
}

template <typename Real>
Var<Real> add_broadcast_middle(Var<Real> x, const Tensor<Real>& table) {
  const auto& xv = x.value();
  expect(xv.rank() == 3 && table.rank() == 2 && table.dim(0) == xv.dim(0) &&
             table.dim(1) == xv.dim(2),
         "add_broadcast_middle: table " + shape_string(table.shape()) +
             " does not match " + shape_string(xv.shape()));
  const std::size_t d = xv.dim(0), a = xv.dim(1), s = xv.dim(2);
  Tensor<Real> out = xv;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < a; ++j)
      for (std::size_t k = 0; k < s; ++k) out.at(i, j, k) += table.at(i, k);
  return x.tape->push(std::move(out), {x}, [x](Tape<Real>& t, std::size_t self) {
    add_into(t.grad(x.id), t.grad(self));
  }, "add_broadcast_middle");
}

// ---- dense layers --------------------------------------------------------

template <typename Real>
Var<Real> linear(Var<Real> x, Var<Real> w, std::optional<Var<Real>> b) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  expect(wv.rank() == 2, "linear: weight must be a matrix, got " +
                             shape_string(wv.shape()));
  expect(xv.rank() >= 1 && xv.dim(0) == wv.dim(1),
         "linear: input axis 0 has " + std::to_string(xv.rank() ? xv.dim(0) : 0) +
             " channels but weight expects " + std::to_string(wv.dim(1)));
  if (b)
    expect(b->value().rank() == 1 && b->value().dim(0) == wv.dim(0),
           "linear: bias " + shape_string(b->value().shape()) +
               " does not match output channels " + std::to_string(wv.dim(0)));
  const std::size_t d_out = wv.dim(0), d_in = wv.dim(1);
  const std::size_t n = positions(xv.shape());
  Shape shape = xv.shape();
  shape[0] = d_out;
  Tensor<Real> out(shape);
  blas::gemm(false, false, d_out, n, d_in, Real(1), wv.data(), d_in, xv.data(),
             n, Real(0), out.data(), n);
  if (b) {
    const auto& bv = b->value();
    for (std::size_t o = 0; o < d_out; ++o) {
      Real* row = out.data() + o * n;
      for (std::size_t p = 0; p < n; ++p) row[p] += bv[o];
    }
  }
  std::vector<Var<Real>> inputs{x, w};
  if (b) inputs.push_back(*b);
  return x.tape->push(std::move(out), inputs,
                      [x, w, b, d_out, d_in, n](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(x.id))
      blas::gemm(true, false, d_in, n, d_out, Real(1), t.value(w.id).data(), d_in,
                 g.data(), n, Real(1), t.grad(x.id).data(), n);
    if (t.requires_grad(w.id))
      blas::gemm(false, true, d_out, d_in, n, Real(1), g.data(), n,
                 t.value(x.id).data(), n, Real(1), t.grad(w.id).data(), d_in);
    if (b && t.requires_grad(b->id)) {
      auto& gb = t.grad(b->id);
      for (std::size_t o = 0; o < d_out; ++o) {
        const Real* row = g.data() + o * n;
        Real acc = 0;
        for (std::size_t p = 0; p < n; ++p) acc += row[p];
        gb[o] += acc;
      }
    }
  }, "linear");
}

template <typename Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gain, Var<Real> offset, Real eps) {
  const auto& xv = x.value();
  expect(xv.rank() >= 1, "layer_norm: scalar input");
  const std::size_t d = xv.dim(0);
  const std::size_t n = positions(xv.shape());
  expect(gain.value().shape() == Shape{d} && offset.value().shape() == Shape{d},
         "layer_norm: gain/offset must have " + std::to_string(d) + " entries");
  if (!(eps > Real(0))) throw ConfigError("layer_norm: eps must be positive");

  auto normalized = std::make_shared<Tensor<Real>>(xv.shape());
  auto inv_std = std::make_shared<std::vector<Real>>(n, Real(0));
  std::vector<Real> mean(n, Real(0));
  for (std::size_t c = 0; c < d; ++c) {
    const Real* row = xv.data() + c * n;
    for (std::size_t p = 0; p < n; ++p) mean[p] += row[p];
  }
  for (auto& m : mean) m /= Real(d);
  std::vector<Real> var(n, Real(0));
  for (std::size_t c = 0; c < d; ++c) {
    const Real* row = xv.data() + c * n;
    for (std::size_t p = 0; p < n; ++p) {
      Real diff = row[p] - mean[p];
      var[p] += diff * diff;
    }
  }
  for (std::size_t p = 0; p < n; ++p)
    (*inv_std)[p] = Real(1) / std::sqrt(var[p] / Real(d) + eps);

  Tensor<Real> out(xv.shape());
  const auto& gv = gain.value();
  const auto& ov = offset.value();
  for (std::size_t c = 0; c < d; ++c) {
    const Real* row = xv.data() + c * n;
    Real* nrow = normalized->data() + c * n;
    Real* orow = out.data() + c * n;
    for (std::size_t p = 0; p < n; ++p) {
      nrow[p] = (row[p] - mean[p]) * (*inv_std)[p];
      orow[p] = gv[c] * nrow[p] + ov[c];
    }
  }
  return x.tape->push(std::move(out), {x, gain, offset},
                      [x, gain, offset, normalized, inv_std, d, n](Tape<Real>& t,
                                                                  std::size_t self) {
    const auto& g = t.grad(self);
    const auto& gv = t.value(gain.id);
    if (t.requires_grad(gain.id) || t.requires_grad(offset.id)) {
      auto& gg = t.grad(gain.id);
      auto& go = t.grad(offset.id);
      for (std::size_t c = 0; c < d; ++c) {
        const Real* grow = g.data() + c * n;
        const Real* nrow = normalized->data() + c * n;
        Real sg = 0, so = 0;
        for (std::size_t p = 0; p < n; ++p) {
          sg += grow[p] * nrow[p];
          so += grow[p];
        }
        gg[c] += sg;
        go[c] += so;
      }
    }
    if (!t.requires_grad(x.id)) return;
    std::vector<Real> mean_dn(n, Real(0)), mean_dn_n(n, Real(0));
    for (std::size_t c = 0; c < d; ++c) {
      const Real* grow = g.data() + c * n;
      const Real* nrow = normalized->data() + c * n;
      for (std::size_t p = 0; p < n; ++p) {
        Real dn = grow[p] * gv[c];
        mean_dn[p] += dn;
        mean_dn_n[p] += dn * nrow[p];
      }
    }
    for (std::size_t p = 0; p < n; ++p) {
      mean_dn[p] /= Real(d);
      mean_dn_n[p] /= Real(d);
    }
    auto& gx = t.grad(x.id);
    for (std::size_t c = 0; c < d; ++c) {
      const Real* grow = g.data() + c * n;
      const Real* nrow = normalized->data() + c * n;
      Real* xrow = gx.data() + c * n;
      for (std::size_t p = 0; p < n; ++p)
        xrow[p] += (*inv_std)[p] *
                   (grow[p] * gv[c] - mean_dn[p] - nrow[p] * mean_dn_n[p]);
    }
  }, "layer_norm");
}

// ---- convolution ---------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t channels_in, channels_out, length_in, length_out, columns;
};

// Scatters/gathers between the short axis (length_short) and the long axis
// for one tap j: long index = a * stride + j.
template <typename Real>
void depthwise_forward(const Real* x, const Real* w, Real* y,
                       const ConvGeometry& geo, const Conv1dSpec& spec) {
  const std::size_t k = spec.kernel_size;
  const std::size_t b = geo.columns;
  for (std::size_t c = 0; c < geo.channels_in; ++c) {
    const Real* xc = x + c * geo.length_in * b;
    Real* yc = y + c * geo.length_out * b;
    const Real* wc = w + c * k;
    if (!spec.transposed) {
      for (std::size_t a = 0; a < geo.length_out; ++a)
        for (std::size_t j = 0; j < k; ++j) {
          const Real* src = xc + (a * spec.stride + j) * b;
          Real* dst = yc + a * b;
          for (std::size_t s = 0; s < b; ++s) dst[s] += wc[j] * src[s];
        }
    } else {
      for (std::size_t a = 0; a < geo.length_in; ++a)
        for (std::size_t j = 0; j < k; ++j) {
          const Real* src = xc + a * b;
          Real* dst = yc + (a * spec.stride + j) * b;
          for (std::size_t s = 0; s < b; ++s) dst[s] += wc[j] * src[s];
        }
    }
  }
}

template <typename Real>
void depthwise_backward(const Real* x, const Real* w, const Real* gy, Real* gx,
                        Real* gw, const ConvGeometry& geo,
                        const Conv1dSpec& spec) {
  const std::size_t k = spec.kernel_size;
  const std::size_t b = geo.columns;
  for (std::size_t c = 0; c < geo.channels_in; ++c) {
    const Real* xc = x + c * geo.length_in * b;
    const Real* gyc = gy + c * geo.length_out * b;
    Real* gxc = gx ? gx + c * geo.length_in * b : nullptr;
    const Real* wc = w + c * k;
    // The long-axis tensor is x for DS and y for US.
    const std::size_t short_len = spec.transposed ? geo.length_in : geo.length_out;
    for (std::size_t a = 0; a < short_len; ++a)
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t long_idx = a * spec.stride + j;
        const Real* xs = spec.transposed ? xc + a * b : xc + long_idx * b;
        const Real* gs = spec.transposed ? gyc + long_idx * b : gyc + a * b;
        Real acc = 0;
        for (std::size_t s = 0; s < b; ++s) acc += gs[s] * xs[s];
        if (gw) gw[c * k + j] += acc;
        if (gxc) {
          Real* gxs = spec.transposed ? gxc + a * b : gxc + long_idx * b;
          for (std::size_t s = 0; s < b; ++s) gxs[s] += wc[j] * gs[s];
        }
      }
  }
}

// Dense kernel w[o][i][j].
template <typename Real>
void dense_forward(const Real* x, const Real* w, Real* y,
                   const ConvGeometry& geo, const Conv1dSpec& spec) {
  const std::size_t k = spec.kernel_size;
  const std::size_t b = geo.columns;
  const std::size_t short_len = spec.transposed ? geo.length_in : geo.length_out;
  for (std::size_t o = 0; o < geo.channels_out; ++o)
    for (std::size_t i = 0; i < geo.channels_in; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const Real wv = w[(o * geo.channels_in + i) * k + j];
        for (std::size_t a = 0; a < short_len; ++a) {
          const std::size_t long_idx = a * spec.stride + j;
          const Real* src = x + (i * geo.length_in +
                                 (spec.transposed ? a : long_idx)) * b;
          Real* dst = y + (o * geo.length_out +
                           (spec.transposed ? long_idx : a)) * b;
          for (std::size_t s = 0; s < b; ++s) dst[s] += wv * src[s];
        }
      }
}

template <typename Real>
void dense_backward(const Real* x, const Real* w, const Real* gy, Real* gx,
                    Real* gw, const ConvGeometry& geo, const Conv1dSpec& spec) {
  const std::size_t k = spec.kernel_size;
  const std::size_t b = geo.columns;
  const std::size_t short_len = spec.transposed ? geo.length_in : geo.length_out;
  for (std::size_t o = 0; o < geo.channels_out; ++o)
    for (std::size_t i = 0; i < geo.channels_in; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t widx = (o * geo.channels_in + i) * k + j;
        Real acc = 0;
        for (std::size_t a = 0; a < short_len; ++a) {
          const std::size_t long_idx = a * spec.stride + j;
          const std::size_t xi = (i * geo.length_in + (spec.transposed ? a : long_idx)) * b;
          const std::size_t yi = (o * geo.length_out + (spec.transposed ? long_idx : a)) * b;
          for (std::size_t s = 0; s < b; ++s) {
            acc += gy[yi + s] * x[xi + s];
            if (gx) gx[xi + s] += w[widx] * gy[yi + s];
          }
        }
        if (gw) gw[widx] += acc;
      }
}

}  // namespace

template <typename Real>
Var<Real> conv1d(Var<Real> x, Var<Real> kernel, const Conv1dSpec& spec) {
  if (spec.stride == 0) throw ConfigError("conv1d: stride must be positive");
  if (spec.kernel_size == 0) throw ConfigError("conv1d: kernel_size must be positive");
  const auto& xv = x.value();
  const auto& wv = kernel.value();
  expect(xv.rank() == 2 || xv.rank() == 3,
         "conv1d: input must be D x A or D x A x B, got " + shape_string(xv.shape()));
  ConvGeometry geo{};
  geo.channels_in = xv.dim(0);
  geo.length_in = xv.dim(1);
  geo.columns = xv.rank() == 3 ? xv.dim(2) : 1;
  if (spec.depthwise) {
    expect(wv.shape() == Shape{geo.channels_in, spec.kernel_size},
           "conv1d: depthwise kernel must be " +
               shape_string({geo.channels_in, spec.kernel_size}) + ", got " +
               shape_string(wv.shape()));
    geo.channels_out = geo.channels_in;
  } else {
    expect(wv.rank() == 3 && wv.dim(1) == geo.channels_in && wv.dim(2) == spec.kernel_size,
           "conv1d: dense kernel must be D_out x " + std::to_string(geo.channels_in) +
               " x " + std::to_string(spec.kernel_size) + ", got " +
               shape_string(wv.shape()));
    geo.channels_out = wv.dim(0);
  }
  if (spec.transposed) {
    expect(geo.length_in >= 1, "conv1d: empty input");
    geo.length_out = (geo.length_in - 1) * spec.stride + spec.kernel_size;
  } else {
    if (geo.length_in < spec.kernel_size ||
        (geo.length_in - spec.kernel_size) % spec.stride != 0)
      throw LayoutError("conv1d: axis length " + std::to_string(geo.length_in) +
                        " is not covered by kernel " +
                        std::to_string(spec.kernel_size) + " at stride " +
                        std::to_string(spec.stride));
    geo.length_out = (geo.length_in - spec.kernel_size) / spec.stride + 1;
  }
  Shape shape = xv.rank() == 3 ? Shape{geo.channels_out, geo.length_out, geo.columns}
                               : Shape{geo.channels_out, geo.length_out};
  Tensor<Real> out(shape);
  if (spec.depthwise)
    depthwise_forward(xv.data(), wv.data(), out.data(), geo, spec);
  else
    dense_forward(xv.data(), wv.data(), out.data(), geo, spec);
  return x.tape->push(std::move(out), {x, kernel},
                      [x, kernel, geo, spec](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    Real* gx = t.requires_grad(x.id) ? t.grad(x.id).data() : nullptr;
    Real* gw = t.requires_grad(kernel.id) ? t.grad(kernel.id).data() : nullptr;
    if (spec.depthwise)
      depthwise_backward(t.value(x.id).data(), t.value(kernel.id).data(),
                         g.data(), gx, gw, geo, spec);
    else
      dense_backward(t.value(x.id).data(), t.value(kernel.id).data(), g.data(),
                     gx, gw, geo, spec);
  }, "conv1d");
}

// ---- LSTM ----------------------------------------------------------------

namespace {

// Per-direction activations kept for the backward pass.
template <typename Real>
struct LstmTrace {
  std::vector<Real> gates;  // activated i, f, g, o: [4H, K*S]
  std::vector<Real> cells;  // [H, K*S]
};

// Runs one direction. `h_out` points at this direction's H rows of the
// 2H x K x S output (row stride K*S).
template <typename Real>
void lstm_direction_forward(const Tensor<Real>& x, const Tensor<Real>& w_ih,
                            const Tensor<Real>& w_hh, const Tensor<Real>& bias,
                            bool reverse, Real* h_out, LstmTrace<Real>& trace) {
  const std::size_t d = x.dim(0), steps = x.dim(1), batch = x.dim(2);
  const std::size_t h = w_hh.dim(1);
  const std::size_t n = steps * batch;
  trace.gates.assign(4 * h * n, Real(0));
  trace.cells.assign(h * n, Real(0));
  Real* gates = trace.gates.data();
  blas::gemm(false, false, 4 * h, n, d, Real(1), w_ih.data(), d, x.data(), n,
             Real(0), gates, n);
  for (std::size_t r = 0; r < 4 * h; ++r) {
    Real* row = gates + r * n;
    for (std::size_t p = 0; p < n; ++p) row[p] += bias[r];
  }
  for (std::size_t step = 0; step < steps; ++step) {
    const std::size_t k = reverse ? steps - 1 - step : step;
    const std::size_t off = k * batch;
    if (step > 0) {
      const std::size_t prev = (reverse ? k + 1 : k - 1) * batch;
      blas::gemm(false, false, 4 * h, batch, h, Real(1), w_hh.data(), h,
                 h_out + prev, n, Real(1), gates + off, n);
    }
    for (std::size_t u = 0; u < h; ++u) {
      Real* gi = gates + u * n + off;
      Real* gf = gates + (h + u) * n + off;
      Real* gg = gates + (2 * h + u) * n + off;
      Real* go = gates + (3 * h + u) * n + off;
      Real* c = trace.cells.data() + u * n + off;
      Real* hh = h_out + u * n + off;
      const Real* c_prev =
          step > 0 ? trace.cells.data() + u * n + (reverse ? k + 1 : k - 1) * batch
                   : nullptr;
      for (std::size_t s = 0; s < batch; ++s) {
        gi[s] = sigmoid(gi[s]);
        gf[s] = sigmoid(gf[s]);
        gg[s] = std::tanh(gg[s]);
        go[s] = sigmoid(go[s]);
        c[s] = gi[s] * gg[s] + (c_prev ? gf[s] * c_prev[s] : Real(0));
        hh[s] = go[s] * std::tanh(c[s]);
      }
    }
  }
}

template <typename Real>
void lstm_direction_backward(const Tensor<Real>& x, const Tensor<Real>& w_ih,
                             const Tensor<Real>& w_hh, bool reverse,
                             const Real* h_out, const Real* g_out,
                             const LstmTrace<Real>& trace, Real* gx, Real* gw_ih,
                             Real* gw_hh, Real* gbias) {
  const std::size_t d = x.dim(0), steps = x.dim(1), batch = x.dim(2);
  const std::size_t h = w_hh.dim(1);
  const std::size_t n = steps * batch;
  std::vector<Real> dgates(4 * h * n, Real(0));
  std::vector<Real> dh_next(h * batch, Real(0)), dc_next(h * batch, Real(0));
  const Real* gates = trace.gates.data();
  for (std::size_t step = steps; step-- > 0;) {
    const std::size_t k = reverse ? steps - 1 - step : step;
    const std::size_t off = k * batch;
    const bool has_prev = step > 0;
    const std::size_t prev_off = has_prev ? (reverse ? k + 1 : k - 1) * batch : 0;
    for (std::size_t u = 0; u < h; ++u) {
      const Real* gi = gates + u * n + off;
      const Real* gf = gates + (h + u) * n + off;
      const Real* gg = gates + (2 * h + u) * n + off;
      const Real* go = gates + (3 * h + u) * n + off;
      const Real* c = trace.cells.data() + u * n + off;
      const Real* c_prev = has_prev ? trace.cells.data() + u * n + prev_off : nullptr;
      const Real* dout = g_out + u * n + off;
      Real* di = dgates.data() + u * n + off;
      Real* df = dgates.data() + (h + u) * n + off;
      Real* dg = dgates.data() + (2 * h + u) * n + off;
      Real* dop = dgates.data() + (3 * h + u) * n + off;
      Real* dhn = dh_next.data() + u * batch;
      Real* dcn = dc_next.data() + u * batch;
      for (std::size_t s = 0; s < batch; ++s) {
        const Real dh = dout[s] + dhn[s];
        const Real tc = std::tanh(c[s]);
        const Real dc = dh * go[s] * (Real(1) - tc * tc) + dcn[s];
        dop[s] = dh * tc * go[s] * (Real(1) - go[s]);
        di[s] = dc * gg[s] * gi[s] * (Real(1) - gi[s]);
        dg[s] = dc * gi[s] * (Real(1) - gg[s] * gg[s]);
        df[s] = c_prev ? dc * c_prev[s] * gf[s] * (Real(1) - gf[s]) : Real(0);
        dcn[s] = dc * gf[s];
      }
    }
    if (has_prev) {
      // dh_prev = W_hh^T * dgates_k ; dW_hh += dgates_k * h_prev^T
      blas::gemm(true, false, h, batch, 4 * h, Real(1), w_hh.data(), h,
                 dgates.data() + off, n, Real(0), dh_next.data(), batch);
      if (gw_hh)
        blas::gemm(false, true, 4 * h, h, batch, Real(1), dgates.data() + off, n,
                   h_out + prev_off, n, Real(1), gw_hh, h);
    }
  }
  if (gw_ih)
    blas::gemm(false, true, 4 * h, d, n, Real(1), dgates.data(), n, x.data(), n,
               Real(1), gw_ih, d);
  if (gx)
    blas::gemm(true, false, d, n, 4 * h, Real(1), w_ih.data(), d, dgates.data(),
               n, Real(1), gx, n);
  if (gbias)
    for (std::size_t r = 0; r < 4 * h; ++r) {
      const Real* row = dgates.data() + r * n;
      Real acc = 0;
      for (std::size_t p = 0; p < n; ++p) acc += row[p];
      gbias[r] += acc;
    }
}

template <typename Real>
void check_lstm_weights(const Tensor<Real>& w_ih, const Tensor<Real>& w_hh,
                        const Tensor<Real>& bias, std::size_t d,
                        const char* which) {
  const std::size_t h = w_hh.rank() == 2 ? w_hh.dim(1) : 0;
  expect(h > 0 && w_hh.shape() == Shape{4 * h, h},
         std::string("bilstm: ") + which + " w_hh must be 4H x H, got " +
             shape_string(w_hh.shape()));
  expect(w_ih.shape() == Shape{4 * h, d},
         std::string("bilstm: ") + which + " w_ih must be " +
             shape_string({4 * h, d}) + ", got " + shape_string(w_ih.shape()));
  expect(bias.shape() == Shape{4 * h},
         std::string("bilstm: ") + which + " bias must be " +
             shape_string({4 * h}) + ", got " + shape_string(bias.shape()));
}

}  // namespace

template <typename Real>
Var<Real> bilstm(Var<Real> x, Var<Real> fwd_w_ih, Var<Real> fwd_w_hh,
                 Var<Real> fwd_bias, Var<Real> bwd_w_ih, Var<Real> bwd_w_hh,
                 Var<Real> bwd_bias) {
  const auto& xv = x.value();
  expect(xv.rank() == 3 && xv.dim(1) >= 1,
         "bilstm: input must be D x K x S with K >= 1, got " + shape_string(xv.shape()));
  const std::size_t d = xv.dim(0), steps = xv.dim(1), batch = xv.dim(2);
  check_lstm_weights(fwd_w_ih.value(), fwd_w_hh.value(), fwd_bias.value(), d, "forward");
  check_lstm_weights(bwd_w_ih.value(), bwd_w_hh.value(), bwd_bias.value(), d, "backward");
  const std::size_t h = fwd_w_hh.value().dim(1);
  expect(bwd_w_hh.value().dim(1) == h, "bilstm: directions disagree on H");
  const std::size_t n = steps * batch;

  Tensor<Real> out({2 * h, steps, batch});
  auto traces = std::make_shared<std::array<LstmTrace<Real>, 2>>();
  lstm_direction_forward(xv, fwd_w_ih.value(), fwd_w_hh.value(), fwd_bias.value(),
                         false, out.data(), (*traces)[0]);
  lstm_direction_forward(xv, bwd_w_ih.value(), bwd_w_hh.value(), bwd_bias.value(),
                         true, out.data() + h * n, (*traces)[1]);
  if (!x.tape->recording()) traces.reset();

  return x.tape->push(std::move(out),
                      {x, fwd_w_ih, fwd_w_hh, fwd_bias, bwd_w_ih, bwd_w_hh, bwd_bias},
                      [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& out = t.value(self);
    Real* gx = t.requires_grad(x.id) ? t.grad(x.id).data() : nullptr;
    const Var<Real> w_ih[2] = {fwd_w_ih, bwd_w_ih};
    const Var<Real> w_hh[2] = {fwd_w_hh, bwd_w_hh};
    const Var<Real> bias[2] = {fwd_bias, bwd_bias};
    for (int dir = 0; dir < 2; ++dir) {
      auto grad_of = [&t](Var<Real> v) {
        return t.requires_grad(v.id) ? t.grad(v.id).data() : nullptr;
      };
      lstm_direction_backward(t.value(x.id), t.value(w_ih[dir].id),
                              t.value(w_hh[dir].id), dir == 1,
                              out.data() + dir * h * n, g.data() + dir * h * n,
                              (*traces)[dir], gx, grad_of(w_ih[dir]),
                              grad_of(w_hh[dir]), grad_of(bias[dir]));
    }
  }, "bilstm");
}

// ---- attention -----------------------------------------------------------

template <typename Real>
void softmax_rows(Real* data, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    Real* row = data + r * cols;
    Real peak = *std::max_element(row, row + cols);
    Real total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - peak);
      total += row[c];
    }
    const Real inv = Real(1) / total;
    for (std::size_t c = 0; c < cols; ++c) row[c] *= inv;
  }
}

template <typename Real>
Var<Real> attention(Var<Real> q, Var<Real> k, Var<Real> v, std::size_t heads) {
  const auto& qv = q.value();
  expect(qv.rank() == 3, "attention: inputs must be D x A x S, got " +
                             shape_string(qv.shape()));
  require_same_shape(qv, k.value(), "attention: q vs k");
  require_same_shape(qv, v.value(), "attention: q vs v");
  const std::size_t d = qv.dim(0), a_len = qv.dim(1), s_len = qv.dim(2);
  if (heads == 0 || d % heads != 0)
    throw ConfigError("attention: channel count " + std::to_string(d) +
                      " is not divisible by head count " + std::to_string(heads));
  const std::size_t dh = d / heads;
  const std::size_t ld = a_len * s_len;
  const Real scale = Real(1) / std::sqrt(Real(dh));

  // Attention weights for every (a, head): [A, heads, S, S].
  auto probs = std::make_shared<std::vector<Real>>(a_len * heads * s_len * s_len);
  Tensor<Real> out(qv.shape());
  const Real* kp = k.value().data();
  const Real* vp = v.value().data();
  for (std::size_t a = 0; a < a_len; ++a)
    for (std::size_t j = 0; j < heads; ++j) {
      const std::size_t off = j * dh * ld + a * s_len;
      Real* p = probs->data() + (a * heads + j) * s_len * s_len;
      blas::gemm(true, false, s_len, s_len, dh, scale, qv.data() + off, ld,
                 kp + off, ld, Real(0), p, s_len);
      softmax_rows(p, s_len, s_len);
      blas::gemm(false, true, dh, s_len, s_len, Real(1), vp + off, ld, p, s_len,
                 Real(0), out.data() + off, ld);
    }
  return q.tape->push(std::move(out), {q, k, v},
                      [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const Real* qd = t.value(q.id).data();
    const Real* kd = t.value(k.id).data();
    const Real* vd = t.value(v.id).data();
    Real* gq = t.requires_grad(q.id) ? t.grad(q.id).data() : nullptr;
    Real* gk = t.requires_grad(k.id) ? t.grad(k.id).data() : nullptr;
    Real* gv = t.requires_grad(v.id) ? t.grad(v.id).data() : nullptr;
    std::vector<Real> dp(s_len * s_len);
    for (std::size_t a = 0; a < a_len; ++a)
      for (std::size_t j = 0; j < heads; ++j) {
        const std::size_t off = j * dh * ld + a * s_len;
        const Real* p = probs->data() + (a * heads + j) * s_len * s_len;
        if (gv)
          blas::gemm(false, false, dh, s_len, s_len, Real(1), g.data() + off, ld,
                     p, s_len, Real(1), gv + off, ld);
        if (!gq && !gk) continue;
        blas::gemm(true, false, s_len, s_len, dh, Real(1), g.data() + off, ld,
                   vd + off, ld, Real(0), dp.data(), s_len);
        for (std::size_t r = 0; r < s_len; ++r) {
          Real* row = dp.data() + r * s_len;
          const Real* prow = p + r * s_len;
          Real dot = 0;
          for (std::size_t c = 0; c < s_len; ++c) dot += row[c] * prow[c];
          for (std::size_t c = 0; c < s_len; ++c) row[c] = prow[c] * (row[c] - dot);
        }
        if (gq)
          blas::gemm(false, true, dh, s_len, s_len, scale, kd + off, ld,
                     dp.data(), s_len, Real(1), gq + off, ld);
        if (gk)
          blas::gemm(false, false, dh, s_len, s_len, scale, qd + off, ld,
                     dp.data(), s_len, Real(1), gk + off, ld);
      }
  }, "attention");
}

template <typename Real>
Var<Real> dropout(Var<Real> x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const Real keep_scale = Real(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<Real>>(x.value().size());
  Tensor<Real> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? Real(0) : keep_scale;
    out[i] *= (*mask)[i];
  }
  return x.tape->push(std::move(out), {x}, [x, mask](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += (*mask)[i] * g[i];
  }, "dropout");
}

template <typename Real>
Var<Real> multi_head_attention(Var<Real> x, const AttentionWeights<Real>& w,
                               const AttentionParams& params, Rng& rng,
                               bool training) {
  const std::size_t d = x.value().dim(0);
  if (params.heads == 0 || d % params.heads != 0)
    throw ConfigError("multi_head_attention: D = " + std::to_string(d) +
                      " is not divisible by J = " + std::to_string(params.heads));
  Var<Real> q = linear(x, w.w_q, std::optional<Var<Real>>(w.b_q));
  Var<Real> k = linear(x, w.w_k, std::optional<Var<Real>>(w.b_k));
  Var<Real> v = linear(x, w.w_v, std::optional<Var<Real>>(w.b_v));
  Var<Real> heads = attention(q, k, v, params.heads);
  Var<Real> mixed = linear(heads, w.w_out);
  Var<Real> dropped = dropout(mixed, params.dropout, rng, training);
  return layer_norm(add(x, dropped), w.ln_gain, w.ln_offset);
}

template <typename Real>
Tensor<Real> positional_encoding(std::size_t length, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0)
    throw ConfigError("positional_encoding: dimension must be even, got " +
                      std::to_string(dim));
  Tensor<Real> table({dim, length});
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                              static_cast<double>(dim));
    for (std::size_t s = 0; s < length; ++s) {
      const double angle = static_cast<double>(s) * freq;
      table.at(2 * i, s) = static_cast<Real>(std::sin(angle));
      table.at(2 * i + 1, s) = static_cast<Real>(std::cos(angle));
    }
  }
  return table;
}

#define SANDGLASSET_INSTANTIATE(Real)                                          \
  template Var<Real> add(Var<Real>, Var<Real>);                                \
  template Var<Real> mul(Var<Real>, Var<Real>);                                \
  template Var<Real> scale(Var<Real>, Real);                                   \
  template Var<Real> relu(Var<Real>);                                          \
  template Var<Real> prelu(Var<Real>, Var<Real>);                              \
  template Var<Real> sum_scalars(const std::vector<Var<Real>>&);               \
  template Var<Real> sum(Var<Real>);                                           \
  template Var<Real> reshape(Var<Real>, Shape);                                \
  template Var<Real> slice_rows(Var<Real>, std::size_t, std::size_t);          \
  template Var<Real> add_broadcast_middle(Var<Real>, const Tensor<Real>&);     \
  template Var<Real> linear(Var<Real>, Var<Real>, std::optional<Var<Real>>);   \
  template Var<Real> layer_norm(Var<Real>, Var<Real>, Var<Real>, Real);        \
  template Var<Real> conv1d(Var<Real>, Var<Real>, const Conv1dSpec&);          \
  template Var<Real> bilstm(Var<Real>, Var<Real>, Var<Real>, Var<Real>,        \
                            Var<Real>, Var<Real>, Var<Real>);                  \
  template Var<Real> attention(Var<Real>, Var<Real>, Var<Real>, std::size_t);  \
  template Var<Real> dropout(Var<Real>, double, Rng&, bool);                   \
  template Var<Real> multi_head_attention(Var<Real>, const AttentionWeights<Real>&, \
                                          const AttentionParams&, Rng&, bool); \
  template Tensor<Real> positional_encoding<Real>(std::size_t, std::size_t);   \
  template void softmax_rows(Real*, std::size_t, std::size_t);

SANDGLASSET_INSTANTIATE(float)
SANDGLASSET_INSTANTIATE(double)

#undef SANDGLASSET_INSTANTIATE

}  // namespace sandglasset::ops

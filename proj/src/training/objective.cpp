// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include "sandglasset/ops.hpp"
#include "sandglasset/training.hpp"

namespace sandglasset::training {

namespace {

struct Projection {
  std::vector<double> target;  // s_t
  std::vector<double> error;   // e
  double target_energy = 0.0;
  double error_energy = 0.0;
  double db = 0.0;
  bool clamped = false;
};

template <typename Real>
std::vector<double> centred(std::span<const Real> x) {
  double mean = 0.0;
  for (Real v : x) mean += static_cast<double>(v);
  mean /= static_cast<double>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(x[i]) - mean;
  return out;
}

template <typename Real>
Projection project(std::span<const Real> estimate, std::span<const Real> reference) {
  if (estimate.size() != reference.size())
    throw DimensionError("si_snr: estimate has " + std::to_string(estimate.size()) +
                         " samples, reference has " + std::to_string(reference.size()));
  if (estimate.empty()) throw DimensionError("si_snr: empty signals");
  const auto est = centred(estimate);
  const auto ref = centred(reference);
  double ref_energy = 0.0, dot = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ref_energy += ref[i] * ref[i];
    dot += est[i] * ref[i];
  }
  if (!(ref_energy > 0.0))
    throw DomainError("si_snr: reference has zero variance");
  Projection p;
  const double alpha = dot / ref_energy;
  p.target.resize(ref.size());
  p.error.resize(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    p.target[i] = alpha * ref[i];
    p.error[i] = est[i] - p.target[i];
    p.target_energy += p.target[i] * p.target[i];
    p.error_energy += p.error[i] * p.error[i];
  }
  // Silent estimate: both energies vanish; it scores the floor.
  if (p.target_energy <= 0.0) {
    p.db = -kSiSnrCeiling;
    p.clamped = true;
  } else if (p.error_energy <= 0.0) {
    p.db = kSiSnrCeiling;
    p.clamped = true;
  } else {
    p.db = 10.0 * std::log10(p.target_energy / p.error_energy);
    if (std::abs(p.db) >= kSiSnrCeiling) {
      p.db = std::clamp(p.db, -kSiSnrCeiling, kSiSnrCeiling);
      p.clamped = true;
    }
  }
  return p;
}

void check_source_count(std::size_t c) {
  if (c < 2 || c > kMaxSources)
    throw ConfigError("uPIT supports 2 to " + std::to_string(kMaxSources) +
                      " sources, got " + std::to_string(c));
}

}  // namespace

template <typename Real>
double si_snr(std::span<const Real> estimate, std::span<const Real> reference) {
  return project(estimate, reference).db;
}

template <typename Real>
Var<Real> si_snr_var(Var<Real> estimate, const Tensor<Real>& reference) {
  Projection p = project<Real>(estimate.value().values(), reference.values());
  Tensor<Real> out({1}, static_cast<Real>(p.db));
  auto shared = std::make_shared<Projection>(std::move(p));
  return estimate.tape->push(std::move(out), {estimate},
                             [estimate, shared](Tape<Real>& t, std::size_t self) {
    const Projection& pr = *shared;
    if (pr.clamped) return;
    // d/de of 10 log10(|s_t|^2 / |e|^2) with both terms linear in the
    // centred estimate; both are zero-mean so centring passes through.
    const double g = static_cast<double>(t.grad(self)[0]) * 20.0 / std::log(10.0);
    const double a = g / pr.target_energy, b = g / pr.error_energy;
    auto& ge = t.grad(estimate.id);
    for (std::size_t i = 0; i < ge.size(); ++i)
      ge[i] += static_cast<Real>(a * pr.target[i] - b * pr.error[i]);
  }, "si_snr");
}

Assignment best_assignment(const std::vector<std::vector<double>>& pairwise) {
  const std::size_t c = pairwise.size();
  check_source_count(c);
  for (const auto& row : pairwise)
    if (row.size() != c) throw DimensionError("best_assignment: table must be C x C");
  std::vector<std::size_t> perm(c);
  std::iota(perm.begin(), perm.end(), 0);
  Assignment best;
  bool first = true;
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < c; ++i) total += pairwise[i][perm[i]];
    const double mean = total / static_cast<double>(c);
    if (first || mean > best.mean_si_snr) {
      best.perm = perm;
      best.mean_si_snr = mean;
      first = false;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

template <typename Real>
std::vector<std::vector<double>> pairwise_si_snr(
    const std::vector<std::vector<Real>>& estimates,
    const std::vector<std::vector<Real>>& references) {
  if (estimates.size() != references.size())
    throw DimensionError("pairwise_si_snr: " + std::to_string(estimates.size()) +
                         " estimates vs " + std::to_string(references.size()) +
                         " references");
  std::vector<std::vector<double>> table(estimates.size(),
                                         std::vector<double>(references.size()));
  for (std::size_t i = 0; i < estimates.size(); ++i)
    for (std::size_t j = 0; j < references.size(); ++j)
      table[i][j] = si_snr<Real>(estimates[i], references[j]);
  return table;
}

template <typename Real>
UpitLoss<Real> upit_loss(const std::vector<Var<Real>>& estimates,
                         const std::vector<Tensor<Real>>& references) {
  check_source_count(estimates.size());
  if (estimates.size() != references.size())
    throw DimensionError("upit_loss: estimate and reference counts differ");
  const std::size_t c = estimates.size();
  std::vector<std::vector<double>> table(c, std::vector<double>(c));
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      table[i][j] = si_snr<Real>(estimates[i].value().values(), references[j].values());
  UpitLoss<Real> out;
  out.assignment = best_assignment(table);
  std::vector<Var<Real>> terms;
  for (std::size_t i = 0; i < c; ++i)
    terms.push_back(si_snr_var(estimates[i], references[out.assignment.perm[i]]));
  out.loss = ops::scale(ops::sum_scalars(terms), static_cast<Real>(-1.0 / c));
  return out;
}

template <typename Real>
double si_snr_improvement(std::span<const Real> estimate, std::span<const Real> reference,
                          std::span<const Real> mixture) {
  return si_snr(estimate, reference) - si_snr(mixture, reference);
}

double mean_improvement(const std::vector<std::vector<float>>& estimates,
                        const std::vector<std::vector<float>>& references,
                        std::span<const float> mixture) {
  const Assignment a = best_assignment(pairwise_si_snr(estimates, references));
  double total = 0.0;
  for (std::size_t i = 0; i < estimates.size(); ++i)
    total += si_snr_improvement<float>(estimates[i], references[a.perm[i]], mixture);
  return total / static_cast<double>(estimates.size());
}

#define SANDGLASSET_INSTANTIATE(Real)                                              \
  template double si_snr(std::span<const Real>, std::span<const Real>);            \
  template Var<Real> si_snr_var(Var<Real>, const Tensor<Real>&);                   \
  template std::vector<std::vector<double>> pairwise_si_snr(                       \
      const std::vector<std::vector<Real>>&, const std::vector<std::vector<Real>>&); \
  template UpitLoss<Real> upit_loss(const std::vector<Var<Real>>&,                 \
                                    const std::vector<Tensor<Real>>&);             \
  template double si_snr_improvement(std::span<const Real>, std::span<const Real>, \
                                     std::span<const Real>);

SANDGLASSET_INSTANTIATE(float)
SANDGLASSET_INSTANTIATE(double)

#undef SANDGLASSET_INSTANTIATE

}  // namespace sandglasset::training

// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>

#include "sandglasset/tensor.hpp"

namespace sandglasset {

template <typename Real>
struct Parameter {
  std::string path;
  Tensor<Real> value;
  Tensor<Real> grad;
  // Adam first and second moments.
  Tensor<Real> moment1;
  Tensor<Real> moment2;
};

// Learnable weights keyed by a dotted path ("block3.lstm.fwd.w_ih").
// Iteration order is insertion order; entries have stable addresses.
template <typename Real>
class ParamTable {
 public:
  ParamTable() = default;
  ParamTable(const ParamTable& other) { *this = other; }
  ParamTable& operator=(const ParamTable& other) {
    entries_ = other.entries_;
    adam_steps_ = other.adam_steps_;
    rebuild_index();
    return *this;
  }
  ParamTable(ParamTable&&) = default;
  ParamTable& operator=(ParamTable&&) = default;

  Parameter<Real>& add(std::string path, Tensor<Real> value) {
    if (index_.count(path))
      throw ConfigError("duplicate parameter path '" + path + "'");
    Shape shape = value.shape();
    entries_.push_back(Parameter<Real>{path, std::move(value), Tensor<Real>(shape),
                                       Tensor<Real>(shape), Tensor<Real>(shape)});
    index_.emplace(std::move(path), entries_.size() - 1);
    return entries_.back();
  }

  bool contains(std::string_view path) const {
    return index_.count(std::string(path)) != 0;
  }

  Parameter<Real>& get(std::string_view path) {
    auto it = index_.find(std::string(path));
    if (it == index_.end())
      throw ConfigError("unknown parameter path '" + std::string(path) + "'");
    return entries_[it->second];
  }
  const Parameter<Real>& get(std::string_view path) const {
    return const_cast<ParamTable*>(this)->get(path);
  }

  std::deque<Parameter<Real>>& entries() { return entries_; }
  const std::deque<Parameter<Real>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& p : entries_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : entries_) p.grad.fill(Real(0));
  }

  std::uint64_t adam_steps() const { return adam_steps_; }
  void set_adam_steps(std::uint64_t n) { adam_steps_ = n; }

  // Copies values (and optimizer state) into another precision.
  template <typename Other>
  ParamTable<Other> cast() const {
    ParamTable<Other> out;
    for (const auto& p : entries_) {
      auto& q = out.add(p.path, p.value.template cast<Other>());
      q.moment1 = p.moment1.template cast<Other>();
      q.moment2 = p.moment2.template cast<Other>();
    }
    out.set_adam_steps(adam_steps_);
    return out;
  }

 private:
  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < entries_.size(); ++i)
      index_.emplace(entries_[i].path, i);
  }

  std::deque<Parameter<Real>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t adam_steps_ = 0;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global gradient-norm clip; <= 0 disables clipping.
  double clip_norm = 5.0;
};

struct AdamReport {
  double grad_norm = 0.0;       // before clipping
  double applied_norm = 0.0;    // after clipping
};

// Clips, applies one bias-corrected Adam update, then zeroes the gradients.
// Throws NumericError naming the first parameter with a non-finite gradient;
// in that case no parameter is modified.
template <typename Real>
AdamReport adam_step(ParamTable<Real>& params, const AdamOptions& options);

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates checked per parameter; 0 checks all of them.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
  // Relative error uses max(|analytic|, |numeric|, floor) as denominator so
  // coordinates with vanishing gradient do not dominate.
  double denominator_floor = 1e-5;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_path;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

// `loss` evaluates the scalar objective at the current parameter values; when
// its second argument is true it must also accumulate reverse-mode gradients
// into the table.
using LossFunction = std::function<double(ParamTable<double>&, bool)>;

GradCheckResult grad_check(const LossFunction& loss, ParamTable<double>& params,
                           const GradCheckOptions& options = {});

}  // namespace sandglasset

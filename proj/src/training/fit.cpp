// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "sandglasset/training.hpp"

namespace sandglasset::training {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

MixtureSample crop(const MixtureSample& s, std::size_t length, Rng& rng) {
  const std::size_t total = s.mixture.size();
  if (length == 0 || length >= total) return s;
  const std::size_t start = rng.below(total - length + 1);
  MixtureSample out;
  out.snr_db = s.snr_db;
  out.speaker_ids = s.speaker_ids;
  out.mixture.assign(s.mixture.begin() + start, s.mixture.begin() + start + length);
  for (const auto& src : s.sources)
    out.sources.emplace_back(src.begin() + start, src.begin() + start + length);
  return out;
}

std::string parameter_norms(const ParamTable<float>& params) {
  std::ostringstream out;
  for (const auto& p : params.entries()) {
    double sq = 0.0;
    for (float v : p.value.values()) sq += static_cast<double>(v) * v;
    out << "\n  " << p.path << " |w| = " << std::sqrt(sq);
  }
  return out.str();
}

}  // namespace

double learning_rate(const TrainConfig& config, std::size_t epoch) {
  return config.lr * std::pow(config.lr_decay, static_cast<double>(epoch) - 1.0);
}

double train_step(ParamTable<float>& params, const model::ModelConfig& config,
                  const std::vector<MixtureSample>& batch, const AdamOptions& adam,
                  Rng& rng) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  const float weight = 1.0f / static_cast<float>(batch.size());
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& sample = batch[i];
    Tape<float> tape;
    Tensor<float> wave({sample.mixture.size()}, sample.mixture);
    model::ForwardOptions options{true, &rng};
    auto result = model::forward(tape, params, config, wave, options);
    std::vector<Tensor<float>> refs;
    for (const auto& s : sample.sources) refs.emplace_back(Shape{s.size()}, s);
    auto upit = upit_loss(result.sources, refs);
    const double loss = upit.loss.value()[0];
    if (!std::isfinite(loss))
      throw NumericError("non-finite loss at batch item " + std::to_string(i));
    tape.backward(upit.loss, weight);
    total += loss;
  }
  adam_step(params, adam);
  return total / static_cast<double>(batch.size());
}

double validation_loss(ParamTable<float>& params, const model::ModelConfig& config,
                       const std::vector<MixtureSample>& dataset) {
  if (dataset.empty()) return 0.0;
  double total = 0.0;
  for (const auto& sample : dataset) {
    auto estimates = model::separate(params, config, sample.mixture);
    total -= best_assignment(pairwise_si_snr(estimates, sample.sources)).mean_si_snr;
  }
  return total / static_cast<double>(dataset.size());
}

FitResult fit(ParamTable<float>& params, const model::ModelConfig& config,
              const MixtureStream& train, const std::vector<MixtureSample>& val,
              const TrainConfig& tc, const FitHooks& hooks) {
  config.validate();
  if (tc.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (tc.max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (!(tc.lr > 0.0)) throw ConfigError("lr must be positive");

  const auto start = Clock::now();
  FitResult result;
  result.best_params = params;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  const std::size_t n = train.epoch_size();
  const std::size_t steps_per_epoch =
      tc.steps_per_epoch ? tc.steps_per_epoch : (n + tc.batch_size - 1) / tc.batch_size;
  bool out_of_time = false;

  for (std::size_t epoch = 1; epoch <= tc.max_epochs && !out_of_time; ++epoch) {
    AdamOptions adam;
    adam.lr = learning_rate(tc, epoch);
    adam.clip_norm = tc.clip_norm;

    Rng rng(tc.seed, static_cast<std::uint64_t>(epoch) << 40);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    double epoch_loss = 0.0;
    std::size_t steps = 0, cursor = 0;
    for (; steps < steps_per_epoch; ++steps) {
      std::vector<MixtureSample> batch;
      for (std::size_t b = 0; b < tc.batch_size; ++b, ++cursor)
        batch.push_back(crop(train.at(epoch, order[cursor % n]), tc.crop, rng));
      double loss = 0.0;
      try {
        loss = train_step(params, config, batch, adam, rng);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(steps) + ")" +
                           parameter_norms(params));
      }
      epoch_loss += loss;
      ++result.steps;
      if (tc.time_budget_s > 0.0 && elapsed_ms(start) > 1000.0 * tc.time_budget_s) {
        out_of_time = true;
        ++steps;
        break;
      }
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.step = result.steps;
    entry.train_loss = steps ? epoch_loss / static_cast<double>(steps) : 0.0;
    entry.val_loss = validation_loss(params, config, val);
    if (hooks.validation_override)
      entry.val_loss = hooks.validation_override(epoch, entry.val_loss);
    entry.lr = adam.lr;
    entry.wall_ms = elapsed_ms(start);
    result.history.push_back(entry);
    result.epochs_run = epoch;
    if (hooks.log) *hooks.log << format_epoch_line(entry) << std::endl;
    if (hooks.on_epoch) hooks.on_epoch(entry);

    if (entry.val_loss < result.best_val_loss) {
      result.best_val_loss = entry.val_loss;
      result.best_epoch = epoch;
      result.best_params = params;
    } else if (epoch - result.best_epoch >= tc.patience) {
      result.stop_reason = "patience";
      break;
    }
  }
  if (result.stop_reason.empty())
    result.stop_reason = out_of_time ? "time_budget" : "max_epochs";
  result.wall_seconds = elapsed_ms(start) / 1000.0;
  return result;
}

EvalReport evaluate(ParamTable<float>& params, const model::ModelConfig& config,
                    const std::vector<MixtureSample>& dataset) {
  EvalReport report;
  for (const auto& sample : dataset) {
    auto estimates = model::separate(params, config, sample.mixture);
    report.mean_si_snri += mean_improvement(estimates, sample.sources, sample.mixture);
    report.mean_si_snr +=
        best_assignment(pairwise_si_snr(estimates, sample.sources)).mean_si_snr;
    ++report.count;
  }
  if (report.count) {
    report.mean_si_snri /= static_cast<double>(report.count);
    report.mean_si_snr /= static_cast<double>(report.count);
  }
  return report;
}

std::string format_loss_line(const EpochLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu, %zu, %.9g, %.9g, %.9g", e.epoch, e.step,
                e.train_loss, e.val_loss, e.lr);
  return buf;
}

std::string format_epoch_line(const EpochLog& e) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), ", %.0f", e.wall_ms);
  return format_loss_line(e) + buf;
}

}  // namespace sandglasset::training

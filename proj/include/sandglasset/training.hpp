// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sandglasset/autodiff.hpp"
#include "sandglasset/model.hpp"
#include "sandglasset/param_table.hpp"
#include "sandglasset/rng.hpp"

namespace sandglasset::training {

inline constexpr double kSampleRate = 8000.0;
// SI-SNR is clamped to +-60 dB: exact reconstructions (and silent estimates)
// would otherwise be infinite.
inline constexpr double kSiSnrCeiling = 60.0;
inline constexpr std::size_t kMaxSources = 4;

// ---- objective and metrics -------------------------------------------------

// Mean-removed scale-invariant SNR in dB. Throws DomainError when the
// reference has zero variance and DimensionError on a length mismatch.
template <typename Real>
double si_snr(std::span<const Real> estimate, std::span<const Real> reference);

// Differentiable SI-SNR of a length-T estimate against a constant reference;
// a [1] tensor. The gradient is zero where the value is clamped.
template <typename Real>
Var<Real> si_snr_var(Var<Real> estimate, const Tensor<Real>& reference);

// perm[c] is the reference index assigned to estimate c.
struct Assignment {
  std::vector<std::size_t> perm;
  double mean_si_snr = 0.0;
};

// Exhaustive search over all C! assignments of a C x C table
// pairwise[c][r] = si_snr(estimate c, reference r). Ties keep the first
// permutation in lexicographic order. C must be in [2, 4].
Assignment best_assignment(const std::vector<std::vector<double>>& pairwise);

template <typename Real>
std::vector<std::vector<double>> pairwise_si_snr(
    const std::vector<std::vector<Real>>& estimates,
    const std::vector<std::vector<Real>>& references);

template <typename Real>
struct UpitLoss {
  Var<Real> loss;  // -mean SI-SNR under the best assignment
  Assignment assignment;
};

// Utterance-level PIT. Only the selected pairs are recorded on the tape.
template <typename Real>
UpitLoss<Real> upit_loss(const std::vector<Var<Real>>& estimates,
                         const std::vector<Tensor<Real>>& references);

template <typename Real>
double si_snr_improvement(std::span<const Real> estimate,
                          std::span<const Real> reference,
                          std::span<const Real> mixture);

// Per-source improvement averaged under the best assignment of estimates.
double mean_improvement(const std::vector<std::vector<float>>& estimates,
                        const std::vector<std::vector<float>>& references,
                        std::span<const float> mixture);

// ---- synthetic corpus --------------------------------------------------------

struct SyntheticSpeaker {
  std::size_t id = 0;
  double f0_low = 0.0;   // Hz
  double f0_high = 0.0;  // Hz
  double harmonic_decay = 1.0;  // amplitude of harmonic h is h^-decay
  double vibrato_rate = 5.0;    // Hz
  double vibrato_depth = 0.01;  // relative f0 excursion
};

// `count` speakers whose f0 ranges tile 80-800 Hz on a log scale, each range
// shrunk by 10% at both ends so neighbours stay disjoint.
std::vector<SyntheticSpeaker> make_speaker_pool(std::size_t count = 8);

// Harmonic tone with a gliding, vibrating f0 inside the speaker's range and a
// syllable-like envelope; peak-normalized to 0.9.
std::vector<float> synth_utterance(const SyntheticSpeaker& speaker,
                                   std::size_t samples, Rng& rng);

struct MixtureSample {
  std::vector<float> mixture;
  std::vector<std::vector<float>> sources;
  std::vector<std::size_t> speaker_ids;
  double snr_db = 0.0;  // energy of source 1 over each other source
};

// Sources 2..C are rescaled so that 10 log10(E_1 / E_c) == snr_db; the
// mixture is their float sum. Repeated speakers are allowed (post training).
MixtureSample make_mixture(const std::vector<SyntheticSpeaker>& speakers,
                           std::size_t samples, double snr_db, Rng& rng);

struct CorpusOptions {
  std::size_t count = 2000;
  std::size_t samples = 8000;  // one second at 8 kHz
  std::size_t sources = 2;
  double snr_low = 0.0;
  double snr_high = 5.0;
  std::uint64_t seed = 0;
};

// Mixtures of distinct speakers drawn uniformly from the pool. Item i depends
// only on (seed, i).
std::vector<MixtureSample> make_corpus(const std::vector<SyntheticSpeaker>& pool,
                                       const CorpusOptions& options);

// Training stream. Without post training, epoch positions map 1:1 onto the
// dataset. With it, the epoch doubles: even positions are the original
// mixtures and odd positions are fresh same-speaker mixtures, so the stream
// is 1:1 by construction.
class MixtureStream {
 public:
  MixtureStream(const std::vector<MixtureSample>& dataset,
                std::vector<SyntheticSpeaker> pool, std::uint64_t seed,
                bool post_train);

  std::size_t epoch_size() const;
  bool same_speaker_at(std::size_t position) const;
  MixtureSample at(std::size_t epoch, std::size_t position) const;

 private:
  const std::vector<MixtureSample>* dataset_;
  std::vector<SyntheticSpeaker> pool_;
  std::uint64_t seed_;
  bool post_train_;
};

MixtureStream post_train_augment(const std::vector<MixtureSample>& dataset,
                                 const std::vector<SyntheticSpeaker>& pool,
                                 std::uint64_t seed, bool post_train = true);

// ---- training loop -----------------------------------------------------------

struct TrainConfig {
  double lr = 1e-3;
  double lr_decay = 0.98;  // per epoch
  std::size_t patience = 10;
  std::size_t batch_size = 1;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 0;
  bool post_train = false;
  double clip_norm = 5.0;
  std::size_t crop = 0;  // random training crop in samples; 0 = full length
  double time_budget_s = 0.0;  // 0 = unlimited; checked between steps
  std::size_t steps_per_epoch = 0;  // 0 = the whole stream epoch
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // optimizer steps so far
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct FitHooks {
  // Replaces the measured validation loss (early-stopping tests).
  std::function<double(std::size_t epoch, double measured)> validation_override;
  std::function<void(const EpochLog&)> on_epoch;
  std::ostream* log = nullptr;  // receives one line per epoch
};

struct FitResult {
  ParamTable<float> best_params;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t epochs_run = 0;
  std::size_t steps = 0;
  std::vector<EpochLog> history;
  std::string stop_reason;  // "patience", "max_epochs", "time_budget"
  double wall_seconds = 0.0;
};

// Learning rate used during epoch `epoch` (1-based).
double learning_rate(const TrainConfig& config, std::size_t epoch);

// One optimizer step over a mini-batch; returns the mean uPIT loss. Throws
// NumericError if the loss or a gradient is not finite.
double train_step(ParamTable<float>& params, const model::ModelConfig& config,
                  const std::vector<MixtureSample>& batch, const AdamOptions& adam,
                  Rng& rng);

// Mean uPIT loss in evaluation mode.
double validation_loss(ParamTable<float>& params, const model::ModelConfig& config,
                       const std::vector<MixtureSample>& dataset);

FitResult fit(ParamTable<float>& params, const model::ModelConfig& config,
              const MixtureStream& train, const std::vector<MixtureSample>& val,
              const TrainConfig& train_config, const FitHooks& hooks = {});

struct EvalReport {
  double mean_si_snri = 0.0;
  double mean_si_snr = 0.0;
  std::size_t count = 0;
};

EvalReport evaluate(ParamTable<float>& params, const model::ModelConfig& config,
                    const std::vector<MixtureSample>& dataset);

// "epoch, step, train_loss, val_loss, lr, wall_ms".
std::string format_epoch_line(const EpochLog& entry);
// Same without wall_ms: identical runs produce identical loss lines.
std::string format_loss_line(const EpochLog& entry);

// Finite-difference check of the full forward pass plus uPIT loss in double
// precision, dropout active with a fixed mask. Parameters are the seeded
// initialization plus small noise so zero-initialized entries are generic.
// A non-empty `fault_op` corrupts that op's backward rule (negative control).
GradCheckResult check_model_gradients(const model::ModelConfig& config,
                                      std::uint64_t seed,
                                      const GradCheckOptions& options = {},
                                      const std::string& fault_op = "");

}  // namespace sandglasset::training

// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "sandglasset/training.hpp"

namespace sandglasset::training {

namespace {

constexpr double kPeak = 0.9;
constexpr double kEnvelopeFloor = 0.1;

// Each corpus item gets its own 2^32-long window of the counter stream.
Rng item_rng(std::uint64_t seed, std::uint64_t item) { return Rng(seed, item << 32); }

}  // namespace

std::vector<SyntheticSpeaker> make_speaker_pool(std::size_t count) {
  if (count < 2) throw ConfigError("speaker pool needs at least 2 speakers");
  const double lo = std::log(80.0), hi = std::log(800.0);
  std::vector<SyntheticSpeaker> pool(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double a = std::exp(lo + (hi - lo) * static_cast<double>(i) / count);
    const double b = std::exp(lo + (hi - lo) * static_cast<double>(i + 1) / count);
    const double margin = 0.1 * (b - a);
    auto& s = pool[i];
    s.id = i;
    s.f0_low = a + margin;
    s.f0_high = b - margin;
    // Decay slopes spread over [1, 2], shuffled so neighbours in f0 differ.
    s.harmonic_decay = 1.0 + static_cast<double>((i * 5) % count) /
                                 static_cast<double>(count - 1);
    s.vibrato_rate = 4.0 + static_cast<double>(i % 4);
  }
  return pool;
}

std::vector<float> synth_utterance(const SyntheticSpeaker& speaker, std::size_t samples,
                                   Rng& rng) {
  if (samples == 0) throw ConfigError("synth_utterance: zero length");
  const double fs = kSampleRate;
  const double depth = speaker.vibrato_depth;
  const double c0 = rng.uniform(speaker.f0_low * (1 + depth), speaker.f0_high * (1 - depth));
  const double c1 = rng.uniform(speaker.f0_low * (1 + depth), speaker.f0_high * (1 - depth));
  const double vib_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double span = samples > 1 ? static_cast<double>(samples - 1) : 1.0;

  std::vector<double> phase(samples);
  double acc = 0.0;
  for (std::size_t n = 0; n < samples; ++n) {
    const double t = static_cast<double>(n) / fs;
    const double centre = c0 + (c1 - c0) * static_cast<double>(n) / span;
    const double f0 = centre * (1.0 + depth * std::sin(2.0 * std::numbers::pi *
                                                        speaker.vibrato_rate * t + vib_phase));
    acc += 2.0 * std::numbers::pi * f0 / fs;
    phase[n] = acc;
  }

  std::vector<double> y(samples, 0.0);
  for (std::size_t h = 1; static_cast<double>(h) * speaker.f0_high < fs / 2; ++h) {
    const double amp = std::pow(static_cast<double>(h), -speaker.harmonic_decay);
    const double offset = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t n = 0; n < samples; ++n)
      y[n] += amp * std::sin(static_cast<double>(h) * phase[n] + offset);
  }

  // Raised-cosine syllables over a floor, so no crop is silent.
  std::vector<double> env(samples, kEnvelopeFloor);
  const std::size_t syllables = 3 + rng.below(3);
  for (std::size_t k = 0; k < syllables; ++k) {
    const double centre = rng.uniform(0.0, static_cast<double>(samples));
    const double width = rng.uniform(0.05, 0.15) * fs;
    const double gain = rng.uniform(0.5, 1.0);
    const auto first = static_cast<std::size_t>(std::max(0.0, std::ceil(centre - width)));
    for (std::size_t n = first; n < samples; ++n) {
      const double d = static_cast<double>(n) - centre;
      if (d >= width) break;
      if (std::abs(d) < width)
        env[n] += gain * 0.5 * (1.0 + std::cos(std::numbers::pi * d / width));
    }
  }

  double peak = 0.0;
  for (std::size_t n = 0; n < samples; ++n) {
    y[n] *= env[n];
    peak = std::max(peak, std::abs(y[n]));
  }
  std::vector<float> out(samples, 0.0f);
  if (peak > 0.0)
    for (std::size_t n = 0; n < samples; ++n)
      out[n] = static_cast<float>(kPeak * y[n] / peak);
  return out;
}

MixtureSample make_mixture(const std::vector<SyntheticSpeaker>& speakers,
                           std::size_t samples, double snr_db, Rng& rng) {
  if (speakers.size() < 2) throw ConfigError("make_mixture: need at least 2 sources");
  MixtureSample m;
  m.snr_db = snr_db;
  for (const auto& s : speakers) {
    m.sources.push_back(synth_utterance(s, samples, rng));
    m.speaker_ids.push_back(s.id);
  }
  auto energy = [](const std::vector<float>& x) {
    double e = 0.0;
    for (float v : x) e += static_cast<double>(v) * v;
    return e;
  };
  const double e1 = energy(m.sources[0]);
  for (std::size_t c = 1; c < m.sources.size(); ++c) {
    const double gain = std::sqrt(e1 / energy(m.sources[c]) / std::pow(10.0, snr_db / 10.0));
    for (float& v : m.sources[c]) v = static_cast<float>(v * gain);
  }
  m.mixture.assign(samples, 0.0f);
  for (const auto& src : m.sources)
    for (std::size_t n = 0; n < samples; ++n) m.mixture[n] += src[n];
  return m;
}

std::vector<MixtureSample> make_corpus(const std::vector<SyntheticSpeaker>& pool,
                                       const CorpusOptions& options) {
  if (options.sources < 2 || options.sources > pool.size())
    throw ConfigError("make_corpus: cannot draw " + std::to_string(options.sources) +
                      " distinct speakers from a pool of " + std::to_string(pool.size()));
  std::vector<MixtureSample> corpus;
  corpus.reserve(options.count);
  for (std::size_t i = 0; i < options.count; ++i) {
    Rng rng = item_rng(options.seed, i);
    std::vector<std::size_t> ids(pool.size());
    for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = k;
    rng.shuffle(ids);
    std::vector<SyntheticSpeaker> chosen;
    for (std::size_t c = 0; c < options.sources; ++c) chosen.push_back(pool[ids[c]]);
    const double snr = rng.uniform(options.snr_low, options.snr_high);
    corpus.push_back(make_mixture(chosen, options.samples, snr, rng));
  }
  return corpus;
}

MixtureStream::MixtureStream(const std::vector<MixtureSample>& dataset,
                             std::vector<SyntheticSpeaker> pool, std::uint64_t seed,
                             bool post_train)
    : dataset_(&dataset), pool_(std::move(pool)), seed_(seed), post_train_(post_train) {
  if (dataset.empty()) throw ConfigError("training stream over an empty dataset");
  if (post_train_ && pool_.empty())
    throw ConfigError("post training needs a speaker pool");
}

std::size_t MixtureStream::epoch_size() const {
  return post_train_ ? 2 * dataset_->size() : dataset_->size();
}

bool MixtureStream::same_speaker_at(std::size_t position) const {
  return post_train_ && position % 2 == 1;
}

MixtureSample MixtureStream::at(std::size_t epoch, std::size_t position) const {
  if (position >= epoch_size())
    throw ConfigError("stream position " + std::to_string(position) + " out of range");
  if (!post_train_) return (*dataset_)[position];
  const MixtureSample& original = (*dataset_)[position / 2];
  if (position % 2 == 0) return original;
  // Fresh every epoch: one speaker, its utterances mixed at a standard SNR.
  Rng rng(seed_ ^ ((epoch + 1) * 0x9E3779B97F4A7C15ull), (position + 1) << 32);
  const auto& speaker = pool_[rng.below(pool_.size())];
  const double snr = rng.uniform(0.0, 5.0);
  std::vector<SyntheticSpeaker> same(original.sources.size(), speaker);
  return make_mixture(same, original.mixture.size(), snr, rng);
}

MixtureStream post_train_augment(const std::vector<MixtureSample>& dataset,
                                 const std::vector<SyntheticSpeaker>& pool,
                                 std::uint64_t seed, bool post_train) {
  return MixtureStream(dataset, pool, seed, post_train);
}

}  // namespace sandglasset::training

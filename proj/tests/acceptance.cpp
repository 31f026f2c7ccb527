// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Acceptance gate: one PASS/FAIL line per criterion, exit status 0 only if
// all pass. Command output goes to <work>/acceptance.log.
//
//   acceptance [--work DIR] [--only N[,N...]]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sandglasset/cli.hpp"
#include "sandglasset/framing.hpp"
#include "sandglasset/model.hpp"
#include "sandglasset/training.hpp"

#ifndef SANDGLASSET_SOURCE_DIR
#define SANDGLASSET_SOURCE_DIR "."
#endif

using namespace sandglasset;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::ofstream command_log;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Value of a "key = value" line in command output, or NaN.
double value_of(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + " = ", 0) == 0) return std::stod(line.substr(key.size() + 3));
  return std::nan("");
}

bool has_line(const std::string& text, const std::string& line) {
  return text.find(line + "\n") != std::string::npos;
}

struct Run {
  int code;
  std::string out;
};

// Runs one CLI command in-process; output is captured and mirrored to the log.
Run cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "sandglasset");
  std::vector<const char*> argv;
  std::string joined;
  for (const auto& a : args) {
    argv.push_back(a.c_str());
    joined += a + " ";
  }
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), {out, err});
  command_log << "$ " << joined << "\n" << out.str() << err.str() << "[exit " << code << "]\n"
              << std::flush;
  return {code, out.str() + err.str()};
}

std::string write_config(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
  return path.string();
}

fs::path only_subdir(const fs::path& dir) {
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) return e.path();
  return {};
}

char buf[512];

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// ---- criteria ------------------------------------------------------------------

Verdict parameter_budget() {
  const auto start = Clock::now();
  auto r = cli_run({"report-params"});
  const double secs = seconds_since(start);
  const double total = value_of(r.out, "total_params");
  const double enumerated = value_of(r.out, "enumerated_params");
  const bool pass = r.code == 0 && total >= 2.25e6 && total <= 2.35e6 && total == enumerated &&
                    has_line(r.out, "closed_form_matches_enumeration = true") && secs < 1.0;
  return {pass, fmt("total %.0f, enumerated %.0f, %.3f s", total, enumerated, secs)};
}

Verdict flop_model() {
  const auto start = Clock::now();
  auto r = cli_run({"report-flops", "--seconds", "1"});
  const double secs = seconds_since(start);
  const double total = value_of(r.out, "total_flops");
  const double mg = value_of(r.out, "san_flops_mg"), sg = value_of(r.out, "san_flops_sg");
  const bool pass = r.code == 0 && std::abs(total / 28.8e9 - 1.0) <= 0.25 && mg < sg &&
                    has_line(r.out, "mg_san_below_sg = true") && secs < 1.0;
  return {pass, fmt("%.2f GFLOPs (%.1f%% from 28.8), SAN MG %.3g < SG %.3g, %.3f s",
                    total / 1e9, 100.0 * (total / 28.8e9 - 1.0), mg, sg, secs)};
}

Verdict gradients() {
  const auto start = Clock::now();
  auto r = cli_run({"grad-check"});
  const double secs = seconds_since(start);
  const double err = value_of(r.out, "max_relative_error");
  const bool pass = r.code == 0 && err <= 1e-4 && secs < 300.0;
  return {pass, fmt("max relative error %.3g, %.1f s", err, secs)};
}

Verdict round_trips() {
  Rng rng(20260401);
  std::size_t combos = 0, failures = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t window = 2 * (1 + rng.below(16));
    const std::size_t samples = 1 + rng.below(4000);
    const std::size_t segment = 2 * (1 + rng.below(64));
    std::vector<float> x(samples);
    for (auto& v : x) v = static_cast<float>(rng.normal());
    auto framed = framing::frame_signal<float>(x, window);
    auto back = framing::overlap_add_frames(framed.frames, framed.layout);
    for (std::size_t n = window / 2; n < samples; ++n) failures += back[n] != 2.0f * x[n];

    const std::size_t rows = 1 + rng.below(4);
    Tensor<float> feats({rows, framed.layout.frames});
    for (auto& v : feats.storage()) v = static_cast<float>(rng.normal());
    auto seg = framing::segment_frames(feats, segment);
    auto merged = framing::merge_segments(seg.segments, seg.layout);
    for (std::size_t i = 0; i < feats.size(); ++i) failures += merged[i] != 2.0f * feats[i];
    ++combos;
  }
  return {failures == 0 && combos >= 20,
          fmt("%zu random (T, M, L, K) combinations, %zu mismatches", combos, failures)};
}

Verdict upit_properties() {
  Rng rng(77);
  std::size_t invariant = 0, matched = 0;
  const std::size_t trials = 100, length = 256, c_count = 3;
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<Tensor<double>> refs;
    for (std::size_t c = 0; c < c_count; ++c) {
      Tensor<double> r({length});
      for (auto& v : r.storage()) v = rng.normal();
      refs.push_back(r);
    }
    Tape<double> tape(false);
    std::vector<Var<double>> ests;
    for (std::size_t c = 0; c < c_count; ++c) {
      Tensor<double> e({length});
      const auto& mix_in = refs[rng.below(c_count)];
      for (std::size_t i = 0; i < length; ++i) e[i] = mix_in[i] + rng.uniform(0.2, 2.0) * rng.normal();
      ests.push_back(tape.constant(e));
    }
    auto base = training::upit_loss(ests, refs);
    std::vector<std::size_t> order = {2, 0, 1};
    std::vector<Tensor<double>> permuted;
    for (auto i : order) permuted.push_back(refs[i]);
    auto again = training::upit_loss(ests, permuted);
    invariant += base.loss.value()[0] == again.loss.value()[0];

    // Exhaustive enumeration over all 3! assignments.
    std::vector<std::vector<double>> table(c_count, std::vector<double>(c_count));
    for (std::size_t e = 0; e < c_count; ++e)
      for (std::size_t r = 0; r < c_count; ++r)
        table[e][r] = training::si_snr<double>(ests[e].value().values(), refs[r].values());
    std::vector<std::size_t> perm(c_count), best_perm;
    std::iota(perm.begin(), perm.end(), 0);
    double best = -1e300;
    do {
      double s = 0;
      for (std::size_t e = 0; e < c_count; ++e) s += table[e][perm[e]];
      if (s > best) {
        best = s;
        best_perm = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    matched += base.assignment.perm == best_perm;
  }
  return {invariant == trials && matched == trials,
          fmt("C=3: permutation-invariant %zu/%zu, matches enumeration %zu/%zu", invariant,
              trials, matched, trials)};
}

struct DeskRun {
  std::string checkpoint;
  double si_snri = std::nan("");
};
DeskRun desk;

Verdict desk_separation(const fs::path& work) {
  const auto start = Clock::now();
  const std::string cfg = std::string(SANDGLASSET_SOURCE_DIR) + "/configs/desk.cfg";
  const fs::path out = work / "desk";
  fs::remove_all(out);
  auto train = cli_run({"train", "--config", cfg, "--seed", "1", "--out", out.string()});
  if (train.code != 0) return {false, fmt("train exited with %d", train.code)};
  desk.checkpoint = (only_subdir(out) / "checkpoint.bin").string();
  const double train_secs = seconds_since(start);
  auto eval = cli_run({"eval", "--config", cfg, "--checkpoint", desk.checkpoint});
  desk.si_snri = value_of(eval.out, "mean_si_snri_db");
  const double mixtures = value_of(eval.out, "mixtures");
  const double secs = seconds_since(start);
  return {eval.code == 0 && desk.si_snri >= 5.0 && secs <= 3600.0,
          fmt("held-out SI-SNRi %.2f dB on %.0f mixtures; train %.0f s, total %.0f s",
              desk.si_snri, mixtures, train_secs, secs)};
}

Verdict ablations() {
  auto base = model::ModelConfig::desk();
  Rng rng(5);
  std::vector<float> wave(4000);
  for (auto& v : wave) v = static_cast<float>(0.3 * rng.normal());
  auto output = [&](const model::ModelConfig& c) {
    auto params = model::init_params(c, 1);
    return model::separate(params, c, wave);
  };
  auto no_res = base;
  no_res.residuals = false;
  auto single = base;
  single.granularity_base = 1;
  const auto mg = output(base), wo_res = output(no_res), sg = output(single);
  auto differs = [&](const std::vector<std::vector<float>>& o) {
    double m = 0;
    for (std::size_t c = 0; c < o.size(); ++c)
      for (std::size_t i = 0; i < o[c].size(); ++i) m = std::max(m, double(std::abs(o[c][i] - mg[c][i])));
    return m;
  };
  const double d_res = differs(wo_res), d_sg = differs(sg);
  return {d_res > 0 && d_sg > 0 && output(base) == mg,
          fmt("max |w/o RES - MG| = %.3g, max |SG - MG| = %.3g", d_res, d_sg)};
}

Verdict determinism(const fs::path& work) {
  const auto cfg = write_config(work / "determinism.cfg",
                                "preset = desk\ntrain_count = 24\nval_count = 4\nsamples = 2000\n"
                                "crop = 1000\nbatch_size = 2\nsteps_per_epoch = 12\n"
                                "max_epochs = 3\ntime_budget_s = 0\npost_train = false\n");
  std::vector<fs::path> dirs;
  for (const char* name : {"det_a", "det_b"}) {
    const fs::path out = work / name;
    fs::remove_all(out);
    auto r = cli_run({"train", "--config", cfg, "--seed", "7", "--threads", "1", "--out",
                      out.string()});
    if (r.code != 0) return {false, fmt("train exited with %d", r.code)};
    dirs.push_back(only_subdir(out));
  }
  const auto log_a = read_file(dirs[0] / "loss_log.txt");
  const auto log_b = read_file(dirs[1] / "loss_log.txt");
  const auto ck_a = read_file(dirs[0] / "checkpoint.bin");
  const auto ck_b = read_file(dirs[1] / "checkpoint.bin");
  const bool logs = !log_a.empty() && log_a == log_b;
  const bool cks = !ck_a.empty() && ck_a == ck_b;
  return {logs && cks, fmt("loss logs %s (%zu bytes), checkpoints %s (%zu bytes)",
                           logs ? "identical" : "DIFFER", log_a.size(),
                           cks ? "identical" : "DIFFER", ck_a.size())};
}

Verdict post_training(const fs::path& work) {
  // Stream composition over 10^4 draws.
  const auto pool = training::make_speaker_pool(8);
  training::CorpusOptions opt;
  opt.count = 5000;
  opt.samples = 160;
  opt.seed = 11;
  const auto data = training::make_corpus(pool, opt);
  const auto stream = training::post_train_augment(data, pool, 12);
  std::size_t same = 0;
  for (std::size_t pos = 0; pos < stream.epoch_size(); ++pos) {
    const auto m = stream.at(1, pos);
    same += std::set<std::size_t>(m.speaker_ids.begin(), m.speaker_ids.end()).size() == 1;
  }
  const double ratio = double(same) / double(stream.epoch_size());
  const bool ratio_ok = stream.epoch_size() >= 10000 && std::abs(ratio - 0.5) <= 0.02;
  std::string detail = fmt("same-speaker share %.4f over %zu draws", ratio, stream.epoch_size());

  if (desk.checkpoint.empty() || !fs::exists(desk.checkpoint))
    return {false, detail + "; no desk checkpoint to resume (criterion 6 did not run)"};
  const std::string base_cfg =
      read_file(std::string(SANDGLASSET_SOURCE_DIR) + "/configs/desk_post.cfg");
  const auto cfg = write_config(work / "post.cfg",
                                base_cfg + "\ninit_checkpoint = " + desk.checkpoint + "\n");
  const fs::path out = work / "post";
  fs::remove_all(out);
  auto train = cli_run({"train", "--config", cfg, "--seed", "1", "--out", out.string()});
  if (train.code != 0) return {false, detail + fmt("; resumed train exited with %d", train.code)};
  const auto checkpoint = (only_subdir(out) / "checkpoint.bin").string();
  auto eval = cli_run({"eval", "--config", cfg, "--checkpoint", checkpoint});
  const double after = value_of(eval.out, "mean_si_snri_db");
  const bool kept = eval.code == 0 && after >= desk.si_snri - 1.0;
  return {ratio_ok && kept,
          detail + fmt("; held-out SI-SNRi %.2f dB before, %.2f dB after resuming", desk.si_snri,
                       after)};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::current_path() / "acceptance_runs";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream list(argv[++i]);
      std::string item;
      while (std::getline(list, item, ',')) only.insert(std::stoi(item));
    } else {
      std::cerr << "usage: acceptance [--work DIR] [--only N[,N...]]\n";
      return 2;
    }
  }
  fs::create_directories(work);
  command_log.open(work / "acceptance.log");

  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"parameter budget", parameter_budget},
      {"FLOP model", flop_model},
      {"gradient correctness", gradients},
      {"round-trip invariants", round_trips},
      {"uPIT properties", upit_properties},
      {"desk-scale separation", [&] { return desk_separation(work); }},
      {"ablation hooks", ablations},
      {"determinism", [&] { return determinism(work); }},
      {"post-training mode", [&] { return post_training(work); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(number)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << "criterion " << number << " (" << criteria[i].first
              << "): " << (v.pass ? "PASS" : "FAIL") << " | " << v.detail << std::endl;
  }
  std::cout << (failed ? "acceptance: FAIL (" + std::to_string(failed) + " criteria)"
                       : std::string("acceptance: PASS"))
            << std::endl;
  return failed ? 1 : 0;
}

// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "sandglasset/cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "sandglasset/blas.hpp"
#include "sandglasset/wav.hpp"

namespace sandglasset::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kToolVersion = "sandglasset 1.0.0";
constexpr std::size_t kGradCheckParamLimit = 50000;
constexpr double kGradCheckTolerance = 1e-4;

// Maps the library's exception types onto exit codes.
template <typename Fn>
int guarded(Streams io, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    io.err << "error: numeric failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const DomainError& e) {
    io.err << "error: numeric failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << "\n";
    return kUsageError;
  }
}

// Independent data streams per purpose, all derived from the run seed.
std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t purpose) {
  return Rng(seed, purpose << 56).next_u64();
}

std::string fmt_count(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(0) << v;
  return s.str();
}

training::CorpusOptions corpus_options(const RunConfig& rc, std::size_t count,
                                       std::uint64_t seed) {
  training::CorpusOptions o;
  o.count = count;
  o.samples = rc.samples;
  o.sources = rc.model.sources;
  o.snr_low = rc.snr_low;
  o.snr_high = rc.snr_high;
  o.seed = seed;
  return o;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw FormatError("cannot write '" + path.string() + "'");
  f << text;
}

}  // namespace

RunConfig resolve(const CommonOptions& options, Streams io) {
  RunConfig rc = options.config_path.empty() ? RunConfig{}
                                             : load_run_config(options.config_path);
  if (options.seed) rc.train.seed = *options.seed;
  if (options.threads < 1) throw ConfigError("--threads must be >= 1");
  blas::set_threads(options.threads);
  io.out << "# " << kToolVersion << "\n# threads = " << options.threads
         << (options.threads == 1 ? " (deterministic)" : " (non-deterministic)") << "\n"
         << "# resolved configuration\n"
         << format_run_config(rc) << std::flush;
  return rc;
}

std::string make_run_dir(const std::string& out_dir, std::uint64_t seed) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%SZ", &utc);
  const std::string base = std::string(stamp) + "_seed" + std::to_string(seed);
  fs::create_directories(out_dir);
  fs::path dir = fs::path(out_dir) / base;
  for (int k = 2; fs::exists(dir); ++k)
    dir = fs::path(out_dir) / (base + "-" + std::to_string(k));
  fs::create_directories(dir);
  return dir.string();
}

int cmd_train(const CommonOptions& options, Streams io, TrainOutcome* outcome) {
  return guarded(io, [&] {
    RunConfig rc = resolve(options, io);
    const auto& tc = rc.train;
    if (tc.post_train && (rc.init_checkpoint.empty() || !fs::exists(rc.init_checkpoint))) {
      io.err << "error: post_train=true resumes from a trained model; set "
                "init_checkpoint to an existing checkpoint"
             << (rc.init_checkpoint.empty() ? "" : " ('" + rc.init_checkpoint + "' not found)")
             << "\n";
      return static_cast<int>(kUsageError);
    }

    const std::string run_dir = make_run_dir(options.out_dir, tc.seed);
    write_text(fs::path(run_dir) / "config.txt",
               "# " + std::string(kToolVersion) + "\n" + format_run_config(rc));
    io.out << "run directory: " << run_dir << "\n";

    const auto pool = training::make_speaker_pool(rc.speakers);
    const auto train_set = training::make_corpus(
        pool, corpus_options(rc, rc.train_count, derived_seed(tc.seed, 1)));
    const auto val_set = training::make_corpus(
        pool, corpus_options(rc, rc.val_count, derived_seed(tc.seed, 2)));

    ParamTable<float> params;
    if (tc.post_train) {
      auto ck = model::load_checkpoint(rc.init_checkpoint);
      if (!(ck.config == rc.model))
        throw ConfigError("init_checkpoint model config differs from the run config");
      params = std::move(ck.params);  // fresh optimizer moments
      io.out << "post training from " << rc.init_checkpoint << "\n";
    } else {
      params = model::init_params(rc.model, tc.seed);
    }
    const auto stream =
        training::post_train_augment(train_set, pool, derived_seed(tc.seed, 3), tc.post_train);

    std::ofstream log(fs::path(run_dir) / "train_log.txt");
    log << "# threads = " << options.threads << "\n"
        << "# epoch, step, train_loss, val_loss, lr, wall_ms\n";
    std::ofstream losses(fs::path(run_dir) / "loss_log.txt");
    losses << "# epoch, step, train_loss, val_loss, lr\n";
    training::FitHooks hooks;
    hooks.log = &log;
    hooks.on_epoch = [&](const training::EpochLog& e) {
      losses << training::format_loss_line(e) << std::endl;
      io.out << training::format_epoch_line(e) << std::endl;
    };
    auto result = training::fit(params, rc.model, stream, val_set, tc, hooks);

    const std::string checkpoint = (fs::path(run_dir) / "checkpoint.bin").string();
    model::save_checkpoint(checkpoint, rc.model, result.best_params);
    const auto report = training::evaluate(result.best_params, rc.model, val_set);

    std::ostringstream summary;
    summary << "version = " << kToolVersion << "\n"
            << "threads = " << options.threads << "\n"
            << "seed = " << tc.seed << "\n"
            << "parameters = " << result.best_params.total_elements() << "\n"
            << "best_epoch = " << result.best_epoch << "\n"
            << "best_val_loss = " << std::setprecision(9) << result.best_val_loss << "\n"
            << "epochs_run = " << result.epochs_run << "\n"
            << "steps = " << result.steps << "\n"
            << "stop_reason = " << result.stop_reason << "\n"
            << "lr_schedule = per_epoch\n"
            << "val_si_snri_db = " << report.mean_si_snri << "\n"
            << "wall_seconds = " << result.wall_seconds << "\n"
            << "checkpoint = " << checkpoint << "\n";
    write_text(fs::path(run_dir) / "summary.txt", summary.str());
    io.out << summary.str();
    if (outcome) *outcome = {run_dir, checkpoint, report.mean_si_snri};
    return static_cast<int>(kSuccess);
  });
}

int cmd_separate(const CommonOptions& options, const std::string& checkpoint,
                 const std::string& input, const std::string& output_dir, Streams io) {
  return guarded(io, [&] {
    resolve(options, io);
    auto ck = model::load_checkpoint(checkpoint);
    const auto file = wav::read(input);
    if (file.channels != 1) {
      io.err << "error: '" << input << "' has " << file.channels
             << " channels; only mono input is supported\n";
      return static_cast<int>(kUsageError);
    }
    if (file.sample_rate != static_cast<std::uint32_t>(training::kSampleRate))
      io.err << "warning: input is " << file.sample_rate
             << " Hz but the model was trained at 8000 Hz; proceeding without resampling\n";
    if (file.samples.empty()) throw ConfigError("'" + input + "' contains no samples");
    const auto mixture = wav::to_float(file);
    const auto sources = model::separate(ck.params, ck.config, mixture);
    fs::create_directories(output_dir);
    for (std::size_t c = 0; c < sources.size(); ++c) {
      const auto path = fs::path(output_dir) / ("source_" + std::to_string(c + 1) + ".wav");
      wav::write(path.string(), wav::from_float(sources[c], file.sample_rate));
      io.out << "wrote " << path.string() << "\n";
    }
    return static_cast<int>(kSuccess);
  });
}

int cmd_report_params(const CommonOptions& options, Streams io) {
  return guarded(io, [&] {
    RunConfig rc = resolve(options, io);
    const auto report = model::count_parameters(rc.model);
    std::map<std::string, double> by_module;
    std::vector<std::string> order;
    for (const auto& e : report.entries) {
      if (!by_module.count(e.module)) order.push_back(e.module);
      by_module[e.module] += e.params;
    }
    io.out << std::left << std::setw(14) << "module" << std::right << std::setw(12)
           << "params" << "\n";
    for (const auto& m : order)
      io.out << std::left << std::setw(14) << m << std::right << std::setw(12)
             << fmt_count(by_module[m]) << "\n";
    const double live = static_cast<double>(model::init_params(rc.model, 0).total_elements());
    io.out << "total_params = " << fmt_count(report.total_params) << "\n"
           << "total_params_without_encoder_bias = "
           << fmt_count(report.params_without_encoder_bias) << "\n"
           << "enumerated_params = " << fmt_count(live) << "\n"
           << "closed_form_matches_enumeration = "
           << (live == report.total_params ? "true" : "false") << "\n";
    return static_cast<int>(live == report.total_params ? kSuccess : kCheckFailed);
  });
}

int cmd_report_flops(const CommonOptions& options, double seconds, Streams io) {
  return guarded(io, [&] {
    RunConfig rc = resolve(options, io);
    const auto report = model::estimate_flops(rc.model, seconds, training::kSampleRate);
    std::map<std::string, double> by_primitive, by_module;
    std::vector<std::string> prim_order, mod_order;
    for (const auto& e : report.entries) {
      if (!by_primitive.count(e.primitive)) prim_order.push_back(e.primitive);
      if (!by_module.count(e.module)) mod_order.push_back(e.module);
      by_primitive[e.primitive] += e.flops;
      by_module[e.module] += e.flops;
    }
    auto table = [&](const char* title, const std::vector<std::string>& keys,
                     std::map<std::string, double>& values) {
      io.out << std::left << std::setw(16) << title << std::right << std::setw(14)
             << "GFLOPs" << std::setw(9) << "share" << "\n";
      for (const auto& k : keys)
        io.out << std::left << std::setw(16) << k << std::right << std::setw(14)
               << std::fixed << std::setprecision(4) << values[k] / 1e9 << std::setw(8)
               << std::setprecision(1) << 100.0 * values[k] / report.total_flops << "%\n";
      io.out.unsetf(std::ios::floatfield);
    };
    table("module", mod_order, by_module);
    table("primitive", prim_order, by_primitive);

    model::ModelConfig single = rc.model;
    single.granularity_base = 1;
    const double mg_san = report.flops_of_primitive("san");
    const double sg_san = model::estimate_flops(single, seconds, training::kSampleRate)
                              .flops_of_primitive("san");
    io.out << std::setprecision(6) << "convention = " << report.convention << "\n"
           << "seconds = " << seconds << "\n"
           << "sample_rate = " << training::kSampleRate << "\n"
           << "total_flops = " << fmt_count(report.total_flops) << "\n"
           << "total_gflops = " << report.total_flops / 1e9 << "\n"
           << "san_flops_mg = " << fmt_count(mg_san) << "\n"
           << "san_flops_sg = " << fmt_count(sg_san) << "\n"
           << "mg_san_below_sg = " << (mg_san < sg_san ? "true" : "false") << "\n";
    return static_cast<int>(kSuccess);
  });
}

int cmd_grad_check(const CommonOptions& options, const std::string& fault_op, Streams io) {
  return guarded(io, [&] {
    CommonOptions o = options;
    RunConfig rc;
    if (o.config_path.empty()) {
      rc = parse_run_config("preset = tiny\n");
      if (o.seed) rc.train.seed = *o.seed;
      blas::set_threads(o.threads);
      io.out << "# " << kToolVersion << "\n# resolved configuration\n"
             << format_run_config(rc);
    } else {
      rc = resolve(o, io);
    }
    const auto count = model::count_parameters(rc.model).total_params;
    if (count > kGradCheckParamLimit) {
      io.err << "error: grad-check is limited to " << kGradCheckParamLimit
             << " parameters; this config has " << fmt_count(count) << "\n";
      return static_cast<int>(kUsageError);
    }
    const auto r = training::check_model_gradients(rc.model, rc.train.seed, {}, fault_op);
    io.out << std::setprecision(6) << "coordinates_checked = " << r.coords_checked << "\n"
           << "max_relative_error = " << r.max_relative_error << "\n"
           << "worst_parameter = " << r.worst_path << "[" << r.worst_index << "]\n"
           << "worst_analytic = " << r.worst_analytic << "\n"
           << "worst_numeric = " << r.worst_numeric << "\n"
           << "tolerance = " << kGradCheckTolerance << "\n";
    const bool ok = r.max_relative_error <= kGradCheckTolerance;
    io.out << "result = " << (ok ? "pass" : "FAIL") << "\n";
    return static_cast<int>(ok ? kSuccess : kCheckFailed);
  });
}

int cmd_synth_data(const CommonOptions& options, std::size_t count, Streams io) {
  return guarded(io, [&] {
    RunConfig rc = resolve(options, io);
    const auto pool = training::make_speaker_pool(rc.speakers);
    const auto corpus = training::make_corpus(
        pool, corpus_options(rc, count ? count : rc.test_count, rc.train.seed));
    fs::create_directories(options.out_dir);
    std::ostringstream manifest;
    manifest << "# file, speaker_ids, snr_db\n";
    const auto rate = static_cast<std::uint32_t>(training::kSampleRate);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "mix_%05zu", i);
      const auto& s = corpus[i];
      wav::write((fs::path(options.out_dir) / (std::string(name) + ".wav")).string(),
                 wav::from_float(s.mixture, rate));
      manifest << name << ".wav,";
      for (std::size_t c = 0; c < s.sources.size(); ++c) {
        wav::write((fs::path(options.out_dir) /
                    (std::string(name) + "_s" + std::to_string(c + 1) + ".wav")).string(),
                   wav::from_float(s.sources[c], rate));
        manifest << (c ? " " : "") << s.speaker_ids[c];
      }
      manifest << "," << s.snr_db << "\n";
    }
    write_text(fs::path(options.out_dir) / "manifest.csv", manifest.str());
    io.out << "wrote " << corpus.size() << " mixtures to " << options.out_dir << "\n";
    return static_cast<int>(kSuccess);
  });
}

int cmd_eval(const CommonOptions& options, const std::string& checkpoint, Streams io,
             double* mean_si_snri) {
  return guarded(io, [&] {
    RunConfig rc = resolve(options, io);
    auto ck = model::load_checkpoint(checkpoint);
    const std::uint64_t seed = options.seed ? *options.seed : rc.test_seed;
    RunConfig data = rc;
    data.model = ck.config;
    const auto pool = training::make_speaker_pool(rc.speakers);
    const auto test = training::make_corpus(pool, corpus_options(data, rc.test_count, seed));
    const auto report = training::evaluate(ck.params, ck.config, test);
    io.out << std::setprecision(6) << "test_seed = " << seed << "\n"
           << "mixtures = " << report.count << "\n"
           << "mean_si_snr_db = " << report.mean_si_snr << "\n"
           << "mean_si_snri_db = " << report.mean_si_snri << "\n";
    if (mean_si_snri) *mean_si_snri = report.mean_si_snri;
    return static_cast<int>(kSuccess);
  });
}

int run(int argc, const char* const* argv, Streams io) {
  CLI::App app{"Sandglasset speech separation"};
  app.require_subcommand(1);
  CommonOptions common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "key = value configuration file");
    sub->add_option("--seed", common.seed, "random seed (overrides the config)");
    sub->add_option("--out", common.out_dir, "output directory");
    sub->add_option("--threads", common.threads, "BLAS threads (1 = bitwise reproducible)");
  };

  auto* train = app.add_subcommand("train", "synthesize data, train, write a checkpoint");
  add_common(train);

  std::string checkpoint, input;
  auto* separate = app.add_subcommand("separate", "separate a mono 16-bit wav");
  add_common(separate);
  separate->add_option("--checkpoint", checkpoint)->required();
  separate->add_option("--input", input)->required();

  auto* report_params = app.add_subcommand("report-params", "parameter count breakdown");
  add_common(report_params);

  double seconds = 1.0;
  auto* report_flops = app.add_subcommand("report-flops", "analytic FLOP breakdown");
  add_common(report_flops);
  report_flops->add_option("--seconds", seconds, "input duration at 8 kHz");

  std::string fault;
  auto* grad = app.add_subcommand("grad-check", "finite-difference gradient check");
  add_common(grad);
  grad->add_option("--inject-fault", fault)->group("");

  std::size_t count = 0;
  auto* synth = app.add_subcommand("synth-data", "write synthetic mixtures as wav files");
  add_common(synth);
  synth->add_option("--count", count, "number of mixtures (default test_count)");

  auto* eval = app.add_subcommand("eval", "mean SI-SNRi on a synthetic test set");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, io.out, io.err);
    return code == 0 ? static_cast<int>(kSuccess) : static_cast<int>(kUsageError);
  }

  if (*train) return cmd_train(common, io);
  if (*separate) return cmd_separate(common, checkpoint, input, common.out_dir, io);
  if (*report_params) return cmd_report_params(common, io);
  if (*report_flops) return cmd_report_flops(common, seconds, io);
  if (*grad) return cmd_grad_check(common, fault, io);
  if (*synth) return cmd_synth_data(common, count, io);
  if (*eval) return cmd_eval(common, checkpoint, io);
  return kUsageError;
}

}  // namespace sandglasset::cli

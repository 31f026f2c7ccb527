// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <charconv>
#include <string>

#include "sandglasset/model.hpp"

namespace sandglasset::model {

namespace {

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" +
                      value + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double out = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("'" + key + "' expects true/false, got '" + value + "'");
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

void ModelConfig::validate() const {
  require(window >= 2 && window % 2 == 0,
          "window M must be even and >= 2 (got " + std::to_string(window) + ")");
  require(encoder_dim >= 1, "encoder_dim E must be positive");
  require(bottleneck_dim >= 2 && bottleneck_dim % 2 == 0,
          "bottleneck_dim D must be even (positional encoding), got " +
              std::to_string(bottleneck_dim));
  require(segment >= 2 && segment % 2 == 0,
          "segment K must be even and >= 2 (got " + std::to_string(segment) + ")");
  require(blocks >= 2 && blocks % 2 == 0,
          "blocks N must be even and >= 2 (got " + std::to_string(blocks) + ")");
  require(hidden >= 1, "hidden H must be positive");
  require(heads >= 1 && bottleneck_dim % heads == 0,
          "bottleneck_dim D = " + std::to_string(bottleneck_dim) +
              " is not divisible by heads J = " + std::to_string(heads));
  require(sources >= 2, "sources C must be >= 2");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  require(granularity_base >= 1, "granularity_base must be >= 1");
  for (std::size_t f : granularity_factors(blocks, granularity_base))
    require(segment % f == 0, "segment K = " + std::to_string(segment) +
                                  " is not divisible by granularity factor " +
                                  std::to_string(f));
}

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.window = 4;
  c.encoder_dim = 8;
  c.bottleneck_dim = 4;
  c.segment = 8;
  c.blocks = 2;
  c.hidden = 4;
  c.heads = 2;
  c.sources = 2;
  return c;
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.window = 4;
  c.encoder_dim = 32;
  c.bottleneck_dim = 16;
  c.segment = 16;
  c.blocks = 4;
  c.hidden = 16;
  c.heads = 4;
  c.sources = 2;
  return c;
}

std::vector<std::size_t> granularity_factors(std::size_t blocks, std::size_t base) {
  if (blocks == 0 || blocks % 2 != 0)
    throw ConfigError("granularity schedule needs an even block count, got " +
                      std::to_string(blocks));
  if (base == 0) throw ConfigError("granularity base must be >= 1");
  std::vector<std::size_t> factors(blocks);
  std::size_t f = 1;
  for (std::size_t b = 1; b <= blocks / 2; ++b) {
    f *= base;
    factors[b - 1] = f;
    factors[blocks - b] = f;
  }
  return factors;
}

std::size_t residual_partner(const ModelConfig& config, std::size_t block) {
  const std::size_t half = config.blocks / 2;
  if (!config.residuals || block <= half || block > config.blocks) return 0;
  return config.pairing == ResidualPairing::kMirror ? config.blocks + 1 - block
                                                    : block - half;
}

std::vector<std::pair<std::string, std::string>> config_fields(
    const ModelConfig& c) {
  return {
      {"window", std::to_string(c.window)},
      {"encoder_dim", std::to_string(c.encoder_dim)},
      {"bottleneck_dim", std::to_string(c.bottleneck_dim)},
      {"segment", std::to_string(c.segment)},
      {"blocks", std::to_string(c.blocks)},
      {"hidden", std::to_string(c.hidden)},
      {"heads", std::to_string(c.heads)},
      {"sources", std::to_string(c.sources)},
      {"dropout", format_double(c.dropout)},
      {"granularity_base", std::to_string(c.granularity_base)},
      {"residual_pairing", c.pairing == ResidualPairing::kMirror ? "mirror" : "offset"},
      {"residuals", c.residuals ? "true" : "false"},
      {"resampler", c.resampler == Resampler::kDepthwise ? "depthwise" : "dense"},
      {"encoder_bias", c.encoder_bias ? "true" : "false"},
  };
}

bool set_config_field(ModelConfig& c, const std::string& key,
                      const std::string& value) {
  if (key == "window") c.window = parse_size(key, value);
  else if (key == "encoder_dim") c.encoder_dim = parse_size(key, value);
  else if (key == "bottleneck_dim") c.bottleneck_dim = parse_size(key, value);
  else if (key == "segment") c.segment = parse_size(key, value);
  else if (key == "blocks") c.blocks = parse_size(key, value);
  else if (key == "hidden") c.hidden = parse_size(key, value);
  else if (key == "heads") c.heads = parse_size(key, value);
  else if (key == "sources") c.sources = parse_size(key, value);
  else if (key == "dropout") c.dropout = parse_double(key, value);
  else if (key == "granularity_base") c.granularity_base = parse_size(key, value);
  else if (key == "residuals") c.residuals = parse_bool(key, value);
  else if (key == "encoder_bias") c.encoder_bias = parse_bool(key, value);
  else if (key == "residual_pairing") {
    if (value == "mirror") c.pairing = ResidualPairing::kMirror;
    else if (value == "offset") c.pairing = ResidualPairing::kOffset;
    else throw ConfigError("residual_pairing must be mirror or offset, got '" + value + "'");
  } else if (key == "resampler") {
    if (value == "depthwise") c.resampler = Resampler::kDepthwise;
    else if (value == "dense") c.resampler = Resampler::kDense;
    else throw ConfigError("resampler must be depthwise or dense, got '" + value + "'");
  } else {
    return false;
  }
  return true;
}

std::vector<std::pair<std::string, Shape>> parameter_manifest(const ModelConfig& c) {
  c.validate();
  const std::size_t m = c.window, e = c.encoder_dim, d = c.bottleneck_dim;
  const std::size_t h = c.hidden;
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("encoder.weight", Shape{e, m});
  if (c.encoder_bias) out.emplace_back("encoder.bias", Shape{e});
  out.emplace_back("bottleneck.weight", Shape{d, e});
  const auto factors = granularity_factors(c.blocks, c.granularity_base);
  for (std::size_t b = 1; b <= c.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    const std::size_t f = factors[b - 1];
    for (const char* dir : {"fwd", "bwd"}) {
      out.emplace_back(p + "lstm." + dir + ".w_ih", Shape{4 * h, d});
      out.emplace_back(p + "lstm." + dir + ".w_hh", Shape{4 * h, h});
      out.emplace_back(p + "lstm." + dir + ".bias", Shape{4 * h});
    }
    out.emplace_back(p + "proj.weight", Shape{d, 2 * h});
    out.emplace_back(p + "proj.bias", Shape{d});
    out.emplace_back(p + "norm.gain", Shape{d});
    out.emplace_back(p + "norm.offset", Shape{d});
    const Shape kernel = c.resampler == Resampler::kDepthwise ? Shape{d, f}
                                                              : Shape{d, d, f};
    out.emplace_back(p + "ds.kernel", kernel);
    out.emplace_back(p + "san.norm_in.gain", Shape{d});
    out.emplace_back(p + "san.norm_in.offset", Shape{d});
    for (const char* proj : {"q", "k", "v"}) {
      out.emplace_back(p + "san." + proj + ".weight", Shape{d, d});
      out.emplace_back(p + "san." + proj + ".bias", Shape{d});
    }
    out.emplace_back(p + "san.out.weight", Shape{d, d});
    out.emplace_back(p + "san.norm_out.gain", Shape{d});
    out.emplace_back(p + "san.norm_out.offset", Shape{d});
    out.emplace_back(p + "us.kernel", kernel);
  }
  out.emplace_back("mask.prelu", Shape{1});
  out.emplace_back("mask.weight", Shape{c.sources * e, d});
  out.emplace_back("mask.bias", Shape{c.sources * e});
  out.emplace_back("decoder.weight", Shape{m, e});
  return out;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// (fan_in, fan_out) of a weight tensor given its role.
std::pair<double, double> fans(const std::string& path, const Shape& shape) {
  if (ends_with(path, ".kernel")) {
    // Resampling kernels: one output sums f taps (DS) or one input feeds f
    // outputs (US).
    const double taps = static_cast<double>(shape.back());
    const double mix = shape.size() == 3 ? static_cast<double>(shape[1]) : 1.0;
    return ends_with(path, "ds.kernel") ? std::pair{taps * mix, mix}
                                        : std::pair{mix, taps * mix};
  }
  return {static_cast<double>(shape[1]), static_cast<double>(shape[0])};
}

}  // namespace

ParamTable<float> init_params(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  ParamTable<float> table;
  const std::size_t h = config.hidden;
  for (auto& [path, shape] : parameter_manifest(config)) {
    Tensor<float> value(shape);
    if (ends_with(path, ".gain")) {
      value.fill(1.0f);
    } else if (path == "mask.prelu") {
      value.fill(0.25f);
    } else if (ends_with(path, "lstm.fwd.bias") || ends_with(path, "lstm.bwd.bias")) {
      for (std::size_t u = h; u < 2 * h; ++u) value[u] = 1.0f;
    } else if (ends_with(path, ".bias") || ends_with(path, ".offset")) {
      // zeros
    } else {
      auto [fan_in, fan_out] = fans(path, shape);
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : value.storage())
        v = static_cast<float>(rng.uniform(-bound, bound));
    }
    table.add(path, std::move(value));
  }
  return table;
}

}  // namespace sandglasset::model

// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "sandglasset/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace sandglasset::cli {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true/false, got '" + v + "'");
}

std::string num(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void apply_preset(RunConfig& c, const std::string& name) {
  if (name == "full") c.model = model::ModelConfig::full();
  else if (name == "desk") c.model = model::ModelConfig::desk();
  else if (name == "tiny") c.model = model::ModelConfig::tiny();
  else throw ConfigError("unknown preset '" + name + "' (full, desk, tiny)");
  c.preset = name;
}

void set(RunConfig& c, const std::string& key, const std::string& v) {
  auto& t = c.train;
  if (model::set_config_field(c.model, key, v)) return;
  if (key == "lr") t.lr = to_double(key, v);
  else if (key == "lr_decay") t.lr_decay = to_double(key, v);
  else if (key == "patience") t.patience = to_int<std::size_t>(key, v);
  else if (key == "batch_size") t.batch_size = to_int<std::size_t>(key, v);
  else if (key == "max_epochs") t.max_epochs = to_int<std::size_t>(key, v);
  else if (key == "seed") t.seed = to_int<std::uint64_t>(key, v);
  else if (key == "post_train") t.post_train = to_bool(key, v);
  else if (key == "clip_norm") t.clip_norm = to_double(key, v);
  else if (key == "crop") t.crop = to_int<std::size_t>(key, v);
  else if (key == "time_budget_s") t.time_budget_s = to_double(key, v);
  else if (key == "steps_per_epoch") t.steps_per_epoch = to_int<std::size_t>(key, v);
  else if (key == "speakers") c.speakers = to_int<std::size_t>(key, v);
  else if (key == "train_count") c.train_count = to_int<std::size_t>(key, v);
  else if (key == "val_count") c.val_count = to_int<std::size_t>(key, v);
  else if (key == "test_count") c.test_count = to_int<std::size_t>(key, v);
  else if (key == "samples") c.samples = to_int<std::size_t>(key, v);
  else if (key == "snr_low") c.snr_low = to_double(key, v);
  else if (key == "snr_high") c.snr_high = to_double(key, v);
  else if (key == "test_seed") c.test_seed = to_int<std::uint64_t>(key, v);
  else if (key == "init_checkpoint") c.init_checkpoint = v;
  else throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::vector<std::pair<std::string, std::string>> RunConfig::fields() const {
  std::vector<std::pair<std::string, std::string>> out{{"preset", preset}};
  for (auto& kv : model::config_fields(model)) out.push_back(kv);
  const auto& t = train;
  out.insert(out.end(), {
      {"lr", num(t.lr)},
      {"lr_decay", num(t.lr_decay)},
      {"patience", std::to_string(t.patience)},
      {"batch_size", std::to_string(t.batch_size)},
      {"max_epochs", std::to_string(t.max_epochs)},
      {"seed", std::to_string(t.seed)},
      {"post_train", t.post_train ? "true" : "false"},
      {"clip_norm", num(t.clip_norm)},
      {"crop", std::to_string(t.crop)},
      {"time_budget_s", num(t.time_budget_s)},
      {"steps_per_epoch", std::to_string(t.steps_per_epoch)},
      {"speakers", std::to_string(speakers)},
      {"train_count", std::to_string(train_count)},
      {"val_count", std::to_string(val_count)},
      {"test_count", std::to_string(test_count)},
      {"samples", std::to_string(samples)},
      {"snr_low", num(snr_low)},
      {"snr_high", num(snr_high)},
      {"test_seed", std::to_string(test_seed)},
      {"init_checkpoint", init_checkpoint},
  });
  return out;
}

RunConfig parse_run_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(number) +
                        ": expected 'key = value', got '" + line + "'");
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  RunConfig c;
  for (const auto& [k, v] : entries)
    if (k == "preset") apply_preset(c, v);
  for (const auto& [k, v] : entries)
    if (k != "preset") set(c, k, v);
  c.model.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_run_config(buf.str());
}

std::string format_run_config(const RunConfig& config) {
  std::string out;
  for (const auto& [k, v] : config.fields()) out += k + " = " + v + "\n";
  return out;
}

}  // namespace sandglasset::cli

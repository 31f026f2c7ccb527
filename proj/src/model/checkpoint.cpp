// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "sandglasset/model.hpp"

namespace sandglasset::model {

namespace {

constexpr const char* kMagic = "sandglasset-checkpoint";
constexpr int kVersion = 1;

std::string shape_token(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out;
}

Shape parse_shape(const std::string& token) {
  Shape shape;
  std::stringstream in(token);
  std::string part;
  while (std::getline(in, part, 'x')) {
    try {
      shape.push_back(std::stoul(part));
    } catch (const std::exception&) {
      throw FormatError("checkpoint: bad shape '" + token + "'");
    }
  }
  return shape;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const ParamTable<float>& params) {
  std::ostringstream header;
  header << kMagic << " " << kVersion << "\n";
  for (const auto& [key, value] : config_fields(config))
    header << "config " << key << " " << value << "\n";
  std::size_t offset = 0;
  for (const auto& p : params.entries()) {
    header << "param " << p.path << " " << shape_token(p.value.shape()) << " "
           << offset << "\n";
    offset += p.value.size() * 4;
  }
  header << "data " << offset << "\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
  out << header.str();
  std::string bytes;
  bytes.reserve(offset);
  for (const auto& p : params.entries())
    for (float v : p.value.values()) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int shift = 0; shift < 32; shift += 8)
        bytes.push_back(static_cast<char>((bits >> shift) & 0xffu));
    }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("checkpoint: empty file");
  {
    std::istringstream first(line);
    std::string magic;
    int version = 0;
    first >> magic >> version;
    if (magic != kMagic) throw FormatError("checkpoint: '" + path + "' is not a checkpoint");
    if (version != kVersion)
      throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  }

  Checkpoint ck;
  struct Entry { std::string path; Shape shape; std::size_t offset; };
  std::vector<Entry> manifest;
  std::size_t data_bytes = 0;
  bool saw_data = false;
  while (!saw_data && std::getline(in, line)) {
    std::istringstream row(line);
    std::string kind;
    row >> kind;
    if (kind == "config") {
      std::string key, value;
      row >> key >> value;
      if (!set_config_field(ck.config, key, value))
        throw FormatError("checkpoint: unknown config field '" + key + "'");
    } else if (kind == "param") {
      Entry e;
      std::string shape;
      row >> e.path >> shape >> e.offset;
      if (!row) throw FormatError("checkpoint: malformed line '" + line + "'");
      e.shape = parse_shape(shape);
      manifest.push_back(std::move(e));
    } else if (kind == "data") {
      row >> data_bytes;
      saw_data = true;
    } else {
      throw FormatError("checkpoint: unexpected header line '" + line + "'");
    }
  }
  if (!saw_data) throw FormatError("checkpoint: truncated header");
  ck.config.validate();

  std::string bytes(data_bytes, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(data_bytes));
  if (static_cast<std::size_t>(in.gcount()) != data_bytes)
    throw FormatError("checkpoint: data section truncated");

  for (const auto& e : manifest) {
    const std::size_t count = element_count(e.shape);
    if (e.offset + count * 4 > data_bytes)
      throw FormatError("checkpoint: parameter '" + e.path + "' overruns data");
    std::vector<float> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(
                    static_cast<unsigned char>(bytes[e.offset + 4 * i + b]))
                << (8 * b);
      values[i] = std::bit_cast<float>(bits);
    }
    ck.params.add(e.path, Tensor<float>(e.shape, std::move(values)));
  }

  // The manifest must describe exactly the model the config implies.
  const auto expected = parameter_manifest(ck.config);
  if (expected.size() != manifest.size())
    throw FormatError("checkpoint: parameter count does not match its config");
  for (const auto& [p, shape] : expected)
    if (!ck.params.contains(p) || ck.params.get(p).value.shape() != shape)
      throw FormatError("checkpoint: parameter '" + p + "' missing or misshaped");
  return ck;
}

}  // namespace sandglasset::model

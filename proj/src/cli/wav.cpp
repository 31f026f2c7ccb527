// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "sandglasset/wav.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "sandglasset/errors.hpp"

namespace sandglasset::wav {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
std::uint32_t get_u32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}
std::uint16_t get_u16(const std::string& s, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[at]) |
                                    (static_cast<unsigned char>(s[at + 1]) << 8));
}

}  // namespace

std::int16_t to_pcm(float x) {
  const double c = std::clamp(static_cast<double>(x), -1.0, 1.0);
  return static_cast<std::int16_t>(std::lround(c * 32767.0));
}

float from_pcm(std::int16_t v) { return static_cast<float>(v / 32767.0); }

WavFile from_float(const std::vector<float>& mono, std::uint32_t sample_rate) {
  WavFile f;
  f.sample_rate = sample_rate;
  f.samples.reserve(mono.size());
  for (float x : mono) f.samples.push_back(to_pcm(std::isfinite(x) ? x : 0.0f));
  return f;
}

std::vector<float> to_float(const WavFile& file) {
  if (file.channels != 1)
    throw ConfigError("expected mono audio, got " + std::to_string(file.channels) +
                      " channels");
  std::vector<float> out;
  out.reserve(file.samples.size());
  for (auto v : file.samples) out.push_back(from_pcm(v));
  return out;
}

void write(const std::string& path, const WavFile& file) {
  const auto data_bytes = static_cast<std::uint32_t>(file.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, file.channels);
  put_u32(out, file.sample_rate);
  put_u32(out, file.sample_rate * file.channels * 2);
  put_u16(out, static_cast<std::uint16_t>(file.channels * 2));
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (auto v : file.samples) put_u16(out, static_cast<std::uint16_t>(v));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("write to '" + path + "' failed");
}

WavFile read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "'");
  const std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (s.size() < 12 || s.compare(0, 4, "RIFF") != 0 || s.compare(8, 4, "WAVE") != 0)
    throw FormatError("'" + path + "' is not a RIFF/WAVE file");
  WavFile out;
  bool have_fmt = false;
  std::size_t at = 12;
  while (at + 8 <= s.size()) {
    const std::string id = s.substr(at, 4);
    const std::uint32_t size = get_u32(s, at + 4);
    const std::size_t body = at + 8;
    if (body + size > s.size()) throw FormatError("'" + path + "': truncated chunk " + id);
    if (id == "fmt ") {
      if (size < 16) throw FormatError("'" + path + "': short fmt chunk");
      const auto format = get_u16(s, body);
      out.channels = get_u16(s, body + 2);
      out.sample_rate = get_u32(s, body + 4);
      const auto bits = get_u16(s, body + 14);
      if (format != 1 || bits != 16)
        throw FormatError("'" + path + "': only 16-bit PCM is supported");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("'" + path + "': data chunk before fmt chunk");
      out.samples.resize(size / 2);
      for (std::size_t i = 0; i < out.samples.size(); ++i)
        out.samples[i] = static_cast<std::int16_t>(get_u16(s, body + 2 * i));
      return out;
    }
    at = body + size + (size & 1);
  }
  throw FormatError("'" + path + "': no data chunk");
}

}  // namespace sandglasset::wav

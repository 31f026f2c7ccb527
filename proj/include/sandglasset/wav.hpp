// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sandglasset::wav {

// 16-bit PCM. Samples are interleaved when channels > 1.
struct WavFile {
  std::uint32_t sample_rate = 8000;
  std::uint16_t channels = 1;
  std::vector<std::int16_t> samples;
};

// x_int = round(clamp(x, -1, 1) * 32767) and back by / 32767.
std::int16_t to_pcm(float x);
float from_pcm(std::int16_t v);

WavFile from_float(const std::vector<float>& mono, std::uint32_t sample_rate);
std::vector<float> to_float(const WavFile& file);  // mono only

// Canonical 44-byte header: RIFF, "fmt " (PCM, 16 bit), "data".
void write(const std::string& path, const WavFile& file);
// Accepts extra chunks before/after "fmt "; rejects anything but 16-bit PCM.
WavFile read(const std::string& path);

}  // namespace sandglasset::wav

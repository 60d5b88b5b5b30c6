#pragma once

#include <string>

#include "diar/audio.hpp"

namespace diar {

enum class WavFormat { pcm16, float32 };

// RIFF/WAVE reader: PCM 8/16/24/32-bit and 32-bit float, any channel count.
// Samples are scaled to [-1, 1]; out-of-range float samples are clamped and
// counted in *clipped_count when provided.
AudioBuffer load_wav(const std::string& path, int* clipped_count = nullptr);

void save_wav(const AudioBuffer& buffer, const std::string& path,
              WavFormat format = WavFormat::pcm16);

} // namespace diar

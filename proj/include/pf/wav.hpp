#pragma once

// RIFF/WAVE decoding to mono float, a 16-bit PCM writer, and sample-rate
// conversion via a Kaiser-windowed-sinc polyphase filter.

#include <cstdint>
#include <string>
#include <vector>

namespace pf {

struct AudioClip {
  std::vector<float> samples;  // mono, amplitudes in [-1, 1]
  std::uint32_t sample_rate = 0;
};

/// Decode a PCM WAV file (8/16/24-bit integer or 32-bit float, any channel
/// count). Channels are averaged to mono. Truncation and unsupported
/// encodings raise errors that name the byte offset.
AudioClip read_wav(const std::string& path);

/// Write mono samples as 16-bit PCM (values clamped to [-1, 1]).
void write_wav(const std::string& path, const std::vector<float>& samples,
               std::uint32_t sample_rate);

/// Windowed-sinc resampler: Kaiser beta = 8, 64 taps per phase. Identity when
/// the rates match. Output length = floor(n * to_rate / from_rate).
std::vector<float> resample(const std::vector<float>& x, std::uint32_t from_rate,
                            std::uint32_t to_rate);

}  // namespace pf

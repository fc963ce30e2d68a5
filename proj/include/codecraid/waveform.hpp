#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace codecraid {

// Mono audio. Samples are nominally in [-1, 1]; values outside that range
// are allowed in memory and clamped on export.
struct Waveform {
  std::vector<double> samples;
  int sample_rate_hz = 0;

  Waveform() = default;
  Waveform(std::vector<double> s, int rate) : samples(std::move(s)), sample_rate_hz(rate) {}

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_s() const {
    return sample_rate_hz > 0 ? static_cast<double>(samples.size()) / sample_rate_hz : 0.0;
  }
  std::span<const double> view() const { return samples; }

  // Throws ConfigError when the rate is non-positive, the waveform is empty
  // or any sample is non-finite.
  void validate() const;
};

Waveform load_wav(const std::filesystem::path& path);

// 16-bit PCM mono. Samples are clamped to [-1, 1] and scaled by 32767
// (negative full scale maps to -32768).
void save_wav(const Waveform& w, const std::filesystem::path& path);

std::int16_t quantize_pcm16(double sample);

// Sample-wise helpers used throughout.
Waveform operator+(const Waveform& a, const Waveform& b);
Waveform operator-(const Waveform& a, const Waveform& b);
Waveform scaled(const Waveform& w, double gain);
double energy(std::span<const double> x);
double rms(std::span<const double> x);
double linf(std::span<const double> x);

}  // namespace codecraid

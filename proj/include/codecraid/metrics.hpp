#pragma once

#include <utility>

#include "codecraid/waveform.hpp"

namespace codecraid {

inline constexpr double kDbCeiling = 100.0;
inline constexpr double kDbFloor = -100.0;

double clamp_db(double db);

// Brings two signals to a common length. Mismatches up to 1% are trimmed to
// the shorter length with a warning; larger ones throw ConfigError.
std::pair<Waveform, Waveform> align_lengths(const Waveform& a, const Waveform& b);

// 10 log10(|ref|^2 / |ref - test|^2), clamped to [-100, 100] dB.
double snr_db(const Waveform& reference, const Waveform& test);

// SNR against the codec's clean continuous round trip D(E(x)).
double snr_delta_db(const Waveform& clean_roundtrip, const Waveform& adversarial);

double si_sdr_db(const Waveform& reference, const Waveform& test);

// Log-spectral distance with a 1024-sample Hann window, hop 256 and a 1e-8
// magnitude floor.
double lsd_db(const Waveform& reference, const Waveform& test);

// Simplified integrated loudness: K-weighting, 400 ms blocks at 75%
// overlap, absolute gate at -70 LUFS only (no relative gate).
double lufs(const Waveform& w);
double delta_lufs(const Waveform& a, const Waveform& b);

struct AudioQualityReport {
  double snr_db = 0.0;
  double snr_delta_db = 0.0;
  double si_sdr_db = 0.0;
  double lsd_db = 0.0;
  double delta_lufs_db = 0.0;
};

// carrier: original x; clean_roundtrip: D(E(x)) (pass the carrier again for
// the waveform domain); adversarial: x_hat.
AudioQualityReport quality_report(const Waveform& carrier, const Waveform& clean_roundtrip,
                                  const Waveform& adversarial);

}  // namespace codecraid

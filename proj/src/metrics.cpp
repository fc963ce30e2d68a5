#include "codecraid/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include "codecraid/dsp.hpp"
#include "codecraid/error.hpp"

namespace codecraid {

double clamp_db(double db) {
  if (std::isnan(db)) return kDbFloor;
  return std::clamp(db, kDbFloor, kDbCeiling);
}

std::pair<Waveform, Waveform> align_lengths(const Waveform& a, const Waveform& b) {
  if (a.empty() || b.empty()) throw ConfigError("metric: empty signal");
  if (a.sample_rate_hz != b.sample_rate_hz) throw ConfigError("metric: sample rates differ");
  if (a.size() == b.size()) return {a, b};
  const std::size_t lo = std::min(a.size(), b.size());
  const std::size_t hi = std::max(a.size(), b.size());
  if (static_cast<double>(hi - lo) > 0.01 * static_cast<double>(hi))
    throw ConfigError("metric: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  log::warn("metric: trimming length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  Waveform ta = a, tb = b;
  ta.samples.resize(lo);
  tb.samples.resize(lo);
  return {ta, tb};
}

namespace {

double ratio_db(double num, double den) {
  if (den <= 0.0) return num > 0.0 ? kDbCeiling : kDbFloor;
  if (num <= 0.0) return kDbFloor;
  return clamp_db(10.0 * std::log10(num / den));
}

}  // namespace

double snr_db(const Waveform& reference, const Waveform& test) {
  const auto [r, t] = align_lengths(reference, test);
  double sig = 0.0, err = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    sig += r.samples[i] * r.samples[i];
    const double d = r.samples[i] - t.samples[i];
    err += d * d;
  }
  return ratio_db(sig, err);
}

double snr_delta_db(const Waveform& clean_roundtrip, const Waveform& adversarial) {
  return snr_db(clean_roundtrip, adversarial);
}

double si_sdr_db(const Waveform& reference, const Waveform& test) {
  auto [r, t] = align_lengths(reference, test);
  const auto demean = [](std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    for (double& x : v) x -= m;
  };
  demean(r.samples);
  demean(t.samples);
  const double rr = energy(r.samples);
  if (rr <= 1e-20) throw ConfigError("si_sdr: zero-energy reference");
  const double alpha = std::inner_product(t.samples.begin(), t.samples.end(), r.samples.begin(), 0.0) / rr;
  double target = 0.0, resid = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double s = alpha * r.samples[i];
    const double e = t.samples[i] - s;
    target += s * s;
    resid += e * e;
  }
  return ratio_db(target, resid);
}

double lsd_db(const Waveform& reference, const Waveform& test) {
  constexpr std::size_t kWin = 1024, kHop = 256;
  constexpr double kFloor = 1e-8;
  const auto [r, t] = align_lengths(reference, test);
  if (r.size() < kWin) throw ConfigError("lsd: signal shorter than one STFT window");
  const auto sr = stft(r.samples, r.sample_rate_hz, kWin, kHop, false);
  const auto st = stft(t.samples, t.sample_rate_hz, kWin, kHop, false);
  double acc = 0.0;
  for (std::size_t f = 0; f < sr.num_frames; ++f) {
    double frame = 0.0;
    for (std::size_t k = 0; k < sr.bins; ++k) {
      const double a = std::max(std::abs(sr.at(f, k)), kFloor);
      const double b = std::max(std::abs(st.at(f, k)), kFloor);
      const double d = 20.0 * (std::log10(a) - std::log10(b));
      frame += d * d;
    }
    acc += frame / static_cast<double>(sr.bins);
  }
  return std::sqrt(acc / static_cast<double>(sr.num_frames));
}

namespace {

struct Biquad {
  double b0, b1, b2, a1, a2;  // normalized by a0

  void run(std::vector<double>& x) const {
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (double& v : x) {
      const double y = b0 * v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = v;
      y2 = y1;
      y1 = y;
      v = y;
    }
  }
};

// K-weighting stages designed at an arbitrary rate via the bilinear
// transform; at 48 kHz they reproduce the published coefficients.
Biquad high_shelf(double fs) {
  constexpr double kGainDb = 3.99984385397, kQ = 0.7071752369554193, kFc = 1681.974450955533;
  const double k = std::tan(std::numbers::pi * kFc / fs);
  const double vh = std::pow(10.0, kGainDb / 20.0);
  const double vb = std::pow(vh, 0.4996667741545416);
  const double a0 = 1.0 + k / kQ + k * k;
  return {(vh + vb * k / kQ + k * k) / a0, 2.0 * (k * k - vh) / a0, (vh - vb * k / kQ + k * k) / a0,
          2.0 * (k * k - 1.0) / a0, (1.0 - k / kQ + k * k) / a0};
}

Biquad high_pass(double fs) {
  constexpr double kQ = 0.5003270373238773, kFc = 38.13547087602444;
  const double k = std::tan(std::numbers::pi * kFc / fs);
  const double a0 = 1.0 + k / kQ + k * k;
  return {1.0, -2.0, 1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / kQ + k * k) / a0};
}

}  // namespace

double lufs(const Waveform& w) {
  const auto fs = static_cast<double>(w.sample_rate_hz);
  if (w.sample_rate_hz <= 0) throw ConfigError("lufs: non-positive sample rate");
  const auto block = static_cast<std::size_t>(std::llround(0.4 * fs));
  const auto step = static_cast<std::size_t>(std::llround(0.1 * fs));
  if (w.size() < block) throw ConfigError("lufs: need at least 400 ms of audio");

  std::vector<double> k = w.samples;
  high_shelf(fs).run(k);
  high_pass(fs).run(k);

  // Gated integration: absolute gate at -70 LUFS, then a relative gate
  // 10 LU below the mean of the surviving blocks.
  constexpr double kAbsoluteGate = -70.0, kRelativeGate = -10.0;
  std::vector<double> blocks;
  for (std::size_t start = 0; start + block <= k.size(); start += step) {
    double ms = 0.0;
    for (std::size_t i = start; i < start + block; ++i) ms += k[i] * k[i];
    ms /= static_cast<double>(block);
    if (ms > 0.0 && -0.691 + 10.0 * std::log10(ms) > kAbsoluteGate) blocks.push_back(ms);
  }
  if (blocks.empty()) return kDbFloor;
  auto mean_loudness = [](const std::vector<double>& b) {
    double sum = 0.0;
    for (double v : b) sum += v;
    return -0.691 + 10.0 * std::log10(sum / static_cast<double>(b.size()));
  };
  const double gate = mean_loudness(blocks) + kRelativeGate;
  std::vector<double> kept;
  for (double ms : blocks)
    if (-0.691 + 10.0 * std::log10(ms) > gate) kept.push_back(ms);
  return clamp_db(mean_loudness(kept));
}

double delta_lufs(const Waveform& a, const Waveform& b) { return lufs(a) - lufs(b); }

AudioQualityReport quality_report(const Waveform& carrier, const Waveform& clean_roundtrip,
                                  const Waveform& adversarial) {
  AudioQualityReport q;
  q.snr_db = snr_db(carrier, adversarial);
  q.snr_delta_db = snr_delta_db(clean_roundtrip, adversarial);
  q.si_sdr_db = si_sdr_db(carrier, adversarial);
  q.lsd_db = lsd_db(carrier, adversarial);
  q.delta_lufs_db = delta_lufs(adversarial, carrier);
  return q;
}

}  // namespace codecraid

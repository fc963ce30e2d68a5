#include "codecraid/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>

#include "codecraid/error.hpp"

namespace codecraid {

namespace {

struct PlanPair {
  fftw_plan fwd;
  fftw_plan inv;
};

// FFTW's planner is not thread-safe; execution with the new-array API is.
std::pair<void*, void*> cached_plans(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, PlanPair> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) {
    std::vector<double> r(n);
    std::vector<fftw_complex> c(n / 2 + 1);
    const int ni = static_cast<int>(n);
    PlanPair p{};
    p.fwd = fftw_plan_dft_r2c_1d(ni, r.data(), c.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
    p.inv = fftw_plan_dft_c2r_1d(ni, c.data(), r.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
    it = cache.emplace(n, p).first;
  }
  return {static_cast<void*>(it->second.fwd), static_cast<void*>(it->second.inv)};
}

double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

}  // namespace

RealFft::RealFft(std::size_t n) : n_(n) {
  if (n < 2) throw ConfigError("RealFft: size must be >= 2");
  auto [f, i] = cached_plans(n);
  fwd_ = f;
  inv_ = i;
}

void RealFft::forward(std::span<const double> in, std::span<Complex> out) const {
  fftw_execute_dft_r2c(static_cast<fftw_plan>(fwd_), const_cast<double*>(in.data()),
                       reinterpret_cast<fftw_complex*>(out.data()));
}

void RealFft::inverse(std::span<const Complex> in, std::span<double> out) const {
  // c2r overwrites its input.
  std::vector<Complex> tmp(in.begin(), in.end());
  fftw_execute_dft_c2r(static_cast<fftw_plan>(inv_), reinterpret_cast<fftw_complex*>(tmp.data()), out.data());
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

Spectrogram stft(std::span<const double> x, int sample_rate_hz, std::size_t window_len, std::size_t hop,
                 bool centered) {
  if (window_len < 2 || hop == 0 || hop > window_len) throw ConfigError("stft: invalid window/hop");
  Spectrogram s;
  s.window_len = window_len;
  s.hop = hop;
  s.bins = window_len / 2 + 1;
  s.sample_rate_hz = sample_rate_hz;
  s.signal_len = x.size();
  s.pad = centered ? window_len : 0;
  const std::size_t padded = x.size() + 2 * s.pad;
  if (padded < window_len) throw ConfigError("stft: signal shorter than one window");
  s.num_frames = (padded - window_len) / hop + 1;
  s.frames.resize(s.num_frames * s.bins);

  const RealFft fft(window_len);
  const auto win = hann_window(window_len);
  std::vector<double> frame(window_len);
  for (std::size_t f = 0; f < s.num_frames; ++f) {
    const std::size_t start = f * hop;
    for (std::size_t i = 0; i < window_len; ++i) {
      const std::size_t p = start + i;
      const bool inside = p >= s.pad && p - s.pad < x.size();
      frame[i] = inside ? x[p - s.pad] * win[i] : 0.0;
    }
    fft.forward(frame, std::span<Complex>(s.frames).subspan(f * s.bins, s.bins));
  }
  return s;
}

std::vector<double> istft(const Spectrogram& s) {
  const std::size_t padded = s.signal_len + 2 * s.pad;
  std::vector<double> acc(std::max(padded, (s.num_frames - 1) * s.hop + s.window_len), 0.0);
  std::vector<double> norm(acc.size(), 0.0);
  const RealFft fft(s.window_len);
  const auto win = hann_window(s.window_len);
  std::vector<double> frame(s.window_len);
  const double scale = 1.0 / static_cast<double>(s.window_len);
  for (std::size_t f = 0; f < s.num_frames; ++f) {
    fft.inverse(std::span<const Complex>(s.frames).subspan(f * s.bins, s.bins), frame);
    const std::size_t start = f * s.hop;
    for (std::size_t i = 0; i < s.window_len; ++i) {
      acc[start + i] += frame[i] * scale * win[i];
      norm[start + i] += win[i] * win[i];
    }
  }
  std::vector<double> out(s.signal_len);
  for (std::size_t i = 0; i < s.signal_len; ++i) {
    const double n = norm[i + s.pad];
    out[i] = n > 1e-10 ? acc[i + s.pad] / n : 0.0;
  }
  return out;
}

Resampler::Resampler(int in_rate_hz, int out_rate_hz) : in_rate_(in_rate_hz), out_rate_(out_rate_hz) {
  if (in_rate_hz <= 0 || out_rate_hz <= 0) throw ConfigError("resample: non-positive rate");
  identity_ = in_rate_hz == out_rate_hz;
  const long g = std::gcd(in_rate_hz, out_rate_hz);
  up_ = out_rate_hz / g;
  down_ = in_rate_hz / g;
  if (identity_) return;

  constexpr double kBeta = 8.0;
  constexpr double kTapsPerPhase = 64.0;
  const double ratio = static_cast<double>(in_rate_hz) / out_rate_hz;
  half_width_ = static_cast<long>(std::ceil(kTapsPerPhase / 2.0 * std::max(1.0, ratio)));
  // Cutoff relative to the input Nyquist.
  const double cutoff = 0.97 * std::min(1.0, 1.0 / ratio);
  const double i0_beta = bessel_i0(kBeta);

  phase_taps_.assign(static_cast<std::size_t>(up_), std::vector<double>(static_cast<std::size_t>(2 * half_width_)));
  for (long p = 0; p < up_; ++p) {
    const double frac = static_cast<double>(p) / static_cast<double>(up_);
    auto& taps = phase_taps_[static_cast<std::size_t>(p)];
    double sum = 0.0;
    for (long j = -half_width_ + 1; j <= half_width_; ++j) {
      const double tau = frac - static_cast<double>(j);
      const double arg = cutoff * tau;
      const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      const double r = tau / static_cast<double>(half_width_);
      const double win = std::abs(r) >= 1.0 ? 0.0 : bessel_i0(kBeta * std::sqrt(1.0 - r * r)) / i0_beta;
      const double h = cutoff * sinc * win;
      taps[static_cast<std::size_t>(j + half_width_ - 1)] = h;
      sum += h;
    }
    for (double& h : taps) h /= sum;
  }
}

std::size_t Resampler::output_length(std::size_t input_length) const {
  if (identity_) return input_length;
  const auto n = static_cast<long>(input_length);
  return static_cast<std::size_t>((n * up_ + down_ - 1) / down_);
}

template <typename Fn>
void Resampler::for_each_tap(std::size_t input_length, std::size_t m, Fn&& fn) const {
  const long pos = static_cast<long>(m) * down_;
  const long n0 = pos / up_;
  const long phase = pos % up_;
  const auto& taps = phase_taps_[static_cast<std::size_t>(phase)];
  const long lo = std::max<long>(-half_width_ + 1, -n0);
  const long hi = std::min<long>(half_width_, static_cast<long>(input_length) - 1 - n0);
  for (long j = lo; j <= hi; ++j) fn(static_cast<std::size_t>(n0 + j), taps[static_cast<std::size_t>(j + half_width_ - 1)]);
}

std::vector<double> Resampler::apply(std::span<const double> x) const {
  if (identity_) return {x.begin(), x.end()};
  std::vector<double> y(output_length(x.size()));
  for (std::size_t m = 0; m < y.size(); ++m) {
    double acc = 0.0;
    for_each_tap(x.size(), m, [&](std::size_t n, double h) { acc += h * x[n]; });
    y[m] = acc;
  }
  return y;
}

std::vector<double> Resampler::apply_transpose(std::span<const double> grad_out, std::size_t input_length) const {
  if (identity_) return {grad_out.begin(), grad_out.end()};
  std::vector<double> g(input_length, 0.0);
  for (std::size_t m = 0; m < grad_out.size(); ++m) {
    const double go = grad_out[m];
    for_each_tap(input_length, m, [&](std::size_t n, double h) { g[n] += h * go; });
  }
  return g;
}

Waveform resample(const Waveform& w, int target_rate_hz) {
  if (target_rate_hz <= 0) throw ConfigError("resample: non-positive rate");
  if (target_rate_hz == w.sample_rate_hz) return w;
  const Resampler r(w.sample_rate_hz, target_rate_hz);
  return Waveform(r.apply(w.samples), target_rate_hz);
}

void power_spectrum(const RealFft& fft, std::span<const double> frame, std::span<Complex> scratch,
                    std::span<double> power) {
  fft.forward(frame, scratch);
  for (std::size_t k = 0; k < fft.bins(); ++k) power[k] = std::norm(scratch[k]);
}

void power_spectrum_backward(const RealFft& fft, std::span<const Complex> spectrum, std::span<const double> grad_power,
                             std::span<double> grad_frame) {
  // d|X_k|^2/dx_n = 2 Re(X_k e^{+i2pi kn/N}); the c2r transform doubles the
  // interior bins implicitly, so only DC and (even-N) Nyquist need the factor.
  const std::size_t n = fft.size();
  const std::size_t bins = fft.bins();
  std::vector<Complex> y(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    const bool edge = k == 0 || (n % 2 == 0 && k == bins - 1);
    y[k] = (edge ? 2.0 : 1.0) * grad_power[k] * spectrum[k];
  }
  fft.inverse(y, grad_frame);
}

}  // namespace codecraid

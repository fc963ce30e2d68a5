#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "codecraid/waveform.hpp"

namespace codecraid {

using Complex = std::complex<double>;

// Real-input FFT of a fixed power-of-two-or-not size, backed by FFTW.
// Instances are cheap handles onto a process-wide plan cache and may be
// used concurrently.
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  // in: n reals, out: n/2+1 complex.
  void forward(std::span<const double> in, std::span<Complex> out) const;
  // Unnormalized inverse: out[t] = sum over the Hermitian extension of in.
  void inverse(std::span<const Complex> in, std::span<double> out) const;

 private:
  std::size_t n_;
  void* fwd_;
  void* inv_;
};

std::vector<double> hann_window(std::size_t n);  // periodic

// Complex STFT. Frames are laid out frame-major: frames[f * bins + k].
struct Spectrogram {
  std::vector<Complex> frames;
  std::size_t bins = 0;
  std::size_t num_frames = 0;
  std::size_t window_len = 0;
  std::size_t hop = 0;
  int sample_rate_hz = 0;
  std::size_t signal_len = 0;  // length of the analysed signal (before padding)
  std::size_t pad = 0;         // zeros prepended before framing

  Complex& at(std::size_t frame, std::size_t bin) { return frames[frame * bins + bin]; }
  const Complex& at(std::size_t frame, std::size_t bin) const { return frames[frame * bins + bin]; }
  double bin_hz(std::size_t bin) const {
    return static_cast<double>(bin) * sample_rate_hz / static_cast<double>(window_len);
  }
};

// Hann-windowed STFT. With centered=true the signal is zero-padded by
// window_len on both sides so every sample is covered by the full window
// overlap and istft reconstructs the whole signal; otherwise frames start at
// sample 0 and the trailing partial frame is dropped.
Spectrogram stft(std::span<const double> x, int sample_rate_hz, std::size_t window_len, std::size_t hop,
                 bool centered = true);

// Weighted overlap-add inverse of a centered stft. Returns signal_len samples.
std::vector<double> istft(const Spectrogram& s);

// Rational windowed-sinc resampler (Kaiser beta 8, 64 taps per phase at the
// lower of the two rates). Linear, so it also exposes its transpose for
// reverse-mode differentiation.
class Resampler {
 public:
  Resampler(int in_rate_hz, int out_rate_hz);

  int in_rate() const { return in_rate_; }
  int out_rate() const { return out_rate_; }
  std::size_t output_length(std::size_t input_length) const;

  std::vector<double> apply(std::span<const double> x) const;
  // Adjoint of apply(): maps d(loss)/d(output) to d(loss)/d(input).
  std::vector<double> apply_transpose(std::span<const double> grad_out, std::size_t input_length) const;

 private:
  int in_rate_, out_rate_;
  long up_, down_;   // out/in = up/down in lowest terms
  long half_width_;  // taps on each side, in input samples
  std::vector<std::vector<double>> phase_taps_;  // [phase][2*half_width]
  bool identity_;

  template <typename Fn>
  void for_each_tap(std::size_t input_length, std::size_t m, Fn&& fn) const;
};

Waveform resample(const Waveform& w, int target_rate_hz);

// Power spectrum |X_k|^2 of a real frame and the adjoint that maps
// d(loss)/d(power) back to d(loss)/d(frame).
void power_spectrum(const RealFft& fft, std::span<const double> frame, std::span<Complex> scratch,
                    std::span<double> power);
void power_spectrum_backward(const RealFft& fft, std::span<const Complex> spectrum, std::span<const double> grad_power,
                             std::span<double> grad_frame);

}  // namespace codecraid

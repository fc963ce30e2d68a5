#include "codecraid/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "codecraid/dsp.hpp"
#include "codecraid/error.hpp"

namespace codecraid::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Formant {
  double freq, bandwidth, gain;
};

struct PhoneShape {
  char letter;
  bool voiced;
  std::vector<Formant> formants;  // voiced
  double noise_lo = 0, noise_hi = 0;  // unvoiced band
  double level = 1.0;
  double min_dur = 0.07, max_dur = 0.12;
};

const std::vector<PhoneShape>& shapes() {
  static const std::vector<PhoneShape> s{
      {'a', true, {{730, 90, 1.0}, {1090, 110, 0.6}, {2440, 160, 0.25}}},
      {'e', true, {{530, 80, 1.0}, {1840, 120, 0.5}, {2480, 160, 0.3}}},
      {'i', true, {{270, 60, 1.0}, {2290, 120, 0.45}, {3010, 180, 0.3}}},
      {'o', true, {{570, 80, 1.0}, {840, 100, 0.7}, {2410, 160, 0.15}}},
      {'u', true, {{300, 60, 1.0}, {870, 100, 0.4}, {2240, 160, 0.1}}},
      {'m', true, {{250, 60, 1.0}, {1100, 200, 0.15}, {2300, 250, 0.05}}, 0, 0, 0.6},
      {'n', true, {{250, 60, 1.0}, {1600, 200, 0.2}, {2600, 250, 0.08}}, 0, 0, 0.6},
      {'s', false, {}, 3500, 7000, 0.35},
      {'f', false, {}, 1200, 5500, 0.25},
      {'k', false, {}, 1500, 3500, 0.5, 0.04, 0.06},
  };
  return s;
}

const PhoneShape& shape_for(char c) {
  for (const auto& s : shapes())
    if (s.letter == c) return s;
  throw ConfigError(std::string("synth: no phone for letter '") + c + "'");
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Band-limited Gaussian noise via an FFT mask, normalized to unit RMS.
std::vector<double> band_noise(Rng& rng, int rate, std::size_t n, double lo, double hi) {
  if (n < 2) return std::vector<double>(n, 0.0);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(n);
  for (double& v : x) v = g(rng);
  const RealFft fft(n);
  std::vector<Complex> spec(fft.bins());
  fft.forward(x, spec);
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const double f = static_cast<double>(k) * rate / static_cast<double>(n);
    if (f < lo || f > hi) spec[k] = 0.0;
  }
  fft.inverse(spec, x);
  const double r = rms(x);
  if (r > 0) for (double& v : x) v /= r;
  return x;
}

// Raised-cosine attack/release envelope.
double envelope(double t, double dur, double ramp) {
  if (t < 0 || t > dur) return 0.0;
  const double r = std::min(ramp, dur / 2);
  if (t < r) return 0.5 - 0.5 * std::cos(std::numbers::pi * t / r);
  if (t > dur - r) return 0.5 - 0.5 * std::cos(std::numbers::pi * (dur - t) / r);
  return 1.0;
}

void render_phone(Rng& rng, const PhoneShape& shape, double f0, int rate, std::size_t start, std::size_t len,
                  std::vector<double>& out) {
  const double dur = static_cast<double>(len) / rate;
  if (shape.voiced) {
    const double nyq_limit = std::min(5000.0, 0.45 * rate);
    const double glide = uniform(rng, -0.08, 0.08);
    std::vector<double> phase(static_cast<std::size_t>(nyq_limit / (f0 * 0.9)) + 1, 0.0);
    for (std::size_t h = 0; h < phase.size(); ++h) phase[h] = uniform(rng, 0, kTwoPi);
    for (std::size_t i = 0; i < len; ++i) {
      const double t = static_cast<double>(i) / rate;
      const double f = f0 * (1.0 + glide * t / dur);
      double s = 0.0;
      for (std::size_t h = 1; h <= phase.size(); ++h) {
        const double fh = f * static_cast<double>(h);
        if (fh >= nyq_limit) break;
        double amp = 0.0;
        for (const auto& fm : shape.formants) {
          const double d = (fh - fm.freq) / fm.bandwidth;
          amp += fm.gain / (1.0 + d * d);
        }
        amp /= (1.0 + fh / 1500.0);
        phase[h - 1] += kTwoPi * fh / rate;
        s += amp * std::sin(phase[h - 1]);
      }
      out[start + i] += 0.25 * shape.level * s * envelope(t, dur, 0.015);
    }
  } else {
    const auto noise = band_noise(rng, rate, len, shape.noise_lo, std::min(shape.noise_hi, 0.48 * rate));
    for (std::size_t i = 0; i < len; ++i) {
      const double t = static_cast<double>(i) / rate;
      out[start + i] += 0.15 * shape.level * noise[i] * envelope(t, dur, 0.01);
    }
  }
}

}  // namespace

std::string LabelledClip::transcript() const {
  std::string s;
  for (const auto& p : phones) s += p.letter;
  return s;
}

const std::string& phone_inventory() {
  static const std::string inv = [] {
    std::string s;
    for (const auto& p : shapes()) s += p.letter;
    return s;
  }();
  return inv;
}

LabelledClip speech_from_letters(Rng& rng, int rate, double duration_s, const std::string& letters) {
  const auto n = static_cast<std::size_t>(std::llround(duration_s * rate));
  LabelledClip clip;
  clip.audio = Waveform(std::vector<double>(n, 0.0), rate);
  if (letters.empty()) return clip;

  std::vector<double> durs;
  double total = 0.0;
  for (char c : letters) {
    const auto& sh = shape_for(c);
    durs.push_back(uniform(rng, sh.min_dur, sh.max_dur));
    total += durs.back();
  }
  const double margin = 0.03;
  double slack = duration_s - total - 2 * margin;
  if (slack < 0) {
    const double scale = std::max(0.2, (duration_s - 2 * margin) / total);
    for (double& d : durs) d *= scale;
    total *= scale;
    slack = std::max(0.0, duration_s - total - 2 * margin);
  }
  // Random split of the slack into leading gap, inter-phone gaps, tail.
  std::vector<double> cuts(letters.size() + 1);
  double csum = 0.0;
  for (double& c : cuts) {
    c = uniform(rng, 0.2, 1.0);
    csum += c;
  }
  const double f0 = uniform(rng, 100.0, 210.0);
  double t = margin + slack * cuts[0] / csum;
  for (std::size_t i = 0; i < letters.size(); ++i) {
    const auto start = static_cast<std::size_t>(t * rate);
    const auto len = std::min(static_cast<std::size_t>(durs[i] * rate), n - std::min(n, start));
    if (len > 0) render_phone(rng, shape_for(letters[i]), f0 * uniform(rng, 0.95, 1.05), rate, start, len, clip.audio.samples);
    clip.phones.push_back({letters[i], t, t + durs[i]});
    t += durs[i] + slack * cuts[i + 1] / csum;
  }
  const double gain = uniform(rng, 0.6, 1.4);
  for (double& v : clip.audio.samples) v *= gain;
  return clip;
}

LabelledClip speech(Rng& rng, int rate, double duration_s, int min_phones, int max_phones) {
  const auto& inv = phone_inventory();
  const int count = std::uniform_int_distribution<int>(min_phones, max_phones)(rng);
  std::string letters;
  std::uniform_int_distribution<std::size_t> pick(0, inv.size() - 1);
  for (int i = 0; i < count; ++i) {
    char c = inv[pick(rng)];
    // Adjacent duplicates would be merged by the blank-collapse decoder.
    while (!letters.empty() && letters.back() == c) c = inv[pick(rng)];
    letters += c;
  }
  return speech_from_letters(rng, rate, duration_s, letters);
}

Waveform music(Rng& rng, int rate, double duration_s) {
  const auto n = static_cast<std::size_t>(std::llround(duration_s * rate));
  std::vector<double> x(n, 0.0);
  static const double scale[] = {0, 2, 4, 7, 9, 12, 14, 16};
  const double root = uniform(rng, 130.0, 330.0);
  const int voices = std::uniform_int_distribution<int>(1, 2)(rng);
  for (int v = 0; v < voices; ++v) {
    double t = uniform(rng, 0.0, 0.05);
    while (t < duration_s) {
      const double dur = uniform(rng, 0.1, 0.25);
      const double semis = scale[std::uniform_int_distribution<int>(0, 7)(rng)] + 12.0 * v;
      const double f = root * std::pow(2.0, semis / 12.0);
      const auto start = static_cast<std::size_t>(t * rate);
      const auto len = std::min(static_cast<std::size_t>(dur * rate), n - std::min(n, start));
      const double decay = uniform(rng, 4.0, 12.0);
      for (std::size_t i = 0; i < len; ++i) {
        const double tt = static_cast<double>(i) / rate;
        double s = 0.0;
        for (int h = 1; h <= 5; ++h) {
          if (f * h > 0.45 * rate) break;
          s += std::sin(kTwoPi * f * h * tt) / (h * h);
        }
        x[start + i] += 0.18 * s * std::exp(-decay * tt) * envelope(tt, dur, 0.005);
      }
      t += dur;
    }
  }
  return Waveform(std::move(x), rate);
}

Waveform sines(Rng& rng, int rate, double duration_s) {
  const auto n = static_cast<std::size_t>(std::llround(duration_s * rate));
  std::vector<double> x(n, 0.0);
  const int count = std::uniform_int_distribution<int>(1, 3)(rng);
  for (int c = 0; c < count; ++c) {
    const double f = std::exp(uniform(rng, std::log(80.0), std::log(3500.0)));
    const double a = uniform(rng, 0.05, 0.3);
    const double ph = uniform(rng, 0, kTwoPi);
    for (std::size_t i = 0; i < n; ++i) x[i] += a * std::sin(kTwoPi * f * i / rate + ph);
  }
  return Waveform(std::move(x), rate);
}

Waveform chirp(Rng& rng, int rate, double duration_s) {
  const auto n = static_cast<std::size_t>(std::llround(duration_s * rate));
  std::vector<double> x(n);
  const double f0 = uniform(rng, 80.0, 2000.0), f1 = uniform(rng, 80.0, 4000.0);
  const double a = uniform(rng, 0.05, 0.3);
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = f0 + (f1 - f0) * static_cast<double>(i) / static_cast<double>(n);
    phase += kTwoPi * f / rate;
    x[i] = a * std::sin(phase);
  }
  return Waveform(std::move(x), rate);
}

Waveform filtered_noise(Rng& rng, int rate, double duration_s) {
  const auto n = static_cast<std::size_t>(std::llround(duration_s * rate));
  const double lo = uniform(rng, 50.0, 2000.0);
  const double hi = std::min(lo + uniform(rng, 200.0, 3000.0), 0.48 * rate);
  auto x = band_noise(rng, rate, n, lo, hi);
  const double a = uniform(rng, 0.02, 0.12);
  for (double& v : x) v *= a;
  return Waveform(std::move(x), rate);
}

Waveform white_noise(Rng& rng, int rate, std::size_t n, double stddev) {
  std::normal_distribution<double> g(0.0, stddev);
  std::vector<double> x(n);
  for (double& v : x) v = g(rng);
  return Waveform(std::move(x), rate);
}

Waveform sine(double freq_hz, double amplitude, int rate, std::size_t n, double phase) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amplitude * std::sin(kTwoPi * freq_hz * i / rate + phase);
  return Waveform(std::move(x), rate);
}

Waveform codec_training_clip(Rng& rng, int rate, double duration_s) {
  const double u = uniform(rng, 0.0, 1.0);
  if (u < 0.45) return speech(rng, rate, duration_s, 2, 4).audio;
  if (u < 0.70) return music(rng, rate, duration_s);
  if (u < 0.85) return sines(rng, rate, duration_s);
  if (u < 0.95) return chirp(rng, rate, duration_s);
  return filtered_noise(rng, rate, duration_s);
}

}  // namespace codecraid::synth

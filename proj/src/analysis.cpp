#include "codecraid/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "codecraid/dsp.hpp"
#include "codecraid/error.hpp"

namespace codecraid {

namespace {

constexpr std::array<double, 25> kZwickerEdges{0,    100,  200,  300,  400,  510,  630,  770,  920,
                                               1080, 1270, 1480, 1720, 2000, 2320, 2700, 3150, 3700,
                                               4400, 5300, 6400, 7700, 9500, 12000, 15500};

constexpr std::size_t kAnalysisWindow = 2048;
constexpr std::size_t kAnalysisHop = 512;
constexpr std::size_t kRegionWindow = 512;
constexpr std::size_t kRegionHop = 128;
constexpr double kRegionEdgesHz[2] = {400.0, 4000.0};

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

BarkBands BarkBands::standard(double nyquist_hz) {
  if (!(nyquist_hz > kZwickerEdges[1])) throw ConfigError("Bark bands need a Nyquist frequency above 100 Hz");
  BarkBands b;
  for (double e : kZwickerEdges)
    if (e < nyquist_hz) b.edges_hz.push_back(e);
  if (b.edges_hz.size() == kZwickerEdges.size()) {
    b.edges_hz.back() = nyquist_hz;
    return b;
  }
  const double last = b.edges_hz.back();
  const std::size_t missing = kZwickerEdges.size() - b.edges_hz.size();
  for (std::size_t k = 1; k <= missing; ++k)
    b.edges_hz.push_back(last + (nyquist_hz - last) * static_cast<double>(k) / static_cast<double>(missing));
  b.edges_hz.back() = nyquist_hz;
  return b;
}

void BarkBands::validate() const {
  if (edges_hz.size() < 2) throw ConfigError("Bark bands need at least two edges");
  if (edges_hz.front() != 0.0) throw ConfigError("first Bark edge must be 0 Hz");
  for (std::size_t i = 1; i < edges_hz.size(); ++i)
    if (!(edges_hz[i] > edges_hz[i - 1])) throw ConfigError("Bark edges must be strictly increasing");
}

std::size_t BarkBands::band_of(double hz) const {
  const auto it = std::upper_bound(edges_hz.begin(), edges_hz.end(), hz);
  const auto idx = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, it - edges_hz.begin() - 1));
  return std::min(idx, size() - 1);
}

double BandEnergyProfile::sum() const { return std::accumulate(fractions.begin(), fractions.end(), 0.0); }

double BandEnergyProfile::fraction_below(double hz, const BarkBands& bands) const {
  double s = 0.0;
  for (std::size_t b = 0; b < fractions.size(); ++b)
    if (bands.edges_hz[b + 1] <= hz + 1e-9) s += fractions[b];
  return s;
}

std::vector<double> bark_band_energy(const Waveform& w, const BarkBands& bands) {
  if (w.empty()) throw ConfigError("band energy of an empty waveform");
  bands.validate();
  const Spectrogram s = stft(w.samples, w.sample_rate_hz, kAnalysisWindow, kAnalysisHop, true);
  std::vector<double> bin_power(s.bins, 0.0);
  for (std::size_t f = 0; f < s.num_frames; ++f)
    for (std::size_t k = 0; k < s.bins; ++k) bin_power[k] += std::norm(s.at(f, k));

  // Each bin covers [k - 1/2, k + 1/2] bin widths, clipped to [0, Nyquist];
  // its power is split across bands by overlap.
  const double df = static_cast<double>(w.sample_rate_hz) / static_cast<double>(kAnalysisWindow);
  const double top = bands.edges_hz.back();
  std::vector<double> e(bands.size(), 0.0);
  for (std::size_t k = 0; k < s.bins; ++k) {
    const double lo = std::max(0.0, (static_cast<double>(k) - 0.5) * df);
    const double hi = std::min(top, (static_cast<double>(k) + 0.5) * df);
    if (hi <= lo) continue;
    for (std::size_t b = bands.band_of(lo); b < bands.size() && bands.edges_hz[b] < hi; ++b) {
      const double ov = std::min(hi, bands.edges_hz[b + 1]) - std::max(lo, bands.edges_hz[b]);
      if (ov > 0) e[b] += bin_power[k] * ov / (hi - lo);
    }
  }
  return e;
}

BandEnergyProfile normalize_profile(std::vector<double> energies) {
  BandEnergyProfile p;
  const double total = std::accumulate(energies.begin(), energies.end(), 0.0);
  p.fractions = std::move(energies);
  if (!(total > 0.0)) {
    std::fill(p.fractions.begin(), p.fractions.end(), 0.0);
    p.zero_energy = true;
    return p;
  }
  for (double& v : p.fractions) v /= total;
  return p;
}

BandEnergyProfile bark_fractional_energy(const Waveform& w, const BarkBands& bands) {
  return normalize_profile(bark_band_energy(w, bands));
}

std::string to_string(Region r) {
  switch (r) {
    case Region::sub_400: return "sub_400";
    case Region::mid_400_4k: return "400_4k";
    case Region::above_4k: return "above_4k";
  }
  return "?";
}

std::array<Waveform, 3> split_regions(const Waveform& w) {
  const Spectrogram s = stft(w.samples, w.sample_rate_hz, kRegionWindow, kRegionHop, true);
  std::array<Waveform, 3> parts;
  for (std::size_t r = 0; r < 3; ++r) {
    Spectrogram masked = s;
    for (std::size_t k = 0; k < s.bins; ++k) {
      const double hz = s.bin_hz(k);
      const std::size_t region = hz < kRegionEdgesHz[0] ? 0 : (hz < kRegionEdgesHz[1] ? 1 : 2);
      if (region != r)
        for (std::size_t f = 0; f < s.num_frames; ++f) masked.at(f, k) = 0.0;
    }
    parts[r] = Waveform(istft(masked), w.sample_rate_hz);
  }
  return parts;
}

SurvivalProfile survival_profile(const Waveform& pre_delta, const CodecChannelSpec& channel, const Waveform& carrier,
                                 const ChannelBank& bank) {
  if (pre_delta.size() != carrier.size() || pre_delta.sample_rate_hz != carrier.sample_rate_hz)
    throw ConfigError("survival_profile: delta and carrier must share length and rate");
  Waveform attacked = carrier;
  for (std::size_t i = 0; i < carrier.size(); ++i) attacked.samples[i] += pre_delta.samples[i];
  const Waveform post_delta = bank.apply(attacked, channel) - bank.apply(carrier, channel);

  const auto pre = split_regions(pre_delta);
  const auto post = split_regions(post_delta);
  SurvivalProfile out;
  out.channel = channel;
  for (std::size_t r = 0; r < 3; ++r) {
    const double ea = dot(pre[r].samples, pre[r].samples);
    const double eb = dot(post[r].samples, post[r].samples);
    constexpr double kTiny = 1e-20;
    if (ea > kTiny) out.regions[r].magnitude_ratio = std::sqrt(eb / ea);
    if (ea > kTiny && eb > kTiny)
      out.regions[r].cosine = std::clamp(dot(pre[r].samples, post[r].samples) / std::sqrt(ea * eb), -1.0, 1.0);
  }
  return out;
}

std::vector<BandEnergyProfile> JacobianEnvelope::per_dimension() const {
  std::vector<BandEnergyProfile> out;
  for (std::size_t i = 0; i < dims; ++i) {
    BandEnergyProfile p;
    std::size_t used = 0;
    for (std::size_t f = 0; f < frames; ++f) {
      const auto& row = rows[i * frames + f];
      if (row.zero_energy) continue;
      if (p.fractions.empty()) p.fractions.assign(row.fractions.size(), 0.0);
      for (std::size_t b = 0; b < row.fractions.size(); ++b) p.fractions[b] += row.fractions[b];
      ++used;
    }
    if (used == 0) {
      p.fractions.assign(rows.empty() ? 0 : rows.front().fractions.size(), 0.0);
      p.zero_energy = true;
    } else {
      for (double& v : p.fractions) v /= static_cast<double>(used);
    }
    out.push_back(std::move(p));
  }
  return out;
}

BandEnergyProfile JacobianEnvelope::aggregate() const {
  std::vector<double> sum(energy.empty() ? 0 : energy.front().size(), 0.0);
  for (const auto& e : energy)
    for (std::size_t b = 0; b < e.size(); ++b) sum[b] += e[b];
  return normalize_profile(std::move(sum));
}

JacobianEnvelope decoder_band_envelope(const LatentCodec& codec, std::size_t frames, const BarkBands& bands,
                                       double sigma, const LatentTensor* base) {
  if (!(sigma > 0.0)) throw ConfigError("decoder_band_envelope: sigma must be > 0");
  LatentTensor z0 = base ? *base : LatentTensor(codec.latent_dim(), frames, codec.frame_rate_hz());
  JacobianEnvelope env;
  env.dims = z0.dims();
  env.frames = z0.frames();
  const Waveform y0 = codec.decode(z0);
  const double u = 1e-2 * sigma;

  auto response = [&](std::size_t idx, double step) {
    LatentTensor z = z0;
    z.values.data[idx] += step;
    Waveform d = codec.decode(z) - y0;
    return bark_band_energy(d, bands);
  };

  for (std::size_t i = 0; i < env.dims; ++i) {
    for (std::size_t f = 0; f < env.frames; ++f) {
      const std::size_t idx = i * env.frames + f;
      std::vector<double> e = response(idx, u);
      const BandEnergyProfile half = normalize_profile(response(idx, 0.5 * u));
      BandEnergyProfile full = normalize_profile(e);
      for (std::size_t b = 0; b < full.fractions.size(); ++b)
        env.linearity_deviation = std::max(env.linearity_deviation, std::abs(full.fractions[b] - half.fractions[b]));
      for (double& v : e) v /= u * u;
      env.energy.push_back(std::move(e));
      env.rows.push_back(std::move(full));
    }
  }
  if (env.linearity_deviation > 0.01)
    log::warn("decoder envelope: profile moved by " + std::to_string(env.linearity_deviation) +
              " when the probe step halved; the decoder is not locally linear at this scale");
  return env;
}

ThreeTraceReport three_trace_report(const LatentCodec& codec, const LatentTensor& z, const LatentTensor& delta,
                                    double sigma, std::size_t n_draws, const BarkBands& bands, std::uint64_t seed) {
  if (!(sigma > 0.0)) throw ConfigError("three_trace_report: sigma must be > 0");
  if (n_draws == 0) throw ConfigError("three_trace_report: need at least one draw");
  if (delta.dims() != z.dims() || delta.frames() != z.frames()) throw ConfigError("three_trace_report: delta shape mismatch");
  ThreeTraceReport rep;
  const JacobianEnvelope env = decoder_band_envelope(codec, z.frames(), bands, sigma, &z);
  rep.jacobian = env.aggregate();
  rep.linearity_deviation = env.linearity_deviation;

  const Waveform y0 = codec.decode(z);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<double> sum(bands.size(), 0.0);
  for (std::size_t n = 0; n < n_draws; ++n) {
    LatentTensor zn = z;
    for (double& v : zn.values.data) v += normal(rng);
    const auto e = bark_band_energy(codec.decode(zn) - y0, bands);
    for (std::size_t b = 0; b < e.size(); ++b) sum[b] += e[b];
  }
  rep.random_draw = normalize_profile(std::move(sum));
  rep.adversarial = bark_fractional_energy(codec.decode(z + delta) - y0, bands);
  for (std::size_t b = 0; b < bands.size(); ++b)
    rep.max_ab_difference =
        std::max(rep.max_ab_difference, std::abs(rep.jacobian.fractions[b] - rep.random_draw.fractions[b]));
  return rep;
}

std::optional<double> encoder_residual(const VictimModel& victim, const Waveform& carrier,
                                       const Waveform& adversarial, const CodecChannelSpec& channel,
                                       const ChannelBank& bank) {
  const int rate = victim.input_sample_rate_hz();
  const auto h = [&](const Waveform& w) { return victim.embed(resample(w, rate)).vector; };
  const auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };
  const auto h_atk = h(adversarial);
  const double den = dist(h_atk, h(carrier));
  if (den < 1e-9) return std::nullopt;
  return dist(h(bank.apply(adversarial, channel)), h_atk) / den;
}

LinearSinusoidCodec::LinearSinusoidCodec(std::vector<double> freqs_hz, int sample_rate_hz, std::size_t hop)
    : freqs_(std::move(freqs_hz)), rate_(sample_rate_hz), hop_(hop) {
  if (freqs_.empty() || hop_ == 0) throw ConfigError("LinearSinusoidCodec needs at least one frequency and hop > 0");
  const auto win = hann_window(2 * hop_);
  for (double f : freqs_) {
    std::vector<double> a(2 * hop_);
    for (std::size_t n = 0; n < a.size(); ++n)
      a[n] = win[n] * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(n) / rate_);
    atoms_.push_back(std::move(a));
  }
}

LatentTensor LinearSinusoidCodec::encode(const Waveform& w) const { return encode_with_grad(w).output; }

EncodePass LinearSinusoidCodec::encode_with_grad(const Waveform& w) const {
  if (w.sample_rate_hz != rate_) throw ConfigError("LinearSinusoidCodec: sample rate mismatch");
  const std::size_t frames = (w.size() + hop_ - 1) / hop_;
  const std::size_t len = w.size();
  EncodePass p;
  p.output = LatentTensor(latent_dim(), frames, frame_rate_hz());
  for (std::size_t d = 0; d < atoms_.size(); ++d)
    for (std::size_t f = 0; f < frames; ++f) {
      double s = 0.0;
      for (std::size_t n = 0; n < atoms_[d].size() && f * hop_ + n < len; ++n) s += atoms_[d][n] * w.samples[f * hop_ + n];
      p.output.values.at(d, f) = s;
    }
  p.backward = [this, len](const LatentTensor& g) {
    std::vector<double> gx(len, 0.0);
    for (std::size_t d = 0; d < atoms_.size(); ++d)
      for (std::size_t f = 0; f < g.frames(); ++f)
        for (std::size_t n = 0; n < atoms_[d].size() && f * hop_ + n < len; ++n)
          gx[f * hop_ + n] += atoms_[d][n] * g.values.at(d, f);
    return gx;
  };
  return p;
}

Waveform LinearSinusoidCodec::decode(const LatentTensor& z) const { return decode_with_grad(z).output; }

DecodePass LinearSinusoidCodec::decode_with_grad(const LatentTensor& z) const {
  if (z.dims() != latent_dim()) throw ConfigError("LinearSinusoidCodec: latent dimension mismatch");
  const std::size_t len = z.frames() * hop_;
  DecodePass p;
  p.output = Waveform(std::vector<double>(len, 0.0), rate_);
  for (std::size_t d = 0; d < atoms_.size(); ++d)
    for (std::size_t f = 0; f < z.frames(); ++f) {
      const double c = z.values.at(d, f);
      for (std::size_t n = 0; n < atoms_[d].size() && f * hop_ + n < len; ++n) p.output.samples[f * hop_ + n] += c * atoms_[d][n];
    }
  const std::size_t frames = z.frames();
  const double rate = z.frame_rate_hz;
  p.backward = [this, len, frames, rate](std::span<const double> g) {
    LatentTensor gz(latent_dim(), frames, rate);
    for (std::size_t d = 0; d < atoms_.size(); ++d)
      for (std::size_t f = 0; f < frames; ++f) {
        double s = 0.0;
        for (std::size_t n = 0; n < atoms_[d].size() && f * hop_ + n < std::min(len, g.size()); ++n)
          s += atoms_[d][n] * g[f * hop_ + n];
        gz.values.at(d, f) = s;
      }
    return gz;
  };
  return p;
}

std::uint64_t LinearSinusoidCodec::parameter_checksum() const { return nn::checksum(freqs_); }

}  // namespace codecraid

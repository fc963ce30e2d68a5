#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "codecraid/channel.hpp"
#include "codecraid/neural_codec.hpp"
#include "codecraid/victim.hpp"
#include "codecraid/waveform.hpp"

namespace codecraid {

// 24 critical bands as 25 ascending edges.
struct BarkBands {
  std::vector<double> edges_hz;

  // Zwicker edges capped at nyquist_hz. Edges that would collapse onto the
  // cap are replaced by an even split of the remaining range, so every band
  // keeps a positive width.
  static BarkBands standard(double nyquist_hz);
  std::size_t size() const { return edges_hz.empty() ? 0 : edges_hz.size() - 1; }
  void validate() const;
  std::size_t band_of(double hz) const;
};

struct BandEnergyProfile {
  std::vector<double> fractions;
  bool zero_energy = false;  // all fractions are 0 when set

  double sum() const;
  // Fraction carried by bands whose upper edge is <= hz.
  double fraction_below(double hz, const BarkBands& bands) const;
};

// Power per band before normalization; STFT 2048/512 (Hann, centered).
std::vector<double> bark_band_energy(const Waveform& w, const BarkBands& bands);
BandEnergyProfile normalize_profile(std::vector<double> energies);
BandEnergyProfile bark_fractional_energy(const Waveform& w, const BarkBands& bands);

enum class Region { sub_400, mid_400_4k, above_4k };
inline constexpr std::array<Region, 3> kRegions{Region::sub_400, Region::mid_400_4k, Region::above_4k};
std::string to_string(Region r);

// Hard STFT-mask split into the three regions; the parts sum back to w.
std::array<Waveform, 3> split_regions(const Waveform& w);

struct RegionSurvival {
  std::optional<double> cosine;           // unset when either side has no energy
  std::optional<double> magnitude_ratio;  // unset when the pre-channel side has no energy
};

struct SurvivalProfile {
  CodecChannelSpec channel;
  std::array<RegionSurvival, 3> regions;
};

// post = channel(carrier + pre) - channel(carrier), compared region by region.
SurvivalProfile survival_profile(const Waveform& pre_delta, const CodecChannelSpec& channel, const Waveform& carrier,
                                 const ChannelBank& bank);

struct JacobianEnvelope {
  std::size_t dims = 0;
  std::size_t frames = 0;
  std::vector<BandEnergyProfile> rows;      // entry (i, f) at i * frames + f
  std::vector<std::vector<double>> energy;  // unnormalized band energy per entry, per unit perturbation
  double linearity_deviation = 0.0;         // max |profile(u) - profile(u/2)| over entries and bands

  // Mean fractional profile over frames for each latent dimension.
  std::vector<BandEnergyProfile> per_dimension() const;
  // Energy-weighted aggregate over all entries.
  BandEnergyProfile aggregate() const;
};

// Finite-difference response of each latent entry: decode(base + u e_if) -
// decode(base) with u = 1e-2 * sigma. `base` defaults to the zero latent of
// `frames` frames.
JacobianEnvelope decoder_band_envelope(const LatentCodec& codec, std::size_t frames, const BarkBands& bands,
                                       double sigma, const LatentTensor* base = nullptr);

struct ThreeTraceReport {
  BandEnergyProfile jacobian;     // A
  BandEnergyProfile random_draw;  // B
  BandEnergyProfile adversarial;  // C
  double max_ab_difference = 0.0;
  double linearity_deviation = 0.0;
};

// A: energy-weighted Jacobian envelope around z. B: band energies of
// decode(z + eta) - decode(z) summed over n_draws, eta ~ N(0, sigma^2).
// C: profile of decode(z + delta) - decode(z).
ThreeTraceReport three_trace_report(const LatentCodec& codec, const LatentTensor& z, const LatentTensor& delta,
                                    double sigma, std::size_t n_draws, const BarkBands& bands, std::uint64_t seed);

// ||h(C(x_atk)) - h(x_atk)|| / ||h(x_atk) - h(x_clean)||; unset when the
// denominator is below 1e-9.
std::optional<double> encoder_residual(const VictimModel& victim, const Waveform& carrier,
                                       const Waveform& adversarial, const CodecChannelSpec& channel,
                                       const ChannelBank& bank);

// Decoder made of fixed windowed sinusoids, one per latent dimension: the
// output is linear in z. Used as the closed-form oracle for the spectral
// analyses.
class LinearSinusoidCodec final : public LatentCodec {
 public:
  LinearSinusoidCodec(std::vector<double> freqs_hz, int sample_rate_hz = 24000, std::size_t hop = 320);

  std::size_t latent_dim() const override { return freqs_.size(); }
  std::size_t hop_samples() const override { return hop_; }
  int native_sample_rate_hz() const override { return rate_; }
  LatentTensor encode(const Waveform& w) const override;
  Waveform decode(const LatentTensor& z) const override;
  EncodePass encode_with_grad(const Waveform& w) const override;
  DecodePass decode_with_grad(const LatentTensor& z) const override;
  std::uint64_t parameter_checksum() const override;

  const std::vector<double>& freqs_hz() const { return freqs_; }

 private:
  std::vector<double> freqs_;
  int rate_;
  std::size_t hop_;
  std::vector<std::vector<double>> atoms_;  // per dimension, 2 * hop samples
};

}  // namespace codecraid

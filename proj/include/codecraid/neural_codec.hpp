#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "codecraid/nn.hpp"
#include "codecraid/waveform.hpp"

namespace codecraid {

// d x F continuous latent. Also the storage type for latent perturbations.
struct LatentTensor {
  nn::Tensor values;  // channels = d, length = F
  double frame_rate_hz = 0.0;

  LatentTensor() = default;
  LatentTensor(std::size_t dims, std::size_t frames, double frame_rate, double fill = 0.0)
      : values(dims, frames, fill), frame_rate_hz(frame_rate) {}

  std::size_t dims() const { return values.channels; }
  std::size_t frames() const { return values.length; }
  std::span<double> flat() { return values.data; }
  std::span<const double> flat() const { return values.data; }
};

LatentTensor operator+(const LatentTensor& a, const LatentTensor& b);

// Reverse-mode handle for one forward evaluation.
struct DecodePass {
  Waveform output;
  // Maps d(loss)/d(output samples) to d(loss)/d(latent).
  std::function<LatentTensor(std::span<const double>)> backward;
};

struct EncodePass {
  LatentTensor output;
  // Maps d(loss)/d(latent) to d(loss)/d(input samples).
  std::function<std::vector<double>(const LatentTensor&)> backward;
};

// Encoder/decoder pair over a continuous latent (quantization bypassed).
// Implementations must be safe for concurrent const use.
class LatentCodec {
 public:
  virtual ~LatentCodec() = default;
  virtual std::size_t latent_dim() const = 0;
  virtual std::size_t hop_samples() const = 0;  // waveform samples per latent frame
  virtual int native_sample_rate_hz() const = 0;
  double frame_rate_hz() const { return static_cast<double>(native_sample_rate_hz()) / hop_samples(); }

  // Output has ceil(len / hop) frames. Throws ConfigError on a rate mismatch.
  virtual LatentTensor encode(const Waveform& w) const = 0;
  // Output has frames * hop samples.
  virtual Waveform decode(const LatentTensor& z) const = 0;
  virtual EncodePass encode_with_grad(const Waveform& w) const = 0;
  virtual DecodePass decode_with_grad(const LatentTensor& z) const = 0;
  virtual std::uint64_t parameter_checksum() const = 0;
};

struct ToyCodecConfig {
  int sample_rate_hz = 24000;
  std::size_t latent_dim = 16;
  std::vector<std::size_t> strides{2, 4, 5, 8};
  std::vector<std::size_t> channels{8, 16, 24, 32};  // width after each strided block
  std::size_t stem_channels = 8;
  std::uint64_t seed = 0;

  std::size_t hop() const;
  std::string architecture() const;
};

// Small convolutional autoencoder standing in for an EnCodec-style codec:
// a stem conv, strided conv blocks with ELU, a projection to d latent
// channels, and the mirrored transposed stack.
class ToyLatentCodec final : public LatentCodec {
 public:
  explicit ToyLatentCodec(ToyCodecConfig cfg = {});

  std::size_t latent_dim() const override { return cfg_.latent_dim; }
  std::size_t hop_samples() const override { return cfg_.hop(); }
  int native_sample_rate_hz() const override { return cfg_.sample_rate_hz; }

  LatentTensor encode(const Waveform& w) const override;
  Waveform decode(const LatentTensor& z) const override;
  EncodePass encode_with_grad(const Waveform& w) const override;
  DecodePass decode_with_grad(const LatentTensor& z) const override;
  std::uint64_t parameter_checksum() const override;

  const ToyCodecConfig& config() const { return cfg_; }
  nn::Sequential& encoder() { return encoder_; }
  nn::Sequential& decoder() { return decoder_; }
  const nn::Sequential& encoder() const { return encoder_; }
  const nn::Sequential& decoder() const { return decoder_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  void save(const std::filesystem::path& path) const;
  static ToyLatentCodec load(const std::filesystem::path& path);

 private:
  ToyCodecConfig cfg_;
  nn::Sequential encoder_;
  nn::Sequential decoder_;
  bool trained_ = false;

  nn::Tensor input_tensor(const Waveform& w) const;
};

struct CodecTrainOptions {
  std::size_t steps = 1500;
  std::size_t batch = 4;
  double clip_seconds = 0.4;
  double lr = 3e-3;
  double spectral_weight = 0.1;
  std::uint64_t seed = 1;
  std::size_t log_every = 100;
};

struct CodecTrainReport {
  std::vector<double> loss_history;
  double heldout_snr_before_db = 0.0;
  double heldout_snr_after_db = 0.0;
};

// L1 waveform + multi-scale STFT magnitude loss on the synthetic corpus.
CodecTrainReport train_toy_codec(ToyLatentCodec& codec, const CodecTrainOptions& opt);

// Mean reconstruction SNR over `clips` held-out synthetic clips.
double heldout_reconstruction_snr(const LatentCodec& codec, std::size_t clips, std::uint64_t seed,
                                  double clip_seconds = 0.4);

// Standard deviation over every latent entry of every encoded clip.
double estimate_sigma(const LatentCodec& codec, std::span<const Waveform> calibration);

// eps_tgt = eps_src * sigma_tgt / sigma_src.
double scale_budget(double eps_src, double sigma_src, double sigma_tgt);

// Multi-resolution STFT spectral convergence and its gradient with respect
// to `output`.
double multiscale_spectral_loss(std::span<const double> output, std::span<const double> target,
                                std::span<double> grad_output, std::span<const std::size_t> windows);

}  // namespace codecraid

#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "codecraid/nn.hpp"
#include "codecraid/waveform.hpp"

namespace codecraid {

// Symbol table of a token victim. Index 0 is always the blank.
class Vocabulary {
 public:
  explicit Vocabulary(std::string symbols);  // symbols[0] is the blank placeholder
  static const Vocabulary& toy();            // blank, space, a-z, 0-3

  std::size_t size() const { return symbols_.size(); }
  int blank() const { return 0; }
  char symbol(int id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  int id(char c) const;  // -1 when absent
  const std::string& symbols() const { return symbols_; }

  void save_sidecar(const std::filesystem::path& path) const;
  static Vocabulary load_sidecar(const std::filesystem::path& path);

 private:
  std::string symbols_;
};

// Lowercase, strip punctuation, collapse whitespace runs, trim.
std::string normalize_text(const std::string& s);

// True when normalize_text(target) occurs contiguously in
// normalize_text(output). Throws ConfigError on an empty normalized target.
bool substring_match(const std::string& output, const std::string& target);

struct TargetSpec {
  std::string text;         // normalized
  std::vector<int> token_ids;

  static TargetSpec from_text(const std::string& text, const Vocabulary& vocab);
};

struct Embedding {
  std::vector<double> vector;
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;  // d(loss)/d(input samples); empty when not requested
};

// The model under attack. Implementations never mutate parameters from
// const methods and are safe for concurrent const use.
class VictimModel {
 public:
  virtual ~VictimModel() = default;
  virtual int input_sample_rate_hz() const = 0;
  virtual const Vocabulary& vocabulary() const = 0;
  virtual std::size_t output_frames(std::size_t num_samples) const = 0;

  virtual LossAndGrad target_loss(const Waveform& w, const TargetSpec& target, bool want_grad = true) const = 0;
  virtual std::string generate(const Waveform& w) const = 0;
  virtual Embedding embed(const Waveform& w) const = 0;
  virtual std::uint64_t parameter_checksum() const = 0;
};

// Frame index that carries target token i out of n tokens over t frames:
// the centre of the i-th equal slot.
std::size_t aligned_frame(std::size_t i, std::size_t n_tokens, std::size_t n_frames);

// Greedy CTC-style decode: argmax per frame, collapse repeats, drop blanks.
std::string collapse_frames(const std::vector<int>& frame_argmax, const Vocabulary& vocab);

struct ToyVictimConfig {
  int sample_rate_hz = 16000;
  std::size_t window = 400;  // 25 ms
  std::size_t fft = 512;
  std::size_t hop = 160;     // 10 ms
  std::size_t mels = 40;
  std::size_t hidden = 48;
  std::uint64_t seed = 0;

  std::string architecture() const;
};

// Log-mel frontend followed by a small 1-D conv stack emitting per-frame
// logits over a 32-symbol vocabulary.
class ToyTokenVictim final : public VictimModel {
 public:
  explicit ToyTokenVictim(ToyVictimConfig cfg = {});

  int input_sample_rate_hz() const override { return cfg_.sample_rate_hz; }
  const Vocabulary& vocabulary() const override { return Vocabulary::toy(); }
  std::size_t output_frames(std::size_t num_samples) const override;

  LossAndGrad target_loss(const Waveform& w, const TargetSpec& target, bool want_grad = true) const override;
  std::string generate(const Waveform& w) const override;
  Embedding embed(const Waveform& w) const override;
  std::uint64_t parameter_checksum() const override;

  // Per-frame logits, vocab x frames.
  nn::Tensor logits(const Waveform& w) const;

  // Weighted cross-entropy of frame labels; labels.size() == output_frames.
  // Accumulates parameter gradients when param_grads is non-null and
  // returns input gradients when want_input_grad is set.
  LossAndGrad frame_loss(const Waveform& w, const std::vector<int>& labels, const std::vector<double>& weights,
                         nn::ParamGrads* param_grads, bool want_input_grad, double label_smoothing = 0.0) const;

  const ToyVictimConfig& config() const { return cfg_; }
  nn::Sequential& network() { return net_; }
  const nn::Sequential& network() const { return net_; }

  void save(const std::filesystem::path& path) const;  // also writes <path>.vocab
  static ToyTokenVictim load(const std::filesystem::path& path);

 private:
  ToyVictimConfig cfg_;
  std::vector<double> mel_;  // mels x bins
  std::vector<double> window_;
  nn::Sequential net_;
  std::size_t hidden_layer_ = 0;  // index of the layer whose input is the pooled hidden state

  struct Frontend {
    nn::Tensor features;                // mels x frames
    std::vector<std::complex<double>> spectra;  // frames x bins
    std::vector<double> mel_energy;     // frames x mels
  };
  Frontend frontend(const Waveform& w) const;
  std::vector<double> frontend_backward(const Frontend& fe, const nn::Tensor& grad_features, std::size_t n) const;
  void check_input(const Waveform& w) const;
};

struct VictimTrainOptions {
  std::size_t steps = 600;
  std::size_t batch = 8;
  double clip_seconds = 0.4;
  double lr = 3e-3;
  double music_fraction = 0.25;
  double blank_weight = 0.2;  // relative weight of blank frames
  double label_smoothing = 0.1;
  std::uint64_t seed = 2;
  std::size_t log_every = 100;
};

struct VictimTrainReport {
  std::vector<double> loss_history;
  double heldout_exact_rate = 0.0;  // fraction of held-out speech clips transcribed exactly
};

// Supervised training on synthetic (audio, transcript) pairs. Audio is
// synthesized at carrier_rate_hz and resampled to the victim's rate.
VictimTrainReport train_toy_victim(ToyTokenVictim& victim, const VictimTrainOptions& opt, int carrier_rate_hz = 24000);

// Frame labels for a synthetic clip: the phone letter at the frame nearest
// each phone center, blank elsewhere.
std::vector<int> phone_frame_labels(const std::vector<std::pair<char, double>>& phone_centers_s, std::size_t frames,
                                    const ToyVictimConfig& cfg, const Vocabulary& vocab);

}  // namespace codecraid

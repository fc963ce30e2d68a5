#include "codecraid/neural_codec.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "codecraid/checkpoint.hpp"
#include "codecraid/dsp.hpp"
#include "codecraid/error.hpp"
#include "codecraid/metrics.hpp"
#include "codecraid/synth.hpp"

namespace codecraid {

LatentTensor operator+(const LatentTensor& a, const LatentTensor& b) {
  if (a.dims() != b.dims() || a.frames() != b.frames()) throw ConfigError("latent shape mismatch");
  LatentTensor r = a;
  for (std::size_t i = 0; i < r.values.data.size(); ++i) r.values.data[i] += b.values.data[i];
  return r;
}

std::size_t ToyCodecConfig::hop() const {
  std::size_t h = 1;
  for (auto s : strides) h *= s;
  return h;
}

std::string ToyCodecConfig::architecture() const {
  std::ostringstream os;
  os << "toycodec/v1 sr=" << sample_rate_hz << " d=" << latent_dim << " stem=" << stem_channels << " strides=";
  for (auto s : strides) os << s << ',';
  os << " channels=";
  for (auto c : channels) os << c << ',';
  return os.str();
}

ToyLatentCodec::ToyLatentCodec(ToyCodecConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.strides.empty() || cfg_.strides.size() != cfg_.channels.size())
    throw ConfigError("toy codec: strides and channels must have equal non-zero length");
  if (cfg_.latent_dim == 0) throw ConfigError("toy codec: latent_dim must be positive");

  encoder_.add<nn::Conv1d>(1, cfg_.stem_channels, 7, 1, 3, 3);
  encoder_.add<nn::Elu>();
  std::size_t prev = cfg_.stem_channels;
  for (std::size_t i = 0; i < cfg_.strides.size(); ++i) {
    const std::size_t s = cfg_.strides[i];
    encoder_.add_layer(std::make_unique<nn::Conv1d>(nn::Conv1d::strided(prev, cfg_.channels[i], 2 * s, s)));
    encoder_.add<nn::Elu>();
    prev = cfg_.channels[i];
  }
  encoder_.add<nn::Conv1d>(prev, cfg_.latent_dim, 3, 1, 1, 1);

  decoder_.add<nn::Conv1d>(cfg_.latent_dim, prev, 3, 1, 1, 1);
  decoder_.add<nn::Elu>();
  for (std::size_t i = cfg_.strides.size(); i-- > 0;) {
    const std::size_t s = cfg_.strides[i];
    const std::size_t out = i == 0 ? cfg_.stem_channels : cfg_.channels[i - 1];
    decoder_.add<nn::ConvTranspose1d>(cfg_.channels[i], out, 2 * s, s);
    decoder_.add<nn::Elu>();
  }
  decoder_.add<nn::Conv1d>(cfg_.stem_channels, 1, 7, 1, 3, 3);

  std::mt19937_64 rng(cfg_.seed);
  encoder_.init(rng);
  decoder_.init(rng);
}

nn::Tensor ToyLatentCodec::input_tensor(const Waveform& w) const {
  if (w.sample_rate_hz != cfg_.sample_rate_hz)
    throw ConfigError("toy codec expects " + std::to_string(cfg_.sample_rate_hz) + " Hz input, got " +
                      std::to_string(w.sample_rate_hz));
  if (w.empty()) throw ConfigError("toy codec: empty waveform");
  const std::size_t hop = cfg_.hop();
  const std::size_t frames = (w.size() + hop - 1) / hop;
  nn::Tensor x(1, frames * hop);
  std::copy(w.samples.begin(), w.samples.end(), x.data.begin());
  return x;
}

LatentTensor ToyLatentCodec::encode(const Waveform& w) const {
  LatentTensor z;
  z.values = encoder_.forward(input_tensor(w));
  z.frame_rate_hz = frame_rate_hz();
  return z;
}

Waveform ToyLatentCodec::decode(const LatentTensor& z) const {
  if (z.dims() != cfg_.latent_dim) throw ConfigError("toy codec: latent dimension mismatch");
  if (z.frames() == 0) throw ConfigError("toy codec: empty latent");
  nn::Tensor y = decoder_.forward(z.values);
  return Waveform(std::move(y.data), cfg_.sample_rate_hz);
}

EncodePass ToyLatentCodec::encode_with_grad(const Waveform& w) const {
  auto tape = std::make_shared<nn::Tape>();
  EncodePass pass;
  pass.output.values = encoder_.forward(input_tensor(w), tape.get());
  pass.output.frame_rate_hz = frame_rate_hz();
  const std::size_t len = w.size();
  pass.backward = [this, tape, len](const LatentTensor& g) {
    nn::Tensor gx = encoder_.backward(g.values, *tape);
    gx.data.resize(len);
    return std::move(gx.data);
  };
  return pass;
}

DecodePass ToyLatentCodec::decode_with_grad(const LatentTensor& z) const {
  if (z.dims() != cfg_.latent_dim) throw ConfigError("toy codec: latent dimension mismatch");
  auto tape = std::make_shared<nn::Tape>();
  DecodePass pass;
  nn::Tensor y = decoder_.forward(z.values, tape.get());
  pass.output = Waveform(std::move(y.data), cfg_.sample_rate_hz);
  const std::size_t out_len = pass.output.size();
  const double frame_rate = z.frame_rate_hz;
  pass.backward = [this, tape, out_len, frame_rate](std::span<const double> g) {
    nn::Tensor gy(1, out_len);
    std::copy_n(g.begin(), std::min(g.size(), out_len), gy.data.begin());
    LatentTensor gz;
    gz.values = decoder_.backward(gy, *tape);
    gz.frame_rate_hz = frame_rate;
    return gz;
  };
  return pass;
}

std::uint64_t ToyLatentCodec::parameter_checksum() const {
  auto p = encoder_.flat_params();
  const auto d = decoder_.flat_params();
  p.insert(p.end(), d.begin(), d.end());
  return nn::checksum(p);
}

void ToyLatentCodec::save(const std::filesystem::path& path) const {
  Checkpoint c;
  c.kind = "toy-codec";
  c.arch_hash = hash_string(cfg_.architecture());
  c.seed = cfg_.seed;
  nlohmann::json meta;
  meta["sample_rate_hz"] = cfg_.sample_rate_hz;
  meta["latent_dim"] = cfg_.latent_dim;
  meta["strides"] = cfg_.strides;
  meta["channels"] = cfg_.channels;
  meta["stem_channels"] = cfg_.stem_channels;
  meta["trained"] = trained_;
  c.meta_json = meta.dump();
  c.params = encoder_.flat_params();
  const auto d = decoder_.flat_params();
  c.params.insert(c.params.end(), d.begin(), d.end());
  c.save(path);
}

ToyLatentCodec ToyLatentCodec::load(const std::filesystem::path& path) {
  const Checkpoint c = Checkpoint::load(path);
  if (c.kind != "toy-codec") throw ConfigError("checkpoint is not a toy codec: " + path.string());
  const auto meta = nlohmann::json::parse(c.meta_json);
  ToyCodecConfig cfg;
  cfg.sample_rate_hz = meta.at("sample_rate_hz").get<int>();
  cfg.latent_dim = meta.at("latent_dim").get<std::size_t>();
  cfg.strides = meta.at("strides").get<std::vector<std::size_t>>();
  cfg.channels = meta.at("channels").get<std::vector<std::size_t>>();
  cfg.stem_channels = meta.at("stem_channels").get<std::size_t>();
  cfg.seed = c.seed;
  if (hash_string(cfg.architecture()) != c.arch_hash) throw ConfigError("toy codec architecture hash mismatch");
  ToyLatentCodec codec(cfg);
  const std::size_t ne = codec.encoder_.num_params();
  if (c.params.size() != ne + codec.decoder_.num_params()) throw ConfigError("toy codec parameter count mismatch");
  codec.encoder_.set_flat_params(std::span<const double>(c.params).first(ne));
  codec.decoder_.set_flat_params(std::span<const double>(c.params).subspan(ne));
  codec.trained_ = meta.value("trained", false);
  return codec;
}

double multiscale_spectral_loss(std::span<const double> output, std::span<const double> target,
                                std::span<double> grad_output, std::span<const std::size_t> windows) {
  std::fill(grad_output.begin(), grad_output.end(), 0.0);
  const std::size_t n = std::min(output.size(), target.size());
  double total = 0.0;
  std::size_t used = 0;
  for (const std::size_t win : windows) {
    if (n < win) continue;
    ++used;
    const std::size_t hop = win / 4;
    const std::size_t frames = (n - win) / hop + 1;
    const RealFft fft(win);
    const auto window = hann_window(win);
    const std::size_t bins = fft.bins();
    std::vector<Complex> spec_y(frames * bins), spec_x(frames * bins);
    std::vector<double> mag_y(frames * bins), mag_x(frames * bins);
    std::vector<double> frame(win);
    std::vector<double> power(bins);
    for (std::size_t f = 0; f < frames; ++f) {
      for (int which = 0; which < 2; ++which) {
        const auto src = which == 0 ? output : target;
        for (std::size_t i = 0; i < win; ++i) frame[i] = src[f * hop + i] * window[i];
        auto spec = std::span<Complex>(which == 0 ? spec_y : spec_x).subspan(f * bins, bins);
        power_spectrum(fft, frame, spec, power);
        auto& mag = which == 0 ? mag_y : mag_x;
        for (std::size_t k = 0; k < bins; ++k) mag[f * bins + k] = std::sqrt(power[k] + 1e-12);
      }
    }
    // Spectral convergence ||Y| - |X||_F / ||X||_F.
    double diff2 = 0.0, ref2 = 0.0;
    for (std::size_t i = 0; i < mag_y.size(); ++i) {
      const double d = mag_y[i] - mag_x[i];
      diff2 += d * d;
      ref2 += mag_x[i] * mag_x[i];
    }
    const double diff_norm = std::sqrt(diff2), ref_norm = std::sqrt(std::max(ref2, 1e-12));
    total += diff_norm / ref_norm;

    // d(loss)/d|Y| then chain through |Y| = sqrt(P) and the FFT.
    std::vector<double> grad_power(bins), grad_frame(win);
    for (std::size_t f = 0; f < frames; ++f) {
      for (std::size_t k = 0; k < bins; ++k) {
        const std::size_t i = f * bins + k;
        const double g = diff_norm > 0 ? (mag_y[i] - mag_x[i]) / (diff_norm * ref_norm) : 0.0;
        grad_power[k] = g / (2.0 * mag_y[i]);
      }
      power_spectrum_backward(fft, std::span<const Complex>(spec_y).subspan(f * bins, bins), grad_power, grad_frame);
      for (std::size_t i = 0; i < win; ++i) grad_output[f * hop + i] += grad_frame[i] * window[i];
    }
  }
  if (used == 0) return 0.0;
  for (double& g : grad_output) g /= static_cast<double>(used);
  return total / static_cast<double>(used);
}

double heldout_reconstruction_snr(const LatentCodec& codec, std::size_t clips, std::uint64_t seed,
                                  double clip_seconds) {
  synth::Rng rng(seed);
  double acc = 0.0;
  for (std::size_t i = 0; i < clips; ++i) {
    const Waveform x = synth::codec_training_clip(rng, codec.native_sample_rate_hz(), clip_seconds);
    Waveform y = codec.decode(codec.encode(x));
    y.samples.resize(x.size());
    acc += snr_db(x, y);
  }
  return acc / static_cast<double>(clips);
}

CodecTrainReport train_toy_codec(ToyLatentCodec& codec, const CodecTrainOptions& opt) {
  CodecTrainReport report;
  constexpr std::uint64_t kHeldoutSeed = 0xC0DEC0DEull;
  constexpr std::size_t kHeldoutClips = 24;
  report.heldout_snr_before_db = heldout_reconstruction_snr(codec, kHeldoutClips, kHeldoutSeed, opt.clip_seconds);

  auto& enc = codec.encoder();
  auto& dec = codec.decoder();
  const std::size_t ne = enc.num_params(), nd = dec.num_params();
  std::vector<double> flat = enc.flat_params();
  {
    const auto d = dec.flat_params();
    flat.insert(flat.end(), d.begin(), d.end());
  }
  nn::Adam adam(flat.size(), {.lr = opt.lr});
  synth::Rng rng(opt.seed);
  const std::vector<std::size_t> windows{128, 256, 512, 1024};
  const int rate = codec.native_sample_rate_hz();

  for (std::size_t step = 0; step < opt.steps; ++step) {
    nn::ParamGrads ge = enc.zero_grads(), gd = dec.zero_grads();
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < opt.batch; ++b) {
      const Waveform x = synth::codec_training_clip(rng, rate, opt.clip_seconds);
      nn::Tape te, td;
      nn::Tensor xin(1, x.size());
      std::copy(x.samples.begin(), x.samples.end(), xin.data.begin());
      const std::size_t hop = codec.hop_samples();
      xin.data.resize((x.size() + hop - 1) / hop * hop, 0.0);
      xin.length = xin.data.size();
      const nn::Tensor z = enc.forward(xin, &te);
      const nn::Tensor y = dec.forward(z, &td);

      const std::size_t n = x.size();
      std::vector<double> grad(n, 0.0);
      double l1 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = y.data[i] - x.samples[i];
        l1 += std::abs(d);
        grad[i] = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / static_cast<double>(n);
      }
      l1 /= static_cast<double>(n);
      std::vector<double> gspec(n);
      const double spec = multiscale_spectral_loss(std::span<const double>(y.data).first(n), x.samples, gspec, windows);
      for (std::size_t i = 0; i < n; ++i) grad[i] += opt.spectral_weight * gspec[i];
      batch_loss += l1 + opt.spectral_weight * spec;

      nn::Tensor gy(1, y.length);
      std::copy(grad.begin(), grad.end(), gy.data.begin());
      const nn::Tensor gz = dec.backward(gy, td, &gd);
      enc.backward(gz, te, &ge);
    }
    std::vector<double> g;
    g.reserve(flat.size());
    for (const auto& v : ge) g.insert(g.end(), v.begin(), v.end());
    for (const auto& v : gd) g.insert(g.end(), v.begin(), v.end());
    for (double& v : g) v /= static_cast<double>(opt.batch);
    // Cosine decay to 10% of the base rate.
    const double progress = static_cast<double>(step) / static_cast<double>(std::max<std::size_t>(1, opt.steps));
    adam.set_lr(opt.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))));
    adam.step(flat, g);
    enc.set_flat_params(std::span<const double>(flat).first(ne));
    dec.set_flat_params(std::span<const double>(flat).subspan(ne, nd));
    report.loss_history.push_back(batch_loss / static_cast<double>(opt.batch));
    if (opt.log_every > 0 && (step + 1) % opt.log_every == 0)
      log::info("train-toycodec step " + std::to_string(step + 1) + " loss " + std::to_string(report.loss_history.back()));
  }
  codec.mark_trained();
  report.heldout_snr_after_db = heldout_reconstruction_snr(codec, kHeldoutClips, kHeldoutSeed, opt.clip_seconds);
  return report;
}

double estimate_sigma(const LatentCodec& codec, std::span<const Waveform> calibration) {
  if (calibration.empty()) throw ConfigError("estimate_sigma: empty calibration set");
  double sum = 0.0, sum2 = 0.0;
  std::size_t n = 0;
  for (const auto& w : calibration) {
    const LatentTensor z = codec.encode(w);
    for (double v : z.flat()) {
      sum += v;
      sum2 += v * v;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  return std::sqrt(std::max(0.0, sum2 / static_cast<double>(n) - mean * mean));
}

double scale_budget(double eps_src, double sigma_src, double sigma_tgt) {
  if (!(sigma_src > 0.0)) throw ConfigError("scale_budget: sigma_src must be positive");
  return eps_src * sigma_tgt / sigma_src;
}

}  // namespace codecraid

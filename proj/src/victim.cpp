#include "codecraid/victim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "codecraid/channel.hpp"
#include "codecraid/checkpoint.hpp"
#include "codecraid/dsp.hpp"
#include "codecraid/error.hpp"
#include "codecraid/synth.hpp"

namespace codecraid {

Vocabulary::Vocabulary(std::string symbols) : symbols_(std::move(symbols)) {
  if (symbols_.size() < 2) throw ConfigError("vocabulary needs a blank and at least one symbol");
}

const Vocabulary& Vocabulary::toy() {
  static const Vocabulary v("_ abcdefghijklmnopqrstuvwxyz0123");
  return v;
}

int Vocabulary::id(char c) const {
  for (std::size_t i = 1; i < symbols_.size(); ++i)
    if (symbols_[i] == c) return static_cast<int>(i);
  return -1;
}

void Vocabulary::save_sidecar(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw RuntimeError("cannot write vocabulary: " + path.string());
  os << "<blank>\n";
  for (std::size_t i = 1; i < symbols_.size(); ++i) os << (symbols_[i] == ' ' ? std::string("<space>") : std::string(1, symbols_[i])) << '\n';
}

Vocabulary Vocabulary::load_sidecar(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("missing vocabulary sidecar: " + path.string());
  std::string symbols = "_";
  std::string line;
  std::getline(is, line);
  if (line != "<blank>") throw ConfigError("vocabulary sidecar must start with <blank>: " + path.string());
  while (std::getline(is, line)) {
    if (line == "<space>") symbols += ' ';
    else if (line.size() == 1) symbols += line[0];
    else if (!line.empty()) throw ConfigError("bad vocabulary entry '" + line + "' in " + path.string());
  }
  return Vocabulary(symbols);
}

namespace {

// Decodes one UTF-8 code point starting at s[i]; advances i. Invalid bytes
// are returned as themselves.
char32_t next_code_point(const std::string& s, std::size_t& i) {
  const auto c = static_cast<unsigned char>(s[i]);
  const auto cont = [&](std::size_t k) { return static_cast<char32_t>(static_cast<unsigned char>(s[i + k]) & 0x3F); };
  if (c < 0x80) {
    ++i;
    return c;
  }
  if ((c >> 5) == 0x6 && i + 1 < s.size()) {
    const char32_t cp = (static_cast<char32_t>(c & 0x1F) << 6) | cont(1);
    i += 2;
    return cp;
  }
  if ((c >> 4) == 0xE && i + 2 < s.size()) {
    const char32_t cp = (static_cast<char32_t>(c & 0x0F) << 12) | (cont(1) << 6) | cont(2);
    i += 3;
    return cp;
  }
  if ((c >> 3) == 0x1E && i + 3 < s.size()) {
    const char32_t cp = (static_cast<char32_t>(c & 0x07) << 18) | (cont(1) << 12) | (cont(2) << 6) | cont(3);
    i += 4;
    return cp;
  }
  ++i;
  return c;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

bool is_space(char32_t c) {
  return c == U' ' || (c >= U'\t' && c <= U'\r') || c == 0x00A0 || c == 0x1680 || (c >= 0x2000 && c <= 0x200A) ||
         c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x3000;
}

// Punctuation set:
//   ASCII: every printable non-alphanumeric, non-space character
//     (!"#$%&'()*+,-./:;<=>?@[\]^_`{|}~), i.e. P* plus the ASCII symbols.
//   Latin-1 P*: U+00A1 U+00A7 U+00AB U+00B6 U+00B7 U+00BB U+00BF.
//   General Punctuation P*: U+2010-U+2027, U+2030-U+205E.
//   Supplemental Punctuation: U+2E00-U+2E7F.
//   CJK punctuation: U+3001-U+3003, U+3008-U+3011, U+3014-U+301F, U+3030,
//     U+303D, U+30FB.
//   Fullwidth forms: U+FF01-U+FF0F, U+FF1A-U+FF20, U+FF3B-U+FF40,
//     U+FF5B-U+FF65.
bool is_punct(char32_t c) {
  if (c < 0x80) return c > 0x20 && c < 0x7F && !std::isalnum(static_cast<int>(c));
  switch (c) {
    case 0x00A1: case 0x00A7: case 0x00AB: case 0x00B6: case 0x00B7: case 0x00BB: case 0x00BF:
    case 0x3030: case 0x303D: case 0x30FB:
      return true;
    default:
      break;
  }
  return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) || (c >= 0x2E00 && c <= 0x2E7F) ||
         (c >= 0x3001 && c <= 0x3003) || (c >= 0x3008 && c <= 0x3011) || (c >= 0x3014 && c <= 0x301F) ||
         (c >= 0xFF01 && c <= 0xFF0F) || (c >= 0xFF1A && c <= 0xFF20) || (c >= 0xFF3B && c <= 0xFF40) ||
         (c >= 0xFF5B && c <= 0xFF65);
}

char32_t to_lower(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 32;
  // Latin-1 uppercase letters except the multiplication sign.
  if (c >= 0x00C0 && c <= 0x00DE && c != 0x00D7) return c + 32;
  return c;
}

}  // namespace

std::string normalize_text(const std::string& s) {
  // Punctuation becomes a word break, so "human-made" and "human made"
  // normalize identically while "humanmade" stays one word.
  std::string out;
  bool pending_space = false;
  for (std::size_t i = 0; i < s.size();) {
    char32_t c = to_lower(next_code_point(s, i));
    if (is_punct(c) || is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space && !out.empty()) out += ' ';
    pending_space = false;
    append_utf8(out, c);
  }
  return out;
}

bool substring_match(const std::string& output, const std::string& target) {
  const std::string t = normalize_text(target);
  if (t.empty()) throw ConfigError("substring_match: empty normalized target");
  return normalize_text(output).find(t) != std::string::npos;
}

TargetSpec TargetSpec::from_text(const std::string& text, const Vocabulary& vocab) {
  TargetSpec t;
  t.text = normalize_text(text);
  if (t.text.empty()) throw ConfigError("target text is empty after normalization");
  for (char c : t.text) {
    const int id = vocab.id(c);
    if (id < 0) throw ConfigError(std::string("target symbol '") + c + "' not in victim vocabulary");
    t.token_ids.push_back(id);
  }
  return t;
}

std::size_t aligned_frame(std::size_t i, std::size_t n_tokens, std::size_t n_frames) {
  // Centre of the i-th of n equal slots, so no token sits on the clip edge.
  return (2 * i + 1) * n_frames / (2 * n_tokens);
}

std::string collapse_frames(const std::vector<int>& frame_argmax, const Vocabulary& vocab) {
  std::string out;
  int prev = -1;
  for (int id : frame_argmax) {
    if (id != prev && id != vocab.blank()) out += vocab.symbol(id);
    prev = id;
  }
  return out;
}

std::string ToyVictimConfig::architecture() const {
  std::ostringstream os;
  os << "toyvictim/v1 sr=" << sample_rate_hz << " win=" << window << " fft=" << fft << " hop=" << hop
     << " mels=" << mels << " hidden=" << hidden << " vocab=32";
  return os.str();
}

namespace {

constexpr double kMelFloor = 1e-3;
constexpr double kFeatureScale = 0.25;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_filterbank(std::size_t mels, std::size_t fft, int rate) {
  const std::size_t bins = fft / 2 + 1;
  std::vector<double> fb(mels * bins, 0.0);
  const double lo = hz_to_mel(0.0), hi = hz_to_mel(rate / 2.0);
  std::vector<double> edges(mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(mels + 1));
  for (std::size_t m = 0; m < mels; ++m) {
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * rate / static_cast<double>(fft);
      double w = 0.0;
      if (f > edges[m] && f <= edges[m + 1]) w = (f - edges[m]) / (edges[m + 1] - edges[m]);
      else if (f > edges[m + 1] && f < edges[m + 2]) w = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
      fb[m * bins + k] = w;
    }
  }
  return fb;
}

// Cross-entropy against (1 - s) * onehot(label) + s / V.
double log_softmax_ce(std::span<const double> logits, int label, double smoothing, std::span<double> grad_scaled,
                      double weight) {
  double mx = -1e300;
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  const double off = smoothing / static_cast<double>(logits.size());
  double ce = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double q = off + (static_cast<int>(k) == label ? 1.0 - smoothing : 0.0);
    if (q > 0.0) ce += q * (lse - logits[k]);
    if (!grad_scaled.empty()) grad_scaled[k] = weight * (std::exp(logits[k] - lse) - q);
  }
  return ce;
}

}  // namespace

ToyTokenVictim::ToyTokenVictim(ToyVictimConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.window > cfg_.fft) throw ConfigError("toy victim: window longer than fft");
  mel_ = mel_filterbank(cfg_.mels, cfg_.fft, cfg_.sample_rate_hz);
  window_ = hann_window(cfg_.window);
  const std::size_t h = cfg_.hidden;
  net_.add<nn::Conv1d>(cfg_.mels, h, 5, 1, 2, 2);
  net_.add<nn::Elu>();
  net_.add<nn::Conv1d>(h, h, 5, 1, 2, 2);
  net_.add<nn::Elu>();
  net_.add<nn::Conv1d>(h, h, 3, 1, 1, 1);
  net_.add<nn::Elu>();
  hidden_layer_ = net_.size();
  net_.add<nn::Conv1d>(h, Vocabulary::toy().size(), 1);
  std::mt19937_64 rng(cfg_.seed);
  net_.init(rng);
}

std::size_t ToyTokenVictim::output_frames(std::size_t n) const {
  return n < cfg_.window ? 0 : 1 + (n - cfg_.window) / cfg_.hop;
}

void ToyTokenVictim::check_input(const Waveform& w) const {
  if (w.sample_rate_hz != cfg_.sample_rate_hz)
    throw ConfigError("victim expects " + std::to_string(cfg_.sample_rate_hz) + " Hz input, got " +
                      std::to_string(w.sample_rate_hz));
  if (output_frames(w.size()) == 0) throw ConfigError("victim input shorter than one analysis window");
}

ToyTokenVictim::Frontend ToyTokenVictim::frontend(const Waveform& w) const {
  check_input(w);
  const std::size_t frames = output_frames(w.size());
  const RealFft fft(cfg_.fft);
  const std::size_t bins = fft.bins();
  Frontend fe;
  fe.features = nn::Tensor(cfg_.mels, frames);
  fe.spectra.resize(frames * bins);
  fe.mel_energy.resize(frames * cfg_.mels);
  std::vector<double> frame(cfg_.fft, 0.0), power(bins);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < cfg_.window; ++i) frame[i] = w.samples[f * cfg_.hop + i] * window_[i];
    power_spectrum(fft, frame, std::span<Complex>(fe.spectra).subspan(f * bins, bins), power);
    for (std::size_t m = 0; m < cfg_.mels; ++m) {
      double e = 0.0;
      const double* fb = mel_.data() + m * bins;
      for (std::size_t k = 0; k < bins; ++k) e += fb[k] * power[k];
      fe.mel_energy[f * cfg_.mels + m] = e;
      fe.features.at(m, f) = kFeatureScale * std::log(e + kMelFloor);
    }
  }
  return fe;
}

std::vector<double> ToyTokenVictim::frontend_backward(const Frontend& fe, const nn::Tensor& grad_features,
                                                      std::size_t n) const {
  const RealFft fft(cfg_.fft);
  const std::size_t bins = fft.bins();
  const std::size_t frames = grad_features.length;
  std::vector<double> grad(n, 0.0), grad_power(bins), grad_frame(cfg_.fft), grad_mel(cfg_.mels);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t m = 0; m < cfg_.mels; ++m)
      grad_mel[m] = grad_features.at(m, f) * kFeatureScale / (fe.mel_energy[f * cfg_.mels + m] + kMelFloor);
    std::fill(grad_power.begin(), grad_power.end(), 0.0);
    for (std::size_t m = 0; m < cfg_.mels; ++m) {
      const double* fb = mel_.data() + m * bins;
      for (std::size_t k = 0; k < bins; ++k) grad_power[k] += fb[k] * grad_mel[m];
    }
    power_spectrum_backward(fft, std::span<const Complex>(fe.spectra).subspan(f * bins, bins), grad_power, grad_frame);
    for (std::size_t i = 0; i < cfg_.window; ++i) grad[f * cfg_.hop + i] += grad_frame[i] * window_[i];
  }
  return grad;
}

nn::Tensor ToyTokenVictim::logits(const Waveform& w) const { return net_.forward(frontend(w).features); }

LossAndGrad ToyTokenVictim::frame_loss(const Waveform& w, const std::vector<int>& labels,
                                       const std::vector<double>& weights, nn::ParamGrads* param_grads,
                                       bool want_input_grad, double label_smoothing) const {
  const Frontend fe = frontend(w);
  const std::size_t frames = fe.features.length;
  if (labels.size() != frames || weights.size() != frames) throw ConfigError("frame_loss: label count mismatch");
  const bool backward = want_input_grad || param_grads != nullptr;
  nn::Tape tape;
  const nn::Tensor out = net_.forward(fe.features, backward ? &tape : nullptr);
  const std::size_t vocab = out.channels;
  nn::Tensor grad_out(vocab, frames);
  std::vector<double> col(vocab), gcol(vocab);
  LossAndGrad r;
  for (std::size_t f = 0; f < frames; ++f) {
    if (weights[f] == 0.0) continue;
    for (std::size_t k = 0; k < vocab; ++k) col[k] = out.at(k, f);
    r.loss += weights[f] * log_softmax_ce(col, labels[f], label_smoothing, backward ? std::span<double>(gcol) : std::span<double>(), weights[f]);
    if (backward)
      for (std::size_t k = 0; k < vocab; ++k) grad_out.at(k, f) = gcol[k];
  }
  if (!std::isfinite(r.loss)) throw RuntimeError("victim loss is not finite");
  if (backward) {
    const nn::Tensor gfeat = net_.backward(grad_out, tape, param_grads);
    if (want_input_grad) r.grad = frontend_backward(fe, gfeat, w.size());
  }
  return r;
}

LossAndGrad ToyTokenVictim::target_loss(const Waveform& w, const TargetSpec& target, bool want_grad) const {
  check_input(w);
  const std::size_t frames = output_frames(w.size());
  const std::size_t n = target.token_ids.size();
  if (n == 0) throw ConfigError("target_loss: empty target");
  if (n > frames)
    throw ConfigError("target has " + std::to_string(n) + " tokens but the victim only emits " + std::to_string(frames) +
                      " frames");
  // Target frames and blank frames each carry half of the total weight.
  std::vector<int> labels(frames, Vocabulary::toy().blank());
  std::vector<double> weights(frames, 0.0);
  std::vector<bool> is_target(frames, false);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t f = aligned_frame(i, n, frames);
    labels[f] = target.token_ids[i];
    is_target[f] = true;
  }
  const std::size_t blanks = frames - n;
  for (std::size_t f = 0; f < frames; ++f) {
    if (is_target[f]) weights[f] = (blanks == 0 ? 1.0 : 0.5) / static_cast<double>(n);
    else weights[f] = 0.5 / static_cast<double>(blanks);
  }
  return frame_loss(w, labels, weights, nullptr, want_grad);
}

std::string ToyTokenVictim::generate(const Waveform& w) const {
  const nn::Tensor out = logits(w);
  std::vector<int> best(out.length, 0);
  for (std::size_t f = 0; f < out.length; ++f) {
    double mx = out.at(0, f);
    for (std::size_t k = 1; k < out.channels; ++k)
      if (out.at(k, f) > mx) {
        mx = out.at(k, f);
        best[f] = static_cast<int>(k);
      }
  }
  return collapse_frames(best, vocabulary());
}

Embedding ToyTokenVictim::embed(const Waveform& w) const {
  nn::Tape tape;
  net_.forward(frontend(w).features, &tape);
  const nn::Tensor& h = tape.inputs[hidden_layer_];
  Embedding e;
  e.vector.assign(h.channels, 0.0);
  for (std::size_t c = 0; c < h.channels; ++c) {
    double s = 0.0;
    for (double v : h.row(c)) s += v;
    e.vector[c] = s / static_cast<double>(h.length);
  }
  return e;
}

std::uint64_t ToyTokenVictim::parameter_checksum() const { return nn::checksum(net_.flat_params()); }

void ToyTokenVictim::save(const std::filesystem::path& path) const {
  Checkpoint c;
  c.kind = "toy-victim";
  c.arch_hash = hash_string(cfg_.architecture());
  c.seed = cfg_.seed;
  nlohmann::json meta;
  meta["sample_rate_hz"] = cfg_.sample_rate_hz;
  meta["window"] = cfg_.window;
  meta["fft"] = cfg_.fft;
  meta["hop"] = cfg_.hop;
  meta["mels"] = cfg_.mels;
  meta["hidden"] = cfg_.hidden;
  c.meta_json = meta.dump();
  c.params = net_.flat_params();
  c.save(path);
  vocabulary().save_sidecar(path.string() + ".vocab");
}

ToyTokenVictim ToyTokenVictim::load(const std::filesystem::path& path) {
  const Checkpoint c = Checkpoint::load(path);
  if (c.kind != "toy-victim") throw ConfigError("checkpoint is not a toy victim: " + path.string());
  const auto meta = nlohmann::json::parse(c.meta_json);
  ToyVictimConfig cfg;
  cfg.sample_rate_hz = meta.at("sample_rate_hz").get<int>();
  cfg.window = meta.at("window").get<std::size_t>();
  cfg.fft = meta.at("fft").get<std::size_t>();
  cfg.hop = meta.at("hop").get<std::size_t>();
  cfg.mels = meta.at("mels").get<std::size_t>();
  cfg.hidden = meta.at("hidden").get<std::size_t>();
  cfg.seed = c.seed;
  if (hash_string(cfg.architecture()) != c.arch_hash) throw ConfigError("toy victim architecture hash mismatch");
  const std::filesystem::path sidecar = path.string() + ".vocab";
  if (std::filesystem::exists(sidecar) && Vocabulary::load_sidecar(sidecar).symbols() != Vocabulary::toy().symbols())
    throw ConfigError("toy victim vocabulary sidecar does not match: " + sidecar.string());
  ToyTokenVictim v(cfg);
  v.net_.set_flat_params(c.params);
  return v;
}

std::vector<int> phone_frame_labels(const std::vector<std::pair<char, double>>& phone_centers_s, std::size_t frames,
                                    const ToyVictimConfig& cfg, const Vocabulary& vocab) {
  std::vector<int> labels(frames, vocab.blank());
  for (const auto& [letter, t] : phone_centers_s) {
    const double pos = (t * cfg.sample_rate_hz - cfg.window / 2.0) / static_cast<double>(cfg.hop);
    const long f = std::clamp(std::lround(pos), 0L, static_cast<long>(frames) - 1);
    labels[static_cast<std::size_t>(f)] = vocab.id(letter);
  }
  return labels;
}

VictimTrainReport train_toy_victim(ToyTokenVictim& victim, const VictimTrainOptions& opt, int carrier_rate_hz) {
  VictimTrainReport report;
  const auto& vocab = victim.vocabulary();
  const int rate = victim.input_sample_rate_hz();
  synth::Rng rng(opt.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const BitrateGrid channel_rates({16, 24, 32, 64, 128});
  const ChannelBank channels;

  auto make_example = [&](synth::Rng& r, Waveform& audio, std::vector<int>& labels, bool& speech) {
    speech = u(r) >= opt.music_fraction;
    synth::LabelledClip clip;
    if (speech) clip = synth::speech(r, carrier_rate_hz, opt.clip_seconds, 1, 3);
    else clip.audio = synth::music(r, carrier_rate_hz, opt.clip_seconds);
    Waveform a = clip.audio;
    // Some examples pass through the lossy toy channel so the transcript is
    // stable under compression of clean audio.
    if (u(r) < 0.3) a = channels.apply(a, {CodecFamily::toy, sample_bitrate(channel_rates, r)});
    audio = resample(a, rate);
    const std::size_t frames = victim.output_frames(audio.size());
    std::vector<std::pair<char, double>> centers;
    for (const auto& p : clip.phones) centers.emplace_back(p.letter, p.center_s());
    labels = phone_frame_labels(centers, frames, victim.config(), vocab);
  };

  auto& net = victim.network();
  std::vector<double> flat = net.flat_params();
  nn::Adam adam(flat.size(), {.lr = opt.lr});
  for (std::size_t step = 0; step < opt.steps; ++step) {
    nn::ParamGrads grads = net.zero_grads();
    double loss = 0.0;
    for (std::size_t b = 0; b < opt.batch; ++b) {
      Waveform audio;
      std::vector<int> labels;
      bool speech = false;
      make_example(rng, audio, labels, speech);
      std::vector<double> weights(labels.size());
      double wsum = 0.0;
      for (std::size_t f = 0; f < labels.size(); ++f) {
        weights[f] = labels[f] == vocab.blank() ? opt.blank_weight : 1.0;
        wsum += weights[f];
      }
      for (double& w : weights) w /= wsum * static_cast<double>(opt.batch);
      loss += victim.frame_loss(audio, labels, weights, &grads, false, opt.label_smoothing).loss;
    }
    std::vector<double> g;
    g.reserve(flat.size());
    for (const auto& v : grads) g.insert(g.end(), v.begin(), v.end());
    const double progress = static_cast<double>(step) / static_cast<double>(std::max<std::size_t>(1, opt.steps));
    adam.set_lr(opt.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(3.14159265358979 * progress))));
    adam.step(flat, g);
    net.set_flat_params(flat);
    report.loss_history.push_back(loss);
    if (opt.log_every > 0 && (step + 1) % opt.log_every == 0)
      log::info("train-victim step " + std::to_string(step + 1) + " loss " + std::to_string(loss));
  }

  synth::Rng held(opt.seed ^ 0x5EEDull);
  std::size_t exact = 0;
  constexpr std::size_t kHeldout = 40;
  for (std::size_t i = 0; i < kHeldout; ++i) {
    const auto clip = synth::speech(held, carrier_rate_hz, opt.clip_seconds, 1, 3);
    if (victim.generate(resample(clip.audio, rate)) == clip.transcript()) ++exact;
  }
  report.heldout_exact_rate = static_cast<double>(exact) / kHeldout;
  return report;
}

}  // namespace codecraid

#include "codecraid/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "codecraid/dsp.hpp"
#include "codecraid/error.hpp"
#include "codecraid/metrics.hpp"

namespace codecraid {

std::string to_string(AttackDomain d) { return d == AttackDomain::latent ? "latent" : "waveform"; }
std::string to_string(StepKind k) { return k == StepKind::clean ? "clean" : "codec_eot"; }

double AttackConfig::effective_alpha() const {
  if (alpha) return *alpha;
  return domain == AttackDomain::latent ? 0.2 : epsilon / 5.0;
}

std::size_t AttackConfig::warmup_steps() const {
  return static_cast<std::size_t>(std::floor(warmup_ratio * static_cast<double>(steps)));
}

void AttackConfig::validate() const {
  if (steps < 1) throw ConfigError("attack: steps must be >= 1");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) throw ConfigError("attack: warmup_ratio must lie in [0, 1]");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack: epsilon must be finite and >= 0");
  if (alpha && !(*alpha > 0.0 && std::isfinite(*alpha))) throw ConfigError("attack: alpha must be > 0");
  if (train_family == CodecFamily::identity) return;
  for (int b : eot_grid.bitrates()) CodecChannelSpec{train_family, b}.validate();
}

nlohmann::json AttackConfig::to_json() const {
  nlohmann::json j;
  j["domain"] = to_string(domain);
  j["epsilon"] = epsilon;
  j["alpha"] = alpha ? nlohmann::json(*alpha) : nlohmann::json(nullptr);
  j["steps"] = steps;
  j["warmup_ratio"] = warmup_ratio;
  j["eot_grid"] = eot_grid.bitrates();
  j["train_family"] = to_string(train_family);
  j["seed"] = seed;
  return j;
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("attack config must be a JSON object");
  AttackConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "domain") {
        const auto s = v.get<std::string>();
        if (s == "latent") c.domain = AttackDomain::latent;
        else if (s == "waveform") c.domain = AttackDomain::waveform;
        else throw ConfigError("unknown attack domain '" + s + "'");
      } else if (key == "epsilon") {
        c.epsilon = v.get<double>();
      } else if (key == "alpha") {
        if (v.is_null()) c.alpha.reset();
        else c.alpha = v.get<double>();
      } else if (key == "steps") {
        c.steps = v.get<std::size_t>();
      } else if (key == "warmup_ratio") {
        c.warmup_ratio = v.get<double>();
      } else if (key == "eot_grid") {
        c.eot_grid = BitrateGrid(v.get<std::vector<int>>());
      } else if (key == "train_family") {
        c.train_family = parse_family(v.get<std::string>());
      } else if (key == "seed") {
        c.seed = v.get<std::uint64_t>();
      } else {
        throw ConfigError("unknown attack config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("attack config: ") + e.what());
  }
  c.validate();
  return c;
}

StepKind schedule_select(std::size_t t, const AttackConfig& cfg) {
  if (t < 1 || t > cfg.steps)
    throw ConfigError("schedule_select: step " + std::to_string(t) + " outside [1, " + std::to_string(cfg.steps) + "]");
  if (t <= cfg.warmup_steps()) return StepKind::clean;
  return t % 2 == 1 ? StepKind::codec_eot : StepKind::clean;
}

ScheduleCounts schedule_counts(const AttackConfig& cfg) {
  ScheduleCounts c;
  const std::size_t warm = cfg.warmup_steps();
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    if (schedule_select(t, cfg) == StepKind::codec_eot) ++c.codec_eot;
    else if (t <= warm) ++c.warmup_clean;
    else ++c.alternating_clean;
  }
  return c;
}

AttackState::AttackState(std::size_t n) : delta(n, 0.0), optimizer(n, {}) {}

void optimizer_step(AttackState& state, std::span<const double> gradient, double alpha) {
  if (gradient.size() != state.delta.size()) throw ConfigError("optimizer_step: gradient shape mismatch");
  state.optimizer.set_lr(alpha);
  state.optimizer.step(state.delta, gradient);
}

void linf_project(std::span<double> delta, double epsilon) {
  if (epsilon == 0.0) {
    std::fill(delta.begin(), delta.end(), 0.0);
    return;
  }
  for (double& v : delta) v = std::clamp(v, -epsilon, epsilon);
}

double linf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

namespace {

struct PathValue {
  double loss = 0.0;
  std::vector<double> grad;  // same layout as delta
};

// (delta, bitrate or nullopt for a clean step) -> loss and gradient.
using PathFn = std::function<PathValue(std::span<const double>, std::optional<int>)>;

// Below this many codec-EoT steps an empty bitrate bin is plausible and is
// not treated as a sampler fault.
constexpr std::size_t kCoverageLintMinSteps = 250;

std::string state_dump(const AttackState& s, std::size_t t, StepKind kind, std::optional<int> b) {
  std::ostringstream os;
  os << "step " << t << " (" << to_string(kind);
  if (b) os << " @" << *b << " kbps";
  os << "), ||delta||_inf " << linf_norm(s.delta) << ", recent losses [";
  const std::size_t from = s.loss_history.size() > 5 ? s.loss_history.size() - 5 : 0;
  for (std::size_t i = from; i < s.loss_history.size(); ++i) os << (i > from ? ", " : "") << s.loss_history[i];
  os << "], optimizer steps " << s.optimizer.steps_taken();
  return os.str();
}

AttackState run_schedule(const AttackConfig& cfg, std::size_t n, const PathFn& path) {
  AttackState state(n);
  Rng rng(cfg.seed);
  const double alpha = cfg.effective_alpha();
  std::map<int, std::size_t> coverage;
  for (int b : cfg.eot_grid.bitrates()) coverage[b] = 0;
  std::size_t eot_steps = 0;

  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    const StepKind kind = schedule_select(t, cfg);
    std::optional<int> bitrate;
    if (kind == StepKind::codec_eot) {
      bitrate = sample_bitrate(cfg.eot_grid, rng);
      ++coverage[*bitrate];
      ++eot_steps;
    }
    PathValue v = path(state.delta, bitrate);
    if (!std::isfinite(v.loss)) {
      const std::string dump = state_dump(state, t, kind, bitrate);
      log::warn("attack diverged: " + dump);
      throw RuntimeError("non-finite attack loss at " + dump);
    }
    try {
      optimizer_step(state, v.grad, alpha);
    } catch (const RuntimeError&) {
      throw RuntimeError("non-finite attack gradient at " + state_dump(state, t, kind, bitrate));
    }
    linf_project(state.delta, cfg.epsilon);
    const double linf = linf_norm(state.delta);
    if (linf > cfg.epsilon + 1e-12) throw RuntimeError("budget invariant violated at " + state_dump(state, t, kind, bitrate));
    state.t = t;
    state.loss_history.push_back(v.loss);
    state.bitrate_history.push_back(bitrate.value_or(0));
    state.step_kinds.push_back(kind);
    state.linf_history.push_back(linf);
  }
  if (eot_steps >= kCoverageLintMinSteps)
    for (const auto& [b, count] : coverage)
      if (count == 0) throw RuntimeError("EoT coverage lint: bitrate " + std::to_string(b) + " never sampled");
  return state;
}

void fill_result(AttackResult& r, AttackState&& s, const AttackConfig& cfg) {
  r.final_delta = std::move(s.delta);
  r.loss_history = std::move(s.loss_history);
  r.bitrate_history = std::move(s.bitrate_history);
  r.step_kinds = std::move(s.step_kinds);
  r.linf_history = std::move(s.linf_history);
  r.config = cfg;
}

// Straight-through channel, resampling to the victim rate and victim loss.
// Returns the loss and its gradient with respect to `audio`.
PathValue victim_path(const Waveform& audio, std::optional<int> bitrate, const AttackConfig& cfg,
                      const ChannelBank& bank, const Resampler& rs, const VictimModel& victim,
                      const TargetSpec& target) {
  Waveform heard = audio;
  std::optional<SteChannel> ste;
  if (bitrate) {
    ste.emplace(bank, CodecChannelSpec{cfg.train_family, *bitrate});
    heard = ste->forward(audio);
  }
  const Waveform v{rs.apply(heard.samples), victim.input_sample_rate_hz()};
  LossAndGrad lg = victim.target_loss(v, target, true);
  std::vector<double> g = rs.apply_transpose(lg.grad, audio.size());
  if (ste) g = ste->backward(g);
  return {lg.loss, std::move(g)};
}

void check_frozen(std::uint64_t before, std::uint64_t after, const char* what) {
  if (before != after) throw RuntimeError(std::string(what) + " parameters changed during an attack");
}

}  // namespace

AttackResult run_latent_attack(const Waveform& carrier, const TargetSpec& target, const LatentCodec& codec,
                               const VictimModel& victim, const AttackConfig& cfg, const ChannelBank& bank) {
  cfg.validate();
  if (cfg.domain != AttackDomain::latent) throw ConfigError("run_latent_attack needs domain = latent");
  carrier.validate();
  if (carrier.sample_rate_hz != codec.native_sample_rate_hz())
    throw ConfigError("carrier must be at the codec rate (" + std::to_string(codec.native_sample_rate_hz()) + " Hz)");
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t victim_sum = victim.parameter_checksum();
  const std::uint64_t codec_sum = codec.parameter_checksum();

  const LatentTensor z = codec.encode(carrier);
  const std::size_t n = carrier.size();
  const Resampler rs(carrier.sample_rate_hz, victim.input_sample_rate_hz());

  auto path = [&](std::span<const double> delta, std::optional<int> bitrate) {
    LatentTensor zd = z;
    for (std::size_t i = 0; i < delta.size(); ++i) zd.values.data[i] += delta[i];
    DecodePass pass = codec.decode_with_grad(zd);
    const std::size_t decoded = pass.output.size();
    Waveform y = std::move(pass.output);
    y.samples.resize(n);
    PathValue v = victim_path(y, bitrate, cfg, bank, rs, victim, target);
    v.grad.resize(decoded, 0.0);
    LatentTensor gz = pass.backward(v.grad);
    v.grad = std::move(gz.values.data);
    return v;
  };

  AttackState state = run_schedule(cfg, z.values.data.size(), path);

  AttackResult r;
  LatentTensor zd = z;
  for (std::size_t i = 0; i < state.delta.size(); ++i) zd.values.data[i] += state.delta[i];
  r.adversarial = codec.decode(zd);
  r.adversarial.samples.resize(n);
  r.delta_dims = z.dims();
  r.delta_frames = z.frames();
  fill_result(r, std::move(state), cfg);
  r.clean_channel_snr_db = snr_db(carrier, r.adversarial);
  r.victim_checksum = victim.parameter_checksum();
  r.codec_checksum = codec.parameter_checksum();
  check_frozen(victim_sum, r.victim_checksum, "victim");
  check_frozen(codec_sum, r.codec_checksum, "codec");
  r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

AttackResult run_waveform_attack(const Waveform& carrier, const TargetSpec& target, const VictimModel& victim,
                                 const AttackConfig& cfg, const ChannelBank& bank) {
  cfg.validate();
  if (cfg.domain != AttackDomain::waveform) throw ConfigError("run_waveform_attack needs domain = waveform");
  carrier.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t victim_sum = victim.parameter_checksum();
  const Resampler rs(carrier.sample_rate_hz, victim.input_sample_rate_hz());

  auto path = [&](std::span<const double> delta, std::optional<int> bitrate) {
    Waveform x = carrier;
    for (std::size_t i = 0; i < delta.size(); ++i) x.samples[i] += delta[i];
    return victim_path(x, bitrate, cfg, bank, rs, victim, target);
  };

  AttackState state = run_schedule(cfg, carrier.size(), path);

  AttackResult r;
  r.adversarial = carrier;
  for (std::size_t i = 0; i < state.delta.size(); ++i) r.adversarial.samples[i] += state.delta[i];
  r.delta_dims = 1;
  r.delta_frames = carrier.size();
  fill_result(r, std::move(state), cfg);
  r.clean_channel_snr_db = snr_db(carrier, r.adversarial);
  r.victim_checksum = victim.parameter_checksum();
  check_frozen(victim_sum, r.victim_checksum, "victim");
  r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

BudgetSearch bisect_budget(const std::function<double(double)>& snr_at, double target_snr_db, double lo, double hi,
                           std::size_t max_iterations, double tolerance_db) {
  if (!(lo >= 0.0) || !(hi >= lo)) throw ConfigError("bisect_budget: need 0 <= lo <= hi");
  BudgetSearch out;
  auto probe = [&](double eps) {
    const double s = snr_at(eps);
    out.probes.emplace_back(eps, s);
    auto sorted = out.probes;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i)
      if (sorted[i].first > sorted[i - 1].first && sorted[i].second > sorted[i - 1].second + 1e-9) {
        std::ostringstream os;
        os << "SNR is not decreasing in the budget: snr(" << sorted[i - 1].first << ") = " << sorted[i - 1].second
           << " dB but snr(" << sorted[i].first << ") = " << sorted[i].second << " dB";
        throw RuntimeError(os.str());
      }
    return s;
  };
  auto done = [&](double eps, double s) {
    out.epsilon = eps;
    out.snr_db = s;
    return std::abs(s - target_snr_db) < tolerance_db;
  };

  const double s_lo = probe(lo);
  if (lo == hi) {
    if (done(lo, s_lo)) {
      log::warn("bisect_budget: degenerate range accepted");
      return out;
    }
    throw RuntimeError("bisect_budget: degenerate range misses the target SNR");
  }
  if (done(lo, s_lo)) return out;
  const double s_hi = probe(hi);
  if (done(hi, s_hi)) return out;
  if (!(s_lo > target_snr_db && s_hi < target_snr_db)) {
    std::ostringstream os;
    os << "budget range [" << lo << ", " << hi << "] does not bracket " << target_snr_db << " dB (snr " << s_lo
       << " .. " << s_hi << " dB)";
    throw RuntimeError(os.str());
  }
  // SNR falls roughly linearly in log(eps), so split geometrically when
  // the range is strictly positive.
  for (std::size_t i = 0; i < max_iterations; ++i) {
    const double mid = lo > 0.0 ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
    const double s = probe(mid);
    out.iterations = i + 1;
    if (done(mid, s)) return out;
    if (s > target_snr_db) lo = mid;
    else hi = mid;
  }
  throw RuntimeError("bisect_budget: no budget within " + std::to_string(tolerance_db) + " dB after " +
                     std::to_string(max_iterations) + " iterations");
}

BudgetSearch snr_match_budget(const AttackResult& reference, const Waveform& carrier, const TargetSpec& target,
                              const VictimModel& victim, const AttackConfig& waveform_cfg, const ChannelBank& bank,
                              const SnrMatchOptions& opt) {
  AttackConfig probe_cfg = waveform_cfg;
  probe_cfg.domain = AttackDomain::waveform;
  probe_cfg.steps = opt.probe_steps.value_or(std::max<std::size_t>(1, waveform_cfg.steps / 4));
  auto snr_at = [&](double eps) {
    AttackConfig c = probe_cfg;
    c.epsilon = eps;
    return run_waveform_attack(carrier, target, victim, c, bank).clean_channel_snr_db;
  };
  return bisect_budget(snr_at, reference.clean_channel_snr_db, opt.lo, opt.hi, opt.max_iterations, opt.tolerance_db);
}

namespace {
constexpr char kDeltaMagic[8] = {'C', 'R', 'A', 'I', 'D', 'D', 'L', 'T'};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}
}  // namespace

void save_delta(const std::filesystem::path& path, std::span<const double> delta, std::size_t dims, std::size_t frames) {
  if (dims * frames != delta.size()) throw ConfigError("save_delta: shape does not match data");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw RuntimeError("cannot write " + path.string());
  os.write(kDeltaMagic, 8);
  const std::uint64_t d = dims, f = frames;
  os.write(reinterpret_cast<const char*>(&d), 8);
  os.write(reinterpret_cast<const char*>(&f), 8);
  os.write(reinterpret_cast<const char*>(delta.data()), static_cast<std::streamsize>(delta.size() * sizeof(double)));
  if (!os) throw RuntimeError("short write: " + path.string());
}

std::vector<double> load_delta(const std::filesystem::path& path, std::size_t* dims, std::size_t* frames) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("missing delta file: " + path.string());
  char magic[8];
  std::uint64_t d = 0, f = 0;
  if (!is.read(magic, 8) || std::memcmp(magic, kDeltaMagic, 8) != 0) throw ConfigError("not a delta file: " + path.string());
  if (!is.read(reinterpret_cast<char*>(&d), 8) || !is.read(reinterpret_cast<char*>(&f), 8) || d * f > (1ull << 32))
    throw ConfigError("corrupt delta file: " + path.string());
  std::vector<double> v(d * f);
  if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double))))
    throw ConfigError("truncated delta file: " + path.string());
  if (dims) *dims = d;
  if (frames) *frames = f;
  return v;
}

void write_attack_bundle(const AttackResult& r, const std::filesystem::path& dir, const nlohmann::json& extra) {
  std::filesystem::create_directories(dir);
  save_wav(r.adversarial, dir / "adversarial.wav");
  save_delta(dir / "delta.bin", r.final_delta, r.delta_dims, r.delta_frames);
  {
    std::ofstream os(dir / "loss_history.csv", std::ios::trunc);
    if (!os) throw RuntimeError("cannot write " + (dir / "loss_history.csv").string());
    os << "step,kind,bitrate_kbps,loss,linf\n";
    char buf[64];
    for (std::size_t i = 0; i < r.loss_history.size(); ++i) {
      os << i + 1 << ',' << to_string(r.step_kinds[i]) << ',' << r.bitrate_history[i] << ',';
      std::snprintf(buf, sizeof(buf), "%.17g", r.loss_history[i]);
      os << buf << ',';
      std::snprintf(buf, sizeof(buf), "%.17g", r.linf_history[i]);
      os << buf << '\n';
    }
  }
  nlohmann::json j = extra;
  j["config"] = r.config.to_json();
  j["initial_loss"] = r.initial_loss();
  j["final_loss"] = r.final_loss();
  j["clean_channel_snr_db"] = r.clean_channel_snr_db;
  j["delta_checksum"] = hex64(r.delta_checksum());
  j["victim_checksum"] = hex64(r.victim_checksum);
  j["codec_checksum"] = hex64(r.codec_checksum);
  j["delta_shape"] = {r.delta_dims, r.delta_frames};
  j["wall_time_s"] = r.wall_time_s;
  std::ofstream os(dir / "config.json", std::ios::trunc);
  if (!os) throw RuntimeError("cannot write " + (dir / "config.json").string());
  os << j.dump(2) << '\n';
}

}  // namespace codecraid

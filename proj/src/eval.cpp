#include "codecraid/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "codecraid/dsp.hpp"
#include "codecraid/error.hpp"
#include "codecraid/synth.hpp"

#ifndef CODECRAID_VERSION
#define CODECRAID_VERSION "0.0.0"
#endif
#ifndef CODECRAID_GIT_REV
#define CODECRAID_GIT_REV "unknown"
#endif

namespace codecraid {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(CarrierClass c) { return c == CarrierClass::speech ? "speech" : "music"; }

CarrierClass parse_carrier_class(const std::string& s) {
  if (s == "speech") return CarrierClass::speech;
  if (s == "music") return CarrierClass::music;
  throw ConfigError("unknown carrier class '" + s + "' (expected speech or music)");
}

// ---------------------------------------------------------------- scenario

void ScenarioSpec::validate() const {
  if (carriers.empty()) throw ConfigError("scenario '" + name + "' has no carriers");
  std::set<std::string> ids;
  for (const auto& c : carriers) {
    if (c.id.empty()) throw ConfigError("scenario '" + name + "': carrier without an id");
    if (!ids.insert(c.id).second) throw ConfigError("scenario '" + name + "': duplicate carrier id '" + c.id + "'");
    if (normalize_text(c.target).empty())
      throw ConfigError("scenario '" + name + "': carrier '" + c.id + "' has an empty target");
    c.audio.validate();
  }
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

std::string resolve_path(const std::string& p, const fs::path& base) {
  if (p.empty()) return p;
  fs::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path.lexically_normal().string();
}

}  // namespace

ScenarioSpec ScenarioSpec::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("scenario manifest must be an object");
  reject_unknown(j, {"name", "victim", "codec", "grid", "target", "carriers"}, "scenario manifest");
  ScenarioSpec s;
  try {
    s.name = j.value("name", std::string("scenario"));
    s.victim_id = resolve_path(j.value("victim", std::string()), base_dir);
    s.codec_id = resolve_path(j.value("codec", std::string()), base_dir);
    if (j.contains("grid")) s.grid = j.at("grid").get<std::vector<std::string>>();
    const std::string default_target = j.value("target", std::string());
    if (!j.contains("carriers") || !j.at("carriers").is_array())
      throw ConfigError("scenario manifest: 'carriers' must be an array");
    std::size_t i = 0;
    for (const auto& c : j.at("carriers")) {
      reject_unknown(c, {"path", "class", "target", "id"}, "carrier " + std::to_string(i));
      Carrier car;
      const std::string path = resolve_path(c.at("path").get<std::string>(), base_dir);
      if (!fs::exists(path)) throw ConfigError("carrier file not found: " + path);
      car.audio = load_wav(path);
      car.cls = parse_carrier_class(c.value("class", std::string("speech")));
      car.target = c.value("target", default_target);
      car.id = c.value("id", fs::path(path).stem().string());
      s.carriers.push_back(std::move(car));
      ++i;
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario manifest: ") + e.what());
  }
  s.validate();
  return s;
}

ScenarioSpec ScenarioSpec::load(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw ConfigError("cannot open scenario manifest: " + manifest.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("scenario manifest " + manifest.string() + ": " + e.what());
  }
  return from_json(j, manifest.parent_path());
}

namespace {

std::string draw_target(synth::Rng& rng, const std::string& pool, std::size_t tokens) {
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::string t;
  while (t.size() < tokens) {
    const char c = pool[pick(rng)];
    if (!t.empty() && t.back() == c) continue;  // repeats would collapse
    t.push_back(c);
  }
  return t;
}

}  // namespace

ScenarioSpec ScenarioSpec::synthetic(const std::string& name, const SyntheticScenarioOptions& opt,
                                     const VictimModel* victim) {
  if (opt.n == 0) throw ConfigError("synthetic scenario needs n >= 1");
  if (opt.target_pool.size() < 2 && opt.target_tokens > 1)
    throw ConfigError("target pool needs at least two letters for multi-token targets");
  if (opt.target_tokens == 0) throw ConfigError("target_tokens must be >= 1");
  if (opt.speech_fraction < 0.0 || opt.speech_fraction > 1.0)
    throw ConfigError("speech_fraction must lie in [0, 1]");

  ScenarioSpec s;
  s.name = name;
  synth::Rng rng(opt.seed * 0x9E3779B97F4A7C15ull + 17);
  for (std::size_t i = 0; i < opt.n; ++i) {
    // Spread speech carriers evenly: carrier i is speech when the running
    // quota ticks over.
    const bool speech = std::floor((i + 1) * opt.speech_fraction) > std::floor(i * opt.speech_fraction);
    Carrier c;
    c.cls = speech ? CarrierClass::speech : CarrierClass::music;
    c.audio = speech ? synth::speech(rng, opt.sample_rate_hz, opt.clip_seconds, 1, 3).audio
                     : synth::music(rng, opt.sample_rate_hz, opt.clip_seconds);
    std::ostringstream id;
    id << to_string(c.cls) << '_' << std::setw(3) << std::setfill('0') << i;
    c.id = id.str();

    std::string clean_out;
    if (victim) clean_out = victim->generate(resample(c.audio, victim->input_sample_rate_hz()));
    for (int tries = 0;; ++tries) {
      c.target = draw_target(rng, opt.target_pool, opt.target_tokens);
      if (!victim || !substring_match(clean_out, c.target)) break;
      if (tries > 100) throw ConfigError("could not find a target the victim does not already emit for " + c.id);
    }
    s.carriers.push_back(std::move(c));
  }
  s.validate();
  return s;
}

// -------------------------------------------------------------------- grid

namespace {

// clean | trained-grid bitrates | held-out families
int column_group(const CodecChannelSpec& c) {
  switch (c.family) {
    case CodecFamily::identity: return 0;
    case CodecFamily::toy: return 1;
    case CodecFamily::opus: return c.bitrate_kbps <= 128 ? 1 : 2;
    case CodecFamily::mp3: return 3;
    case CodecFamily::aac_lc: return 4;
  }
  return 5;
}

}  // namespace

EvalGrid::EvalGrid(std::vector<CodecChannelSpec> cells) {
  CodecChannelSpec clean{CodecFamily::identity, 0};
  cells_.push_back(clean);
  std::set<std::string> seen{clean.label()};
  for (auto& c : cells) {
    if (c.family == CodecFamily::identity) continue;
    c.validate();
    if (!seen.insert(c.label()).second) throw ConfigError("duplicate grid cell " + c.label());
    cells_.push_back(c);
  }
  std::stable_sort(cells_.begin(), cells_.end(), [](const CodecChannelSpec& a, const CodecChannelSpec& b) {
    const int ga = column_group(a), gb = column_group(b);
    if (ga != gb) return ga < gb;
    if (a.family != b.family) return a.family < b.family;
    return a.bitrate_kbps < b.bitrate_kbps;
  });
}

EvalGrid EvalGrid::toy_default() {
  std::vector<CodecChannelSpec> c;
  const auto trained = BitrateGrid::training_default();
  for (int b : trained.bitrates()) c.push_back({CodecFamily::toy, b});
  return EvalGrid(std::move(c));
}

EvalGrid EvalGrid::full_default() {
  std::vector<CodecChannelSpec> c;
  const auto trained = BitrateGrid::training_default();
  for (int b : trained.bitrates()) c.push_back({CodecFamily::opus, b});
  c.push_back({CodecFamily::opus, 192});
  for (auto f : {CodecFamily::mp3, CodecFamily::aac_lc})
    for (int b : {64, 96, 128, 192}) c.push_back({f, b});
  return EvalGrid(std::move(c));
}

EvalGrid EvalGrid::from_labels(const std::vector<std::string>& labels) {
  std::vector<CodecChannelSpec> c;
  for (const auto& l : labels) c.push_back(CodecChannelSpec::parse(l));
  return EvalGrid(std::move(c));
}

std::vector<std::string> EvalGrid::labels() const {
  std::vector<std::string> out;
  for (const auto& c : cells_) out.push_back(c.label());
  return out;
}

EvalGrid EvalGrid::without_external() const {
  std::vector<CodecChannelSpec> keep;
  for (const auto& c : cells_)
    if (!c.is_external()) keep.push_back(c);
  return EvalGrid(std::move(keep));
}

bool EvalGrid::has_external() const {
  return std::any_of(cells_.begin(), cells_.end(), [](const auto& c) { return c.is_external(); });
}

std::optional<CodecChannelSpec> EvalGrid::lowest_toy() const {
  std::optional<CodecChannelSpec> best;
  for (const auto& c : cells_)
    if (c.family == CodecFamily::toy && (!best || c.bitrate_kbps < best->bitrate_kbps)) best = c;
  return best;
}

// --------------------------------------------------------------- statistics

double normal_quantile_two_sided(double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("confidence must lie in (0, 1)");
  // Solve erf(x) = confidence by Newton's method; z = sqrt(2) x.
  double x = 1.0;
  for (int i = 0; i < 100; ++i) {
    const double f = std::erf(x) - confidence;
    const double df = 2.0 / std::sqrt(M_PI) * std::exp(-x * x);
    const double step = f / df;
    x -= step;
    if (std::abs(step) < 1e-15) break;
  }
  return std::sqrt(2.0) * x;
}

std::pair<double, double> wilson_interval(std::size_t successes, std::size_t n, double confidence) {
  if (n == 0) throw ConfigError("wilson_interval: n must be >= 1");
  if (successes > n) throw ConfigError("wilson_interval: successes exceed n");
  const double z = normal_quantile_two_sided(confidence);
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2.0 * nn)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn));
  double lo = std::max(0.0, centre - half);
  double hi = std::min(1.0, centre + half);
  // Rounding can push a bound a hair past the point estimate at k = 0 or n.
  lo = std::min(lo, p);
  hi = std::max(hi, p);
  return {lo, hi};
}

std::optional<double> GridEvaluation::clean_vs_lowest_gap() const {
  if (cells.empty()) return std::nullopt;
  const EvalCell* low = nullptr;
  for (const auto& c : cells)
    if (c.spec.family == CodecFamily::toy && (!low || c.spec.bitrate_kbps < low->spec.bitrate_kbps)) low = &c;
  if (!low) return std::nullopt;
  return cells.front().asr - low->asr;
}

// ---------------------------------------------------------------- workers

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  jobs = std::clamp<std::size_t>(jobs, 1, n);
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// --------------------------------------------------------------- evaluation

namespace {

// Deterministic fold in carrier order.
void fold_cells(GridEvaluation& ev, const std::vector<CodecChannelSpec>& cells, const EvalOptions& opt) {
  const std::size_t nc = cells.size();
  ev.cells.clear();
  for (std::size_t c = 0; c < nc; ++c) {
    EvalCell cell;
    cell.spec = cells[c];
    for (const auto& o : ev.outcomes) {
      const auto& oc = o.cells[c];
      if (oc.channel_failed) {
        ++cell.channel_failures;
        if (opt.strict) ++cell.n;
        continue;
      }
      ++cell.n;
      if (oc.success) ++cell.successes;
    }
    if (cell.channel_failures > 0)
      log::warn(cells[c].label() + ": " + std::to_string(cell.channel_failures) + " channel failure(s) " +
                (opt.strict ? "counted as misses" : "excluded from n"));
    if (cell.n > 0) {
      cell.asr = static_cast<double>(cell.successes) / static_cast<double>(cell.n);
      std::tie(cell.ci_low, cell.ci_high) = wilson_interval(cell.successes, cell.n);
    } else {
      cell.ci_low = 0.0;
      cell.ci_high = 1.0;
    }
    ev.cells.push_back(cell);
  }
}

}  // namespace

GridEvaluation pool_evaluations(std::span<const GridEvaluation> runs, const EvalOptions& opt) {
  if (runs.empty()) throw ConfigError("pool_evaluations needs at least one evaluation");
  std::vector<CodecChannelSpec> cells;
  for (const auto& c : runs.front().cells) cells.push_back(c.spec);
  GridEvaluation pooled;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    if (runs[k].cells.size() != cells.size()) throw ConfigError("pool_evaluations: grids differ");
    for (std::size_t c = 0; c < cells.size(); ++c)
      if (!(runs[k].cells[c].spec == cells[c])) throw ConfigError("pool_evaluations: grids differ");
    for (auto o : runs[k].outcomes) {
      o.carrier_id += "#" + std::to_string(k);
      pooled.outcomes.push_back(std::move(o));
    }
  }
  fold_cells(pooled, cells, opt);
  return pooled;
}

GridEvaluation evaluate_grid(std::span<const Waveform> adversarial, const ScenarioSpec& scenario, const EvalGrid& grid,
                             const VictimModel& victim, const ChannelBank& bank, const EvalOptions& opt) {
  if (adversarial.size() != scenario.carriers.size())
    throw ConfigError("evaluate_grid: " + std::to_string(adversarial.size()) + " results for " +
                      std::to_string(scenario.carriers.size()) + " carriers");
  const auto& cells = grid.cells();
  const std::size_t nc = cells.size();

  GridEvaluation ev;
  ev.outcomes.resize(adversarial.size());
  for (std::size_t i = 0; i < adversarial.size(); ++i) {
    ev.outcomes[i].carrier_id = scenario.carriers[i].id;
    ev.outcomes[i].target = scenario.carriers[i].target;
    ev.outcomes[i].cells.resize(nc);
  }

  const int vrate = victim.input_sample_rate_hz();
  parallel_for(adversarial.size() * nc, opt.jobs, [&](std::size_t k) {
    const std::size_t i = k / nc, c = k % nc;
    CellOutcome& out = ev.outcomes[i].cells[c];
    Waveform heard;
    try {
      heard = bank.apply(adversarial[i], cells[c]);
    } catch (const RuntimeError& e) {
      out.channel_failed = true;
      out.output = e.what();
      return;
    }
    out.output = victim.generate(resample(heard, vrate));
    out.success = substring_match(out.output, scenario.carriers[i].target);
  });

  fold_cells(ev, cells, opt);
  return ev;
}

namespace {

// The waveform an attack on this carrier starts from: native codec rate for
// the latent domain, as stored otherwise.
Waveform working_carrier(const Carrier& c, const AttackConfig& cfg, const AttackStack& stack) {
  if (cfg.domain == AttackDomain::latent) {
    if (!stack.codec) throw ConfigError("latent attack requested without a codec");
    const int rate = stack.codec->native_sample_rate_hz();
    if (c.audio.sample_rate_hz != rate) return resample(c.audio, rate);
  }
  return c.audio;
}

void check_stack(const AttackStack& stack) {
  if (!stack.victim) throw ConfigError("attack stack has no victim");
  if (!stack.bank) throw ConfigError("attack stack has no channel bank");
}

std::uint64_t carrier_seed(std::uint64_t base, std::size_t i) { return base * 1000003ull + i; }

AttackResult attack_one(const Waveform& carrier, const std::string& target, const AttackConfig& cfg,
                        const AttackStack& stack) {
  const TargetSpec t = TargetSpec::from_text(target, stack.victim->vocabulary());
  if (cfg.domain == AttackDomain::latent) return run_latent_attack(carrier, t, *stack.codec, *stack.victim, cfg, *stack.bank);
  return run_waveform_attack(carrier, t, *stack.victim, cfg, *stack.bank);
}

}  // namespace

std::vector<AttackResult> run_attacks(const ScenarioSpec& scenario, const AttackConfig& cfg, const AttackStack& stack,
                                      std::size_t jobs) {
  check_stack(stack);
  cfg.validate();
  std::vector<AttackResult> out(scenario.carriers.size());
  parallel_for(out.size(), jobs, [&](std::size_t i) {
    AttackConfig c = cfg;
    c.seed = carrier_seed(cfg.seed, i);
    const auto& car = scenario.carriers[i];
    out[i] = attack_one(working_carrier(car, cfg, stack), car.target, c, stack);
  });
  return out;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string version_stamp() { return std::string(CODECRAID_VERSION) + "+" + CODECRAID_GIT_REV; }

namespace {

json quality_json(const AudioQualityReport& q) {
  return {{"snr_db", q.snr_db},
          {"snr_delta_db", q.snr_delta_db},
          {"si_sdr_db", q.si_sdr_db},
          {"lsd_db", q.lsd_db},
          {"delta_lufs_db", q.delta_lufs_db}};
}

json evaluation_json(const GridEvaluation& ev) {
  json cells = json::array();
  for (const auto& c : ev.cells)
    cells.push_back({{"cell", c.spec.label()},
                     {"n", c.n},
                     {"successes", c.successes},
                     {"channel_failures", c.channel_failures},
                     {"asr", c.asr},
                     {"ci_low", c.ci_low},
                     {"ci_high", c.ci_high}});
  json outcomes = json::array();
  for (const auto& o : ev.outcomes) {
    json per = json::array();
    for (std::size_t k = 0; k < o.cells.size(); ++k)
      per.push_back({{"cell", ev.cells.at(k).spec.label()},
                     {"success", o.cells[k].success},
                     {"channel_failed", o.cells[k].channel_failed},
                     {"output", o.cells[k].output}});
    outcomes.push_back({{"carrier", o.carrier_id}, {"target", o.target}, {"cells", per}});
  }
  return {{"cells", cells}, {"outcomes", outcomes}};
}

}  // namespace

json RunRecord::to_json() const {
  json q = json::array();
  for (const auto& r : quality) q.push_back(quality_json(r));
  return {{"id", id},
          {"scenario", scenario},
          {"config", config},
          {"grid", grid_labels},
          {"evaluation", evaluation_json(evaluation)},
          {"quality", q},
          {"final_losses", final_losses},
          {"snr_db", snr_db},
          {"started_utc", started_utc},
          {"finished_utc", finished_utc},
          {"version", version},
          {"notes", notes}};
}

namespace {

RunRecord make_record(const std::string& id, const ScenarioSpec& scenario, const AttackConfig& cfg,
                      const EvalGrid& grid, const AttackStack& stack, const EvalOptions& opt,
                      const std::vector<AttackResult>& results, const std::string& started) {
  RunRecord r;
  r.id = id;
  r.scenario = scenario.name;
  r.config = {{"attack", cfg.to_json()}, {"strict", opt.strict}, {"carriers", scenario.carriers.size()}};
  r.grid_labels = grid.labels();
  r.started_utc = started;
  r.version = version_stamp();

  std::vector<Waveform> adv;
  for (const auto& a : results) adv.push_back(a.adversarial);
  r.evaluation = evaluate_grid(adv, scenario, grid, *stack.victim, *stack.bank, opt);

  for (std::size_t i = 0; i < results.size(); ++i) {
    const Waveform carrier = working_carrier(scenario.carriers[i], cfg, stack);
    Waveform roundtrip = carrier;
    if (cfg.domain == AttackDomain::latent) {
      roundtrip = stack.codec->decode(stack.codec->encode(carrier));
      roundtrip.samples.resize(carrier.size());
    }
    r.quality.push_back(quality_report(carrier, roundtrip, results[i].adversarial));
    r.final_losses.push_back(results[i].final_loss());
    r.snr_db.push_back(results[i].clean_channel_snr_db);
  }
  if (!grid.has_external()) r.notes.push_back("no external codec cells");
  r.finished_utc = utc_timestamp();
  return r;
}

}  // namespace

RunRecord attack_and_evaluate(const std::string& id, const ScenarioSpec& scenario, const AttackConfig& cfg,
                              const EvalGrid& grid, const AttackStack& stack, const EvalOptions& opt,
                              std::vector<AttackResult>* results_out) {
  scenario.validate();
  const std::string started = utc_timestamp();
  auto results = run_attacks(scenario, cfg, stack, opt.jobs);
  RunRecord r = make_record(id, scenario, cfg, grid, stack, opt, results, started);
  if (results_out) *results_out = std::move(results);
  return r;
}

// ------------------------------------------------------------------ paired

std::string PairedRow::higher() const {
  if (asr_a > asr_b) return "A";
  if (asr_b > asr_a) return "B";
  return "=";
}

std::vector<PairedRow> pair_rows(const RunRecord& a, const RunRecord& b) {
  if (a.grid_labels != b.grid_labels) throw ConfigError("paired comparison needs identical grids in both arms");
  if (a.evaluation.cells.size() != a.grid_labels.size() || b.evaluation.cells.size() != b.grid_labels.size())
    throw ConfigError("paired comparison: record is missing grid cells");
  std::vector<PairedRow> rows;
  for (std::size_t k = 0; k < a.grid_labels.size(); ++k)
    rows.push_back({a.grid_labels[k], a.evaluation.cells[k].asr, b.evaluation.cells[k].asr});
  return rows;
}

PairedRecord ablate_eot(const ScenarioSpec& scenario, const AttackConfig& base_cfg, const EvalGrid& grid,
                        const AttackStack& stack, const EvalOptions& opt) {
  AttackConfig no_eot = base_cfg;
  no_eot.warmup_ratio = 1.0;
  PairedRecord p;
  p.name_a = "eot";
  p.name_b = "no_eot";
  p.a = attack_and_evaluate(scenario.name + "-eot", scenario, base_cfg, grid, stack, opt);
  p.b = attack_and_evaluate(scenario.name + "-no-eot", scenario, no_eot, grid, stack, opt);
  p.rows = pair_rows(p.a, p.b);
  return p;
}

// ---------------------------------------------------------------- capacity

std::string pseudo_word_target(std::size_t words, const std::string& pool, std::uint64_t seed) {
  if (words == 0) throw ConfigError("word count must be >= 1");
  if (pool.empty()) throw ConfigError("empty pseudo-word pool");
  synth::Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::string t;
  for (std::size_t w = 0; w < words; ++w) {
    if (w) t.push_back(' ');
    t.push_back(pool[pick(rng)]);
  }
  return t;
}

std::vector<CapacityRow> capacity_sweep(const ScenarioSpec& carriers, const CapacityOptions& copt,
                                        const AttackConfig& cfg, const EvalGrid& grid, const AttackStack& stack,
                                        const EvalOptions& opt) {
  check_stack(stack);
  carriers.validate();
  std::vector<CapacityRow> rows;
  for (std::size_t wc : copt.word_counts) {
    CapacityRow row;
    row.word_count = wc;
    row.successes.assign(grid.cells().size(), 0);

    ScenarioSpec sc = carriers;
    sc.name = carriers.name + "-w" + std::to_string(wc);
    for (std::size_t i = 0; i < sc.carriers.size(); ++i)
      sc.carriers[i].target = pseudo_word_target(wc, copt.word_pool, copt.seed * 7919 + wc * 131 + i);
    row.tokens = normalize_text(sc.carriers.front().target).size();

    const Waveform probe = working_carrier(sc.carriers.front(), cfg, stack);
    const std::size_t victim_len = Resampler(probe.sample_rate_hz, stack.victim->input_sample_rate_hz())
                                       .output_length(probe.size());
    if (row.tokens > stack.victim->output_frames(victim_len)) {
      row.capacity_exceeded = true;
      row.n = sc.carriers.size();
      log::warn("capacity: " + std::to_string(wc) + " words need " + std::to_string(row.tokens) +
                " frames; recorded as a structural failure");
      rows.push_back(row);
      continue;
    }

    auto results = run_attacks(sc, cfg, stack, opt.jobs);
    std::vector<Waveform> adv;
    double loss = 0.0;
    for (const auto& r : results) {
      adv.push_back(r.adversarial);
      loss += r.final_loss();
    }
    row.mean_final_loss = loss / static_cast<double>(results.size());
    const auto ev = evaluate_grid(adv, sc, grid, *stack.victim, *stack.bank, opt);
    for (std::size_t k = 0; k < ev.cells.size(); ++k) row.successes[k] = ev.cells[k].successes;
    row.n = sc.carriers.size();
    rows.push_back(row);
  }
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (!rows[i].capacity_exceeded && !rows[i - 1].capacity_exceeded &&
        rows[i].mean_final_loss < rows[i - 1].mean_final_loss)
      log::info("capacity: final loss drops from " + std::to_string(rows[i - 1].word_count) + " to " +
                std::to_string(rows[i].word_count) + " words (soft check)");
  return rows;
}

// ---------------------------------------------------------------- compare

CompareRecord compare_latent_waveform(const ScenarioSpec& scenario, const AttackConfig& latent_cfg,
                                      const AttackConfig& waveform_cfg, const EvalGrid& grid, const AttackStack& stack,
                                      const EvalOptions& opt, const SnrMatchOptions& match) {
  check_stack(stack);
  scenario.validate();
  if (latent_cfg.domain != AttackDomain::latent || waveform_cfg.domain != AttackDomain::waveform)
    throw ConfigError("compare needs a latent and a waveform config");

  // Both arms start from the same carrier at the codec's rate.
  ScenarioSpec sc = scenario;
  for (auto& c : sc.carriers) c.audio = working_carrier(c, latent_cfg, stack);

  CompareRecord out;
  const std::string started = utc_timestamp();
  auto latent = run_attacks(sc, latent_cfg, stack, opt.jobs);

  std::vector<AttackResult> wave(sc.carriers.size());
  out.snr_rows.resize(sc.carriers.size());
  parallel_for(sc.carriers.size(), opt.jobs, [&](std::size_t i) {
    const auto& car = sc.carriers[i];
    const TargetSpec t = TargetSpec::from_text(car.target, stack.victim->vocabulary());
    AttackConfig wc = waveform_cfg;
    wc.seed = carrier_seed(waveform_cfg.seed, i);
    wc.alpha.reset();

    BudgetSearch bs;
    try {
      bs = snr_match_budget(latent[i], car.audio, t, *stack.victim, wc, *stack.bank, match);
    } catch (const RuntimeError& e) {
      throw RuntimeError("SNR matching failed for carrier " + car.id + " (latent SNR " +
                         std::to_string(latent[i].clean_channel_snr_db) + " dB): " + e.what());
    }
    wc.epsilon = bs.epsilon;
    AttackResult r = run_waveform_attack(car.audio, t, *stack.victim, wc, *stack.bank);
    std::size_t iters = bs.iterations;
    const double target = latent[i].clean_channel_snr_db;
    if (std::abs(r.clean_channel_snr_db - target) >= match.tolerance_db) {
      // Short probes disagreed with the full-length run; refine with full runs.
      auto full = [&](double eps) {
        AttackConfig c = wc;
        c.epsilon = eps;
        return run_waveform_attack(car.audio, t, *stack.victim, c, *stack.bank).clean_channel_snr_db;
      };
      BudgetSearch refine;
      try {
        refine = bisect_budget(full, target, match.lo, match.hi, match.max_iterations, match.tolerance_db);
      } catch (const RuntimeError& e) {
        throw RuntimeError("SNR matching failed for carrier " + car.id + " after full-length refinement: " +
                           e.what());
      }
      wc.epsilon = refine.epsilon;
      r = run_waveform_attack(car.audio, t, *stack.victim, wc, *stack.bank);
      iters += refine.iterations;
    }
    out.snr_rows[i] = {car.id, target, r.clean_channel_snr_db, wc.epsilon, iters};
    wave[i] = std::move(r);
  });

  auto& p = out.paired;
  p.name_a = "latent";
  p.name_b = "waveform";
  p.a = make_record(sc.name + "-latent", sc, latent_cfg, grid, stack, opt, latent, started);
  p.b = make_record(sc.name + "-waveform", sc, waveform_cfg, grid, stack, opt, wave, started);
  json eps = json::array();
  for (const auto& row : out.snr_rows) eps.push_back(row.epsilon_waveform);
  p.b.config["matched_epsilon"] = eps;
  p.rows = pair_rows(p.a, p.b);
  for (const auto& row : out.snr_rows)
    if (!row.matched())
      log::warn("SNR match outside 1 dB for " + row.carrier_id);
  return out;
}

// ----------------------------------------------------------------- quality

QualityStats quality_table(std::span<const AudioQualityReport> reports) {
  if (reports.empty()) throw ConfigError("quality_table needs at least one report");
  QualityStats q;
  q.n = reports.size();
  auto stats = [&](double AudioQualityReport::*field) {
    double mean = 0.0;
    for (const auto& r : reports) mean += r.*field;
    mean /= static_cast<double>(reports.size());
    double var = 0.0;
    for (const auto& r : reports) var += (r.*field - mean) * (r.*field - mean);
    var /= static_cast<double>(reports.size());
    return MetricStats{mean, std::sqrt(var)};
  };
  q.snr_db = stats(&AudioQualityReport::snr_db);
  q.snr_delta_db = stats(&AudioQualityReport::snr_delta_db);
  q.si_sdr_db = stats(&AudioQualityReport::si_sdr_db);
  q.lsd_db = stats(&AudioQualityReport::lsd_db);
  q.delta_lufs_db = stats(&AudioQualityReport::delta_lufs_db);
  return q;
}

// ------------------------------------------------------------------ tables

namespace {

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

std::string pct(double v) { return fmt(100.0 * v, 1); }

}  // namespace

std::string asr_table_csv(const GridEvaluation& ev) {
  std::ostringstream s;
  s << "metric";
  for (const auto& c : ev.cells) s << ',' << c.spec.label();
  s << '\n';
  auto row = [&](const char* name, auto get) {
    s << name;
    for (const auto& c : ev.cells) s << ',' << get(c);
    s << '\n';
  };
  row("asr", [](const EvalCell& c) { return fmt(c.asr); });
  row("ci_low", [](const EvalCell& c) { return fmt(c.ci_low); });
  row("ci_high", [](const EvalCell& c) { return fmt(c.ci_high); });
  row("successes", [](const EvalCell& c) { return std::to_string(c.successes); });
  row("n", [](const EvalCell& c) { return std::to_string(c.n); });
  row("channel_failures", [](const EvalCell& c) { return std::to_string(c.channel_failures); });
  return s.str();
}

std::string asr_table_markdown(const GridEvaluation& ev, const std::string& title,
                               const std::vector<std::string>& notes) {
  std::ostringstream s;
  s << "### " << title << "\n\n";
  for (const auto& n : notes) s << "_" << n << "_\n\n";
  s << "| |";
  for (const auto& c : ev.cells) s << ' ' << c.spec.label() << " |";
  s << "\n|---|";
  for (std::size_t i = 0; i < ev.cells.size(); ++i) s << "---|";
  s << "\n| ASR % |";
  for (const auto& c : ev.cells) s << ' ' << pct(c.asr) << " |";
  s << "\n| 95% CI |";
  for (const auto& c : ev.cells) s << ' ' << pct(c.ci_low) << "–" << pct(c.ci_high) << " |";
  s << "\n| k/n |";
  for (const auto& c : ev.cells) s << ' ' << c.successes << '/' << c.n << " |";
  s << '\n';
  return s.str();
}

std::string paired_table_csv(const PairedRecord& p) {
  std::ostringstream s;
  s << "cell,asr_" << p.name_a << ",asr_" << p.name_b << ",delta,higher\n";
  for (const auto& r : p.rows) {
    const std::string h = r.higher();
    s << r.label << ',' << fmt(r.asr_a) << ',' << fmt(r.asr_b) << ',' << fmt(r.delta()) << ','
      << (h == "A" ? p.name_a : h == "B" ? p.name_b : "tie") << '\n';
  }
  return s.str();
}

std::string paired_table_markdown(const PairedRecord& p, const std::string& title) {
  std::ostringstream s;
  s << "### " << title << "\n\nBold marks the higher ASR per cell pair.\n\n";
  s << "| cell | " << p.name_a << " % | " << p.name_b << " % | Δ pp |\n|---|---|---|---|\n";
  for (const auto& r : p.rows) {
    const std::string h = r.higher();
    const std::string a = h == "A" ? "**" + pct(r.asr_a) + "**" : pct(r.asr_a);
    const std::string b = h == "B" ? "**" + pct(r.asr_b) + "**" : pct(r.asr_b);
    s << "| " << r.label << " | " << a << " | " << b << " | " << pct(r.delta()) << " |\n";
  }
  return s.str();
}

std::string capacity_table_csv(const std::vector<CapacityRow>& rows, const EvalGrid& grid) {
  std::ostringstream s;
  s << "words,tokens,capacity_exceeded,n";
  for (const auto& l : grid.labels()) s << ',' << l;
  s << ",mean_final_loss\n";
  for (const auto& r : rows) {
    s << r.word_count << ',' << r.tokens << ',' << (r.capacity_exceeded ? "capacity" : "") << ',' << r.n;
    for (auto k : r.successes) s << ',' << k;
    s << ',' << (r.capacity_exceeded ? std::string() : fmt(r.mean_final_loss)) << '\n';
  }
  return s.str();
}

std::string capacity_table_markdown(const std::vector<CapacityRow>& rows, const EvalGrid& grid) {
  std::ostringstream s;
  s << "### Capacity sweep\n\n| words |";
  for (const auto& l : grid.labels()) s << ' ' << l << " |";
  s << " final loss |\n|---|";
  for (std::size_t i = 0; i <= grid.cells().size(); ++i) s << "---|";
  s << '\n';
  for (const auto& r : rows) {
    s << "| " << r.word_count << (r.capacity_exceeded ? " (capacity)" : "") << " |";
    for (auto k : r.successes) s << ' ' << k << '/' << r.n << " |";
    s << ' ' << (r.capacity_exceeded ? std::string("–") : fmt(r.mean_final_loss, 3)) << " |\n";
  }
  return s.str();
}

std::string snr_match_csv(const std::vector<SnrMatchRow>& rows) {
  std::ostringstream s;
  s << "carrier,snr_latent_db,snr_waveform_db,abs_diff_db,epsilon_waveform,iterations,within_1db\n";
  for (const auto& r : rows)
    s << r.carrier_id << ',' << fmt(r.snr_latent_db, 3) << ',' << fmt(r.snr_waveform_db, 3) << ','
      << fmt(std::abs(r.snr_latent_db - r.snr_waveform_db), 3) << ',' << std::setprecision(6) << r.epsilon_waveform
      << ',' << r.iterations << ',' << (r.matched() ? "yes" : "no") << '\n';
  return s.str();
}

std::string quality_table_csv(const QualityStats& q, const std::string& label) {
  std::ostringstream s;
  s << "label,n,snr_db_mean,snr_db_std,snr_delta_db_mean,snr_delta_db_std,si_sdr_db_mean,si_sdr_db_std,"
       "lsd_db_mean,lsd_db_std,delta_lufs_db_mean,delta_lufs_db_std\n";
  s << label << ',' << q.n;
  for (const auto& m : {q.snr_db, q.snr_delta_db, q.si_sdr_db, q.lsd_db, q.delta_lufs_db})
    s << ',' << fmt(m.mean, 3) << ',' << fmt(m.std, 3);
  s << '\n';
  return s.str();
}

std::string outcomes_csv(const GridEvaluation& ev) {
  std::ostringstream s;
  s << "carrier,target";
  for (const auto& c : ev.cells) s << ',' << c.spec.label();
  s << '\n';
  auto quote = [](const std::string& v) {
    std::string q = "\"";
    for (char ch : v) {
      if (ch == '"') q += '"';
      q += ch;
    }
    return q + '"';
  };
  for (const auto& o : ev.outcomes) {
    s << o.carrier_id << ',' << quote(o.target);
    for (const auto& c : o.cells)
      s << ',' << quote(c.channel_failed ? "channel-failure" : (c.success ? "hit: " : "miss: ") + c.output);
    s << '\n';
  }
  return s.str();
}

// ---------------------------------------------------------------- persist

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeError("write failed: " + path.string());
}

void write_run(const RunRecord& r, const fs::path& run_dir, std::span<const AttackResult> results,
               const ScenarioSpec& scenario) {
  fs::create_directories(run_dir / "tables");
  fs::create_directories(run_dir / "audio");
  write_text(run_dir / "record.json", r.to_json().dump(2) + "\n");
  write_text(run_dir / "tables" / "asr.csv", asr_table_csv(r.evaluation));
  write_text(run_dir / "tables" / "asr.md", asr_table_markdown(r.evaluation, r.id, r.notes));
  write_text(run_dir / "tables" / "outcomes.csv", outcomes_csv(r.evaluation));
  if (!r.quality.empty())
    write_text(run_dir / "tables" / "quality.csv", quality_table_csv(quality_table(r.quality), r.id));
  for (std::size_t i = 0; i < results.size() && i < scenario.carriers.size(); ++i) {
    const auto& id = scenario.carriers[i].id;
    save_wav(results[i].adversarial, run_dir / "audio" / (id + ".wav"));
    const fs::path bundle = run_dir / "attacks" / id;
    write_attack_bundle(results[i], bundle, {{"carrier", id}, {"target", scenario.carriers[i].target}});
    const Waveform& car = scenario.carriers[i].audio;
    const int rate = results[i].adversarial.sample_rate_hz;
    save_wav(car.sample_rate_hz == rate ? car : resample(car, rate), bundle / "carrier.wav");
  }
}

}  // namespace codecraid

#include "codecraid/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "codecraid/analysis.hpp"
#include "codecraid/attack.hpp"
#include "codecraid/config.hpp"
#include "codecraid/dsp.hpp"
#include "codecraid/error.hpp"
#include "codecraid/eval.hpp"
#include "codecraid/neural_codec.hpp"
#include "codecraid/plot.hpp"
#include "codecraid/victim.hpp"

namespace codecraid::cli {

using nlohmann::json;
namespace fs = std::filesystem;

json default_experiment() {
  return {
      {"name", "toy"},
      {"victim", ""},
      {"codec", ""},
      {"transcoders", ""},
      {"scenario",
       {{"manifest", ""},
        {"synthetic",
         {{"n", 20},
          {"seed", 0},
          {"speech_fraction", 0.5},
          {"clip_seconds", 0.4},
          {"target_tokens", 2},
          {"target_pool", "aeioumn"}}}}},
      {"grid", json::array()},
      {"attack",
       {{"domain", "latent"},
        {"epsilon", 1.0},
        {"epsilon_unit", "sigma"},
        {"alpha", nullptr},
        {"steps", 300},
        {"warmup_ratio", 0.3},
        {"eot_grid", {16, 24, 32, 64, 128}},
        {"train_family", "toy"}}},
      {"seeds", {0}},
      {"eval", {{"strict", false}}},
      {"capacity", {{"word_counts", {1, 2, 4, 8, 16}}, {"word_pool", "aeioumn"}}},
      {"compare",
       {{"waveform", json::object()},
        {"snr_match", {{"lo", 1e-4}, {"hi", 2.0}, {"probe_steps", nullptr}, {"max_iterations", 12}, {"tolerance_db", 1.0}}}}},
      {"codec_train",
       {{"steps", 1500}, {"batch", 4}, {"clip_seconds", 0.4}, {"lr", 3e-3}, {"spectral_weight", 0.1}, {"seed", 1},
        {"init_seed", 0}, {"latent_dim", 16}}},
      {"victim_train",
       {{"steps", 600}, {"batch", 8}, {"clip_seconds", 0.4}, {"lr", 3e-3}, {"music_fraction", 0.25},
        {"blank_weight", 0.2}, {"label_smoothing", 0.1}, {"seed", 2}, {"init_seed", 0}}},
  };
}

namespace {

// ---------------------------------------------------------------- options

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "runs";
  bool no_external = false;
  std::size_t jobs = 1;
  bool quiet = false;
  std::string run_id;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_path, "Experiment config file (JSON, comments allowed)");
  app->add_option("--set", c.sets, "Dotted-key override, e.g. --set attack.steps=200 (repeatable)");
  app->add_option("--seed", c.seed, "Seed; replaces the config's seed list with this one value");
  app->add_option("--out-dir", c.out_dir, "Directory that receives all outputs")->capture_default_str();
  app->add_flag("--no-external-codecs", c.no_external, "Drop opus/mp3/aac cells from the evaluation grid");
  app->add_option("--jobs", c.jobs, "Worker threads for attacks and cell evaluation")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app->add_flag("-q,--quiet", c.quiet, "Suppress progress and warnings");
  app->add_option("--run-id", c.run_id, "Name of the run directory under --out-dir");
}

// Every key a config may contain, per section.
void validate_experiment(const json& e) {
  const json d = default_experiment();
  std::vector<std::string> top;
  for (const auto& [k, v] : d.items()) top.push_back(k);
  require_keys_subset(e, top, "config");
  for (const char* section : {"eval", "capacity", "codec_train", "victim_train"}) {
    std::vector<std::string> keys;
    for (const auto& [k, v] : d.at(section).items()) keys.push_back(k);
    require_keys_subset(e.at(section), keys, std::string("config.") + section);
  }
  require_keys_subset(e.at("scenario"), {"manifest", "synthetic"}, "config.scenario");
  std::vector<std::string> syn;
  for (const auto& [k, v] : d.at("scenario").at("synthetic").items()) syn.push_back(k);
  require_keys_subset(e.at("scenario").at("synthetic"), syn, "config.scenario.synthetic");
  require_keys_subset(e.at("compare"), {"waveform", "snr_match"}, "config.compare");
  std::vector<std::string> sm;
  for (const auto& [k, v] : d.at("compare").at("snr_match").items()) sm.push_back(k);
  require_keys_subset(e.at("compare").at("snr_match"), sm, "config.compare.snr_match");
  if (!e.at("seeds").is_array() || e.at("seeds").empty()) throw ConfigError("config.seeds must be a non-empty array");
}

struct Experiment {
  json cfg;
  fs::path base_dir;  // relative paths in the config resolve here
  Common common;

  std::string path(const char* key) const {
    const std::string p = cfg.value(key, std::string());
    if (p.empty()) return p;
    const fs::path fp(p);
    return (fp.is_relative() && !base_dir.empty() ? base_dir / fp : fp).lexically_normal().string();
  }
  std::vector<std::uint64_t> seeds() const { return cfg.at("seeds").get<std::vector<std::uint64_t>>(); }
  fs::path run_dir(const std::string& fallback) const {
    return fs::path(common.out_dir) / (common.run_id.empty() ? fallback : common.run_id);
  }
};

Experiment load_experiment(const Common& c) {
  Experiment ex;
  ex.common = c;
  ex.cfg = default_experiment();
  if (!c.config_path.empty()) {
    ex.cfg = merge_json(ex.cfg, load_json_file(c.config_path));
    ex.base_dir = fs::path(c.config_path).parent_path();
  }
  try {
    apply_overrides(ex.cfg, c.sets);
    if (c.seed) ex.cfg["seeds"] = json::array({*c.seed});
    validate_experiment(ex.cfg);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  log::quiet() = c.quiet;
  return ex;
}

template <typename T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

// ------------------------------------------------------------------ stack

ToyTokenVictim load_victim(const Experiment& ex) {
  const std::string p = ex.path("victim");
  if (p.empty()) throw ConfigError("no victim checkpoint configured (run train-victim, then --set victim=PATH)");
  if (!fs::exists(p)) throw ConfigError("victim checkpoint not found: " + p);
  return ToyTokenVictim::load(p);
}

std::optional<ToyLatentCodec> load_codec(const Experiment& ex, bool required) {
  const std::string p = ex.path("codec");
  if (p.empty()) {
    if (required) throw ConfigError("no codec checkpoint configured (run train-toycodec, then --set codec=PATH)");
    return std::nullopt;
  }
  if (!fs::exists(p)) throw ConfigError("codec checkpoint not found: " + p);
  return ToyLatentCodec::load(p);
}

ChannelBank make_bank(const Experiment& ex) {
  const std::string t = ex.path("transcoders");
  if (t.empty()) return ChannelBank();
  if (!fs::exists(t)) throw ConfigError("transcoder config not found: " + t);
  return ChannelBank(ToyLossyCodecParams{}, TranscoderConfig::load(t));
}

struct GridChoice {
  EvalGrid grid;
  std::vector<std::string> notes;
};

GridChoice make_grid(const Experiment& ex, const ScenarioSpec* scenario) {
  auto labels = get<std::vector<std::string>>(ex.cfg, "grid");
  if (labels.empty() && scenario) labels = scenario->grid;
  GridChoice g{labels.empty() ? EvalGrid::toy_default() : EvalGrid::from_labels(labels), {}};
  if (ex.common.no_external && g.grid.has_external()) {
    g.grid = g.grid.without_external();
    g.notes.push_back("external codec cells removed (--no-external-codecs)");
  } else if (ex.common.no_external) {
    g.notes.push_back("--no-external-codecs: grid had no external cells");
  }
  return g;
}

ScenarioSpec make_scenario(Experiment& ex, const VictimModel* victim) {
  const json& s = ex.cfg.at("scenario");
  const std::string manifest = s.value("manifest", std::string());
  if (!manifest.empty()) {
    fs::path mp(manifest);
    if (mp.is_relative() && !ex.base_dir.empty()) mp = ex.base_dir / mp;
    if (!fs::exists(mp)) throw ConfigError("scenario manifest not found: " + mp.string());
    ScenarioSpec sc = ScenarioSpec::load(mp);
    // Manifest ids fill in checkpoints the config leaves open.
    if (ex.cfg.value("victim", std::string()).empty() && !sc.victim_id.empty()) ex.cfg["victim"] = fs::absolute(sc.victim_id).string();
    if (ex.cfg.value("codec", std::string()).empty() && !sc.codec_id.empty()) ex.cfg["codec"] = fs::absolute(sc.codec_id).string();
    return sc;
  }
  const json& y = s.at("synthetic");
  SyntheticScenarioOptions o;
  o.n = get<std::size_t>(y, "n");
  o.seed = get<std::uint64_t>(y, "seed");
  o.speech_fraction = get<double>(y, "speech_fraction");
  o.clip_seconds = get<double>(y, "clip_seconds");
  o.target_tokens = get<std::size_t>(y, "target_tokens");
  o.target_pool = get<std::string>(y, "target_pool");
  return ScenarioSpec::synthetic(get<std::string>(ex.cfg, "name"), o, victim);
}

struct ResolvedAttack {
  AttackConfig cfg;
  std::optional<double> sigma;
};

// The attack section with the budget resolved to absolute units. In sigma
// units both epsilon and an explicit alpha scale by the codec's latent
// sigma; without an explicit alpha the step is epsilon / 5.
ResolvedAttack resolve_attack(const json& section, const LatentCodec* codec, const ScenarioSpec* scenario) {
  json a = section;
  const std::string unit = a.value("epsilon_unit", std::string("absolute"));
  a.erase("epsilon_unit");
  ResolvedAttack r{AttackConfig::from_json(a), std::nullopt};
  if (unit == "absolute") return r;
  if (unit != "sigma") throw ConfigError("attack.epsilon_unit must be 'sigma' or 'absolute'");
  if (r.cfg.domain != AttackDomain::latent) throw ConfigError("sigma budget units only apply to latent attacks");
  if (!codec || !scenario) throw ConfigError("sigma budget units need a codec and carriers");
  std::vector<Waveform> calib;
  for (const auto& c : scenario->carriers)
    calib.push_back(c.audio.sample_rate_hz == codec->native_sample_rate_hz()
                        ? c.audio
                        : resample(c.audio, codec->native_sample_rate_hz()));
  const double sigma = estimate_sigma(*codec, calib);
  if (!(sigma > 0.0)) throw ConfigError("latent sigma is zero; use epsilon_unit=absolute");
  r.sigma = sigma;
  r.cfg.epsilon *= sigma;
  r.cfg.alpha = r.cfg.alpha ? *r.cfg.alpha * sigma : r.cfg.epsilon / 5.0;
  if (r.cfg.epsilon > 0.0) r.cfg.validate();
  return r;
}

EvalOptions eval_options(const Experiment& ex) {
  return {get<bool>(ex.cfg.at("eval"), "strict"), ex.common.jobs};
}

// ------------------------------------------------------------------ output

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

plot::Series asr_series(const std::string& name, const GridEvaluation& ev) {
  plot::Series s{name, {}, {}};
  for (std::size_t i = 0; i < ev.cells.size(); ++i) {
    s.x.push_back(static_cast<double>(i));
    s.y.push_back(100.0 * ev.cells[i].asr);
  }
  return s;
}

std::vector<std::string> cell_labels(const GridEvaluation& ev) {
  std::vector<std::string> l;
  for (const auto& c : ev.cells) l.push_back(c.spec.label());
  return l;
}

RunRecord pooled_record(const std::string& id, const std::vector<RunRecord>& runs, const EvalOptions& opt) {
  std::vector<GridEvaluation> evs;
  RunRecord r = runs.front();
  r.id = id;
  r.quality.clear();
  r.final_losses.clear();
  r.snr_db.clear();
  for (const auto& x : runs) {
    evs.push_back(x.evaluation);
    r.quality.insert(r.quality.end(), x.quality.begin(), x.quality.end());
    r.final_losses.insert(r.final_losses.end(), x.final_losses.begin(), x.final_losses.end());
    r.snr_db.insert(r.snr_db.end(), x.snr_db.begin(), x.snr_db.end());
  }
  r.evaluation = pool_evaluations(evs, opt);
  r.finished_utc = runs.back().finished_utc;
  return r;
}

void print_cells(std::ostream& out, const GridEvaluation& ev) {
  for (const auto& c : ev.cells)
    out << "  " << std::left << std::setw(12) << c.spec.label() << " ASR " << fmt(100.0 * c.asr, 1) << "% ("
        << c.successes << "/" << c.n << ", 95% CI " << fmt(100.0 * c.ci_low, 1) << "-" << fmt(100.0 * c.ci_high, 1)
        << ")\n";
}

// --------------------------------------------------------------- commands

int cmd_train_codec(const Common& c, const std::string& output, std::ostream& out) {
  Experiment ex = load_experiment(c);
  const json& t = ex.cfg.at("codec_train");
  ToyCodecConfig cc;
  cc.seed = get<std::uint64_t>(t, "init_seed");
  cc.latent_dim = get<std::size_t>(t, "latent_dim");
  CodecTrainOptions o;
  o.steps = get<std::size_t>(t, "steps");
  o.batch = get<std::size_t>(t, "batch");
  o.clip_seconds = get<double>(t, "clip_seconds");
  o.lr = get<double>(t, "lr");
  o.spectral_weight = get<double>(t, "spectral_weight");
  o.seed = ex.common.seed.value_or(get<std::uint64_t>(t, "seed"));
  o.log_every = ex.common.quiet ? 0 : 100;
  ToyLatentCodec codec(cc);
  const auto rep = train_toy_codec(codec, o);
  const fs::path dst = output.empty() ? fs::path(c.out_dir) / "toycodec.ckpt" : fs::path(output);
  if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
  codec.save(dst);
  json log = {{"heldout_snr_before_db", rep.heldout_snr_before_db},
              {"heldout_snr_after_db", rep.heldout_snr_after_db},
              {"loss_history", rep.loss_history},
              {"options", t}};
  write_json(fs::path(dst).concat(".train.json"), log);
  out << "held-out SNR " << fmt(rep.heldout_snr_before_db, 2) << " dB -> " << fmt(rep.heldout_snr_after_db, 2)
      << " dB\ncheckpoint " << dst.string() << "\n";
  return kOk;
}

int cmd_train_victim(const Common& c, const std::string& output, std::ostream& out) {
  Experiment ex = load_experiment(c);
  const json& t = ex.cfg.at("victim_train");
  ToyVictimConfig vc;
  vc.seed = get<std::uint64_t>(t, "init_seed");
  VictimTrainOptions o;
  o.steps = get<std::size_t>(t, "steps");
  o.batch = get<std::size_t>(t, "batch");
  o.clip_seconds = get<double>(t, "clip_seconds");
  o.lr = get<double>(t, "lr");
  o.music_fraction = get<double>(t, "music_fraction");
  o.blank_weight = get<double>(t, "blank_weight");
  o.label_smoothing = get<double>(t, "label_smoothing");
  o.seed = ex.common.seed.value_or(get<std::uint64_t>(t, "seed"));
  o.log_every = ex.common.quiet ? 0 : 100;
  ToyTokenVictim victim(vc);
  const auto rep = train_toy_victim(victim, o);
  const fs::path dst = output.empty() ? fs::path(c.out_dir) / "victim.ckpt" : fs::path(output);
  if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
  victim.save(dst);
  write_json(fs::path(dst).concat(".train.json"),
             {{"heldout_exact_rate", rep.heldout_exact_rate}, {"loss_history", rep.loss_history}, {"options", t}});
  out << "held-out exact transcripts " << fmt(100.0 * rep.heldout_exact_rate, 1) << "%\ncheckpoint " << dst.string()
      << "\n";
  return kOk;
}

struct AttackFlags {
  std::string carrier;
  std::string target;
  std::size_t index = 0;
};

int cmd_attack(const Common& c, const AttackFlags& f, std::ostream& out, std::ostream& err) {
  Experiment ex = load_experiment(c);
  const auto victim = load_victim(ex);
  const bool latent = ex.cfg.at("attack").value("domain", std::string("latent")) == "latent";
  const auto codec = load_codec(ex, latent);
  const ChannelBank bank = make_bank(ex);

  ScenarioSpec sc;
  if (!f.carrier.empty()) {
    if (!fs::exists(f.carrier)) throw ConfigError("carrier file not found: " + f.carrier);
    if (f.target.empty()) throw ConfigError("--carrier needs --target");
    Carrier car{fs::path(f.carrier).stem().string(), load_wav(f.carrier), CarrierClass::speech, f.target};
    sc.name = get<std::string>(ex.cfg, "name");
    sc.carriers.push_back(std::move(car));
    sc.validate();
  } else {
    sc = make_scenario(ex, &victim);
    if (f.index >= sc.carriers.size())
      throw ConfigError("--index " + std::to_string(f.index) + " outside the scenario's " +
                        std::to_string(sc.carriers.size()) + " carriers");
    Carrier keep = sc.carriers[f.index];
    if (!f.target.empty()) keep.target = f.target;
    sc.carriers = {keep};
  }
  const auto ra = resolve_attack(ex.cfg.at("attack"), codec ? &*codec : nullptr, &sc);
  AttackConfig cfg = ra.cfg;
  cfg.seed = ex.seeds().front();

  Carrier car = sc.carriers.front();
  if (latent && car.audio.sample_rate_hz != codec->native_sample_rate_hz())
    car.audio = resample(car.audio, codec->native_sample_rate_hz());
  const TargetSpec target = TargetSpec::from_text(car.target, victim.vocabulary());
  const fs::path dir = ex.run_dir("attack-" + car.id + "-seed" + std::to_string(cfg.seed));

  AttackResult r;
  try {
    r = latent ? run_latent_attack(car.audio, target, *codec, victim, cfg, bank)
               : run_waveform_attack(car.audio, target, victim, cfg, bank);
  } catch (const RuntimeError& e) {
    fs::create_directories(dir);
    const fs::path dump = dir / "error.txt";
    write_text(dump, std::string(e.what()) + "\n");
    err << "error: attack failed; state dump: " << dump.string() << "\n";
    return kRuntimeError;
  }
  json extra = {{"carrier", car.id},
                {"target", car.target},
                {"victim", ex.path("victim")},
                {"codec", ex.path("codec")},
                {"sigma", ra.sigma ? json(*ra.sigma) : json(nullptr)}};
  write_attack_bundle(r, dir, extra);
  save_wav(car.audio, dir / "carrier.wav");
  const std::string heard = victim.generate(resample(r.adversarial, victim.input_sample_rate_hz()));
  out << "final loss " << fmt(r.final_loss()) << " (initial " << fmt(r.initial_loss()) << ")\n"
      << "clean-channel SNR " << fmt(r.clean_channel_snr_db, 2) << " dB\n"
      << "wall time " << fmt(r.wall_time_s, 2) << " s\n"
      << "victim output '" << heard << "' target '" << car.target << "' "
      << (substring_match(heard, car.target) ? "hit" : "miss") << "\n"
      << "bundle " << dir.string() << "\n";
  return kOk;
}

// Loads the stack shared by eval/ablate/capacity/compare.
struct Loaded {
  Experiment ex;
  ToyTokenVictim victim;
  std::optional<ToyLatentCodec> codec;
  ChannelBank bank;
  ScenarioSpec scenario;
  GridChoice grid;
  ResolvedAttack attack;

  AttackStack stack() const { return {codec ? &*codec : nullptr, &victim, &bank}; }
};

Loaded load_all(const Common& c) {
  Experiment ex = load_experiment(c);
  // The manifest may name the checkpoints, so resolve it before loading.
  std::optional<ScenarioSpec> early;
  if (!ex.cfg.at("scenario").value("manifest", std::string()).empty()) early = make_scenario(ex, nullptr);
  auto victim = load_victim(ex);
  const bool latent = ex.cfg.at("attack").value("domain", std::string("latent")) == "latent";
  auto codec = load_codec(ex, latent);
  ChannelBank bank = make_bank(ex);
  ScenarioSpec sc = early ? *early : make_scenario(ex, &victim);
  GridChoice g = make_grid(ex, &sc);
  auto ra = resolve_attack(ex.cfg.at("attack"), codec ? &*codec : nullptr, &sc);
  return {std::move(ex), std::move(victim), std::move(codec), std::move(bank), std::move(sc), std::move(g),
          std::move(ra)};
}

json run_meta(const Loaded& L) {
  json m = {{"experiment", L.ex.cfg}, {"resolved_attack", L.attack.cfg.to_json()}, {"version", version_stamp()}};
  if (L.attack.sigma) m["sigma"] = *L.attack.sigma;
  return m;
}

int cmd_eval(const Common& c, const std::string& from_run, std::ostream& out) {
  Loaded L = load_all(c);
  const EvalOptions opt = eval_options(L.ex);
  const fs::path dir = L.ex.run_dir("eval-" + L.scenario.name);

  if (!from_run.empty()) {
    // Re-evaluate persisted adversarial audio.
    if (!fs::is_directory(from_run)) throw ConfigError("run directory not found: " + from_run);
    std::vector<Waveform> adv;
    for (const auto& car : L.scenario.carriers) {
      const fs::path p = fs::path(from_run) / "audio" / (car.id + ".wav");
      if (!fs::exists(p)) throw ConfigError("missing adversarial audio: " + p.string());
      adv.push_back(load_wav(p));
    }
    const auto ev = evaluate_grid(adv, L.scenario, L.grid.grid, L.victim, L.bank, opt);
    const fs::path t = fs::path(from_run) / "tables";
    write_text(t / "asr_reeval.csv", asr_table_csv(ev));
    write_text(t / "asr_reeval.md", asr_table_markdown(ev, "re-evaluation of " + from_run, L.grid.notes));
    out << asr_table_markdown(ev, "re-evaluation", L.grid.notes);
    return kOk;
  }

  std::vector<RunRecord> runs;
  for (auto seed : L.ex.seeds()) {
    AttackConfig cfg = L.attack.cfg;
    cfg.seed = seed;
    std::vector<AttackResult> results;
    RunRecord r = attack_and_evaluate(L.scenario.name + "-seed" + std::to_string(seed), L.scenario, cfg,
                                      L.grid.grid, L.stack(), opt, &results);
    r.notes.insert(r.notes.end(), L.grid.notes.begin(), L.grid.notes.end());
    if (L.attack.sigma) r.config["sigma"] = *L.attack.sigma;
    write_run(r, dir / ("seed" + std::to_string(seed)), results, L.scenario);
    runs.push_back(std::move(r));
  }
  const RunRecord pooled = pooled_record(L.scenario.name + "-pooled", runs, opt);
  write_json(dir / "record.json", {{"meta", run_meta(L)}, {"pooled", pooled.to_json()}});
  write_text(dir / "tables" / "asr.csv", asr_table_csv(pooled.evaluation));
  const std::string md = asr_table_markdown(pooled.evaluation, "ASR, " + L.scenario.name + " (pooled over " +
                                                                    std::to_string(runs.size()) + " seed(s))",
                                            L.grid.notes);
  write_text(dir / "tables" / "asr.md", md);
  write_text(dir / "tables" / "quality.csv", quality_table_csv(quality_table(pooled.quality), pooled.id));
  write_text(dir / "plots" / "asr.svg", plot::bar_chart("ASR per channel", "ASR %", cell_labels(pooled.evaluation),
                                                        {asr_series("pooled", pooled.evaluation)}));
  out << md;
  print_cells(out, pooled.evaluation);
  out << "run " << dir.string() << "\n";
  return kOk;
}

PairedRecord pool_paired(const std::vector<PairedRecord>& ps, const EvalOptions& opt) {
  PairedRecord p;
  p.name_a = ps.front().name_a;
  p.name_b = ps.front().name_b;
  std::vector<RunRecord> a, b;
  for (const auto& x : ps) a.push_back(x.a), b.push_back(x.b);
  p.a = pooled_record(p.name_a + "-pooled", a, opt);
  p.b = pooled_record(p.name_b + "-pooled", b, opt);
  p.rows = pair_rows(p.a, p.b);
  return p;
}

void write_paired(const fs::path& dir, const std::string& stem, const PairedRecord& p, const std::string& title,
                  const std::vector<std::string>& notes, std::ostream& out) {
  write_text(dir / "tables" / (stem + ".csv"), paired_table_csv(p));
  std::string md = paired_table_markdown(p, title);
  for (const auto& n : notes) md += "\n_" + n + "_\n";
  write_text(dir / "tables" / (stem + ".md"), md);
  write_text(dir / "tables" / (stem + "_" + p.name_a + ".csv"), asr_table_csv(p.a.evaluation));
  write_text(dir / "tables" / (stem + "_" + p.name_b + ".csv"), asr_table_csv(p.b.evaluation));
  write_text(dir / "plots" / (stem + ".svg"),
             plot::bar_chart(title, "ASR %", cell_labels(p.a.evaluation),
                             {asr_series(p.name_a, p.a.evaluation), asr_series(p.name_b, p.b.evaluation)}));
  out << md;
}

int cmd_ablate(const Common& c, std::ostream& out) {
  Loaded L = load_all(c);
  const EvalOptions opt = eval_options(L.ex);
  const fs::path dir = L.ex.run_dir("ablate-eot-" + L.scenario.name);
  std::vector<PairedRecord> ps;
  for (auto seed : L.ex.seeds()) {
    AttackConfig cfg = L.attack.cfg;
    cfg.seed = seed;
    ps.push_back(ablate_eot(L.scenario, cfg, L.grid.grid, L.stack(), opt));
    write_json(dir / ("seed" + std::to_string(seed)) / "record.json",
               {{"eot", ps.back().a.to_json()}, {"no_eot", ps.back().b.to_json()}});
  }
  const PairedRecord p = pool_paired(ps, opt);
  write_json(dir / "record.json", {{"meta", run_meta(L)}, {"eot", p.a.to_json()}, {"no_eot", p.b.to_json()}});
  write_paired(dir, "ablate_eot", p, "EoT ablation (w=" + fmt(L.attack.cfg.warmup_ratio, 2) + " vs w=1)",
               L.grid.notes, out);
  if (auto low = L.grid.grid.lowest_toy())
    for (const auto& r : p.rows)
      if (r.label == low->label())
        out << "lowest toy bitrate " << r.label << ": EoT - no-EoT = " << fmt(100.0 * r.delta(), 1) << " pp\n";
  out << "run " << dir.string() << "\n";
  return kOk;
}

int cmd_capacity(const Common& c, std::ostream& out) {
  Loaded L = load_all(c);
  const EvalOptions opt = eval_options(L.ex);
  const fs::path dir = L.ex.run_dir("capacity-" + L.scenario.name);
  const json& cj = L.ex.cfg.at("capacity");
  std::vector<CapacityRow> pooled;
  json per_seed = json::object();
  for (auto seed : L.ex.seeds()) {
    CapacityOptions co;
    co.word_counts = get<std::vector<std::size_t>>(cj, "word_counts");
    co.word_pool = get<std::string>(cj, "word_pool");
    co.seed = seed;
    AttackConfig cfg = L.attack.cfg;
    cfg.seed = seed;
    const auto rows = capacity_sweep(L.scenario, co, cfg, L.grid.grid, L.stack(), opt);
    per_seed[std::to_string(seed)] = capacity_table_csv(rows, L.grid.grid);
    if (pooled.empty()) {
      pooled = rows;
      for (auto& r : pooled) r.mean_final_loss *= static_cast<double>(r.n);
      continue;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t k = 0; k < rows[i].successes.size(); ++k) pooled[i].successes[k] += rows[i].successes[k];
      pooled[i].mean_final_loss += rows[i].mean_final_loss * static_cast<double>(rows[i].n);
      pooled[i].n += rows[i].n;
    }
  }
  for (auto& r : pooled) r.mean_final_loss /= static_cast<double>(std::max<std::size_t>(r.n, 1));
  write_json(dir / "record.json", {{"meta", run_meta(L)}, {"per_seed_csv", per_seed}});
  write_text(dir / "tables" / "capacity.csv", capacity_table_csv(pooled, L.grid.grid));
  const std::string md = capacity_table_markdown(pooled, L.grid.grid);
  write_text(dir / "tables" / "capacity.md", md);
  std::vector<plot::Series> series;
  const auto labels = L.grid.grid.labels();
  for (std::size_t k = 0; k < labels.size(); ++k) {
    plot::Series s{labels[k], {}, {}};
    for (const auto& r : pooled) {
      s.x.push_back(static_cast<double>(r.word_count));
      s.y.push_back(static_cast<double>(r.successes[k]));
    }
    series.push_back(std::move(s));
  }
  write_text(dir / "plots" / "capacity.svg", plot::line_chart("Capacity sweep", "words", "successes", series));
  out << md << "run " << dir.string() << "\n";
  return kOk;
}

int cmd_compare(const Common& c, std::ostream& out) {
  Loaded L = load_all(c);
  const EvalOptions opt = eval_options(L.ex);
  if (L.attack.cfg.domain != AttackDomain::latent) throw ConfigError("compare needs attack.domain=latent");
  const json& cj = L.ex.cfg.at("compare");
  json wj = L.attack.cfg.to_json();
  wj["domain"] = "waveform";
  wj["alpha"] = nullptr;
  wj = merge_json(wj, cj.at("waveform"));
  const AttackConfig wave = AttackConfig::from_json(wj);
  const json& sm = cj.at("snr_match");
  SnrMatchOptions mo;
  mo.lo = get<double>(sm, "lo");
  mo.hi = get<double>(sm, "hi");
  if (!sm.at("probe_steps").is_null()) mo.probe_steps = get<std::size_t>(sm, "probe_steps");
  mo.max_iterations = get<std::size_t>(sm, "max_iterations");
  mo.tolerance_db = get<double>(sm, "tolerance_db");

  const fs::path dir = L.ex.run_dir("compare-" + L.scenario.name);
  std::vector<PairedRecord> ps;
  std::vector<SnrMatchRow> rows;
  for (auto seed : L.ex.seeds()) {
    AttackConfig lc = L.attack.cfg, wc = wave;
    lc.seed = wc.seed = seed;
    auto cr = compare_latent_waveform(L.scenario, lc, wc, L.grid.grid, L.stack(), opt, mo);
    for (auto r : cr.snr_rows) {
      r.carrier_id += "#" + std::to_string(seed);
      rows.push_back(r);
    }
    ps.push_back(std::move(cr.paired));
  }
  const PairedRecord p = pool_paired(ps, opt);
  write_json(dir / "record.json", {{"meta", run_meta(L)}, {"latent", p.a.to_json()}, {"waveform", p.b.to_json()}});
  write_text(dir / "tables" / "snr_match.csv", snr_match_csv(rows));
  write_paired(dir, "compare", p, "Latent vs waveform at matched SNR", L.grid.notes, out);
  std::size_t matched = 0;
  for (const auto& r : rows) matched += r.matched();
  out << "SNR matched within 1 dB: " << matched << "/" << rows.size() << "\nrun " << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- analyze

const std::set<std::string> kAnalyses{"bark", "survival", "envelope", "three-trace", "residual"};

struct Bundle {
  fs::path dir;
  json cfg;
  Waveform carrier;
  Waveform adversarial;
  std::vector<double> delta;
  std::size_t dims = 0, frames = 0;
};

Bundle load_bundle(const fs::path& dir) {
  Bundle b;
  b.dir = dir;
  for (const char* f : {"config.json", "adversarial.wav", "carrier.wav", "delta.bin"})
    if (!fs::exists(dir / f)) throw ConfigError("attack bundle " + dir.string() + " is missing " + f);
  b.cfg = load_json_file(dir / "config.json");
  b.carrier = load_wav(dir / "carrier.wav");
  b.adversarial = load_wav(dir / "adversarial.wav");
  b.delta = load_delta(dir / "delta.bin", &b.dims, &b.frames);
  return b;
}

void write_profile_csv(const fs::path& p, const std::vector<std::pair<std::string, BandEnergyProfile>>& cols,
                       const BarkBands& bands) {
  std::ostringstream s;
  s << "band,low_hz,high_hz";
  for (const auto& [name, prof] : cols) s << ',' << name;
  s << '\n';
  for (std::size_t k = 0; k < bands.size(); ++k) {
    s << k << ',' << fmt(bands.edges_hz[k], 1) << ',' << fmt(bands.edges_hz[k + 1], 1);
    for (const auto& [name, prof] : cols) s << ',' << std::setprecision(10) << prof.fractions.at(k);
    s << '\n';
  }
  write_text(p, s.str());
}

plot::Series profile_series(const std::string& name, const BandEnergyProfile& p) {
  plot::Series s{name, {}, {}};
  for (std::size_t k = 0; k < p.fractions.size(); ++k) {
    s.x.push_back(static_cast<double>(k));
    s.y.push_back(p.fractions[k]);
  }
  return s;
}

std::vector<std::string> band_labels(const BarkBands& bands) {
  std::vector<std::string> l;
  for (std::size_t k = 0; k < bands.size(); ++k) l.push_back(fmt(bands.edges_hz[k], 0));
  return l;
}

struct AnalyzeFlags {
  std::string run_dir;
  std::vector<std::string> analyses{"bark"};
  std::size_t draws = 200;
  bool oracle = false;
};

void analyze_bundle(const Experiment& ex, const Bundle& b, const AnalyzeFlags& f, std::ostream& out) {
  const fs::path odir = b.dir / "analysis";
  const BarkBands bands = BarkBands::standard(b.carrier.sample_rate_hz / 2.0);
  const Waveform pert = b.adversarial - b.carrier;
  const std::set<std::string> want(f.analyses.begin(), f.analyses.end());
  json summary = json::object();

  if (want.count("bark")) {
    const auto prof = bark_fractional_energy(pert, bands);
    write_profile_csv(odir / "bark.csv", {{"fraction", prof}}, bands);
    write_text(odir / "bark.svg", plot::bar_chart("Bark fractional energy of the perturbation", "fraction",
                                                  band_labels(bands), {profile_series("perturbation", prof)}));
    summary["bark_sum"] = prof.sum();
    summary["bark_below_4k"] = prof.fraction_below(4000.0, bands);
    out << "bark: sum " << fmt(prof.sum(), 6) << ", below 4 kHz " << fmt(prof.fraction_below(4000.0, bands), 3)
        << "\n";
  }

  const ChannelBank bank = make_bank(ex);
  const GridChoice g = make_grid(ex, nullptr);

  if (want.count("survival")) {
    std::ostringstream s;
    s << "channel,region,cosine,magnitude_ratio\n";
    for (const auto& cell : g.grid.cells()) {
      const auto sp = survival_profile(pert, cell, b.carrier, bank);
      for (std::size_t r = 0; r < kRegions.size(); ++r) {
        const auto& rs = sp.regions[r];
        s << cell.label() << ',' << to_string(kRegions[r]) << ','
          << (rs.cosine ? fmt(*rs.cosine, 6) : std::string()) << ','
          << (rs.magnitude_ratio ? fmt(*rs.magnitude_ratio, 6) : std::string()) << '\n';
      }
    }
    write_text(odir / "survival.csv", s.str());
    out << "survival: " << g.grid.cells().size() << " channels\n";
  }

  if (want.count("residual")) {
    std::string vp = b.cfg.value("victim", std::string());
    if (vp.empty()) vp = ex.path("victim");
    if (vp.empty() || !fs::exists(vp)) throw ConfigError("residual analysis needs a victim checkpoint (--set victim=PATH)");
    const auto victim = ToyTokenVictim::load(vp);
    std::ostringstream s;
    s << "channel,residual\n";
    for (const auto& cell : g.grid.cells()) {
      const auto r = encoder_residual(victim, b.carrier, b.adversarial, cell, bank);
      s << cell.label() << ',' << (r ? fmt(*r, 6) : std::string()) << '\n';
    }
    write_text(odir / "residual.csv", s.str());
    out << "residual: " << g.grid.cells().size() << " channels\n";
  }

  const bool need_codec = want.count("envelope") || want.count("three-trace");
  if (!need_codec) {
    write_json(odir / "summary.json", summary);
    return;
  }

  std::unique_ptr<LatentCodec> codec;
  double sigma = 0.0;
  LatentTensor z, delta;
  if (f.oracle) {
    std::vector<double> freqs;
    for (int i = 0; i < 16; ++i) freqs.push_back(200.0 * std::pow(40.0, i / 15.0));  // 200 Hz .. 8 kHz
    codec = std::make_unique<LinearSinusoidCodec>(freqs, b.carrier.sample_rate_hz);
    z = codec->encode(b.carrier);
    sigma = 1.0;
    delta = LatentTensor(z.dims(), z.frames(), z.frame_rate_hz);
    std::mt19937_64 rng(ex.seeds().front());
    std::uniform_real_distribution<double> u(-sigma, sigma);
    for (double& v : delta.flat()) v = u(rng);
  } else {
    std::string cp = b.cfg.value("codec", std::string());
    if (cp.empty()) cp = ex.path("codec");
    if (cp.empty() || !fs::exists(cp))
      throw ConfigError("envelope/three-trace need a codec checkpoint (--set codec=PATH or --oracle)");
    if (b.dims < 2) throw ConfigError("envelope/three-trace need a latent-domain bundle (or --oracle)");
    codec = std::make_unique<ToyLatentCodec>(ToyLatentCodec::load(cp));
    z = codec->encode(b.carrier);
    if (z.dims() != b.dims || z.frames() != b.frames) throw ConfigError("bundle delta does not match the codec latent");
    delta = LatentTensor(b.dims, b.frames, z.frame_rate_hz);
    std::copy(b.delta.begin(), b.delta.end(), delta.flat().begin());
    sigma = b.cfg.contains("sigma") && b.cfg["sigma"].is_number() ? b.cfg["sigma"].get<double>()
                                                                 : estimate_sigma(*codec, std::vector{b.carrier});
  }

  if (want.count("envelope")) {
    const auto env = decoder_band_envelope(*codec, z.frames(), bands, sigma, &z);
    std::vector<std::pair<std::string, BandEnergyProfile>> cols;
    const auto per = env.per_dimension();
    for (std::size_t i = 0; i < per.size(); ++i) cols.emplace_back("dim" + std::to_string(i), per[i]);
    cols.emplace_back("aggregate", env.aggregate());
    write_profile_csv(odir / "envelope.csv", cols, bands);
    write_text(odir / "envelope.svg", plot::bar_chart("Decoder Jacobian envelope", "fraction", band_labels(bands),
                                                      {profile_series("aggregate", env.aggregate())}));
    summary["envelope_linearity_deviation"] = env.linearity_deviation;
    out << "envelope: " << per.size() << " dimensions, linearity deviation " << fmt(env.linearity_deviation, 5)
        << "\n";
  }

  if (want.count("three-trace")) {
    const auto rep = three_trace_report(*codec, z, delta, sigma, f.draws, bands, ex.seeds().front());
    write_profile_csv(odir / "three_trace.csv",
                      {{"A_jacobian", rep.jacobian}, {"B_random_draw", rep.random_draw}, {"C_adversarial", rep.adversarial}},
                      bands);
    write_text(odir / "three_trace.svg",
               plot::bar_chart("Three-trace spectral comparison", "fraction", band_labels(bands),
                               {profile_series("A Jacobian", rep.jacobian), profile_series("B random", rep.random_draw),
                                profile_series("C adversarial", rep.adversarial)}));
    summary["three_trace_max_ab"] = rep.max_ab_difference;
    out << "three-trace (" << (f.oracle ? "linear oracle" : "bundle codec") << ", " << f.draws
        << " draws): max |A-B| per band = " << fmt(rep.max_ab_difference, 5)
        << (rep.max_ab_difference <= 0.02 ? "  A~B: yes" : "  A~B: no") << "\n";
  }
  write_json(odir / "summary.json", summary);
}

int cmd_analyze(const Common& c, const AnalyzeFlags& f, std::ostream& out) {
  for (const auto& a : f.analyses)
    if (!kAnalyses.count(a)) throw ConfigError("unknown analysis '" + a + "'");
  if (!fs::is_directory(f.run_dir)) throw ConfigError("run directory not found: " + f.run_dir);
  Experiment ex = load_experiment(c);
  std::vector<fs::path> bundles;
  if (fs::exists(fs::path(f.run_dir) / "delta.bin")) {
    bundles.push_back(f.run_dir);
  } else {
    for (const auto& e : fs::recursive_directory_iterator(f.run_dir))
      if (e.is_regular_file() && e.path().filename() == "delta.bin") bundles.push_back(e.path().parent_path());
    std::sort(bundles.begin(), bundles.end());
  }
  if (bundles.empty()) throw ConfigError("no attack bundles under " + f.run_dir);
  for (const auto& b : bundles) {
    out << b.string() << "\n";
    analyze_bundle(ex, load_bundle(b), f, out);
  }
  return kOk;
}

// ----------------------------------------------------------------- report

int cmd_report(const std::string& run_dir, std::ostream& out) {
  if (!fs::is_directory(run_dir)) throw ConfigError("run directory not found: " + run_dir);
  std::vector<fs::path> tables, losses;
  for (const auto& e : fs::recursive_directory_iterator(run_dir)) {
    if (!e.is_regular_file()) continue;
    if (e.path().extension() == ".md" && e.path().parent_path().filename() == "tables") tables.push_back(e.path());
    if (e.path().filename() == "loss_history.csv") losses.push_back(e.path());
  }
  std::sort(tables.begin(), tables.end());
  std::sort(losses.begin(), losses.end());
  std::ostringstream md;
  md << "# Report: " << fs::path(run_dir).filename().string() << "\n\n";
  for (const auto& t : tables) {
    std::ifstream in(t);
    md << "<!-- " << fs::relative(t, run_dir).string() << " -->\n" << in.rdbuf() << "\n";
  }
  std::size_t plots = 0;
  for (const auto& l : losses) {
    std::ifstream in(l);
    std::string line;
    std::getline(in, line);
    plot::Series s{"loss", {}, {}};
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string step, kind, br, loss;
      std::getline(ss, step, ',');
      std::getline(ss, kind, ',');
      std::getline(ss, br, ',');
      std::getline(ss, loss, ',');
      s.x.push_back(std::stod(step));
      s.y.push_back(std::stod(loss));
    }
    const fs::path rel = fs::relative(l.parent_path(), run_dir);
    std::string name = rel.string();
    std::replace(name.begin(), name.end(), '/', '_');
    if (name.empty() || name == ".") name = "attack";
    const fs::path svg = fs::path(run_dir) / "plots" / ("loss_" + name + ".svg");
    write_text(svg, plot::line_chart("Attack loss, " + rel.string(), "step", "loss", {s}));
    md << "![loss " << rel.string() << "](plots/loss_" << name << ".svg)\n\n";
    ++plots;
  }
  const fs::path dst = fs::path(run_dir) / "report.md";
  write_text(dst, md.str());
  out << "report " << dst.string() << " (" << tables.size() << " tables, " << plots << " loss plots)\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Codec-robust latent-space adversarial audio toolkit", "codecraid"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", version_stamp());

  Common common;
  std::string output;
  AttackFlags af;
  AnalyzeFlags an;
  std::string from_run;
  std::string report_dir;

  auto* tc = app.add_subcommand("train-toycodec", "Train the toy latent codec");
  add_common(tc, common);
  tc->add_option("-o,--output", output, "Checkpoint path (default <out-dir>/toycodec.ckpt)");

  auto* tv = app.add_subcommand("train-victim", "Train the toy token victim");
  add_common(tv, common);
  tv->add_option("-o,--output", output, "Checkpoint path (default <out-dir>/victim.ckpt)");

  auto* at = app.add_subcommand("attack", "Run one attack and write its result bundle");
  add_common(at, common);
  at->add_option("--carrier", af.carrier, "Carrier WAV (overrides the scenario)");
  at->add_option("--target", af.target, "Target text");
  at->add_option("--index", af.index, "Scenario carrier index when --carrier is not given")->capture_default_str();

  auto* ev = app.add_subcommand("eval", "Attack every carrier and evaluate the channel grid");
  add_common(ev, common);
  ev->add_option("--from-run", from_run, "Re-evaluate the adversarial audio of an existing run directory");

  auto* ab = app.add_subcommand("ablate-eot", "Paired EoT vs clean-only schedules");
  add_common(ab, common);

  auto* ca = app.add_subcommand("capacity", "Success counts against target length");
  add_common(ca, common);

  auto* co = app.add_subcommand("compare", "Latent vs waveform attacks at matched SNR");
  add_common(co, common);

  auto* az = app.add_subcommand("analyze", "Spectral analyses of attack bundles");
  add_common(az, common);
  az->add_option("run_dir", an.run_dir, "Attack bundle or run directory")->required();
  az->add_option("--analyses", an.analyses, "Any of: bark survival envelope three-trace residual")
      ->delimiter(',')
      ->capture_default_str();
  az->add_option("--draws", an.draws, "Random draws for the three-trace report")->capture_default_str();
  az->add_flag("--oracle", an.oracle, "Use the closed-form linear sinusoid decoder for envelope/three-trace");

  auto* rp = app.add_subcommand("report", "Collect tables and loss plots of a run into report.md");
  add_common(rp, common);
  rp->add_option("run_dir", report_dir, "Run directory")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(std::move(rev));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (tc->parsed()) return cmd_train_codec(common, output, out);
    if (tv->parsed()) return cmd_train_victim(common, output, out);
    if (at->parsed()) return cmd_attack(common, af, out, err);
    if (ev->parsed()) return cmd_eval(common, from_run, out);
    if (ab->parsed()) return cmd_ablate(common, out);
    if (ca->parsed()) return cmd_capacity(common, out);
    if (co->parsed()) return cmd_compare(common, out);
    if (az->parsed()) return cmd_analyze(common, an, out);
    if (rp->parsed()) {
      load_experiment(common);
      return cmd_report(report_dir, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const RuntimeError& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kConfigError;
}

}  // namespace codecraid::cli

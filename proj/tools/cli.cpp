// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "plot.hpp"
#include "utts/error.hpp"
#include "utts/eval.hpp"
#include "utts/gradsuite.hpp"

#ifndef UTTS_VERSION
#define UTTS_VERSION "dev"
#endif

namespace utts::cli {

const char* const kVersion = "utts " UTTS_VERSION;

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kCommands{"gen-corpus", "pretrain",      "train",  "synth",     "eval-mcd",
                                         "eval-dist",  "inspect-embed", "ablate", "grad-check"};

// Top-level keys that describe a run rather than configure it.
bool is_annotation(const std::string& key) { return key == "version" || key == "command"; }

std::string kind_of(const json& v) {
  if (v.is_null()) return "null";
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer() || v.is_number_unsigned()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_object()) return "object";
  return v.type_name();
}

bool compatible(const json& base, const json& v, bool nullable) {
  if (nullable && v.is_null()) return true;
  if (base.is_number_unsigned() || (nullable && base.is_null()))
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  if (base.is_number_integer()) return v.is_number_integer() || v.is_number_unsigned();
  if (base.is_number_float()) return v.is_number();
  if (base.is_boolean()) return v.is_boolean();
  if (base.is_string()) return v.is_string();
  return false;
}

void set_path(json& root, const std::string& dotted, json value) {
  json* node = &root;
  std::size_t start = 0;
  for (std::size_t dot; (dot = dotted.find('.', start)) != std::string::npos; start = dot + 1)
    node = &(*node)[dotted.substr(start, dot - start)];
  (*node)[dotted.substr(start)] = std::move(value);
}

std::optional<std::uint64_t> parse_env_seed(const char* raw) {
  if (!raw || !*raw) return std::nullopt;
  const std::string s(raw);
  if (s.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("UTTS_SEED must be a non-negative integer, got '" + s + "'");
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError("UTTS_SEED is out of range: '" + s + "'");
  }
}

// ---------------------------------------------------------------------------
// Flag plumbing: every flag writes one dotted key of the flag patch.

class FlagPatch {
 public:
  template <class T>
  void option(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto holder = std::make_shared<std::optional<T>>();
    app->add_option(flag, *holder, help);
    collect_.push_back([holder, key](json& patch) {
      if (*holder) set_path(patch, key, json(**holder));
    });
  }

  void flag(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto holder = std::make_shared<bool>(false);
    app->add_flag(flag, *holder, help);
    collect_.push_back([holder, key](json& patch) {
      if (*holder) set_path(patch, key, true);
    });
  }

  json patch() const {
    json p = json::object();
    for (const auto& c : collect_) c(p);
    return p;
  }

 private:
  std::vector<std::function<void(json&)>> collect_;
};

struct Command {
  CLI::App* app = nullptr;
  FlagPatch flags;
  std::string config_file;
};

void add_common(Command& c) {
  c.app->add_option("--config", c.config_file, "JSON config file (flags override it)");
  c.flags.option<std::string>(c.app, "--out", "out", "Output directory");
  c.flags.option<std::uint64_t>(c.app, "--seed", "seed", "Seed for corpus generation and training (env: UTTS_SEED)");
  c.flags.option<std::string>(c.app, "--profile", "profile", "Model profile: desk (hidden 64) or full (hidden 256)");
}

void add_corpus_flags(Command& c) {
  c.flags.option<int>(c.app, "--train-speakers", "corpus.train_speakers", "Speakers in the train split");
  c.flags.option<int>(c.app, "--val-speakers", "corpus.val_speakers", "Speakers in the val split");
  c.flags.option<int>(c.app, "--clone-speakers", "corpus.clone_speakers", "Held-out cloning speakers");
  c.flags.option<int>(c.app, "--utterances-per-speaker", "corpus.utterances_per_speaker", "Texts per speaker");
  c.flags.option<int>(c.app, "--min-len", "corpus.min_len", "Shortest text in phonemes");
  c.flags.option<int>(c.app, "--max-len", "corpus.max_len", "Longest text in phonemes");
}

void add_model_flags(Command& c) {
  c.flags.option<int>(c.app, "--hidden", "model.hidden", "Hidden channels");
  c.flags.option<int>(c.app, "--levels", "model.unet_levels", "U-net levels L");
  c.flags.option<int>(c.app, "--content-blocks", "model.content_blocks", "Residual blocks in the content encoder");
  c.flags.option<int>(c.app, "--n-speakers", "model.n_speakers", "Pre-training speaker table size");
}

void add_train_flags(Command& c) {
  c.flags.option<std::string>(c.app, "--corpus", "corpus_root", "Corpus root directory");
  c.flags.option<int>(c.app, "--steps", "train.steps", "Optimizer steps");
  c.flags.option<int>(c.app, "--batch-size", "train.batch_size", "Utterances per batch");
  c.flags.option<double>(c.app, "--lr", "train.learning_rate", "Adam learning rate");
  c.flags.option<int>(c.app, "--val-every", "train.val_every", "Validation interval in steps");
  c.flags.option<int>(c.app, "--checkpoint-every", "train.checkpoint_every", "last.ckpt interval in steps");
  c.flags.option<int>(c.app, "--val-utterances", "train.val_utterances", "Validation subset size (0 = all)");
  c.flags.option<std::string>(c.app, "--resume", "resume", "Continue from this checkpoint (same output directory)");
  c.flags.flag(c.app, "--png", "png", "Also render the validation curve as PNG");
  add_model_flags(c);
}

void add_eval_flags(Command& c, bool texts) {
  c.flags.option<std::string>(c.app, "--corpus", "corpus_root", "Corpus root directory");
  c.flags.option<std::string>(c.app, "--ckpt", "checkpoint", "Trained stage-2 checkpoint");
  c.flags.flag(c.app, "--random-init", "random_init", "Evaluate a randomly initialised model (null baseline)");
  c.flags.flag(c.app, "--png", "png", "Also render PNG figures");
  if (texts) c.flags.option<int>(c.app, "--texts-per-cell", "texts_per_cell", "Texts per clone speaker and style");
  add_model_flags(c);
}

std::string error_kind(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config error";
  if (dynamic_cast<const InputError*>(&e)) return "input error";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape error";
  if (dynamic_cast<const AlignmentError*>(&e)) return "alignment error";
  if (dynamic_cast<const StateError*>(&e)) return "state error";
  if (dynamic_cast<const LoadError*>(&e)) return "load error";
  if (dynamic_cast<const IoError*>(&e)) return "io error";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric error";
  return "error";
}

// ---------------------------------------------------------------------------

void write_run_config(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "run_config.json");
  if (!out) throw IoError("cannot write run_config.json under '" + dir.string() + "'");
  out << cfg.to_json().dump(2) << '\n';
}

std::unique_ptr<UnetTts> model_for_eval(const RunConfig& cfg, const json& extra) {
  if (extra.value("random_init", false)) {
    auto m = std::make_unique<UnetTts>(cfg.model, cfg.train.seed);
    m->trained = true;
    return m;
  }
  if (!fs::exists(cfg.checkpoint))
    throw StateError("no trained checkpoint at '" + cfg.checkpoint.string() + "' (run `train` first or pass --ckpt)");
  return load_unet(load_checkpoint(cfg.checkpoint));
}

void print_report(std::ostream& out, const LossReport& r, int stage) {
  out << "  step " << std::setw(6) << r.step << "  l1_mel " << std::fixed << std::setprecision(4) << r.l1_mel;
  if (stage == 1) out << "  mse_duration " << r.mse_duration;
  else out << "  l2_content " << r.l2_content;
  out << "  total " << r.total << std::defaultfloat << '\n' << std::flush;
}

void curve_png(const std::vector<std::pair<std::vector<LossReport>, int>>& curves, const fs::path& path) {
  std::vector<plot::Series> s;
  for (const auto& [rows, colour] : curves) {
    plot::Series line;
    line.color = colour;
    for (const auto& r : rows) {
      line.x.push_back(static_cast<double>(r.step));
      line.y.push_back(r.l1_mel);
    }
    s.push_back(std::move(line));
  }
  plot::line_plot(s, path);
}

// ---------------------------------------------------------------------------
// Subcommands.

int cmd_gen_corpus(const RunConfig& cfg, const json&, std::ostream& out) {
  write_run_config(cfg, cfg.out);
  const Corpus c = generate_corpus(cfg.corpus, cfg.out);
  out << "wrote " << c.utterances.size() << " utterances (" << c.speakers_in("train").size() << " train / "
      << c.speakers_in("val").size() << " val / " << c.speakers_in("clone").size() << " clone speakers) to "
      << cfg.out.string() << '\n';
  return kExitOk;
}

TrainOptions train_options(const RunConfig& cfg, std::ostream& out, int stage) {
  TrainOptions o;
  o.out_dir = cfg.out;
  o.unfreeze_duration = cfg.unfreeze_duration;
  if (!cfg.resume.empty()) o.resume = load_checkpoint(cfg.resume, cfg.model);
  o.on_val = [&out, stage](const LossReport& r) { print_report(out, r, stage); };
  return o;
}

int cmd_pretrain(const RunConfig& cfg, const json&, std::ostream& out) {
  write_run_config(cfg, cfg.out);
  const Corpus corpus = Corpus::load(cfg.corpus_root);
  out << "stage 1: " << cfg.train.steps << " steps, hidden " << cfg.model.hidden << ", L " << cfg.model.unet_levels
      << '\n';
  const TrainResult r = train_stage1(corpus, cfg.model, cfg.train, train_options(cfg, out, 1));
  const auto model = load_pretrain_model(r.final);
  const double rho = duration_correlation(model->content, model->duration, corpus.select("train"));
  out << "duration correlation (train) " << rho << "\n";
  out << "done in " << r.seconds << " s; checkpoints in " << cfg.out.string() << '\n';
  if (cfg.png) curve_png({{r.val, 0}}, cfg.out / "val_curve.png");
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const json&, std::ostream& out) {
  write_run_config(cfg, cfg.out);
  const Corpus corpus = Corpus::load(cfg.corpus_root);
  const Checkpoint stage1 = load_checkpoint(cfg.from);
  out << "stage 2: " << cfg.train.steps << " steps from " << cfg.from.string()
      << (cfg.model.single_level_stats ? " (single-level stats)" : "") << '\n';
  const TrainResult r = train_stage2(corpus, stage1, cfg.model, cfg.train, train_options(cfg, out, 2));
  out << "alignment checks " << r.alignment.checks << ", violations " << r.alignment.violations << '\n';
  out << "done in " << r.seconds << " s; checkpoints in " << cfg.out.string() << '\n';
  if (cfg.png) curve_png({{r.val, 0}}, cfg.out / "val_curve.png");
  return kExitOk;
}

int cmd_synth(const RunConfig& cfg, const json& extra, std::ostream& out) {
  const std::string text = extra.value("text", "");
  const std::string ref_id = extra.value("ref", "");
  if (text.empty() || ref_id.empty()) throw ConfigError("synth needs --text and --ref");
  write_run_config(cfg, cfg.out);
  const auto model = model_for_eval(cfg, extra);
  const Corpus corpus = Corpus::load(cfg.corpus_root);
  const Utterance& ref = corpus.by_id(ref_id);
  const PhonemeSequence phones{corpus.renderer().inventory().parse(text), {}};
  const Synthesis s = synthesize(*model, phones, ref.mel, ref.phones.durations);

  Container c;
  c.meta["text"] = text;
  c.meta["ref"] = ref_id;
  store(c, "mel", s.mel);
  c.put("durations", s.durations);
  c.save(cfg.out / "synth.utts");
  write_csv(s.mel, cfg.out / "mel.csv");
  {
    std::ofstream d(cfg.out / "durations.json");
    d << json{{"phonemes", text}, {"durations", s.durations}}.dump(2) << '\n';
  }
  if (cfg.png) plot::heatmap(s.mel.data.transpose(), cfg.out / "mel.png");
  out << "synthesized " << s.mel.frames() << " frames for " << phones.ids.size() << " phonemes (ref " << ref_id
      << ") into " << cfg.out.string() << '\n';
  return kExitOk;
}

McdOptions mcd_options(const json& extra) {
  McdOptions o;
  o.texts_per_cell = extra.value("texts_per_cell", o.texts_per_cell);
  return o;
}

int cmd_eval_mcd(const RunConfig& cfg, const json& extra, std::ostream& out) {
  write_run_config(cfg, cfg.out);
  const auto model = model_for_eval(cfg, extra);
  const Corpus corpus = Corpus::load(cfg.corpus_root);
  const McdReport r = eval_mcd_transfer(*model, corpus, mcd_options(extra));
  write_mcd_report(r, cfg.out);
  out << "trials " << r.trials.size() << "  matched " << r.mean_matched << "  mismatched " << r.mean_mismatched
      << "  win rate " << r.win_rate << "\n";
  out << "same-speaker corpus baseline " << same_speaker_mcd_baseline(corpus) << '\n';
  if (cfg.png) {
    plot::Series s;
    for (const auto& t : r.trials) {
      s.x.push_back(t.matched);
      s.y.push_back(t.mismatched);
    }
    plot::scatter_plot({s}, cfg.out / "mcd_scatter.png");
  }
  return kExitOk;
}

int cmd_eval_dist(const RunConfig& cfg, const json& extra, std::ostream& out) {
  write_run_config(cfg, cfg.out);
  const auto model = model_for_eval(cfg, extra);
  const Corpus corpus = Corpus::load(cfg.corpus_root);
  const DistributionReport r = eval_distributions(*model, corpus, mcd_options(extra));
  write_distribution_report(r, cfg.out);
  out << std::left << std::setw(10) << "style" << std::right << std::setw(12) << "duration" << std::setw(12) << "(ref)"
      << std::setw(12) << "energy" << std::setw(12) << "(ref)" << std::setw(12) << "f0" << std::setw(12) << "(ref)"
      << '\n';
  for (const auto& s : r.styles)
    out << std::left << std::setw(10) << s.name << std::right << std::fixed << std::setprecision(3) << std::setw(12)
        << s.median_duration << std::setw(12) << s.ref_median_duration << std::setw(12) << s.median_energy
        << std::setw(12) << s.ref_median_energy << std::setw(12) << s.median_f0 << std::setw(12) << s.ref_median_f0
        << std::defaultfloat << '\n';
  if (cfg.png) {
    auto strip = [&](auto member, const std::string& name) {
      std::vector<plot::Series> series;
      for (const auto& s : r.styles) {
        plot::Series p;
        p.color = s.style_id;
        const auto& v = s.*member;
        for (std::size_t i = 0; i < v.size(); ++i) {
          p.x.push_back(s.style_id + 0.6 * (static_cast<double>(i % 17) / 16.0 - 0.5));
          p.y.push_back(v[i]);
        }
        series.push_back(std::move(p));
      }
      plot::scatter_plot(series, cfg.out / ("dist_" + name + ".png"));
    };
    strip(&StyleDistribution::durations, "duration");
    strip(&StyleDistribution::energies, "energy");
    strip(&StyleDistribution::f0, "f0");
  }
  return kExitOk;
}

int cmd_inspect_embed(const RunConfig& cfg, const json& extra, std::ostream& out) {
  write_run_config(cfg, cfg.out);
  const auto model = model_for_eval(cfg, extra);
  const Corpus corpus = Corpus::load(cfg.corpus_root);
  const std::string split = extra.value("split", "clone");
  const Batch batch = corpus.select(split);
  if (batch.size() < 3) throw InputError("inspect-embed: split '" + split + "' has fewer than 3 utterances");
  const EmbeddingReport r = embed_levels(*model, batch);
  write_embedding_report(r, cfg.out);
  for (const auto& l : r.levels)
    out << "level " << l.level << "  separability " << l.separability << "  explained " << l.pca.explained[0]
        << " / " << l.pca.explained[1] << '\n';
  if (cfg.png) {
    for (const auto& l : r.levels) {
      std::map<int, plot::Series> by_speaker;
      for (std::size_t i = 0; i < r.speaker_ids.size(); ++i) {
        auto& s = by_speaker[r.speaker_ids[i]];
        s.color = r.speaker_ids[i];
        s.x.push_back(l.pca.points(static_cast<Eigen::Index>(i), 0));
        s.y.push_back(l.pca.points(static_cast<Eigen::Index>(i), 1));
      }
      std::vector<plot::Series> series;
      for (auto& [id, s] : by_speaker) series.push_back(std::move(s));
      plot::scatter_plot(series, cfg.out / ("embed_level" + std::to_string(l.level) + ".png"));
    }
  }
  return kExitOk;
}

int cmd_ablate(const RunConfig& cfg, const json&, std::ostream& out) {
  write_run_config(cfg, cfg.out);
  const Corpus corpus = Corpus::load(cfg.corpus_root);
  const Checkpoint stage1 = load_checkpoint(cfg.from);
  std::vector<std::vector<LossReport>> curves;
  for (const bool single : {false, true}) {
    RunConfig run = cfg;
    run.model.single_level_stats = single;
    run.out = cfg.out / (single ? "ablation" : "full");
    write_run_config(run, run.out);
    out << (single ? "single-level ablation" : "full multi-level stats") << '\n';
    TrainOptions o = train_options(run, out, 2);
    o.resume.reset();
    curves.push_back(train_stage2(corpus, stage1, run.model, run.train, o).val);
  }
  const CurveComparison c = eval_reconstruction_curves(curves[0], curves[1]);
  write_curve_comparison(c, cfg.out);
  out << "final-window val l1: full " << c.final_full << ", ablation " << c.final_ablation << ", ratio " << c.ratio
      << '\n';
  if (cfg.png) curve_png({{curves[0], 0}, {curves[1], 1}}, cfg.out / "reconstruction_curves.png");
  return kExitOk;
}

int cmd_grad_check(const RunConfig& cfg, const json& extra, std::ostream& out) {
  write_run_config(cfg, cfg.out);
  GradSuiteOptions o;
  o.seed = cfg.seed.value_or(1);
  o.max_entries = extra.value("max_entries", o.max_entries);
  const auto entries = run_grad_suite(o);
  double worst = 0.0;
  std::ofstream csv(cfg.out / "grad_check.csv");
  csv << "op,max_rel_error,worst_target,checked\n";
  for (const auto& e : entries) {
    worst = std::max(worst, e.result.max_rel_error);
    out << std::left << std::setw(28) << e.op << std::right << std::scientific << std::setprecision(3)
        << e.result.max_rel_error << std::defaultfloat << "  (" << e.result.checked << " entries)\n";
    csv << e.op << ',' << e.result.max_rel_error << ',' << e.result.worst_target << ',' << e.result.checked << '\n';
  }
  const bool pass = worst < 1e-4;
  out << "max relative error " << std::scientific << worst << std::defaultfloat << (pass ? "  PASS" : "  FAIL")
      << " (< 1e-4)\n";
  return pass ? kExitOk : kExitFailure;
}

}  // namespace

// ---------------------------------------------------------------------------

json RunConfig::to_json() const {
  return {{"version", kVersion},
          {"command", command},
          {"seed", seed ? json(*seed) : json(nullptr)},
          {"profile", profile},
          {"corpus_root", corpus_root.string()},
          {"out", out.string()},
          {"checkpoint", checkpoint.string()},
          {"from", from.string()},
          {"resume", resume.string()},
          {"unfreeze_duration", unfreeze_duration},
          {"png", png},
          {"corpus", corpus.to_json()},
          {"model", model.to_json()},
          {"train", train.to_json()}};
}

fs::path default_out(const std::string& command) {
  if (command == "gen-corpus") return "corpus";
  if (command == "inspect-embed") return "runs/embed";
  return fs::path("runs") / command;
}

json default_config(const std::string& command, const std::string& profile, std::optional<std::uint64_t> env_seed) {
  RunConfig d;
  d.command = command;
  d.profile = profile;
  d.out = default_out(command);
  if (profile == "desk") d.model = ModelConfig::desk();
  else if (profile == "full") d.model = ModelConfig::full();
  else throw ConfigError("unknown profile '" + profile + "' (expected desk or full)");
  d.train.stage = command == "pretrain" ? 1 : 2;
  d.seed = env_seed;
  json j = d.to_json();
  j.erase("version");
  j.erase("command");
  return j;
}

void overlay(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object())
    throw ConfigError((path.empty() ? std::string("config") : "'" + path + "'") + " must be a JSON object");
  for (const auto& [key, value] : patch.items()) {
    const std::string at = path.empty() ? key : path + "." + key;
    if (path.empty() && is_annotation(key)) {
      if (!value.is_string()) throw ConfigError("type mismatch at '" + at + "': expected string");
      continue;
    }
    if (!base.contains(key)) throw ConfigError("unknown config key '" + at + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      overlay(slot, value, at);
      continue;
    }
    const bool nullable = path.empty() && key == "seed";
    if (!compatible(slot, value, nullable))
      throw ConfigError("type mismatch at '" + at + "': expected " + (nullable ? std::string("integer or null") : kind_of(slot)) +
                        ", got " + kind_of(value));
    slot = value;
  }
}

RunConfig resolve_config(const std::string& command, const json* file, const json& flags, const char* env_seed) {
  if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end())
    throw ConfigError("unknown command '" + command + "'");
  if (file && !file->is_object()) throw ConfigError("config file must hold a JSON object");
  std::string profile = "desk";
  for (const json* src : {file, &flags}) {
    if (!src || !src->contains("profile")) continue;
    if (!src->at("profile").is_string()) throw ConfigError("type mismatch at 'profile': expected string");
    profile = src->at("profile").get<std::string>();
  }
  json merged = default_config(command, profile, parse_env_seed(env_seed));
  if (file) overlay(merged, *file);
  overlay(merged, flags);

  RunConfig cfg;
  cfg.command = command;
  cfg.profile = merged.at("profile").get<std::string>();
  cfg.corpus_root = merged.at("corpus_root").get<std::string>();
  cfg.out = merged.at("out").get<std::string>();
  cfg.checkpoint = merged.at("checkpoint").get<std::string>();
  cfg.from = merged.at("from").get<std::string>();
  cfg.resume = merged.at("resume").get<std::string>();
  cfg.unfreeze_duration = merged.at("unfreeze_duration").get<bool>();
  cfg.png = merged.at("png").get<bool>();
  cfg.corpus = CorpusSpec::from_json(merged.at("corpus"));
  cfg.model = ModelConfig::from_json(merged.at("model"));
  cfg.train = TrainConfig::from_json(merged.at("train"));
  cfg.train.stage = command == "pretrain" ? 1 : 2;
  if (!merged.at("seed").is_null()) {
    cfg.seed = merged.at("seed").get<std::uint64_t>();
    cfg.corpus.seed = *cfg.seed;
    cfg.train.seed = *cfg.seed;
  }
  if (cfg.out.empty()) throw ConfigError("'out' must not be empty");
  cfg.train.validate();
  return cfg;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"One-shot voice cloning with a statistics-skip U-net (mel domain)", "utts"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::map<std::string, Command> commands;
  // Flags that do not map onto RunConfig fields.
  std::map<std::string, json> extras;
  auto make = [&](const std::string& name, const std::string& help) -> Command& {
    Command& c = commands[name];
    c.app = app.add_subcommand(name, help);
    add_common(c);
    return c;
  };

  auto& gen = make("gen-corpus", "Generate the synthetic multi-speaker, multi-style corpus");
  add_corpus_flags(gen);

  auto& pre = make("pretrain", "Stage 1: content encoder, duration predictor, speaker-table decoder");
  add_train_flags(pre);

  auto& train = make("train", "Stage 2: style encoder and mel decoder on a frozen content encoder");
  add_train_flags(train);
  train.flags.option<std::string>(train.app, "--from", "from", "Stage-1 checkpoint");
  train.flags.flag(train.app, "--single-level-stats", "model.single_level_stats",
                   "Ablation: feed only the deepest stats pair to the decoder");
  train.flags.flag(train.app, "--unfreeze-duration", "unfreeze_duration", "Keep training the duration predictor");

  auto& synth = make("synth", "Clone a reference utterance's voice and style for a phoneme string");
  std::string text, ref;
  synth.app->add_option("--text", text, "Space-separated phoneme symbols, e.g. \"sil v1 u3 v2 sil\"")->required();
  synth.app->add_option("--ref", ref, "Reference utterance id from the corpus manifest")->required();
  add_eval_flags(synth, false);

  auto& mcd = make("eval-mcd", "Matched vs mismatched speaker MCD over clone-speaker trials");
  add_eval_flags(mcd, true);

  auto& dist = make("eval-dist", "Per-style duration, energy and F0 distributions of synthesized speech");
  add_eval_flags(dist, true);

  auto& embed = make("inspect-embed", "Per-level style statistics: PCA projections and speaker separability");
  add_eval_flags(embed, false);
  std::string split = "clone";
  embed.app->add_option("--split", split, "Corpus split to embed")->capture_default_str();

  auto& ablate = make("ablate", "Paired stage-2 runs: multi-level stats vs single deepest level");
  add_train_flags(ablate);
  ablate.flags.option<std::string>(ablate.app, "--from", "from", "Stage-1 checkpoint");

  auto& grad = make("grad-check", "Finite-difference check of every differentiable operation");
  int max_entries = GradSuiteOptions{}.max_entries;
  grad.app->add_option("--max-entries", max_entries, "Entries sampled per tensor (<= 0: all)")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  std::string name;
  for (const auto& [n, c] : commands)
    if (c.app->parsed()) name = n;
  Command& cmd = commands.at(name);

  RunConfig cfg;
  json extra = json::object();
  try {
    json patch = cmd.flags.patch();
    for (const char* key : {"random_init", "texts_per_cell"}) {
      if (patch.contains(key)) {
        extra[key] = patch[key];
        patch.erase(key);
      }
    }
    if (name == "synth") extra["text"] = text, extra["ref"] = ref;
    if (name == "inspect-embed") extra["split"] = split;
    if (name == "grad-check") extra["max_entries"] = max_entries;

    std::optional<json> file;
    if (!cmd.config_file.empty()) {
      std::ifstream in(cmd.config_file);
      if (!in) throw ConfigError("cannot read config file '" + cmd.config_file + "'");
      try {
        file = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ConfigError("malformed config file '" + cmd.config_file + "': " + e.what());
      }
    }
    cfg = resolve_config(name, file ? &*file : nullptr, patch, std::getenv("UTTS_SEED"));
  } catch (const Error& e) {
    err << "utts " << name << ": " << e.what() << '\n';
    return kExitUsage;
  }

  static const std::map<std::string, int (*)(const RunConfig&, const json&, std::ostream&)> handlers{
      {"gen-corpus", cmd_gen_corpus}, {"pretrain", cmd_pretrain},       {"train", cmd_train},
      {"synth", cmd_synth},           {"eval-mcd", cmd_eval_mcd},       {"eval-dist", cmd_eval_dist},
      {"inspect-embed", cmd_inspect_embed}, {"ablate", cmd_ablate}, {"grad-check", cmd_grad_check}};
  try {
    return handlers.at(name)(cfg, extra, out);
  } catch (const Error& e) {
    err << "utts " << name << ": " << error_kind(e) << ": " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "utts " << name << ": " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace utts::cli

// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// End-to-end acceptance run on the default corpus at desk scale.
// Prints one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "utts/corpus.hpp"
#include "utts/dsp.hpp"
#include "utts/error.hpp"
#include "utts/eval.hpp"
#include "utts/gradsuite.hpp"
#include "utts/model.hpp"
#include "utts/nn.hpp"
#include "utts/training.hpp"

using namespace utts;
using nn::Index;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;
nlohmann::json g_summary = nlohmann::json::array();

void info(const std::string& line) { std::cout << "    " << line << std::endl; }

void verdict(int id, const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << "  [" << id << "] " << name << ": " << detail << std::endl;
  g_summary.push_back({{"criterion", id}, {"name", name}, {"pass", pass}, {"detail", detail}});
  if (!pass) ++g_failures;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Vector row_mean(const Matrix& x) { return x.rowwise().mean(); }

Vector row_std(const Matrix& x) {
  const Matrix c = x.colwise() - row_mean(x);
  return (c.array().square().rowwise().sum() / static_cast<double>(x.cols())).sqrt();
}

bool same_tree(const fs::path& a, const fs::path& b, long& files) {
  files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto twin = b / fs::relative(e.path(), a);
    if (!fs::exists(twin) || bytes_of(e.path()) != bytes_of(twin)) return false;
    ++files;
  }
  long other = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) other += e.is_regular_file() ? 1 : 0;
  return other == files;
}

// ---------------------------------------------------------------------------

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto entries = run_grad_suite();
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_op;
  for (const auto& e : entries)
    if (e.result.max_rel_error >= worst) worst = e.result.max_rel_error, worst_op = e.op;
  info(std::to_string(entries.size()) + " operations checked; worst " + worst_op);
  verdict(1, "gradient suite", worst < 1e-4 && secs < 60.0,
          "max rel error " + fmt("%.3e", worst) + " (< 1e-4), " + fmt("%.1f", secs) + " s (< 60 s)");
}

void criterion_norm_contracts() {
  Rng rng(2024);
  double in_mean = 0.0, in_std = 0.0, ada = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index c = 1 + trial % 16, t = 16 + (trial * 7) % 200;
    Matrix x(c, t);
    const double scale = 1.0 + 4.0 * rng.uniform(), shift = 20.0 * rng.normal();
    for (Index i = 0; i < c; ++i)
      for (Index j = 0; j < t; ++j) x(i, j) = shift + scale * rng.normal();
    const Matrix y = nn::instance_norm(x);
    in_mean = std::max(in_mean, row_mean(y).cwiseAbs().maxCoeff());
    in_std = std::max(in_std, (row_std(y).array() - 1.0).abs().maxCoeff());

    nn::ChannelStats ref{Vector(c), Vector(c)};
    for (Index i = 0; i < c; ++i) {
      ref.mean(i) = 3.0 * rng.normal();
      ref.std(i) = 0.05 + 2.0 * rng.uniform();
    }
    const Matrix z = nn::adain(x, ref);
    ada = std::max(ada, (row_mean(z) - ref.mean).cwiseAbs().maxCoeff());
    ada = std::max(ada, (row_std(z) - ref.std).cwiseAbs().maxCoeff());
  }
  verdict(2, "AdaIN/IN contracts (100 tensors)", in_mean < 1e-6 && in_std < 1e-3 && ada < 1e-4,
          "IN max|mean| " + fmt("%.2e", in_mean) + ", IN max|std-1| " + fmt("%.2e", in_std) + ", AdaIN max stat error " +
              fmt("%.2e", ada));
}

void criterion_shapes(const UnetTts& model, const Corpus& corpus, const AlignmentTally& tally) {
  const Batch refs = corpus.select("clone");
  const Batch texts = corpus.select("val");
  long mismatched = 0, bad_levels = 0, n = 0;
  for (std::size_t i = 0; i < refs.size(); i += 7, ++n) {
    const Utterance& ref = *refs[i];
    const Utterance& text = *texts[(i * 13) % texts.size()];
    const Synthesis s = synthesize(model, PhonemeSequence{text.phones.ids, {}}, ref.mel, ref.phones.durations);
    long total = 0;
    for (int d : s.durations) total += d;
    if (s.mel.frames() != total) ++mismatched;
    const auto [stats, content_pred] = style_encode(model, ref.mel);
    if (static_cast<int>(stats.levels.size()) != model.config().unet_levels) ++bad_levels;
    (void)content_pred;
  }
  info(std::to_string(n) + " syntheses: frame-count mismatches " + std::to_string(mismatched) +
       ", wrong stats-pair counts " + std::to_string(bad_levels));
  verdict(3, "shape and alignment laws",
          mismatched == 0 && bad_levels == 0 && tally.checks >= 500 && tally.violations == 0,
          std::to_string(tally.checks) + " alignment checks over the stage-2 run, " + std::to_string(tally.violations) +
              " violations");
}

void criterion_duration_arithmetic() {
  Rng rng(77);
  double worst = 0.0;
  long exact = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform() * 60.0);
    Durations d(static_cast<std::size_t>(n));
    for (auto& v : d) v = 1 + static_cast<int>(rng.uniform() * (trial % 2 ? 30.0 : 8.0));
    const DurationStats st = duration_mean_std(d);
    const Vector z = normalize_durations(d);
    for (int i = 0; i < n; ++i)
      worst = std::max(worst, std::abs(z(i) * st.std + st.mean - d[static_cast<std::size_t>(i)]));
    exact += adjust_durations(z, st) == d ? 1 : 0;
  }
  verdict(4, "duration transfer arithmetic (1000 utterances)", worst <= 0.5 && exact == 1000,
          "max pre-rounding error " + fmt("%.2e", worst) + " frames, " + std::to_string(exact) +
              "/1000 reproduced exactly");
}

void criterion_infrastructure(const Corpus& corpus, const Checkpoint& stage1, const fs::path& out,
                              bool corpus_identical, long corpus_files) {
  const ModelConfig m = ModelConfig::desk();
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.val_every = 5;
  cfg.checkpoint_every = 10;
  cfg.val_utterances = 8;
  cfg.seed = 11;
  bool resume_ok = true;
  for (int stage : {1, 2}) {
    const fs::path whole = out / ("resume_s" + std::to_string(stage) + "_whole");
    const fs::path split = out / ("resume_s" + std::to_string(stage) + "_split");
    fs::remove_all(whole);
    fs::remove_all(split);
    TrainConfig c20 = cfg, c10 = cfg;
    c20.steps = 20;
    c10.steps = 10;
    c20.stage = c10.stage = stage;
    auto run = [&](const TrainConfig& c, const fs::path& dir, std::optional<Checkpoint> resume) {
      TrainOptions o;
      o.out_dir = dir;
      o.resume = std::move(resume);
      return stage == 1 ? train_stage1(corpus, m, c, o) : train_stage2(corpus, stage1, m, c, o);
    };
    const TrainResult full = run(c20, whole, std::nullopt);
    run(c10, split, std::nullopt);
    const TrainResult rest = run(c20, split, load_checkpoint(split / "last.ckpt", m));
    const bool reports = rest.train.size() == 10 && std::equal(rest.train.begin(), rest.train.end(), full.train.begin() + 10) &&
                         read_loss_csv(split / "val_loss.csv") == full.val;
    const bool files = bytes_of(whole / "last.ckpt") == bytes_of(split / "last.ckpt") &&
                       bytes_of(whole / "train_loss.csv") == bytes_of(split / "train_loss.csv");
    info("stage " + std::to_string(stage) + " resume at step 10: LossReports " + (reports ? "identical" : "DIFFER") +
         ", last.ckpt and CSV bytes " + (files ? "identical" : "DIFFER"));
    resume_ok = resume_ok && reports && files;
  }

  const auto& u = *corpus.select("clone").front();
  const CepstralVector c = average_cepstrum(u.mel, 13);
  const double self = mcd(c, c);
  const double self_mel = mcd_time_averaged(u.mel, u.mel);
  CepstralVector a{Eigen::VectorXd::Zero(13)}, b{Eigen::VectorXd::Zero(13)};
  b.coeffs(1) = 1.0;
  const double unit = mcd(a, b);
  const double expected = 10.0 / std::log(10.0) * std::sqrt(2.0);
  info("corpus regeneration: " + std::to_string(corpus_files) + " files " +
       (corpus_identical ? "byte-identical" : "DIFFER"));
  info("MCD(x, x) = " + fmt("%g", self) + " / " + fmt("%g", self_mel) + "; single coefficient " + fmt("%.12f", unit) +
       " vs " + fmt("%.12f", expected));
  verdict(10, "infrastructure",
          resume_ok && corpus_identical && self == 0.0 && self_mel == 0.0 && std::abs(unit - expected) < 1e-9,
          std::string("resume ") + (resume_ok ? "bit-exact" : "differs") + ", corpus " +
              (corpus_identical ? "byte-identical" : "differs") + ", MCD identities " +
              (self == 0.0 && std::abs(unit - expected) < 1e-9 ? "hold" : "fail"));
}

TrainResult run_stage(const char* label, std::function<TrainResult(const TrainOptions&)> fn, const fs::path& dir) {
  TrainOptions o;
  o.out_dir = dir;
  o.on_val = [label](const LossReport& r) {
    if (r.step % 500 == 0) info(std::string(label) + " step " + std::to_string(r.step) + " val l1 " + fmt("%.4f", r.l1_mel));
  };
  TrainResult r = fn(o);
  info(std::string(label) + ": " + fmt("%.0f", r.seconds) + " s, val l1 " + fmt("%.4f", r.val.front().l1_mel) +
       " -> " + fmt("%.4f", r.val.back().l1_mel));
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run"};
  fs::path out = "acceptance_run";
  int stage1_steps = 1500, stage2_steps = 2000, null_seeds = 5;
  app.add_option("--out", out, "Output directory")->capture_default_str();
  app.add_option("--stage1-steps", stage1_steps, "Stage-1 steps (<= 5000)")->capture_default_str();
  app.add_option("--stage2-steps", stage2_steps, "Stage-2 steps (<= 5000)")->capture_default_str();
  app.add_option("--null-seeds", null_seeds, "Extra random-init models reported alongside the null model")
      ->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  const auto t0 = std::chrono::steady_clock::now();
  try {
    fs::create_directories(out);
    criterion_gradients();
    criterion_norm_contracts();
    criterion_duration_arithmetic();

    // Default corpus, generated twice from the same seed.
    const CorpusSpec spec;
    fs::remove_all(out / "corpus");
    fs::remove_all(out / "corpus_twin");
    const Corpus corpus = generate_corpus(spec, out / "corpus");
    generate_corpus(spec, out / "corpus_twin");
    long corpus_files = 0;
    const bool corpus_identical = same_tree(out / "corpus", out / "corpus_twin", corpus_files);
    fs::remove_all(out / "corpus_twin");
    info("corpus: " + std::to_string(corpus.utterances.size()) + " utterances, " +
         std::to_string(corpus.speakers_in("train").size()) + " train speakers");

    const ModelConfig model_cfg = ModelConfig::desk();
    TrainConfig train_cfg;
    train_cfg.stage = 1;
    train_cfg.steps = stage1_steps;
    const TrainResult s1 = run_stage(
        "stage 1", [&](const TrainOptions& o) { return train_stage1(corpus, model_cfg, train_cfg, o); },
        out / "stage1");
    const Checkpoint stage1 = s1.final;

    train_cfg.stage = 2;
    train_cfg.steps = stage2_steps;
    const TrainResult full = run_stage(
        "stage 2 (multi-level)", [&](const TrainOptions& o) { return train_stage2(corpus, stage1, model_cfg, train_cfg, o); },
        out / "stage2_full");
    ModelConfig ablation_cfg = model_cfg;
    ablation_cfg.single_level_stats = true;
    const TrainResult ablation = run_stage(
        "stage 2 (deepest level only)",
        [&](const TrainOptions& o) { return train_stage2(corpus, stage1, ablation_cfg, train_cfg, o); },
        out / "stage2_ablation");
    const auto model = load_unet(full.final);

    criterion_shapes(*model, corpus, full.alignment);

    const double r1 = s1.val.back().l1_mel / s1.val.front().l1_mel;
    const double r2 = full.val.back().l1_mel / full.val.front().l1_mel;
    verdict(5, "convergence (desk config, default corpus)",
            r1 < 0.2 && r2 < 0.2 && stage1_steps <= 5000 && stage2_steps <= 5000,
            "stage-1 val l1 ratio " + fmt("%.3f", r1) + " after " + std::to_string(stage1_steps) +
                " steps, stage-2 " + fmt("%.3f", r2) + " after " + std::to_string(stage2_steps) + " (< 0.2)");

    const CurveComparison cmp = eval_reconstruction_curves(full.val, ablation.val);
    write_curve_comparison(cmp, out / "eval");
    verdict(6, "multi-level stats vs deepest-level ablation", cmp.ratio < 0.95,
            "final-window val l1 " + fmt("%.4f", cmp.final_full) + " vs " + fmt("%.4f", cmp.final_ablation) +
                ", ratio " + fmt("%.4f", cmp.ratio) + " (< 0.95)");

    const McdReport mcd_report = eval_mcd_transfer(*model, corpus);
    write_mcd_report(mcd_report, out / "eval");
    UnetTts null_model(model_cfg, train_cfg.seed);
    null_model.trained = true;
    const McdReport null_report = eval_mcd_transfer(null_model, corpus);
    info("matched MCD " + fmt("%.2f", mcd_report.mean_matched) + ", mismatched " +
         fmt("%.2f", mcd_report.mean_mismatched) + ", same-speaker corpus baseline " +
         fmt("%.2f", same_speaker_mcd_baseline(corpus)));
    std::string others;
    for (int k = 1; k <= null_seeds; ++k) {
      UnetTts extra(model_cfg, train_cfg.seed + 1000 + static_cast<std::uint64_t>(k));
      extra.trained = true;
      others += (k > 1 ? ", " : "") + fmt("%.2f", eval_mcd_transfer(extra, corpus).win_rate);
    }
    if (null_seeds > 0) info("other random-init win rates (not scored): " + others);
    const bool null_ok = null_report.win_rate >= 0.4 && null_report.win_rate <= 0.6;
    verdict(7, "voice transfer by MCD",
            mcd_report.trials.size() >= 100 && mcd_report.win_rate >= 0.7 && null_ok,
            "win rate " + fmt("%.3f", mcd_report.win_rate) + " over " + std::to_string(mcd_report.trials.size()) +
                " trials (>= 0.70), null model " + fmt("%.3f", null_report.win_rate) + " (in [0.40, 0.60])");

    const DistributionReport dist = eval_distributions(*model, corpus);
    write_distribution_report(dist, out / "eval");
    for (const auto& s : dist.styles)
      info(s.name + ": duration " + fmt("%.2f", s.median_duration) + " (ref " + fmt("%.2f", s.ref_median_duration) +
           "), energy " + fmt("%.3f", s.median_energy) + " (ref " + fmt("%.3f", s.ref_median_energy) + "), f0 " +
           fmt("%.1f", s.median_f0) + " (ref " + fmt("%.1f", s.ref_median_f0) + ")");
    const double dur_ratio = dist.style(kStyleSad).median_duration / dist.style(kStyleNeutral).median_duration;
    const double e_angry = dist.style(kStyleAngry).median_energy, e_neutral = dist.style(kStyleNeutral).median_energy;
    verdict(8, "style transfer distributions", dur_ratio >= 1.2 && dur_ratio <= 1.8 && e_angry > e_neutral,
            "sad/neutral median duration " + fmt("%.3f", dur_ratio) + " (in [1.2, 1.8]), angry energy " +
                fmt("%.3f", e_angry) + " vs neutral " + fmt("%.3f", e_neutral));

    const EmbeddingReport emb = embed_levels(*model, corpus.select("clone"));
    write_embedding_report(emb, out / "eval");
    std::string per_level;
    for (const auto& l : emb.levels) per_level += (l.level > 1 ? ", " : "") + fmt("%.3f", l.separability);
    info("separability by level (1..L): " + per_level);
    const double sep1 = emb.levels.front().separability, sepL = emb.levels.back().separability;
    verdict(9, "speaker separability by level", sep1 > sepL,
            "level 1 " + fmt("%.3f", sep1) + " vs level " + std::to_string(emb.levels.back().level) + " " +
                fmt("%.3f", sepL));

    criterion_infrastructure(corpus, stage1, out, corpus_identical, corpus_files);
  } catch (const std::exception& e) {
    std::cout << "FAIL  acceptance run aborted: " << e.what() << std::endl;
    ++g_failures;
  }

  std::ofstream(out / "acceptance_summary.json") << g_summary.dump(2) << '\n';
  std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " criteria failed") << " in "
            << fmt("%.0f", seconds_since(t0)) << " s" << std::endl;
  return g_failures == 0 ? 0 : 1;
}

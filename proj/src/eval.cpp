// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "utts/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <tuple>

#include <Eigen/Eigenvalues>

#include "utts/error.hpp"

namespace utts {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) { open_out(path) << j.dump(2) << '\n'; }

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

Pca2d pca_2d(const Matrix& x) {
  if (x.rows() < 3) throw InputError("pca_2d: need at least 3 points, got " + std::to_string(x.rows()));
  if (x.cols() < 1) throw InputError("pca_2d: points have no dimensions");
  Pca2d r;
  r.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - r.mean.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  const double total = cov.trace();
  r.points = Matrix::Zero(x.rows(), 2);
  r.components = Matrix::Zero(x.cols(), 2);
  if (!(total > 1e-300)) {
    r.degenerate = true;
    return r;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("pca_2d: eigen decomposition failed");
  const nn::Index d = x.cols();
  for (int k = 0; k < 2; ++k) {
    if (d - 1 - k < 0) break;  // one-dimensional input: second component stays zero
    Vector v = solver.eigenvectors().col(d - 1 - k);
    nn::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    r.components.col(k) = v;
    r.eigenvalues[k] = std::max(0.0, solver.eigenvalues()(d - 1 - k));
    r.explained[k] = std::clamp(r.eigenvalues[k] / total, 0.0, 1.0);
  }
  r.points = centered * r.components;
  return r;
}

double separability_ratio(const Matrix& x, const std::vector<int>& labels) {
  if (static_cast<nn::Index>(labels.size()) != x.rows()) throw InputError("separability: one label per row required");
  std::map<int, std::vector<nn::Index>> groups;
  for (nn::Index i = 0; i < x.rows(); ++i) groups[labels[static_cast<std::size_t>(i)]].push_back(i);
  if (groups.size() < 2) throw InputError("separability: need at least two labels");
  const Vector mean = x.colwise().mean().transpose();
  double between = 0.0, within = 0.0;
  for (const auto& [label, rows] : groups) {
    Vector c = Vector::Zero(x.cols());
    for (nn::Index i : rows) c += x.row(i).transpose();
    c /= static_cast<double>(rows.size());
    between += static_cast<double>(rows.size()) * (c - mean).squaredNorm();
    for (nn::Index i : rows) within += (x.row(i).transpose() - c).squaredNorm();
  }
  between /= static_cast<double>(x.rows());
  within /= static_cast<double>(x.rows());
  if (within <= 0.0) return between > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return between / within;
}

// ---------------------------------------------------------------------------

EmbeddingReport embed_levels(const UnetTts& model, const Batch& utterances) {
  if (utterances.size() < 3) throw InputError("embed_levels: need at least 3 utterances");
  const int L = model.config().unet_levels;
  const int H = model.config().hidden;
  EmbeddingReport report;
  report.levels.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    report.levels[l].level = l + 1;
    report.levels[l].vectors.resize(static_cast<nn::Index>(utterances.size()), 2 * H);
  }
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const Utterance& u = *utterances[i];
    report.speaker_ids.push_back(u.speaker_id);
    report.style_ids.push_back(u.style_id);
    report.utterance_ids.push_back(u.id);
    const auto [stats, content_pred] = style_encode(model, u.mel);
    for (int l = 0; l < L; ++l) {
      auto row = report.levels[l].vectors.row(static_cast<nn::Index>(i));
      row.head(H) = stats.levels[l].mean.transpose();
      row.tail(H) = stats.levels[l].std.transpose();
    }
  }
  for (auto& level : report.levels) {
    level.pca = pca_2d(level.vectors);
    level.separability = separability_ratio(level.vectors, report.speaker_ids);
  }
  return report;
}

void write_embedding_report(const EmbeddingReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto csv = open_out(dir / "pca_points.csv");
  csv << "level,speaker_id,style_id,pc1,pc2\n";
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& level : report.levels) {
    for (nn::Index i = 0; i < level.pca.points.rows(); ++i)
      csv << level.level << ',' << report.speaker_ids[static_cast<std::size_t>(i)] << ','
          << report.style_ids[static_cast<std::size_t>(i)] << ',' << num(level.pca.points(i, 0)) << ','
          << num(level.pca.points(i, 1)) << '\n';
    summary.push_back({{"level", level.level},
                       {"dimension", level.vectors.cols()},
                       {"points", level.vectors.rows()},
                       {"explained_variance", {level.pca.explained[0], level.pca.explained[1]}},
                       {"degenerate", level.pca.degenerate},
                       {"separability", level.separability}});
  }
  write_json({{"levels", summary}}, dir / "embedding_summary.json");
}

// ---------------------------------------------------------------------------

namespace {

using CellKey = std::tuple<int, int, int>;  // speaker, text, style

std::map<CellKey, const Utterance*> index_clone(const Corpus& corpus) {
  std::map<CellKey, const Utterance*> out;
  for (const Utterance* u : corpus.select("clone")) out[{u->speaker_id, u->text_id, u->style_id}] = u;
  return out;
}

struct Trial {
  const Utterance* target = nullptr;
  const Utterance* ref = nullptr;
  int mismatched_speaker = 0;
};

std::vector<Trial> plan_trials(const Corpus& corpus, const McdOptions& options) {
  const std::vector<int> clone = corpus.speakers_in("clone");
  const int n_styles = static_cast<int>(corpus.renderer().styles().size());
  const int per_speaker = corpus.spec.utterances_per_speaker;
  if (clone.size() < 2) throw ConfigError("transfer evaluation needs at least 2 clone speakers");
  if (options.texts_per_cell < 1 || options.texts_per_cell >= per_speaker)
    throw ConfigError("texts_per_cell must lie in [1, " + std::to_string(per_speaker - 1) + "]");
  const auto cells = index_clone(corpus);
  auto find = [&](int s, int t, int e) {
    auto it = cells.find({s, t, e});
    if (it == cells.end())
      throw ConfigError("clone split lacks speaker " + std::to_string(s) + " text " + std::to_string(t) + " style " +
                        std::to_string(e));
    return it->second;
  };
  const int others = static_cast<int>(clone.size()) - 1;
  std::vector<Trial> trials;
  for (std::size_t si = 0; si < clone.size(); ++si)
    for (int e = 0; e < n_styles; ++e)
      for (int t = 0; t < options.texts_per_cell; ++t) {
        Trial tr;
        tr.target = find(clone[si], t, e);
        tr.ref = find(clone[si], (t + 1) % per_speaker, e);
        // Cycle through the other clone speakers.
        const int offset = 1 + (e * options.texts_per_cell + t) % others;
        tr.mismatched_speaker = clone[(si + static_cast<std::size_t>(offset)) % clone.size()];
        trials.push_back(tr);
      }
  return trials;
}

Synthesis synthesize_for(const UnetTts& model, const Trial& tr) {
  PhonemeSequence phones;
  phones.ids = tr.target->phones.ids;
  return synthesize(model, phones, tr.ref->mel, tr.ref->phones.durations);
}

}  // namespace

McdReport eval_mcd_transfer(const UnetTts& model, const Corpus& corpus, const McdOptions& options) {
  const auto trials = plan_trials(corpus, options);
  const CorpusRenderer& r = corpus.renderer();
  McdReport report;
  long wins = 0;
  for (const Trial& tr : trials) {
    const Synthesis syn = synthesize_for(model, tr);
    const Utterance other = r.make_utterance(tr.target->phones.ids, tr.mismatched_speaker, tr.target->style_id,
                                             tr.target->text_id);
    McdTrial row;
    row.speaker_id = tr.target->speaker_id;
    row.style_id = tr.target->style_id;
    row.text_id = tr.target->text_id;
    row.ref_text_id = tr.ref->text_id;
    row.mismatched_speaker_id = tr.mismatched_speaker;
    row.matched = mcd_time_averaged(syn.mel, tr.target->mel, options.cepstra);
    row.mismatched = mcd_time_averaged(syn.mel, other.mel, options.cepstra);
    if (row.matched < row.mismatched) ++wins;
    report.mean_matched += row.matched;
    report.mean_mismatched += row.mismatched;
    report.trials.push_back(row);
  }
  const double n = static_cast<double>(report.trials.size());
  report.mean_matched /= n;
  report.mean_mismatched /= n;
  report.win_rate = static_cast<double>(wins) / n;
  return report;
}

void write_mcd_report(const McdReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto csv = open_out(dir / "mcd_trials.csv");
  csv << "speaker_id,style_id,text_id,ref_text_id,mismatched_speaker_id,matched_mcd,mismatched_mcd\n";
  for (const auto& t : report.trials)
    csv << t.speaker_id << ',' << t.style_id << ',' << t.text_id << ',' << t.ref_text_id << ','
        << t.mismatched_speaker_id << ',' << num(t.matched) << ',' << num(t.mismatched) << '\n';
  write_json({{"trials", report.trials.size()},
              {"mean_matched_mcd", report.mean_matched},
              {"mean_mismatched_mcd", report.mean_mismatched},
              {"matched_win_rate", report.win_rate}},
             dir / "mcd_summary.json");
}

double same_speaker_mcd_baseline(const Corpus& corpus, int cepstra) {
  const Batch clone = corpus.select("clone");
  std::vector<CepstralVector> cv;
  for (const Utterance* u : clone) cv.push_back(average_cepstrum(u->mel, cepstra));
  double sum = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < clone.size(); ++i)
    for (std::size_t j = i + 1; j < clone.size(); ++j)
      if (clone[i]->speaker_id == clone[j]->speaker_id) {
        sum += mcd(cv[i], cv[j]);
        ++n;
      }
  if (n == 0) throw InputError("no same-speaker pairs in the clone split");
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------

double median_of(std::vector<double> values) {
  if (values.size() < kMinMedianSamples)
    throw ConfigError("median needs at least " + std::to_string(kMinMedianSamples) + " samples, got " +
                      std::to_string(values.size()));
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double hi = values[mid];
  if (values.size() % 2 == 1) return hi;
  const double lo = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

const StyleDistribution& DistributionReport::style(int style_id) const {
  for (const auto& s : styles)
    if (s.style_id == style_id) return s;
  throw InputError("distribution report has no style " + std::to_string(style_id));
}

namespace {

// Per-phoneme mean of voiced F0 values; phonemes without voiced frames are skipped.
void phoneme_f0(const F0Track& f0, const Durations& durations, std::vector<double>& out) {
  std::size_t t = 0;
  for (int d : durations) {
    double sum = 0.0;
    int n = 0;
    for (int r = 0; r < d; ++r, ++t)
      if (t < f0.values.size() && f0.values[t] > 0.0) {
        sum += f0.values[t];
        ++n;
      }
    if (n > 0) out.push_back(sum / n);
  }
}

void append_phoneme_stats(const MelSpectrogram& mel, const Durations& durations, const F0Track& f0,
                          std::vector<double>& dur, std::vector<double>& energy, std::vector<double>& pitch) {
  for (int d : durations) dur.push_back(d);
  for (double e : phoneme_energy(mel, durations)) energy.push_back(e);
  phoneme_f0(f0, durations, pitch);
}

}  // namespace

DistributionReport eval_distributions(const UnetTts& model, const Corpus& corpus, const McdOptions& options) {
  const auto trials = plan_trials(corpus, options);
  const CorpusRenderer& r = corpus.renderer();
  const auto grid = f0_grid();
  DistributionReport report;
  struct Truth {
    std::vector<double> dur, energy, f0;
  };
  std::vector<Truth> truth(r.styles().size());
  for (const auto& s : r.styles()) {
    StyleDistribution d;
    d.style_id = s.style_id;
    d.name = s.name;
    report.styles.push_back(d);
  }
  for (const Trial& tr : trials) {
    const int e = tr.target->style_id;
    StyleDistribution& d = report.styles[static_cast<std::size_t>(e)];
    const Synthesis syn = synthesize_for(model, tr);
    const F0Track f0 = estimate_f0_mel(syn.mel, grid, r.harmonics());
    append_phoneme_stats(syn.mel, syn.durations, f0, d.durations, d.energies, d.f0);
    ++d.trials;
    Truth& g = truth[static_cast<std::size_t>(e)];
    append_phoneme_stats(tr.target->mel, tr.target->phones.durations, tr.target->f0_truth, g.dur, g.energy, g.f0);
  }
  for (std::size_t e = 0; e < report.styles.size(); ++e) {
    StyleDistribution& d = report.styles[e];
    d.median_duration = median_of(d.durations);
    d.median_energy = median_of(d.energies);
    d.median_f0 = d.f0.size() >= kMinMedianSamples ? median_of(d.f0) : std::nan("");
    d.ref_median_duration = median_of(truth[e].dur);
    d.ref_median_energy = median_of(truth[e].energy);
    d.ref_median_f0 = median_of(truth[e].f0);
  }
  return report;
}

void write_distribution_report(const DistributionReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto csv = open_out(dir / "distribution_samples.csv");
  csv << "style_id,quantity,value\n";
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& d : report.styles) {
    for (double v : d.durations) csv << d.style_id << ",duration," << num(v) << '\n';
    for (double v : d.energies) csv << d.style_id << ",energy," << num(v) << '\n';
    for (double v : d.f0) csv << d.style_id << ",f0," << num(v) << '\n';
    auto maybe = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    summary.push_back({{"style_id", d.style_id},
                       {"name", d.name},
                       {"trials", d.trials},
                       {"samples", {{"duration", d.durations.size()}, {"energy", d.energies.size()}, {"f0", d.f0.size()}}},
                       {"median_duration", d.median_duration},
                       {"median_energy", d.median_energy},
                       {"median_f0", maybe(d.median_f0)},
                       {"ref_median_duration", d.ref_median_duration},
                       {"ref_median_energy", d.ref_median_energy},
                       {"ref_median_f0", d.ref_median_f0}});
  }
  write_json({{"styles", summary}}, dir / "distribution_summary.json");
}

// ---------------------------------------------------------------------------

CurveComparison eval_reconstruction_curves(const std::vector<LossReport>& full,
                                           const std::vector<LossReport>& ablation, int window) {
  if (full.empty()) throw InputError("reconstruction curves: no validation points");
  if (window < 1) throw InputError("reconstruction curves: window must be >= 1");
  if (full.size() != ablation.size())
    throw InputError("reconstruction curves: " + std::to_string(full.size()) + " vs " +
                     std::to_string(ablation.size()) + " validation points");
  CurveComparison c;
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (full[i].step != ablation[i].step)
      throw InputError("reconstruction curves: step grids differ at row " + std::to_string(i) + " (" +
                       std::to_string(full[i].step) + " vs " + std::to_string(ablation[i].step) + ")");
    c.steps.push_back(full[i].step);
    c.full.push_back(full[i].l1_mel);
    c.ablation.push_back(ablation[i].l1_mel);
  }
  c.window = std::min<int>(window, static_cast<int>(full.size()));
  const auto tail = [&](const std::vector<double>& v) {
    return std::accumulate(v.end() - c.window, v.end(), 0.0) / c.window;
  };
  c.final_full = tail(c.full);
  c.final_ablation = tail(c.ablation);
  c.ratio = c.final_full == c.final_ablation ? 1.0 : c.final_full / c.final_ablation;
  return c;
}

void write_curve_comparison(const CurveComparison& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto csv = open_out(dir / "reconstruction_curves.csv");
  csv << "step,full_l1_mel,ablation_l1_mel\n";
  for (std::size_t i = 0; i < c.steps.size(); ++i)
    csv << c.steps[i] << ',' << num(c.full[i]) << ',' << num(c.ablation[i]) << '\n';
  write_json({{"points", c.steps.size()},
              {"window", c.window},
              {"final_full_l1_mel", c.final_full},
              {"final_ablation_l1_mel", c.final_ablation},
              {"ratio", c.ratio}},
             dir / "reconstruction_summary.json");
}

}  // namespace utts

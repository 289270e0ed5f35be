// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Objective analyses: reconstruction-curve comparison, per-level embedding
// PCA with a speaker-separability ratio, and MCD / duration / energy / F0
// transfer on clone speakers.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "utts/corpus.hpp"
#include "utts/model.hpp"
#include "utts/training.hpp"

namespace utts {

struct Pca2d {
  Matrix points;            // N x 2
  Matrix components;        // D x 2, orthonormal columns
  Vector mean;              // D
  double eigenvalues[2] = {0.0, 0.0};
  double explained[2] = {0.0, 0.0};  // fraction of total variance
  bool degenerate = false;  // zero total variance
};

// Rows of `x` are observations. Requires N >= 3.
Pca2d pca_2d(const Matrix& x);

// Between-label centroid variance (count weighted) over mean within-label
// variance, both in the full dimension.
double separability_ratio(const Matrix& x, const std::vector<int>& labels);

// ---------------------------------------------------------------------------

struct LevelEmbedding {
  int level = 0;  // 1 = shallowest
  Matrix vectors;  // N x 2*hidden, (mean | std)
  Pca2d pca;
  double separability = 0.0;
};

struct EmbeddingReport {
  std::vector<int> speaker_ids;
  std::vector<int> style_ids;
  std::vector<std::string> utterance_ids;
  std::vector<LevelEmbedding> levels;
};

EmbeddingReport embed_levels(const UnetTts& model, const Batch& utterances);
void write_embedding_report(const EmbeddingReport& report, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------

struct McdOptions {
  int texts_per_cell = 5;  // per (clone speaker, style)
  int cepstra = 13;
};

struct McdTrial {
  int speaker_id = 0;
  int style_id = 0;
  int text_id = 0;
  int ref_text_id = 0;
  int mismatched_speaker_id = 0;
  double matched = 0.0;
  double mismatched = 0.0;
};

struct McdReport {
  std::vector<McdTrial> trials;
  double mean_matched = 0.0;
  double mean_mismatched = 0.0;
  double win_rate = 0.0;  // fraction with matched < mismatched
};

// Throws ConfigError when the clone split cannot supply the trials.
McdReport eval_mcd_transfer(const UnetTts& model, const Corpus& corpus, const McdOptions& options = {});
void write_mcd_report(const McdReport& report, const std::filesystem::path& dir);

// Mean MCD over same-speaker pairs of clone utterances (time-averaged cepstra).
double same_speaker_mcd_baseline(const Corpus& corpus, int cepstra = 13);

// ---------------------------------------------------------------------------

inline constexpr std::size_t kMinMedianSamples = 30;

struct StyleDistribution {
  int style_id = 0;
  std::string name;
  int trials = 0;
  std::vector<double> durations;  // every synthesized phoneme
  std::vector<double> energies;   // every synthesized phoneme
  std::vector<double> f0;         // phonemes with voiced frames
  double median_duration = 0.0;
  double median_energy = 0.0;
  double median_f0 = 0.0;
  double ref_median_duration = 0.0;
  double ref_median_energy = 0.0;
  double ref_median_f0 = 0.0;
};

struct DistributionReport {
  std::vector<StyleDistribution> styles;
  const StyleDistribution& style(int style_id) const;
};

// Throws ConfigError when fewer than kMinMedianSamples back a median.
double median_of(std::vector<double> values);

DistributionReport eval_distributions(const UnetTts& model, const Corpus& corpus, const McdOptions& options = {});
void write_distribution_report(const DistributionReport& report, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------

struct CurveComparison {
  std::vector<long> steps;
  std::vector<double> full, ablation;  // val l1_mel per logged step
  int window = 0;
  double final_full = 0.0;
  double final_ablation = 0.0;
  double ratio = 0.0;  // final_full / final_ablation
};

// Final window = the last `window` logged validation points.
CurveComparison eval_reconstruction_curves(const std::vector<LossReport>& full,
                                           const std::vector<LossReport>& ablation, int window = 5);
void write_curve_comparison(const CurveComparison& c, const std::filesystem::path& dir);

}  // namespace utts

// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Two-stage optimisation. Stage 1 fits the pre-training model (content
// encoder, duration predictor, speaker-conditioned decoder); stage 2 freezes
// the content encoder and duration predictor and fits the style encoder and
// mel decoder on reconstruction plus content-matching losses.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "utts/container.hpp"
#include "utts/corpus.hpp"
#include "utts/model.hpp"

namespace utts {

struct TrainConfig {
  int stage = 2;
  int steps = 3000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  double w_mel = 1.0;
  double w_content = 1.0;
  double w_duration = 1.0;
  int checkpoint_every = 500;
  int val_every = 100;
  int val_utterances = 40;  // evenly spaced over the val split; 0 = all

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  bool operator==(const TrainConfig&) const = default;
};

struct LossReport {
  long step = 0;
  double l1_mel = 0.0;
  double l2_content = 0.0;    // stage 2
  double mse_duration = 0.0;  // stage 1
  double total = 0.0;

  bool operator==(const LossReport&) const = default;
};

inline constexpr const char* kLossCsvHeader = "step,l1_mel,l2_content,mse_duration,total";
std::string to_csv_row(const LossReport& r);
void write_loss_csv(const std::vector<LossReport>& rows, const std::filesystem::path& path);
std::vector<LossReport> read_loss_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Losses. Sums are pooled over every real frame in a batch before dividing.

struct LossWeights {
  double mel = 1.0;
  double content = 1.0;
  double duration = 1.0;
};

struct Stage2Grad {
  Matrix dmel_pred;
  Matrix dcontent_pred;
};

// Matrices are channels x frames. Frames with mask 0 are ignored.
LossReport compute_stage2_loss(const Matrix& mel_true, const Matrix& mel_pred, const Matrix& content,
                               const Matrix& content_pred, const nn::FrameMask* mask = nullptr,
                               const LossWeights& weights = {}, Stage2Grad* grad = nullptr);

using Batch = std::vector<const Utterance*>;

// Batch loss of the pre-training model. speaker_rows[i] < 0 decodes with the
// mean table embedding (no gradients in that case). With backward set,
// gradients accumulate into the model's parameters.
LossReport stage1_batch_loss(PretrainModel& model, const Batch& batch, const std::vector<int>& speaker_rows,
                             const LossWeights& weights, bool backward);

struct AlignmentTally {
  long checks = 0;
  long violations = 0;
};

// Stage-2 batch loss with ref_mel = target. Content targets are detached.
// duration_term adds the duration MSE and its gradient (unfrozen predictor).
LossReport stage2_batch_loss(UnetTts& model, const Batch& batch, const LossWeights& weights, bool backward,
                             AlignmentTally* tally = nullptr, bool duration_term = false);

// ---------------------------------------------------------------------------

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<nn::Param*> params, const TrainConfig& cfg);

  void step();
  long t() const { return t_; }

  void save(Container& c) const;
  void load(const Container& c);

 private:
  std::vector<nn::Param*> params_;
  std::vector<Matrix> m_, v_;
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

// ---------------------------------------------------------------------------

inline constexpr int kCheckpointFormat = 1;

struct Checkpoint {
  int stage = 0;
  ModelConfig model;
  TrainConfig train;
  long step = 0;
  std::uint64_t rng_key = 0;
  std::uint64_t rng_counter = 0;
  double best_val = 0.0;
  long best_step = -1;
  bool best = false;
  Container data;  // param/*, adam_m/*, adam_v/* arrays

  Matrix param(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Throws StateError when the stored ModelConfig differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

void store_params(Container& c, const nn::ParamSet& params);
// Copies every param/<name> array that exists in `params`; `prefixes` limits
// the copy (empty = all). Throws StateError on a missing array or shape.
void restore_params(const Container& c, nn::ParamSet& params, const std::vector<std::string>& prefixes = {});

std::unique_ptr<PretrainModel> load_pretrain_model(const Checkpoint& ckpt);
// Requires a stage-2 checkpoint; the model comes back marked trained.
std::unique_ptr<UnetTts> load_unet(const Checkpoint& ckpt);

// ---------------------------------------------------------------------------

struct TrainOptions {
  std::filesystem::path out_dir;         // empty: nothing written
  std::optional<Checkpoint> resume;      // continue a run of the same stage
  std::function<void(const LossReport&)> on_val;
  // Stage 2 only: keep updating the duration predictor.
  bool unfreeze_duration = false;
};

struct TrainResult {
  std::vector<LossReport> train;
  std::vector<LossReport> val;
  Checkpoint final;
  AlignmentTally alignment;
  double seconds = 0.0;
};

// Deterministic batch for (seed, step).
std::vector<std::size_t> sample_batch(std::uint64_t seed, long step, std::size_t pool, int batch_size);

TrainResult train_stage1(const Corpus& corpus, const ModelConfig& model_cfg, const TrainConfig& cfg,
                         const TrainOptions& options = {});
// Throws StateError when `stage1` is not a compatible stage-1 checkpoint.
TrainResult train_stage2(const Corpus& corpus, const Checkpoint& stage1, const ModelConfig& model_cfg,
                         const TrainConfig& cfg, const TrainOptions& options = {});

// Pearson correlation between predicted and true z-scored durations.
double duration_correlation(const ContentEncoder& content, const DurationPredictor& duration, const Batch& batch);

}  // namespace utts

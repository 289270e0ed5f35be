// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Acoustic model: content encoder, duration predictor, and the statistics-skip
// U-net formed by the style encoder and mel decoder, plus the speaker-table
// pre-training model used to obtain the content encoder.
//
// Hidden sequences are stored hidden x frames; mel spectrograms cross the
// model boundary as MelSpectrogram (frames x n_mels).

#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "utts/dsp.hpp"
#include "utts/nn.hpp"

namespace utts {

using nn::Matrix;
using nn::Vector;

struct ModelConfig {
  int n_phonemes = 17;
  int hidden = 256;
  int n_mels = 80;
  int kernel_content = 3;
  int kernel_unet = 9;
  int unet_levels = 4;
  int content_blocks = 4;
  int dp_conv_layers = 2;
  int n_speakers = 12;  // pre-training lookup table size
  // Ablation: decoder consumes only the deepest stats pair, others get (0, 1).
  bool single_level_stats = false;

  // 256-d hiddens, kernels 3/9.
  static ModelConfig full();
  // Same topology at hidden 64 so that training finishes in minutes.
  static ModelConfig desk();

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct PhonemeSequence {
  std::vector<int> ids;
  Durations durations;  // empty when unknown
};

// L (mean, std) pairs, index 0 = shallowest level (nearest the mel input).
struct StyleStats {
  std::vector<nn::ChannelStats> levels;
};

Matrix to_channels(const MelSpectrogram& mel);  // n_mels x frames
MelSpectrogram from_channels(const Matrix& x, const FramingConfig& framing = {});

// Repeats column i durations[i] times.
Matrix length_regulate(const Matrix& phoneme_hiddens, const Durations& durations);
Matrix length_regulate_backward(const Matrix& dframes, const Durations& durations);

// d_i = max(1, round_half_away(normalized_i * std + mean)).
Durations adjust_durations(const Vector& normalized, const DurationStats& ref);
// Per-utterance z-scores; a zero std falls back to 1.
Vector normalize_durations(const Durations& durations);

// ---------------------------------------------------------------------------

class ContentEncoder {
 public:
  ContentEncoder() = default;
  ContentEncoder(nn::ParamSet& params, const ModelConfig& cfg, Rng& rng);

  struct Cache {
    std::vector<int> ids;
    std::vector<nn::ResCnnBlock::Cache> blocks;
  };

  Matrix forward(const std::vector<int>& ids, Cache* cache = nullptr) const;  // hidden x P
  void backward(const Matrix& dy, const Cache& cache) const;

  nn::Embedding embedding;
  std::vector<nn::ResCnnBlock> blocks;
};

// Self-attention (residual), ReLU conv stack, scalar head.
class DurationPredictor {
 public:
  DurationPredictor() = default;
  DurationPredictor(nn::ParamSet& params, const ModelConfig& cfg, Rng& rng);

  struct Cache {
    nn::SelfAttention::Cache attn;
    std::vector<nn::Conv1d::Cache> convs;
    std::vector<Matrix> pre;
    nn::Conv1d::Cache head;
  };

  Vector forward(const Matrix& phoneme_hiddens, Cache* cache = nullptr) const;
  void backward(const Vector& dy, const Cache& cache) const;

  nn::SelfAttention attention;
  std::vector<nn::Conv1d> convs;
  nn::Conv1d head;
};

class StyleEncoder {
 public:
  StyleEncoder() = default;
  StyleEncoder(nn::ParamSet& params, const ModelConfig& cfg, Rng& rng);

  struct Output {
    StyleStats stats;
    Matrix content_pred;  // hidden x T
  };
  struct Cache {
    nn::Conv1d::Cache input;
    std::vector<nn::ResCnnBlock::Cache> blocks;
    std::vector<nn::NormCache> norms;
  };

  Output forward(const Matrix& mel, Cache* cache = nullptr) const;  // mel: n_mels x T
  // Returns nothing: the mel input is data.
  void backward(const std::vector<nn::ChannelStats>& dstats, const Matrix& dcontent_pred, const Cache& cache) const;

  nn::Conv1d input;
  std::vector<nn::ResCnnBlock> blocks;
};

// Wiring record for inspection: which encoder level fed each decoder level
// (-1 = neutral (0, 1) stats) and the hidden right after each AdaIN.
struct DecoderTrace {
  std::vector<int> stats_index;
  std::vector<Matrix> after_adain;
};

class MelDecoder {
 public:
  MelDecoder() = default;
  MelDecoder(nn::ParamSet& params, const ModelConfig& cfg, Rng& rng);

  struct Cache {
    std::vector<nn::ChannelStats> used;
    std::vector<int> source;
    std::vector<nn::AdainCache> adain;
    std::vector<nn::ResCnnBlock::Cache> blocks;
    nn::Conv1d::Cache out;
  };
  struct Grad {
    Matrix dcontent;
    std::vector<nn::ChannelStats> dstats;  // per encoder level, zero when unused
  };

  // Encoder level used by decoder level j (U-net mirror), or -1.
  int source_level(int j) const;

  Matrix forward(const Matrix& content, const StyleStats& stats, Cache* cache = nullptr,
                 DecoderTrace* trace = nullptr) const;  // n_mels x T
  Grad backward(const Matrix& dmel, const Cache& cache) const;

  int levels = 0;
  bool single_level_stats = false;
  std::vector<nn::ResCnnBlock> blocks;
  nn::Conv1d out;
};

// Decoder of the pre-training model: each level applies
// IN(h) * sigma(s) + mu(s) with (mu, sigma) linear in a speaker embedding.
class ConditionalDecoder {
 public:
  ConditionalDecoder() = default;
  ConditionalDecoder(nn::ParamSet& params, const ModelConfig& cfg, Rng& rng);

  struct Cache {
    int speaker = 0;
    std::vector<nn::Conv1d::Cache> mu_cache, sigma_cache;
    std::vector<nn::ChannelStats> cond;
    std::vector<nn::AdainCache> norm;
    std::vector<nn::ResCnnBlock::Cache> blocks;
    nn::Conv1d::Cache out;
  };

  nn::ChannelStats condition(int level, int speaker) const;
  Matrix forward(const Matrix& content, int speaker, Cache* cache = nullptr) const;
  // Inference from an arbitrary embedding (e.g. the table mean).
  Matrix forward(const Matrix& content, const Vector& embedding) const;
  Matrix backward(const Matrix& dmel, const Cache& cache) const;  // returns dcontent

  nn::Param* speakers = nullptr;  // hidden x n_speakers
  std::vector<nn::Conv1d> to_mu, to_sigma;
  std::vector<nn::ResCnnBlock> blocks;
  nn::Conv1d out;
};

// ---------------------------------------------------------------------------

// Full one-shot model: content encoder + duration predictor + U-net.
class UnetTts {
 public:
  explicit UnetTts(const ModelConfig& cfg, std::uint64_t seed = 1);
  UnetTts(const UnetTts&) = delete;
  UnetTts& operator=(const UnetTts&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  bool trained = false;

  ContentEncoder content;
  DurationPredictor duration;
  StyleEncoder style;
  MelDecoder decoder;

 private:
  ModelConfig cfg_;
  nn::ParamSet params_;
};

class PretrainModel {
 public:
  explicit PretrainModel(const ModelConfig& cfg, std::uint64_t seed = 1);
  PretrainModel(const PretrainModel&) = delete;
  PretrainModel& operator=(const PretrainModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  ContentEncoder content;
  DurationPredictor duration;
  ConditionalDecoder decoder;

 private:
  ModelConfig cfg_;
  nn::ParamSet params_;
};

// ---------------------------------------------------------------------------
// Pipeline operations.

Matrix content_encode(const UnetTts& model, const PhonemeSequence& phones);
Vector predict_durations_normalized(const UnetTts& model, const Matrix& phoneme_hiddens);
std::pair<StyleStats, Matrix> style_encode(const UnetTts& model, const MelSpectrogram& ref_mel);
MelSpectrogram mel_decode(const UnetTts& model, const Matrix& content, const StyleStats& stats,
                          DecoderTrace* trace = nullptr);

struct Synthesis {
  MelSpectrogram mel;
  Durations durations;
};

// Throws StateError unless the model holds trained parameters.
Synthesis synthesize(const UnetTts& model, const PhonemeSequence& phones, const MelSpectrogram& ref_mel,
                     const Durations& ref_durations);

MelSpectrogram pretrain_forward(const PretrainModel& model, const PhonemeSequence& phones, int speaker);

}  // namespace utts

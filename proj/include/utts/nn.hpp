// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Differentiable kernels. Every tensor is channels x time (one utterance);
// a forward call may fill a cache that the matching backward call consumes.
// Backward calls accumulate into Param::grad and return the input gradient.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "utts/rng.hpp"

namespace utts::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// 1 marks a real frame, 0 a padded one.
using FrameMask = std::vector<std::uint8_t>;

inline constexpr double kNormEpsilon = 1e-5;

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
};

// Owns parameters with stable addresses, in insertion order.
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet&) = delete;
  ParamSet& operator=(const ParamSet&) = delete;
  ParamSet(ParamSet&&) = default;
  ParamSet& operator=(ParamSet&&) = default;

  Param& add(std::string name, Index rows, Index cols);
  Param& get(std::string_view name);
  const Param& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<Param*> all();
  std::vector<const Param*> all() const;
  std::vector<Param*> with_prefix(std::string_view prefix);
  std::size_t size() const { return params_.size(); }
  Index scalar_count() const;

  void zero_grad();

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::map<std::string, Param*, std::less<>> index_;
};

// Uniform(-bound, bound) with bound = gain * sqrt(3 / fan_in).
void init_fan_in(Param& p, Index fan_in, double gain, Rng& rng);

struct ChannelStats {
  Vector mean;
  Vector std;
};

// ---------------------------------------------------------------------------
// conv1d: 'same' zero padding, odd kernel. Weight is out x (kernel * in) with
// column index tap * in + channel.

struct Conv1d {
  Param* weight = nullptr;
  Param* bias = nullptr;
  int kernel = 1;
  Index in = 0;
  Index out = 0;

  struct Cache {
    Matrix cols;
  };

  static Conv1d create(ParamSet& params, const std::string& name, Index in, Index out, int kernel, Rng& rng,
                       double gain = 1.0);

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Matrix& dy, const Cache& cache) const;
  // Parameter gradients only; skips the input-gradient product.
  void backward_params(const Matrix& dy, const Cache& cache) const;
};

Matrix im2col(const Matrix& x, int kernel);
Matrix col2im(const Matrix& cols, int kernel, Index channels);

// ---------------------------------------------------------------------------

Matrix relu(const Matrix& x);
Matrix relu_backward(const Matrix& dy, const Matrix& pre_activation);

// ---------------------------------------------------------------------------
// Instance normalisation over time, per channel. The returned stats carry
// std = sqrt(var + eps). With a mask, statistics use real frames only.

struct NormCache {
  Matrix normalized;
  Vector std;
  Vector weight;  // per-frame 1/0 mask as doubles
  double count = 0;
};

Matrix instance_norm(const Matrix& x, ChannelStats* stats = nullptr, NormCache* cache = nullptr,
                     const FrameMask* mask = nullptr);

// dy: gradient w.r.t. the normalized output. dstats (optional): gradient
// w.r.t. the returned (mean, std).
Matrix instance_norm_backward(const Matrix& dy, const NormCache& cache, const ChannelStats* dstats = nullptr);

ChannelStats channel_stats(const Matrix& x, const FrameMask* mask = nullptr);

// ---------------------------------------------------------------------------
// AdaIN: instance_norm(x) * ref.std + ref.mean.

struct AdainCache {
  NormCache norm;
};

Matrix adain(const Matrix& x, const ChannelStats& ref, AdainCache* cache = nullptr, const FrameMask* mask = nullptr);

struct AdainGrad {
  Matrix dx;
  ChannelStats dref;
};

AdainGrad adain_backward(const Matrix& dy, const ChannelStats& ref, const AdainCache& cache);

// ---------------------------------------------------------------------------
// Single-head scaled dot-product self-attention with output projection.

struct SelfAttention {
  Conv1d query, key, value, output;  // kernel-1 projections
  Index channels = 0;

  struct Cache {
    Conv1d::Cache xq, xk, xv, xo;
    Matrix q, k, v, attn, ctx;
  };

  static SelfAttention create(ParamSet& params, const std::string& name, Index channels, Rng& rng);

  // Padded key frames receive zero attention weight.
  Matrix forward(const Matrix& x, Cache* cache = nullptr, const FrameMask* mask = nullptr) const;
  Matrix backward(const Matrix& dy, const Cache& cache) const;
};

// Row-wise softmax of scores / sqrt(channels) with masked columns excluded.
Matrix attention_weights(const Matrix& q, const Matrix& k, const FrameMask* mask = nullptr);

// ---------------------------------------------------------------------------
// ResCnn1D: x + conv_b(relu(conv_a(x))).

struct ResCnnBlock {
  Conv1d conv_a, conv_b;

  struct Cache {
    Conv1d::Cache a, b;
    Matrix pre;
  };

  static ResCnnBlock create(ParamSet& params, const std::string& name, Index channels, int kernel, Rng& rng);

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Matrix& dy, const Cache& cache) const;
};

// ---------------------------------------------------------------------------

struct Embedding {
  Param* table = nullptr;  // dim x vocab, one column per id

  static Embedding create(ParamSet& params, const std::string& name, Index vocab, Index dim, Rng& rng);
  Matrix forward(const std::vector<int>& ids) const;
  void backward(const Matrix& dy, const std::vector<int>& ids) const;
};

}  // namespace utts::nn

// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "utts/nn.hpp"

#include <cmath>
#include <limits>

#include "utts/error.hpp"

namespace utts::nn {

namespace {

std::string shape_of(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

Vector mask_weights(const FrameMask* mask, Index frames) {
  if (mask == nullptr) return Vector::Ones(frames);
  if (static_cast<Index>(mask->size()) != frames)
    throw ShapeError("mask length " + std::to_string(mask->size()) + " does not match " + std::to_string(frames) +
                     " frames");
  Vector w(frames);
  for (Index t = 0; t < frames; ++t) w(t) = (*mask)[static_cast<std::size_t>(t)] ? 1.0 : 0.0;
  if (w.sum() < 1.0) throw InputError("mask selects no frames");
  return w;
}

}  // namespace

// ---------------------------------------------------------------------------

Param& ParamSet::add(std::string name, Index rows, Index cols) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = Matrix::Zero(rows, cols);
  p->grad = Matrix::Zero(rows, cols);
  Param* raw = p.get();
  params_.push_back(std::move(p));
  index_.emplace(std::move(name), raw);
  return *raw;
}

Param& ParamSet::get(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("unknown parameter '" + std::string(name) + "'");
  return *it->second;
}

const Param& ParamSet::get(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("unknown parameter '" + std::string(name) + "'");
  return *it->second;
}

bool ParamSet::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::vector<Param*> ParamSet::all() {
  std::vector<Param*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Param*> ParamSet::all() const {
  std::vector<const Param*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Param*> ParamSet::with_prefix(std::string_view prefix) {
  std::vector<Param*> out;
  for (auto& p : params_)
    if (std::string_view(p->name).starts_with(prefix)) out.push_back(p.get());
  return out;
}

Index ParamSet::scalar_count() const {
  Index n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p->grad.setZero();
}

void init_fan_in(Param& p, Index fan_in, double gain, Rng& rng) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  for (Index j = 0; j < p.value.cols(); ++j)
    for (Index i = 0; i < p.value.rows(); ++i) p.value(i, j) = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------------------

Matrix im2col(const Matrix& x, int kernel) {
  const Index c = x.rows(), t = x.cols();
  const int pad = (kernel - 1) / 2;
  Matrix cols = Matrix::Zero(kernel * c, t);
  for (int tap = 0; tap < kernel; ++tap) {
    const Index s = tap - pad;
    const Index n = t - std::abs(s);
    if (n <= 0) continue;
    if (s >= 0)
      cols.block(tap * c, 0, c, n) = x.block(0, s, c, n);
    else
      cols.block(tap * c, -s, c, n) = x.block(0, 0, c, n);
  }
  return cols;
}

Matrix col2im(const Matrix& cols, int kernel, Index channels) {
  const Index t = cols.cols();
  const int pad = (kernel - 1) / 2;
  Matrix x = Matrix::Zero(channels, t);
  for (int tap = 0; tap < kernel; ++tap) {
    const Index s = tap - pad;
    const Index n = t - std::abs(s);
    if (n <= 0) continue;
    if (s >= 0)
      x.block(0, s, channels, n) += cols.block(tap * channels, 0, channels, n);
    else
      x.block(0, 0, channels, n) += cols.block(tap * channels, -s, channels, n);
  }
  return x;
}

Conv1d Conv1d::create(ParamSet& params, const std::string& name, Index in, Index out, int kernel, Rng& rng,
                      double gain) {
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("conv1d '" + name + "': kernel must be odd");
  Conv1d c;
  c.kernel = kernel;
  c.in = in;
  c.out = out;
  c.weight = &params.add(name + ".weight", out, kernel * in);
  c.bias = &params.add(name + ".bias", out, 1);
  init_fan_in(*c.weight, kernel * in, gain, rng);
  return c;
}

Matrix Conv1d::forward(const Matrix& x, Cache* cache) const {
  if (x.rows() != in)
    throw ShapeError("conv1d '" + weight->name + "': expected " + std::to_string(in) + " input channels, got " +
                     shape_of(x));
  Matrix cols = im2col(x, kernel);
  Matrix y = weight->value * cols;
  y.colwise() += bias->value.col(0);
  if (cache) cache->cols = std::move(cols);
  return y;
}

void Conv1d::backward_params(const Matrix& dy, const Cache& cache) const {
  if (dy.rows() != out || dy.cols() != cache.cols.cols())
    throw ShapeError("conv1d '" + weight->name + "': gradient shape " + shape_of(dy) + " does not match output");
  weight->grad.noalias() += dy * cache.cols.transpose();
  bias->grad.col(0) += dy.rowwise().sum();
}

Matrix Conv1d::backward(const Matrix& dy, const Cache& cache) const {
  backward_params(dy, cache);
  if (kernel == 1) return weight->value.transpose() * dy;
  const Matrix dcols = weight->value.transpose() * dy;
  return col2im(dcols, kernel, in);
}

// ---------------------------------------------------------------------------

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& dy, const Matrix& pre_activation) {
  return (pre_activation.array() > 0.0).select(dy, 0.0);
}

// ---------------------------------------------------------------------------

Matrix instance_norm(const Matrix& x, ChannelStats* stats, NormCache* cache, const FrameMask* mask) {
  const Index frames = x.cols();
  if (frames < 1) throw ShapeError("instance_norm: need at least one frame");
  const Vector w = mask_weights(mask, frames);
  const double n = w.sum();
  const Vector mean = (x * w) / n;
  const Matrix centred = x.colwise() - mean;
  const Vector var = (centred.array().square().matrix() * w) / n;
  const Vector std = (var.array() + kNormEpsilon).sqrt().matrix();
  Matrix y = std.cwiseInverse().asDiagonal() * centred;
  if (mask) y = y * w.asDiagonal();  // padded frames carry zeros
  if (stats) {
    stats->mean = mean;
    stats->std = std;
  }
  if (cache) {
    cache->normalized = y;
    cache->std = std;
    cache->weight = w;
    cache->count = n;
  }
  return y;
}

Matrix instance_norm_backward(const Matrix& dy, const NormCache& cache, const ChannelStats* dstats) {
  const Matrix& y = cache.normalized;
  if (dy.rows() != y.rows() || dy.cols() != y.cols())
    throw ShapeError("instance_norm_backward: gradient " + shape_of(dy) + " vs output " + shape_of(y));
  const auto& w = cache.weight;
  const double n = cache.count;
  const Matrix dyw = dy * w.asDiagonal();
  const Vector mean_dy = dyw.rowwise().sum() / n;
  const Vector mean_dyy = dyw.cwiseProduct(y).rowwise().sum() / n;
  Matrix dx = dyw;
  dx.colwise() -= mean_dy;
  dx -= mean_dyy.asDiagonal() * y;
  dx = cache.std.cwiseInverse().asDiagonal() * dx;
  if (dstats) {
    // d mean / dx_t = 1/n ; d std / dx_t = y_t / n
    dx.colwise() += dstats->mean / n;
    dx += (dstats->std / n).asDiagonal() * y;
  }
  return dx * w.asDiagonal();
}

ChannelStats channel_stats(const Matrix& x, const FrameMask* mask) {
  ChannelStats s;
  instance_norm(x, &s, nullptr, mask);
  return s;
}

// ---------------------------------------------------------------------------

Matrix adain(const Matrix& x, const ChannelStats& ref, AdainCache* cache, const FrameMask* mask) {
  if (ref.mean.size() != x.rows() || ref.std.size() != x.rows())
    throw ShapeError("adain: reference statistics have " + std::to_string(ref.mean.size()) + " channels, input " +
                     shape_of(x));
  Matrix y = ref.std.asDiagonal() * instance_norm(x, nullptr, cache ? &cache->norm : nullptr, mask);
  y.colwise() += ref.mean;
  return y;
}

AdainGrad adain_backward(const Matrix& dy, const ChannelStats& ref, const AdainCache& cache) {
  const auto& w = cache.norm.weight;
  const Matrix dyw = dy * w.asDiagonal();
  AdainGrad g;
  g.dref.mean = dyw.rowwise().sum();
  g.dref.std = dyw.cwiseProduct(cache.norm.normalized).rowwise().sum();
  g.dx = instance_norm_backward(ref.std.asDiagonal() * dyw, cache.norm);
  return g;
}

// ---------------------------------------------------------------------------

SelfAttention SelfAttention::create(ParamSet& params, const std::string& name, Index channels, Rng& rng) {
  SelfAttention a;
  a.channels = channels;
  a.query = Conv1d::create(params, name + ".query", channels, channels, 1, rng);
  a.key = Conv1d::create(params, name + ".key", channels, channels, 1, rng);
  a.value = Conv1d::create(params, name + ".value", channels, channels, 1, rng);
  a.output = Conv1d::create(params, name + ".output", channels, channels, 1, rng);
  return a;
}

Matrix attention_weights(const Matrix& q, const Matrix& k, const FrameMask* mask) {
  const Index frames = k.cols();
  const Vector w = mask_weights(mask, frames);
  Matrix scores = (q.transpose() * k) / std::sqrt(static_cast<double>(q.rows()));
  for (Index i = 0; i < scores.rows(); ++i) {
    double top = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < frames; ++j)
      if (w(j) > 0.0) top = std::max(top, scores(i, j));
    double sum = 0.0;
    for (Index j = 0; j < frames; ++j) {
      scores(i, j) = w(j) > 0.0 ? std::exp(scores(i, j) - top) : 0.0;
      sum += scores(i, j);
    }
    scores.row(i) /= sum;
  }
  return scores;
}

Matrix SelfAttention::forward(const Matrix& x, Cache* cache, const FrameMask* mask) const {
  Cache local;
  Cache& c = cache ? *cache : local;
  c.q = query.forward(x, &c.xq);
  c.k = key.forward(x, &c.xk);
  c.v = value.forward(x, &c.xv);
  c.attn = attention_weights(c.q, c.k, mask);
  c.ctx = c.v * c.attn.transpose();
  return output.forward(c.ctx, &c.xo);
}

Matrix SelfAttention::backward(const Matrix& dy, const Cache& c) const {
  const Matrix dctx = output.backward(dy, c.xo);
  const Matrix dattn = dctx.transpose() * c.v;
  const Vector row_dot = c.attn.cwiseProduct(dattn).rowwise().sum();
  Matrix dscores = c.attn.cwiseProduct(dattn.colwise() - row_dot);
  dscores /= std::sqrt(static_cast<double>(channels));
  const Matrix dq = c.k * dscores.transpose();
  const Matrix dk = c.q * dscores;
  const Matrix dv = dctx * c.attn;
  Matrix dx = query.backward(dq, c.xq);
  dx += key.backward(dk, c.xk);
  dx += value.backward(dv, c.xv);
  return dx;
}

// ---------------------------------------------------------------------------

ResCnnBlock ResCnnBlock::create(ParamSet& params, const std::string& name, Index channels, int kernel, Rng& rng) {
  ResCnnBlock b;
  b.conv_a = Conv1d::create(params, name + ".conv_a", channels, channels, kernel, rng, std::sqrt(2.0));
  b.conv_b = Conv1d::create(params, name + ".conv_b", channels, channels, kernel, rng);
  return b;
}

Matrix ResCnnBlock::forward(const Matrix& x, Cache* cache) const {
  Cache local;
  Cache& c = cache ? *cache : local;
  c.pre = conv_a.forward(x, &c.a);
  return x + conv_b.forward(relu(c.pre), &c.b);
}

Matrix ResCnnBlock::backward(const Matrix& dy, const Cache& c) const {
  const Matrix dh = conv_b.backward(dy, c.b);
  return dy + conv_a.backward(relu_backward(dh, c.pre), c.a);
}

// ---------------------------------------------------------------------------

Embedding Embedding::create(ParamSet& params, const std::string& name, Index vocab, Index dim, Rng& rng) {
  Embedding e;
  e.table = &params.add(name, dim, vocab);
  for (Index j = 0; j < vocab; ++j)
    for (Index i = 0; i < dim; ++i) e.table->value(i, j) = rng.normal(0.0, 1.0);
  return e;
}

Matrix Embedding::forward(const std::vector<int>& ids) const {
  Matrix out(table->value.rows(), static_cast<Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table->value.cols())
      throw InputError("embedding '" + table->name + "': id " + std::to_string(ids[i]) + " out of range");
    out.col(static_cast<Index>(i)) = table->value.col(ids[i]);
  }
  return out;
}

void Embedding::backward(const Matrix& dy, const std::vector<int>& ids) const {
  for (std::size_t i = 0; i < ids.size(); ++i) table->grad.col(ids[i]) += dy.col(static_cast<Index>(i));
}

}  // namespace utts::nn

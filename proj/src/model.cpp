// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "utts/model.hpp"

#include <cmath>

#include "utts/error.hpp"

namespace utts {

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.hidden = 64;
  return c;
}

void ModelConfig::validate() const {
  if (n_phonemes < 1) throw ConfigError("model: n_phonemes must be >= 1");
  if (hidden < 1) throw ConfigError("model: hidden must be >= 1");
  if (n_mels < 2) throw ConfigError("model: n_mels must be >= 2");
  if (kernel_content < 1 || kernel_content % 2 == 0) throw ConfigError("model: kernel_content must be odd");
  if (kernel_unet < 1 || kernel_unet % 2 == 0) throw ConfigError("model: kernel_unet must be odd");
  if (unet_levels < 2) throw ConfigError("model: unet_levels must be >= 2");
  if (content_blocks < 0) throw ConfigError("model: content_blocks must be >= 0");
  if (dp_conv_layers < 1) throw ConfigError("model: dp_conv_layers must be >= 1");
  if (n_speakers < 1) throw ConfigError("model: n_speakers must be >= 1");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"n_phonemes", n_phonemes},         {"hidden", hidden},
          {"n_mels", n_mels},                 {"kernel_content", kernel_content},
          {"kernel_unet", kernel_unet},       {"unet_levels", unet_levels},
          {"content_blocks", content_blocks}, {"dp_conv_layers", dp_conv_layers},
          {"n_speakers", n_speakers},         {"single_level_stats", single_level_stats}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "n_phonemes") c.n_phonemes = value.get<int>();
      else if (key == "hidden") c.hidden = value.get<int>();
      else if (key == "n_mels") c.n_mels = value.get<int>();
      else if (key == "kernel_content") c.kernel_content = value.get<int>();
      else if (key == "kernel_unet") c.kernel_unet = value.get<int>();
      else if (key == "unet_levels") c.unet_levels = value.get<int>();
      else if (key == "content_blocks") c.content_blocks = value.get<int>();
      else if (key == "dp_conv_layers") c.dp_conv_layers = value.get<int>();
      else if (key == "n_speakers") c.n_speakers = value.get<int>();
      else if (key == "single_level_stats") c.single_level_stats = value.get<bool>();
      else throw ConfigError("model config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

Matrix to_channels(const MelSpectrogram& mel) { return mel.data.transpose(); }

MelSpectrogram from_channels(const Matrix& x, const FramingConfig& framing) {
  MelSpectrogram mel;
  mel.framing = framing;
  mel.framing.n_mels = static_cast<int>(x.rows());
  mel.data = x.transpose();
  return mel;
}

Matrix length_regulate(const Matrix& phoneme_hiddens, const Durations& durations) {
  if (static_cast<nn::Index>(durations.size()) != phoneme_hiddens.cols())
    throw InputError("length_regulate: " + std::to_string(durations.size()) + " durations for " +
                     std::to_string(phoneme_hiddens.cols()) + " phonemes");
  nn::Index total = 0;
  for (int d : durations) {
    if (d < 1) throw InputError("length_regulate: durations must be >= 1, got " + std::to_string(d));
    total += d;
  }
  Matrix out(phoneme_hiddens.rows(), total);
  nn::Index t = 0;
  for (std::size_t i = 0; i < durations.size(); ++i)
    for (int r = 0; r < durations[i]; ++r) out.col(t++) = phoneme_hiddens.col(static_cast<nn::Index>(i));
  return out;
}

Matrix length_regulate_backward(const Matrix& dframes, const Durations& durations) {
  Matrix out = Matrix::Zero(dframes.rows(), static_cast<nn::Index>(durations.size()));
  nn::Index t = 0;
  for (std::size_t i = 0; i < durations.size(); ++i) {
    out.col(static_cast<nn::Index>(i)) = dframes.middleCols(t, durations[i]).rowwise().sum();
    t += durations[i];
  }
  return out;
}

Durations adjust_durations(const Vector& normalized, const DurationStats& ref) {
  Durations out(static_cast<std::size_t>(normalized.size()));
  for (nn::Index i = 0; i < normalized.size(); ++i) {
    const double frames = std::round(normalized(i) * ref.std + ref.mean);  // half away from zero
    out[static_cast<std::size_t>(i)] = frames < 1.0 ? 1 : static_cast<int>(frames);
  }
  return out;
}

Vector normalize_durations(const Durations& durations) {
  const DurationStats s = duration_mean_std(durations);
  const double scale = s.std > 0.0 ? s.std : 1.0;
  Vector z(static_cast<nn::Index>(durations.size()));
  for (std::size_t i = 0; i < durations.size(); ++i) z(static_cast<nn::Index>(i)) = (durations[i] - s.mean) / scale;
  return z;
}

// ---------------------------------------------------------------------------

ContentEncoder::ContentEncoder(nn::ParamSet& params, const ModelConfig& cfg, Rng& rng) {
  embedding = nn::Embedding::create(params, "content.embedding", cfg.n_phonemes, cfg.hidden, rng);
  for (int i = 0; i < cfg.content_blocks; ++i)
    blocks.push_back(
        nn::ResCnnBlock::create(params, "content.block" + std::to_string(i), cfg.hidden, cfg.kernel_content, rng));
}

Matrix ContentEncoder::forward(const std::vector<int>& ids, Cache* cache) const {
  if (ids.empty()) throw InputError("content encoder: empty phoneme sequence");
  Matrix h = embedding.forward(ids);
  if (cache) {
    cache->ids = ids;
    cache->blocks.resize(blocks.size());
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) h = blocks[i].forward(h, cache ? &cache->blocks[i] : nullptr);
  return h;
}

void ContentEncoder::backward(const Matrix& dy, const Cache& cache) const {
  Matrix dh = dy;
  for (std::size_t i = blocks.size(); i-- > 0;) dh = blocks[i].backward(dh, cache.blocks[i]);
  embedding.backward(dh, cache.ids);
}

// ---------------------------------------------------------------------------

DurationPredictor::DurationPredictor(nn::ParamSet& params, const ModelConfig& cfg, Rng& rng) {
  attention = nn::SelfAttention::create(params, "duration.attention", cfg.hidden, rng);
  for (int i = 0; i < cfg.dp_conv_layers; ++i)
    convs.push_back(nn::Conv1d::create(params, "duration.conv" + std::to_string(i), cfg.hidden, cfg.hidden,
                                       cfg.kernel_content, rng, std::sqrt(2.0)));
  head = nn::Conv1d::create(params, "duration.head", cfg.hidden, 1, 1, rng);
}

Vector DurationPredictor::forward(const Matrix& x, Cache* cache) const {
  Cache local;
  Cache& c = cache ? *cache : local;
  Matrix h = x + attention.forward(x, &c.attn);
  c.convs.resize(convs.size());
  c.pre.resize(convs.size());
  for (std::size_t i = 0; i < convs.size(); ++i) {
    c.pre[i] = convs[i].forward(h, &c.convs[i]);
    h = nn::relu(c.pre[i]);
  }
  return head.forward(h, &c.head).row(0).transpose();
}

void DurationPredictor::backward(const Vector& dy, const Cache& c) const {
  Matrix dh = head.backward(dy.transpose(), c.head);
  for (std::size_t i = convs.size(); i-- > 0;) dh = convs[i].backward(nn::relu_backward(dh, c.pre[i]), c.convs[i]);
  // Input is detached; the residual path carries no parameters.
  attention.backward(dh, c.attn);
}

// ---------------------------------------------------------------------------

StyleEncoder::StyleEncoder(nn::ParamSet& params, const ModelConfig& cfg, Rng& rng) {
  input = nn::Conv1d::create(params, "style.input", cfg.n_mels, cfg.hidden, cfg.kernel_unet, rng);
  for (int i = 0; i < cfg.unet_levels; ++i)
    blocks.push_back(
        nn::ResCnnBlock::create(params, "style.block" + std::to_string(i), cfg.hidden, cfg.kernel_unet, rng));
}

StyleEncoder::Output StyleEncoder::forward(const Matrix& mel, Cache* cache) const {
  if (mel.cols() < 1) throw InputError("style encoder: reference has no frames");
  Output out;
  Matrix h = input.forward(mel, cache ? &cache->input : nullptr);
  if (cache) {
    cache->blocks.resize(blocks.size());
    cache->norms.resize(blocks.size());
  }
  out.stats.levels.resize(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    h = blocks[i].forward(h, cache ? &cache->blocks[i] : nullptr);
    h = nn::instance_norm(h, &out.stats.levels[i], cache ? &cache->norms[i] : nullptr);
  }
  out.content_pred = std::move(h);
  return out;
}

void StyleEncoder::backward(const std::vector<nn::ChannelStats>& dstats, const Matrix& dcontent_pred,
                            const Cache& cache) const {
  Matrix dh = dcontent_pred;
  for (std::size_t i = blocks.size(); i-- > 0;) {
    dh = nn::instance_norm_backward(dh, cache.norms[i], &dstats[i]);
    dh = blocks[i].backward(dh, cache.blocks[i]);
  }
  input.backward_params(dh, cache.input);
}

// ---------------------------------------------------------------------------

MelDecoder::MelDecoder(nn::ParamSet& params, const ModelConfig& cfg, Rng& rng)
    : levels(cfg.unet_levels), single_level_stats(cfg.single_level_stats) {
  for (int j = 0; j < cfg.unet_levels; ++j)
    blocks.push_back(
        nn::ResCnnBlock::create(params, "decoder.block" + std::to_string(j), cfg.hidden, cfg.kernel_unet, rng));
  out = nn::Conv1d::create(params, "decoder.out", cfg.hidden, cfg.n_mels, 1, rng);
}

int MelDecoder::source_level(int j) const {
  if (single_level_stats) return j == 0 ? levels - 1 : -1;
  return levels - 1 - j;
}

namespace {

nn::ChannelStats neutral_stats(nn::Index channels) {
  return {Vector::Zero(channels), Vector::Ones(channels)};
}

}  // namespace

Matrix MelDecoder::forward(const Matrix& content, const StyleStats& stats, Cache* cache, DecoderTrace* trace) const {
  if (static_cast<int>(stats.levels.size()) != levels)
    throw ConfigError("mel decoder: expected " + std::to_string(levels) + " stats levels, got " +
                      std::to_string(stats.levels.size()));
  Cache local;
  Cache& c = cache ? *cache : local;
  c.used.resize(blocks.size());
  c.source.resize(blocks.size());
  c.adain.resize(blocks.size());
  c.blocks.resize(blocks.size());
  if (trace) *trace = DecoderTrace{};

  Matrix h = content;
  for (int j = 0; j < levels; ++j) {
    const int src = source_level(j);
    c.source[j] = src;
    c.used[j] = src >= 0 ? stats.levels[src] : neutral_stats(content.rows());
    h = nn::adain(h, c.used[j], &c.adain[j]);
    if (trace) {
      trace->stats_index.push_back(src);
      trace->after_adain.push_back(h);
    }
    h = blocks[j].forward(h, &c.blocks[j]);
  }
  return out.forward(h, &c.out);
}

MelDecoder::Grad MelDecoder::backward(const Matrix& dmel, const Cache& c) const {
  Grad g;
  g.dstats.assign(static_cast<std::size_t>(levels), {});
  Matrix dh = out.backward(dmel, c.out);
  for (auto& d : g.dstats) {
    d.mean = Vector::Zero(dh.rows());
    d.std = Vector::Zero(dh.rows());
  }
  for (int j = levels; j-- > 0;) {
    dh = blocks[j].backward(dh, c.blocks[j]);
    nn::AdainGrad a = nn::adain_backward(dh, c.used[j], c.adain[j]);
    dh = std::move(a.dx);
    if (c.source[j] >= 0) {
      g.dstats[c.source[j]].mean += a.dref.mean;
      g.dstats[c.source[j]].std += a.dref.std;
    }
  }
  g.dcontent = std::move(dh);
  return g;
}

// ---------------------------------------------------------------------------

ConditionalDecoder::ConditionalDecoder(nn::ParamSet& params, const ModelConfig& cfg, Rng& rng) {
  speakers = &params.add("pretrain.speakers", cfg.hidden, cfg.n_speakers);
  for (nn::Index j = 0; j < speakers->value.size(); ++j) speakers->value.data()[j] = rng.normal(0.0, 1.0);
  for (int l = 0; l < cfg.unet_levels; ++l) {
    const std::string level = "pretrain.level" + std::to_string(l);
    to_mu.push_back(nn::Conv1d::create(params, level + ".to_mu", cfg.hidden, cfg.hidden, 1, rng, 0.1));
    to_sigma.push_back(nn::Conv1d::create(params, level + ".to_sigma", cfg.hidden, cfg.hidden, 1, rng, 0.1));
    to_sigma.back().bias->value.setOnes();
    blocks.push_back(nn::ResCnnBlock::create(params, level + ".block", cfg.hidden, cfg.kernel_unet, rng));
  }
  out = nn::Conv1d::create(params, "pretrain.out", cfg.hidden, cfg.n_mels, 1, rng);
}

nn::ChannelStats ConditionalDecoder::condition(int level, int speaker) const {
  if (speaker < 0 || speaker >= speakers->value.cols())
    throw InputError("pretrain decoder: unknown speaker " + std::to_string(speaker));
  const Matrix e = speakers->value.col(speaker);
  return {to_mu[level].forward(e).col(0), to_sigma[level].forward(e).col(0)};
}

Matrix ConditionalDecoder::forward(const Matrix& content, int speaker, Cache* cache) const {
  if (speaker < 0 || speaker >= speakers->value.cols())
    throw InputError("pretrain decoder: unknown speaker " + std::to_string(speaker));
  Cache local;
  Cache& c = cache ? *cache : local;
  const std::size_t n = blocks.size();
  c.speaker = speaker;
  c.mu_cache.resize(n);
  c.sigma_cache.resize(n);
  c.cond.resize(n);
  c.norm.resize(n);
  c.blocks.resize(n);
  const Matrix e = speakers->value.col(speaker);
  Matrix h = content;
  for (std::size_t l = 0; l < n; ++l) {
    c.cond[l].mean = to_mu[l].forward(e, &c.mu_cache[l]).col(0);
    c.cond[l].std = to_sigma[l].forward(e, &c.sigma_cache[l]).col(0);
    h = nn::adain(h, c.cond[l], &c.norm[l]);
    h = blocks[l].forward(h, &c.blocks[l]);
  }
  return out.forward(h, &c.out);
}

Matrix ConditionalDecoder::forward(const Matrix& content, const Vector& embedding) const {
  if (embedding.size() != speakers->value.rows()) throw ShapeError("pretrain decoder: embedding has the wrong size");
  const Matrix e = embedding;
  Matrix h = content;
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const nn::ChannelStats cond{to_mu[l].forward(e).col(0), to_sigma[l].forward(e).col(0)};
    h = blocks[l].forward(nn::adain(h, cond));
  }
  return out.forward(h);
}

Matrix ConditionalDecoder::backward(const Matrix& dmel, const Cache& c) const {
  Matrix dh = out.backward(dmel, c.out);
  Vector de = Vector::Zero(speakers->value.rows());
  for (std::size_t l = blocks.size(); l-- > 0;) {
    dh = blocks[l].backward(dh, c.blocks[l]);
    nn::AdainGrad a = nn::adain_backward(dh, c.cond[l], c.norm[l]);
    dh = std::move(a.dx);
    de += to_mu[l].backward(Matrix(a.dref.mean), c.mu_cache[l]).col(0);
    de += to_sigma[l].backward(Matrix(a.dref.std), c.sigma_cache[l]).col(0);
  }
  speakers->grad.col(c.speaker) += de;
  return dh;
}

// ---------------------------------------------------------------------------

UnetTts::UnetTts(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const Rng root(seed);
  Rng r1 = root.fork(1), r2 = root.fork(2), r3 = root.fork(3), r4 = root.fork(4);
  content = ContentEncoder(params_, cfg_, r1);
  duration = DurationPredictor(params_, cfg_, r2);
  style = StyleEncoder(params_, cfg_, r3);
  decoder = MelDecoder(params_, cfg_, r4);
}

PretrainModel::PretrainModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const Rng root(seed);
  Rng r1 = root.fork(1), r2 = root.fork(2), r5 = root.fork(5);
  content = ContentEncoder(params_, cfg_, r1);
  duration = DurationPredictor(params_, cfg_, r2);
  decoder = ConditionalDecoder(params_, cfg_, r5);
}

// ---------------------------------------------------------------------------

Matrix content_encode(const UnetTts& model, const PhonemeSequence& phones) {
  return model.content.forward(phones.ids);
}

Vector predict_durations_normalized(const UnetTts& model, const Matrix& phoneme_hiddens) {
  return model.duration.forward(phoneme_hiddens);
}

std::pair<StyleStats, Matrix> style_encode(const UnetTts& model, const MelSpectrogram& ref_mel) {
  if (ref_mel.n_mels() != model.config().n_mels)
    throw InputError("style_encode: reference has " + std::to_string(ref_mel.n_mels()) + " mel bins, model expects " +
                     std::to_string(model.config().n_mels));
  auto out = model.style.forward(to_channels(ref_mel));
  return {std::move(out.stats), std::move(out.content_pred)};
}

MelSpectrogram mel_decode(const UnetTts& model, const Matrix& content, const StyleStats& stats, DecoderTrace* trace) {
  return from_channels(model.decoder.forward(content, stats, nullptr, trace));
}

Synthesis synthesize(const UnetTts& model, const PhonemeSequence& phones, const MelSpectrogram& ref_mel,
                     const Durations& ref_durations) {
  if (!model.trained) throw StateError("synthesize: model has no trained parameters (load a checkpoint first)");
  const Matrix hiddens = content_encode(model, phones);
  const Vector normalized = predict_durations_normalized(model, hiddens);
  Synthesis out;
  out.durations = adjust_durations(normalized, duration_mean_std(ref_durations));
  const Matrix frames = length_regulate(hiddens, out.durations);
  const auto [stats, content_pred] = style_encode(model, ref_mel);
  out.mel = mel_decode(model, frames, stats);
  out.mel.framing = ref_mel.framing;
  return out;
}

MelSpectrogram pretrain_forward(const PretrainModel& model, const PhonemeSequence& phones, int speaker) {
  const Matrix hiddens = model.content.forward(phones.ids);
  const Matrix frames = length_regulate(hiddens, phones.durations);
  return from_channels(model.decoder.forward(frames, speaker));
}

}  // namespace utts

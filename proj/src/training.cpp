// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "utts/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "utts/error.hpp"

namespace utts {

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw ConfigError("train: stage must be 1 or 2");
  if (steps <= 0) throw ConfigError("train: steps must be > 0");
  if (batch_size <= 0) throw ConfigError("train: batch_size must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be > 0");
  if (w_mel < 0.0 || w_content < 0.0 || w_duration < 0.0) throw ConfigError("train: loss weights must be >= 0");
  if (checkpoint_every <= 0) throw ConfigError("train: checkpoint_every must be > 0");
  if (val_every <= 0) throw ConfigError("train: val_every must be > 0");
  if (val_utterances < 0) throw ConfigError("train: val_utterances must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"stage", stage},
          {"steps", steps},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"beta1", beta1},
          {"beta2", beta2},
          {"epsilon", epsilon},
          {"seed", seed},
          {"w_mel", w_mel},
          {"w_content", w_content},
          {"w_duration", w_duration},
          {"checkpoint_every", checkpoint_every},
          {"val_every", val_every},
          {"val_utterances", val_utterances}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "stage") c.stage = value.get<int>();
      else if (key == "steps") c.steps = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "epsilon") c.epsilon = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "w_mel") c.w_mel = value.get<double>();
      else if (key == "w_content") c.w_content = value.get<double>();
      else if (key == "w_duration") c.w_duration = value.get<double>();
      else if (key == "checkpoint_every") c.checkpoint_every = value.get<int>();
      else if (key == "val_every") c.val_every = value.get<int>();
      else if (key == "val_utterances") c.val_utterances = value.get<int>();
      else throw ConfigError("train config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

std::string to_csv_row(const LossReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g", r.step, r.l1_mel, r.l2_content, r.mse_duration,
                r.total);
  return buf;
}

void write_loss_csv(const std::vector<LossReport>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << kLossCsvHeader << '\n';
  for (const auto& r : rows) out << to_csv_row(r) << '\n';
}

std::vector<LossReport> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kLossCsvHeader)
    throw InputError("'" + path.string() + "' is not a loss CSV (bad header)");
  std::vector<LossReport> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossReport r;
    if (std::sscanf(line.c_str(), "%ld,%lf,%lf,%lf,%lf", &r.step, &r.l1_mel, &r.l2_content, &r.mse_duration,
                    &r.total) != 5)
      throw InputError("'" + path.string() + "': malformed row '" + line + "'");
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void require_finite(const LossReport& r, const std::string& what) {
  if (!std::isfinite(r.l1_mel) || !std::isfinite(r.l2_content) || !std::isfinite(r.mse_duration) ||
      !std::isfinite(r.total)) {
    std::ostringstream msg;
    msg << what << ": non-finite loss (l1_mel=" << r.l1_mel << ", l2_content=" << r.l2_content
        << ", mse_duration=" << r.mse_duration << ")";
    throw NumericError(msg.str());
  }
}

}  // namespace

LossReport compute_stage2_loss(const Matrix& mel_true, const Matrix& mel_pred, const Matrix& content,
                               const Matrix& content_pred, const nn::FrameMask* mask, const LossWeights& weights,
                               Stage2Grad* grad) {
  if (mel_true.rows() != mel_pred.rows() || mel_true.cols() != mel_pred.cols())
    throw InputError("stage-2 loss: mel shapes differ");
  if (content.rows() != content_pred.rows() || content.cols() != content_pred.cols())
    throw InputError("stage-2 loss: content shapes differ");
  if (content.cols() != mel_true.cols())
    throw InputError("stage-2 loss: content has " + std::to_string(content.cols()) + " frames, mel has " +
                     std::to_string(mel_true.cols()));
  const nn::Index T = mel_true.cols();
  if (mask && static_cast<nn::Index>(mask->size()) != T) throw InputError("stage-2 loss: mask length mismatch");

  Vector w = Vector::Ones(T);
  if (mask)
    for (nn::Index t = 0; t < T; ++t) w(t) = (*mask)[static_cast<std::size_t>(t)] ? 1.0 : 0.0;
  const double frames = w.sum();
  if (frames <= 0.0) throw InputError("stage-2 loss: no real frames");

  const Matrix dm = mel_pred - mel_true;
  const Matrix dc = content_pred - content;
  const double n_mel = frames * static_cast<double>(mel_true.rows());
  const double n_con = frames * static_cast<double>(content.rows());
  LossReport r;
  r.l1_mel = (dm.cwiseAbs() * w).sum() / n_mel;
  r.l2_content = (dc.array().square().matrix() * w).sum() / n_con;
  r.total = weights.mel * r.l1_mel + weights.content * r.l2_content;
  if (grad) {
    grad->dmel_pred = dm.unaryExpr(&sign) * (weights.mel / n_mel);
    grad->dcontent_pred = dc * (2.0 * weights.content / n_con);
    grad->dmel_pred.array().rowwise() *= w.transpose().array();
    grad->dcontent_pred.array().rowwise() *= w.transpose().array();
  }
  return r;
}

LossReport stage1_batch_loss(PretrainModel& model, const Batch& batch, const std::vector<int>& speaker_rows,
                             const LossWeights& weights, bool backward) {
  if (batch.empty()) throw InputError("stage-1 loss: empty batch");
  if (speaker_rows.size() != batch.size()) throw InputError("stage-1 loss: one speaker row per utterance required");
  double frames = 0.0, phonemes = 0.0;
  for (const Utterance* u : batch) {
    frames += static_cast<double>(u->mel.frames());
    phonemes += static_cast<double>(u->phones.ids.size());
  }
  const double n_mel = frames * model.config().n_mels;

  Vector mean_voice;
  double l1 = 0.0, mse = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Utterance& u = *batch[i];
    ContentEncoder::Cache cc;
    DurationPredictor::Cache dc;
    ConditionalDecoder::Cache mc;
    const Matrix hiddens = model.content.forward(u.phones.ids, backward ? &cc : nullptr);
    const Vector pred = model.duration.forward(hiddens, backward ? &dc : nullptr);
    const Vector z = normalize_durations(u.phones.durations);
    const Matrix frames_h = length_regulate(hiddens, u.phones.durations);
    const Matrix target = to_channels(u.mel);
    if (frames_h.cols() != target.cols())
      throw AlignmentError("stage 1: '" + u.id + "' durations do not cover the spectrogram");

    Matrix mel_pred;
    if (speaker_rows[i] >= 0) {
      mel_pred = model.decoder.forward(frames_h, speaker_rows[i], backward ? &mc : nullptr);
    } else {
      if (backward) throw InputError("stage-1 loss: no gradients through the mean embedding");
      if (mean_voice.size() == 0) mean_voice = model.decoder.speakers->value.rowwise().mean();
      mel_pred = model.decoder.forward(frames_h, mean_voice);
    }
    const Matrix dm = mel_pred - target;
    const Vector dd = pred - z;
    l1 += dm.cwiseAbs().sum();
    mse += dd.squaredNorm();
    if (backward) {
      const Matrix dmel = dm.unaryExpr(&sign) * (weights.mel / n_mel);
      const Matrix dframes = model.decoder.backward(dmel, mc);
      model.duration.backward(dd * (2.0 * weights.duration / phonemes), dc);
      model.content.backward(length_regulate_backward(dframes, u.phones.durations), cc);
    }
  }
  LossReport r;
  r.l1_mel = l1 / n_mel;
  r.mse_duration = mse / phonemes;
  r.total = weights.mel * r.l1_mel + weights.duration * r.mse_duration;
  return r;
}

LossReport stage2_batch_loss(UnetTts& model, const Batch& batch, const LossWeights& weights, bool backward,
                             AlignmentTally* tally, bool duration_term) {
  if (batch.empty()) throw InputError("stage-2 loss: empty batch");
  double frames = 0.0, phonemes = 0.0;
  for (const Utterance* u : batch) {
    frames += static_cast<double>(u->mel.frames());
    phonemes += static_cast<double>(u->phones.ids.size());
  }
  const double n_mel = frames * model.config().n_mels;
  const double n_con = frames * model.config().hidden;

  double l1 = 0.0, l2 = 0.0, mse = 0.0;
  for (const Utterance* up : batch) {
    const Utterance& u = *up;
    const Matrix hiddens = model.content.forward(u.phones.ids);
    if (duration_term) {
      DurationPredictor::Cache dc;
      const Vector dd = model.duration.forward(hiddens, backward ? &dc : nullptr) - normalize_durations(u.phones.durations);
      mse += dd.squaredNorm();
      if (backward) model.duration.backward(dd * (2.0 * weights.duration / phonemes), dc);
    }
    const Matrix content = length_regulate(hiddens, u.phones.durations);
    const Matrix mel = to_channels(u.mel);
    StyleEncoder::Cache sc;
    MelDecoder::Cache mc;
    const StyleEncoder::Output style = model.style.forward(mel, backward ? &sc : nullptr);
    if (tally) {
      ++tally->checks;
      if (content.cols() != style.content_pred.cols() || content.cols() != mel.cols()) ++tally->violations;
    }
    if (content.cols() != style.content_pred.cols() || content.cols() != mel.cols())
      throw AlignmentError("stage 2: '" + u.id + "' content (" + std::to_string(content.cols()) +
                           " frames) and content_pred (" + std::to_string(style.content_pred.cols()) +
                           " frames) are misaligned");
    const Matrix mel_pred = model.decoder.forward(content, style.stats, backward ? &mc : nullptr);
    const Matrix dm = mel_pred - mel;
    const Matrix dc = style.content_pred - content;
    l1 += dm.cwiseAbs().sum();
    l2 += dc.squaredNorm();
    if (backward) {
      MelDecoder::Grad g = model.decoder.backward(dm.unaryExpr(&sign) * (weights.mel / n_mel), mc);
      model.style.backward(g.dstats, dc * (2.0 * weights.content / n_con), sc);
    }
  }
  LossReport r;
  r.l1_mel = l1 / n_mel;
  r.l2_content = l2 / n_con;
  r.total = weights.mel * r.l1_mel + weights.content * r.l2_content;
  if (duration_term) {
    r.mse_duration = mse / phonemes;
    r.total += weights.duration * r.mse_duration;
  }
  return r;
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<nn::Param*> params, const TrainConfig& cfg)
    : params_(std::move(params)), lr_(cfg.learning_rate), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.epsilon) {
  for (const nn::Param* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Matrix& g = params_[i]->grad;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    params_[i]->value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

void Adam::save(Container& c) const {
  c.meta["adam_t"] = t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    c.put("adam_m/" + params_[i]->name, m_[i]);
    c.put("adam_v/" + params_[i]->name, v_[i]);
  }
}

void Adam::load(const Container& c) {
  try {
    t_ = c.meta.at("adam_t").get<long>();
  } catch (const nlohmann::json::exception& e) {
    throw StateError(std::string("checkpoint has no optimizer state: ") + e.what());
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const std::string& name = params_[i]->name;
    if (!c.has("adam_m/" + name) || !c.has("adam_v/" + name))
      throw StateError("checkpoint lacks optimizer state for '" + name + "'");
    m_[i] = c.matrix("adam_m/" + name);
    v_[i] = c.matrix("adam_v/" + name);
    if (m_[i].rows() != params_[i]->value.rows() || m_[i].cols() != params_[i]->value.cols() ||
        v_[i].rows() != m_[i].rows() || v_[i].cols() != m_[i].cols())
      throw StateError("optimizer state for '" + name + "' has the wrong shape");
  }
}

// ---------------------------------------------------------------------------

Matrix Checkpoint::param(const std::string& name) const {
  if (!data.has("param/" + name)) throw StateError("checkpoint has no parameter '" + name + "'");
  return data.matrix("param/" + name);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  Container c = ckpt.data;
  c.meta["format"] = kCheckpointFormat;
  c.meta["stage"] = ckpt.stage;
  c.meta["model"] = ckpt.model.to_json();
  c.meta["train"] = ckpt.train.to_json();
  c.meta["step"] = ckpt.step;
  c.meta["rng"] = {{"key", ckpt.rng_key}, {"counter", ckpt.rng_counter}};
  c.meta["best_val"] = ckpt.best_val;
  c.meta["best_step"] = ckpt.best_step;
  c.meta["best"] = ckpt.best;
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  c.save(tmp);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.data = Container::load(path);
  const auto& m = ckpt.data.meta;
  try {
    const int format = m.at("format").get<int>();
    if (format != kCheckpointFormat)
      throw LoadError("checkpoint '" + path.string() + "' has format " + std::to_string(format) + ", expected " +
                      std::to_string(kCheckpointFormat));
    ckpt.stage = m.at("stage").get<int>();
    ckpt.model = ModelConfig::from_json(m.at("model"));
    ckpt.train = TrainConfig::from_json(m.at("train"));
    ckpt.step = m.at("step").get<long>();
    ckpt.rng_key = m.at("rng").at("key").get<std::uint64_t>();
    ckpt.rng_counter = m.at("rng").at("counter").get<std::uint64_t>();
    ckpt.best_val = m.at("best_val").get<double>();
    ckpt.best_step = m.at("best_step").get<long>();
    ckpt.best = m.at("best").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("checkpoint '" + path.string() + "': " + e.what());
  } catch (const ConfigError& e) {
    throw LoadError("checkpoint '" + path.string() + "': " + e.what());
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!(ckpt.model == expected))
    throw StateError("checkpoint '" + path.string() + "' was trained with model config " + ckpt.model.to_json().dump() +
                     ", requested " + expected.to_json().dump());
  return ckpt;
}

void store_params(Container& c, const nn::ParamSet& params) {
  for (const nn::Param* p : params.all()) c.put("param/" + p->name, p->value);
}

void restore_params(const Container& c, nn::ParamSet& params, const std::vector<std::string>& prefixes) {
  for (nn::Param* p : params.all()) {
    const bool wanted = prefixes.empty() || std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& s) {
                          return p->name.compare(0, s.size(), s) == 0;
                        });
    if (!wanted) continue;
    const std::string key = "param/" + p->name;
    if (!c.has(key)) throw StateError("checkpoint has no parameter '" + p->name + "'");
    Matrix v = c.matrix(key);
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
      throw StateError("checkpoint parameter '" + p->name + "' has the wrong shape");
    p->value = std::move(v);
  }
}

std::unique_ptr<PretrainModel> load_pretrain_model(const Checkpoint& ckpt) {
  if (ckpt.stage != 1) throw StateError("expected a stage-1 checkpoint, got stage " + std::to_string(ckpt.stage));
  auto model = std::make_unique<PretrainModel>(ckpt.model, ckpt.train.seed);
  restore_params(ckpt.data, model->params());
  return model;
}

std::unique_ptr<UnetTts> load_unet(const Checkpoint& ckpt) {
  if (ckpt.stage != 2) throw StateError("expected a stage-2 checkpoint, got stage " + std::to_string(ckpt.stage));
  auto model = std::make_unique<UnetTts>(ckpt.model, ckpt.train.seed);
  restore_params(ckpt.data, model->params());
  model->trained = true;
  return model;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> sample_batch(std::uint64_t seed, long step, std::size_t pool, int batch_size) {
  if (pool == 0) throw InputError("cannot sample a batch from an empty pool");
  Rng rng = Rng(seed).fork(0xba7c, static_cast<std::uint64_t>(step));
  const std::size_t n = std::min(pool, static_cast<std::size_t>(batch_size));
  std::vector<std::size_t> idx(pool);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(pool - i)]);
  idx.resize(n);
  return idx;
}

namespace {

Batch pick(const Batch& pool, const std::vector<std::size_t>& idx) {
  Batch b;
  for (std::size_t i : idx) b.push_back(pool[i]);
  return b;
}

Batch val_subset(const Corpus& corpus, int limit) {
  Batch all = corpus.select("val");
  if (all.empty()) all = corpus.select("train");
  if (limit <= 0 || static_cast<std::size_t>(limit) >= all.size()) return all;
  Batch out;
  for (int i = 0; i < limit; ++i) out.push_back(all[static_cast<std::size_t>(i) * all.size() / static_cast<std::size_t>(limit)]);
  return out;
}

std::vector<LossReport> prior_rows(const std::filesystem::path& path, long upto) {
  std::vector<LossReport> rows;
  if (!std::filesystem::exists(path)) return rows;
  for (const auto& r : read_loss_csv(path))
    if (r.step <= upto) rows.push_back(r);
  return rows;
}

struct LoopHooks {
  int stage = 1;
  const ModelConfig* model_cfg = nullptr;
  nn::ParamSet* params = nullptr;
  std::vector<nn::Param*> trainable;
  std::function<LossReport(const Batch&)> train_step;  // accumulates gradients
  std::function<LossReport()> validate;
};

TrainResult run_loop(const Batch& pool, const TrainConfig& cfg, const TrainOptions& options, LoopHooks hooks) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result;
  Adam adam(hooks.trainable, cfg);

  Checkpoint ck;
  ck.stage = hooks.stage;
  ck.model = *hooks.model_cfg;
  ck.train = cfg;
  ck.rng_key = Rng(cfg.seed).key();
  ck.best_val = std::numeric_limits<double>::infinity();

  long start = 0;
  std::vector<LossReport> csv_train, csv_val;
  const bool write = !options.out_dir.empty();
  if (write) std::filesystem::create_directories(options.out_dir);

  if (options.resume) {
    const Checkpoint& r = *options.resume;
    if (r.stage != hooks.stage)
      throw StateError("cannot resume stage " + std::to_string(hooks.stage) + " from a stage-" +
                       std::to_string(r.stage) + " checkpoint");
    if (!(r.model == *hooks.model_cfg)) throw StateError("resume checkpoint has a different model config");
    restore_params(r.data, *hooks.params);
    adam.load(r.data);
    start = r.step;
    ck.best_val = r.best_val;
    ck.best_step = r.best_step;
    if (write) {
      csv_train = prior_rows(options.out_dir / "train_loss.csv", start);
      csv_val = prior_rows(options.out_dir / "val_loss.csv", start);
    }
  }

  std::ofstream train_csv, val_csv;
  if (write) {
    write_loss_csv(csv_train, options.out_dir / "train_loss.csv");
    write_loss_csv(csv_val, options.out_dir / "val_loss.csv");
    train_csv.open(options.out_dir / "train_loss.csv", std::ios::app);
    val_csv.open(options.out_dir / "val_loss.csv", std::ios::app);
  }

  auto snapshot = [&](long step) {
    ck.step = step;
    ck.rng_counter = static_cast<std::uint64_t>(step);
    ck.data = Container{};
    store_params(ck.data, *hooks.params);
    adam.save(ck.data);
  };

  auto run_val = [&](long step) {
    LossReport v = hooks.validate();
    v.step = step;
    require_finite(v, "stage " + std::to_string(hooks.stage) + " validation at step " + std::to_string(step));
    result.val.push_back(v);
    if (write) val_csv << to_csv_row(v) << '\n' << std::flush;
    if (options.on_val) options.on_val(v);
    if (v.total < ck.best_val) {
      ck.best_val = v.total;
      ck.best_step = step;
      if (write) {
        snapshot(step);
        ck.best = true;
        save_checkpoint(ck, options.out_dir / "best.ckpt");
        ck.best = false;
      }
    }
  };

  if (start == 0) run_val(0);
  for (long s = start + 1; s <= cfg.steps; ++s) {
    const Batch batch = pick(pool, sample_batch(cfg.seed, s, pool.size(), cfg.batch_size));
    hooks.params->zero_grad();
    LossReport r = hooks.train_step(batch);
    r.step = s;
    if (!std::isfinite(r.total)) {
      std::string ids;
      for (const Utterance* u : batch) ids += (ids.empty() ? "" : " ") + u->id;
      require_finite(r, "stage " + std::to_string(hooks.stage) + " diverged at step " + std::to_string(s) +
                            " on batch [" + ids + "]");
    }
    adam.step();
    result.train.push_back(r);
    if (write) train_csv << to_csv_row(r) << '\n';
    if (s % cfg.val_every == 0 || s == cfg.steps) run_val(s);
    if (write && (s % cfg.checkpoint_every == 0 || s == cfg.steps)) {
      snapshot(s);
      save_checkpoint(ck, options.out_dir / "last.ckpt");
    }
  }
  snapshot(std::max<long>(start, cfg.steps));
  result.final = ck;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::vector<nn::Param*> params_with(nn::ParamSet& params, const std::vector<std::string>& prefixes) {
  std::vector<nn::Param*> out;
  for (const auto& prefix : prefixes)
    for (nn::Param* p : params.with_prefix(prefix)) out.push_back(p);
  return out;
}

LossWeights weights_of(const TrainConfig& cfg) { return {cfg.w_mel, cfg.w_content, cfg.w_duration}; }

}  // namespace

TrainResult train_stage1(const Corpus& corpus, const ModelConfig& model_cfg, const TrainConfig& config,
                         const TrainOptions& options) {
  TrainConfig cfg = config;
  cfg.stage = 1;
  cfg.validate();
  model_cfg.validate();
  if (model_cfg.n_speakers < corpus.spec.train_speakers)
    throw ConfigError("model: n_speakers (" + std::to_string(model_cfg.n_speakers) + ") is smaller than the " +
                      std::to_string(corpus.spec.train_speakers) + " train speakers");
  const Batch pool = corpus.select("train");
  if (pool.empty()) throw InputError("corpus has no train utterances");
  const Batch val = val_subset(corpus, cfg.val_utterances);
  // Val speakers are not in the table: decode with the average voice, unless
  // the val set had to fall back to train speakers.
  std::vector<int> val_rows;
  for (const Utterance* u : val) val_rows.push_back(u->split == "train" ? corpus.speaker_row(u->speaker_id) : -1);

  PretrainModel model(model_cfg, cfg.seed);
  const LossWeights w = weights_of(cfg);
  LoopHooks hooks;
  hooks.stage = 1;
  hooks.model_cfg = &model_cfg;
  hooks.params = &model.params();
  hooks.trainable = model.params().all();
  hooks.train_step = [&](const Batch& b) {
    std::vector<int> rows;
    for (const Utterance* u : b) rows.push_back(corpus.speaker_row(u->speaker_id));
    return stage1_batch_loss(model, b, rows, w, true);
  };
  hooks.validate = [&]() { return stage1_batch_loss(model, val, val_rows, w, false); };
  return run_loop(pool, cfg, options, std::move(hooks));
}

TrainResult train_stage2(const Corpus& corpus, const Checkpoint& stage1, const ModelConfig& model_cfg,
                         const TrainConfig& config, const TrainOptions& options) {
  TrainConfig cfg = config;
  cfg.stage = 2;
  cfg.validate();
  model_cfg.validate();
  if (stage1.stage != 1) throw StateError("train: --from must name a stage-1 checkpoint, got stage " + std::to_string(stage1.stage));
  ModelConfig shared = stage1.model;
  shared.single_level_stats = model_cfg.single_level_stats;
  if (!(shared == model_cfg))
    throw StateError("stage-1 checkpoint model config " + stage1.model.to_json().dump() +
                     " does not match the requested " + model_cfg.to_json().dump());

  const Batch pool = corpus.select("train");
  if (pool.empty()) throw InputError("corpus has no train utterances");
  const Batch val = val_subset(corpus, cfg.val_utterances);

  UnetTts model(model_cfg, cfg.seed);
  restore_params(stage1.data, model.params(), {"content.", "duration."});
  std::vector<std::string> trainable{"style.", "decoder."};
  std::vector<std::string> frozen{"content."};
  if (options.unfreeze_duration) trainable.push_back("duration.");
  else frozen.push_back("duration.");

  std::vector<std::pair<nn::Param*, Matrix>> before;
  for (nn::Param* p : params_with(model.params(), frozen)) before.emplace_back(p, p->value);

  const LossWeights w = weights_of(cfg);
  AlignmentTally tally;
  LoopHooks hooks;
  hooks.stage = 2;
  hooks.model_cfg = &model_cfg;
  hooks.params = &model.params();
  hooks.trainable = params_with(model.params(), trainable);
  hooks.train_step = [&](const Batch& b) {
    LossReport r = stage2_batch_loss(model, b, w, true, &tally, options.unfreeze_duration);
    for (auto& [p, v] : before)
      if (!p->grad.isZero(0.0)) throw StateError("frozen parameter '" + p->name + "' received a gradient");
    return r;
  };
  hooks.validate = [&]() { return stage2_batch_loss(model, val, w, false, nullptr, options.unfreeze_duration); };
  TrainResult result = run_loop(pool, cfg, options, std::move(hooks));

  for (auto& [p, v] : before)
    if (p->value.size() != v.size() ||
        std::memcmp(p->value.data(), v.data(), sizeof(double) * static_cast<std::size_t>(v.size())) != 0)
      throw StateError("frozen parameter '" + p->name + "' changed during stage 2");
  result.alignment = tally;
  return result;
}

double duration_correlation(const ContentEncoder& content, const DurationPredictor& duration, const Batch& batch) {
  std::vector<double> a, b;
  for (const Utterance* u : batch) {
    const Vector pred = duration.forward(content.forward(u->phones.ids));
    const Vector z = normalize_durations(u->phones.durations);
    for (nn::Index i = 0; i < z.size(); ++i) {
      a.push_back(pred(i));
      b.push_back(z(i));
    }
  }
  if (a.size() < 2) throw InputError("duration_correlation: need at least two phonemes");
  const Eigen::Map<const Vector> x(a.data(), static_cast<nn::Index>(a.size()));
  const Eigen::Map<const Vector> y(b.data(), static_cast<nn::Index>(b.size()));
  const Vector xc = x.array() - x.mean();
  const Vector yc = y.array() - y.mean();
  const double den = std::sqrt(xc.squaredNorm() * yc.squaredNorm());
  return den > 0.0 ? xc.dot(yc) / den : 0.0;
}

}  // namespace utts

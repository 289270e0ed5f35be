// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "utts/gradsuite.hpp"

#include <cmath>

#include "utts/corpus.hpp"
#include "utts/training.hpp"

namespace utts {

using nn::GradTarget;

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.hidden = 16;
  c.unet_levels = 2;
  c.content_blocks = 2;
  c.n_speakers = 3;
  return c;
}

namespace {

Matrix random_matrix(Rng& rng, nn::Index rows, nn::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (nn::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

std::vector<GradTarget> param_targets(nn::ParamSet& params, const std::string& prefix = "") {
  std::vector<GradTarget> out;
  for (nn::Param* p : prefix.empty() ? params.all() : params.with_prefix(prefix))
    out.push_back({p->name, &p->value, &p->grad});
  return out;
}

double project(const Matrix& r, const Matrix& y) { return r.cwiseProduct(y).sum(); }

class Suite {
 public:
  explicit Suite(const GradSuiteOptions& o) : options_(o), rng_(Rng(o.seed).fork(0x96ad)) {}

  Rng& rng() { return rng_; }

  void check(const std::string& op, const std::function<double()>& loss, const std::function<void()>& analytic,
             const std::vector<GradTarget>& targets) {
    nn::GradCheckOptions gc;
    gc.step = options_.step;
    gc.max_entries = options_.max_entries;
    gc.sample_seed = options_.seed + entries_.size();
    entries_.push_back({op, nn::finite_diff_check(op, loss, analytic, targets, gc)});
  }

  std::vector<GradSuiteEntry> take() { return std::move(entries_); }

 private:
  GradSuiteOptions options_;
  Rng rng_;
  std::vector<GradSuiteEntry> entries_;
};

void check_conv_and_activations(Suite& s) {
  Rng& rng = s.rng();
  {
    nn::ParamSet ps;
    const nn::Conv1d conv = nn::Conv1d::create(ps, "conv", 3, 4, 3, rng);
    Matrix x = random_matrix(rng, 3, 7);
    const Matrix r = random_matrix(rng, 4, 7);
    Matrix dx;
    auto targets = param_targets(ps);
    targets.push_back({"x", &x, &dx});
    s.check("conv1d", [&] { return project(r, conv.forward(x)); },
            [&] {
              ps.zero_grad();
              nn::Conv1d::Cache c;
              conv.forward(x, &c);
              dx = conv.backward(r, c);
            },
            targets);
  }
  {
    Matrix x = random_matrix(rng, 4, 6);
    x = x.unaryExpr([](double v) { return std::abs(v) < 1e-2 ? std::copysign(1e-2, v) : v; });  // off the kink
    const Matrix r = random_matrix(rng, 4, 6);
    Matrix dx;
    s.check("relu", [&] { return project(r, nn::relu(x)); }, [&] { dx = nn::relu_backward(r, x); }, {{"x", &x, &dx}});
  }
}

void check_norms(Suite& s) {
  Rng& rng = s.rng();
  for (const bool masked : {false, true}) {
    Matrix x = random_matrix(rng, 5, 9, 2.0);
    const Matrix r = random_matrix(rng, 5, 9);
    const Vector a = random_matrix(rng, 5, 1), b = random_matrix(rng, 5, 1);
    nn::FrameMask mask(9, 1);
    mask[7] = mask[8] = 0;
    const nn::FrameMask* m = masked ? &mask : nullptr;
    Matrix dx;
    s.check(masked ? "instance_norm_masked" : "instance_norm",
            [&] {
              nn::ChannelStats st;
              const Matrix y = nn::instance_norm(x, &st, nullptr, m);
              return project(r, y) + a.dot(st.mean) + b.dot(st.std);
            },
            [&] {
              nn::ChannelStats st;
              nn::NormCache c;
              nn::instance_norm(x, &st, &c, m);
              const nn::ChannelStats dstats{a, b};
              dx = nn::instance_norm_backward(r, c, &dstats);
            },
            {{"x", &x, &dx}});
  }
  {
    Matrix x = random_matrix(rng, 5, 8, 1.5);
    Matrix mean = random_matrix(rng, 5, 1);
    Matrix std = random_matrix(rng, 5, 1).cwiseAbs().array() + 0.5;
    const Matrix r = random_matrix(rng, 5, 8);
    Matrix dx, dmean, dstd;
    s.check("adain", [&] { return project(r, nn::adain(x, {mean.col(0), std.col(0)})); },
            [&] {
              nn::AdainCache c;
              const nn::ChannelStats ref{mean.col(0), std.col(0)};
              nn::adain(x, ref, &c);
              nn::AdainGrad g = nn::adain_backward(r, ref, c);
              dx = g.dx;
              dmean = g.dref.mean;
              dstd = g.dref.std;
            },
            {{"x", &x, &dx}, {"ref.mean", &mean, &dmean}, {"ref.std", &std, &dstd}});
  }
}

void check_blocks(Suite& s) {
  Rng& rng = s.rng();
  for (const bool masked : {false, true}) {
    nn::ParamSet ps;
    const nn::SelfAttention attn = nn::SelfAttention::create(ps, "attn", 6, rng);
    Matrix x = random_matrix(rng, 6, 5);
    const Matrix r = random_matrix(rng, 6, 5);
    nn::FrameMask mask{1, 1, 1, 0, 1};
    const nn::FrameMask* m = masked ? &mask : nullptr;
    Matrix dx;
    auto targets = param_targets(ps);
    targets.push_back({"x", &x, &dx});
    s.check(masked ? "self_attention_masked" : "self_attention", [&] { return project(r, attn.forward(x, nullptr, m)); },
            [&] {
              ps.zero_grad();
              nn::SelfAttention::Cache c;
              attn.forward(x, &c, m);
              dx = attn.backward(r, c);
            },
            targets);
  }
  {
    nn::ParamSet ps;
    const nn::ResCnnBlock block = nn::ResCnnBlock::create(ps, "block", 4, 5, rng);
    Matrix x = random_matrix(rng, 4, 8);
    const Matrix r = random_matrix(rng, 4, 8);
    Matrix dx;
    auto targets = param_targets(ps);
    targets.push_back({"x", &x, &dx});
    s.check("rescnn_block", [&] { return project(r, block.forward(x)); },
            [&] {
              ps.zero_grad();
              nn::ResCnnBlock::Cache c;
              block.forward(x, &c);
              dx = block.backward(r, c);
            },
            targets);
  }
  {
    nn::ParamSet ps;
    const nn::Embedding emb = nn::Embedding::create(ps, "emb", 5, 3, rng);
    const std::vector<int> ids{0, 3, 3, 1};
    const Matrix r = random_matrix(rng, 3, 4);
    s.check("embedding", [&] { return project(r, emb.forward(ids)); },
            [&] {
              ps.zero_grad();
              emb.backward(r, ids);
            },
            param_targets(ps));
  }
  {
    Matrix x = random_matrix(rng, 3, 4);
    const Durations d{2, 1, 3, 2};
    const Matrix r = random_matrix(rng, 3, 8);
    Matrix dx;
    s.check("length_regulate", [&] { return project(r, length_regulate(x, d)); },
            [&] { dx = length_regulate_backward(r, d); }, {{"x", &x, &dx}});
  }
}

void check_components(Suite& s, const ModelConfig& cfg) {
  Rng& rng = s.rng();
  const std::vector<int> ids{0, 4, 2, 9, 0};
  {
    UnetTts m(cfg, 11);
    const Matrix r = random_matrix(rng, cfg.hidden, 5);
    s.check("content_encoder", [&] { return project(r, m.content.forward(ids)); },
            [&] {
              m.params().zero_grad();
              ContentEncoder::Cache c;
              m.content.forward(ids, &c);
              m.content.backward(r, c);
            },
            param_targets(m.params(), "content."));
  }
  {
    UnetTts m(cfg, 12);
    const Matrix x = random_matrix(rng, cfg.hidden, 5);
    const Vector r = random_matrix(rng, 5, 1);
    s.check("duration_predictor", [&] { return r.dot(m.duration.forward(x)); },
            [&] {
              m.params().zero_grad();
              DurationPredictor::Cache c;
              m.duration.forward(x, &c);
              m.duration.backward(r, c);
            },
            param_targets(m.params(), "duration."));
  }
  {
    UnetTts m(cfg, 13);
    const Matrix mel = random_matrix(rng, cfg.n_mels, 12, 2.0);
    const Matrix r = random_matrix(rng, cfg.hidden, 12);
    std::vector<nn::ChannelStats> ds;
    for (int l = 0; l < cfg.unet_levels; ++l)
      ds.push_back({random_matrix(rng, cfg.hidden, 1).col(0), random_matrix(rng, cfg.hidden, 1).col(0)});
    auto loss = [&](const StyleEncoder::Output& o) {
      double v = project(r, o.content_pred);
      for (int l = 0; l < cfg.unet_levels; ++l)
        v += ds[l].mean.dot(o.stats.levels[l].mean) + ds[l].std.dot(o.stats.levels[l].std);
      return v;
    };
    s.check("style_encoder", [&] { return loss(m.style.forward(mel)); },
            [&] {
              m.params().zero_grad();
              StyleEncoder::Cache c;
              m.style.forward(mel, &c);
              m.style.backward(ds, r, c);
            },
            param_targets(m.params(), "style."));
  }
  for (const bool single : {false, true}) {
    ModelConfig c2 = cfg;
    c2.single_level_stats = single;
    UnetTts m(c2, 14);
    Matrix content = random_matrix(rng, cfg.hidden, 10);
    std::vector<Matrix> mean, std;
    for (int l = 0; l < cfg.unet_levels; ++l) {
      mean.push_back(random_matrix(rng, cfg.hidden, 1));
      std.push_back(random_matrix(rng, cfg.hidden, 1).cwiseAbs().array() + 0.5);
    }
    std::vector<Matrix> dmean(mean.size()), dstd(std.size());
    Matrix dcontent;
    const Matrix r = random_matrix(rng, cfg.n_mels, 10);
    auto stats = [&] {
      StyleStats st;
      for (std::size_t l = 0; l < mean.size(); ++l) st.levels.push_back({mean[l].col(0), std[l].col(0)});
      return st;
    };
    auto targets = param_targets(m.params(), "decoder.");
    targets.push_back({"content", &content, &dcontent});
    for (std::size_t l = 0; l < mean.size(); ++l) {
      targets.push_back({"stats" + std::to_string(l) + ".mean", &mean[l], &dmean[l]});
      targets.push_back({"stats" + std::to_string(l) + ".std", &std[l], &dstd[l]});
    }
    s.check(single ? "mel_decoder_single_level" : "mel_decoder",
            [&] { return project(r, m.decoder.forward(content, stats())); },
            [&] {
              m.params().zero_grad();
              MelDecoder::Cache c;
              m.decoder.forward(content, stats(), &c);
              MelDecoder::Grad g = m.decoder.backward(r, c);
              dcontent = g.dcontent;
              for (std::size_t l = 0; l < mean.size(); ++l) {
                dmean[l] = g.dstats[l].mean;
                dstd[l] = g.dstats[l].std;
              }
            },
            targets);
  }
  {
    PretrainModel m(cfg, 15);
    Matrix content = random_matrix(rng, cfg.hidden, 9);
    const Matrix r = random_matrix(rng, cfg.n_mels, 9);
    Matrix dcontent;
    auto targets = param_targets(m.params(), "pretrain.");
    targets.push_back({"content", &content, &dcontent});
    s.check("conditional_decoder", [&] { return project(r, m.decoder.forward(content, 1)); },
            [&] {
              m.params().zero_grad();
              ConditionalDecoder::Cache c;
              m.decoder.forward(content, 1, &c);
              dcontent = m.decoder.backward(r, c);
            },
            targets);
  }
}

void check_composites(Suite& s, const ModelConfig& cfg) {
  CorpusSpec spec;
  spec.min_len = 4;
  spec.max_len = 6;
  const CorpusRenderer renderer(spec);
  std::vector<Utterance> utts;
  for (int i = 0; i < 2; ++i) {
    const auto ids = renderer.make_text(900 + i, 900 + i, renderer.styles()[0]);
    utts.push_back(renderer.make_utterance(ids, i, i, 900 + i));
  }
  const Batch batch{&utts[0], &utts[1]};
  // Stage-1 mel and duration terms, one at a time.
  {
    PretrainModel m(cfg, 21);
    const std::vector<int> rows{0, 1};
    const LossWeights mel_only{1.0, 1.0, 0.0};
    s.check("stage1_loss_mel", [&] { return stage1_batch_loss(m, batch, rows, mel_only, false).total; },
            [&] {
              m.params().zero_grad();
              stage1_batch_loss(m, batch, rows, mel_only, true);
            },
            param_targets(m.params()));
  }
  {
    PretrainModel m(cfg, 23);
    const std::vector<int> rows{0, 1};
    const LossWeights duration_only{0.0, 1.0, 1.0};
    s.check("stage1_loss_duration", [&] { return stage1_batch_loss(m, batch, rows, duration_only, false).total; },
            [&] {
              m.params().zero_grad();
              stage1_batch_loss(m, batch, rows, duration_only, true);
            },
            param_targets(m.params(), "duration."));
  }
  for (const bool single : {false, true}) {
    ModelConfig c2 = cfg;
    c2.single_level_stats = single;
    UnetTts m(c2, 22);
    auto targets = param_targets(m.params(), "style.");
    for (auto& t : param_targets(m.params(), "decoder.")) targets.push_back(t);
    s.check(single ? "stage2_loss_single_level" : "stage2_loss",
            [&] { return stage2_batch_loss(m, batch, {}, false).total; },
            [&] {
              m.params().zero_grad();
              stage2_batch_loss(m, batch, {}, true);
            },
            targets);
  }
}

}  // namespace

std::vector<GradSuiteEntry> run_grad_suite(const GradSuiteOptions& options) {
  Suite s(options);
  const ModelConfig cfg = tiny_model_config();
  check_conv_and_activations(s);
  check_norms(s);
  check_blocks(s);
  check_components(s, cfg);
  check_composites(s, cfg);
  return s.take();
}

}  // namespace utts

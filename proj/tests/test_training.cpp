// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "utts/container.hpp"
#include "utts/error.hpp"
#include "utts/training.hpp"

using namespace utts;
namespace fs = std::filesystem;

namespace {

TrainConfig quick_config(int steps) {
  TrainConfig t;
  t.steps = steps;
  t.batch_size = 4;
  t.val_every = 5;
  t.checkpoint_every = 10;
  t.val_utterances = 3;
  t.seed = 5;
  return t;
}

const Checkpoint& stage1_checkpoint() {
  static const Checkpoint ck = [] {
    auto t = quick_config(30);
    t.stage = 1;
    return train_stage1(test::small_corpus(), test::tiny_config(), t).final;
  }();
  return ck;
}

std::string with_fixed_crc(std::string bytes) {
  const std::uint32_t crc = crc32_of(std::string_view(bytes).substr(0, bytes.size() - 4));
  for (int i = 0; i < 4; ++i) bytes[bytes.size() - 4 + static_cast<std::size_t>(i)] = static_cast<char>((crc >> (8 * i)) & 0xff);
  return bytes;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << bytes;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("stage-2 loss examples") {
    Rng rng(1);
    const Matrix mel = test::random_matrix(rng, 80, 12), content = test::random_matrix(rng, 16, 12);
    auto r = compute_stage2_loss(mel, mel, content, content);
    CHECK(r.total == 0.0);
    r = compute_stage2_loss(mel, mel.array() + 1.0, content, content);
    CHECK(r.l1_mel == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.l2_content == 0.0);
    CHECK(r.total == doctest::Approx(1.0).epsilon(1e-12));
    r = compute_stage2_loss(mel, mel, content, content.array() + 2.0);
    CHECK(r.l1_mel == 0.0);
    CHECK(r.l2_content == doctest::Approx(4.0).epsilon(1e-12));
    CHECK_THROWS_AS(compute_stage2_loss(mel, mel.leftCols(11), content, content), InputError);
    CHECK_THROWS_AS(compute_stage2_loss(mel, mel, content, content.leftCols(3)), InputError);
  }

  TEST_CASE("total is the weighted sum of its parts") {
    Rng rng(2);
    const Matrix a = test::random_matrix(rng, 80, 9), b = test::random_matrix(rng, 80, 9);
    const Matrix c = test::random_matrix(rng, 16, 9), d = test::random_matrix(rng, 16, 9);
    const auto r = compute_stage2_loss(a, b, c, d, nullptr, {0.5, 3.0, 1.0});
    CHECK(r.total == doctest::Approx(0.5 * r.l1_mel + 3.0 * r.l2_content).epsilon(1e-14));
  }

  TEST_CASE("padded frames leave the loss unchanged") {
    Rng rng(3);
    const Matrix a = test::random_matrix(rng, 80, 10), b = test::random_matrix(rng, 80, 10);
    const Matrix c = test::random_matrix(rng, 16, 10), d = test::random_matrix(rng, 16, 10);
    const auto plain = compute_stage2_loss(a, b, c, d);
    for (int pad : {1, 4, 17}) {
      auto grow = [&](const Matrix& m) {
        Matrix out(m.rows(), m.cols() + pad);
        out << m, test::random_matrix(rng, m.rows(), pad, 50.0);
        return out;
      };
      nn::FrameMask mask(static_cast<std::size_t>(10 + pad), 0);
      std::fill(mask.begin(), mask.begin() + 10, 1);
      const auto padded = compute_stage2_loss(grow(a), grow(b), grow(c), grow(d), &mask);
      CHECK(std::abs(padded.l1_mel - plain.l1_mel) <= 1e-12);
      CHECK(std::abs(padded.l2_content - plain.l2_content) <= 1e-12);
      CHECK(std::abs(padded.total - plain.total) <= 1e-12);
    }
  }

  TEST_CASE("loss CSV round trip") {
    const auto dir = test::temp_dir("csv");
    std::vector<LossReport> rows{{0, 1.5, 2.25, 0.0, 3.75}, {10, 0.1, 1.0 / 3.0, 0.0, 0.1 + 1.0 / 3.0}};
    write_loss_csv(rows, dir / "loss.csv");
    CHECK(test::read_bytes(dir / "loss.csv").rfind(std::string(kLossCsvHeader) + "\n", 0) == 0);
    CHECK(read_loss_csv(dir / "loss.csv") == rows);
    fs::remove_all(dir);
  }

  TEST_CASE("train config round trip and validation") {
    TrainConfig t;
    CHECK(TrainConfig::from_json(t.to_json()) == t);
    t.steps = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = TrainConfig{};
    t.learning_rate = -1.0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    auto j = TrainConfig{}.to_json();
    j["lr"] = 1.0;
    CHECK_THROWS_AS(TrainConfig::from_json(j), ConfigError);
  }

  TEST_CASE("container round trip and corruption") {
    Container c;
    c.meta["hello"] = "world";
    Rng rng(4);
    const Matrix m = test::random_matrix(rng, 3, 5);
    c.put("m", m);
    c.put("ids", std::vector<int>{3, -1, 7});
    const std::string bytes = c.encode();
    CHECK(bytes.substr(0, 4) == "UTTS");
    const Container back = Container::decode(bytes);
    CHECK(test::bit_equal(back.matrix("m"), m));
    CHECK(back.ints("ids") == std::vector<int>{3, -1, 7});
    CHECK(back.meta == c.meta);
    CHECK(back.encode() == bytes);

    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    CHECK_THROWS_AS(Container::decode(flipped), LoadError);
    CHECK_THROWS_AS(Container::decode(bytes.substr(0, bytes.size() - 9)), LoadError);
    CHECK_THROWS_AS(Container::decode(""), LoadError);
    std::string magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(Container::decode(with_fixed_crc(magic)), LoadError);
    std::string version = bytes;
    version[4] = 9;
    CHECK_THROWS_AS(Container::decode(with_fixed_crc(version)), LoadError);
    CHECK_THROWS_AS(back.matrix("absent"), LoadError);
  }

  TEST_CASE("crc32 check value") { CHECK(crc32_of("123456789") == 0xCBF43926u); }

  TEST_CASE("an optimizer step on one example lowers its loss") {
    const auto& corpus = test::small_corpus();
    const Batch one{corpus.select("train")[2]};
    const LossWeights w;

    SUBCASE("stage 2") {
      UnetTts model(test::tiny_config(), 9);
      restore_params(stage1_checkpoint().data, model.params(), {"content.", "duration."});
      std::vector<nn::Param*> trainable = model.params().with_prefix("style.");
      for (auto* p : model.params().with_prefix("decoder.")) trainable.push_back(p);
      std::vector<Matrix> saved;
      for (auto* p : trainable) saved.push_back(p->value);

      model.params().zero_grad();
      const double before = stage2_batch_loss(model, one, w, true).total;
      bool decreased = false;
      for (double lr : {1e-3, 1e-4, 1e-5, 1e-6}) {
        for (std::size_t i = 0; i < trainable.size(); ++i) trainable[i]->value = saved[i];
        TrainConfig t;
        t.learning_rate = lr;
        Adam adam(trainable, t);
        adam.step();
        const double after = stage2_batch_loss(model, one, w, false).total;
        if (after < before) {
          decreased = true;
          break;
        }
      }
      CHECK(decreased);
    }

    SUBCASE("stage 1") {
      PretrainModel model(test::tiny_config(), 9);
      const std::vector<int> rows{corpus.speaker_row(one[0]->speaker_id)};
      model.params().zero_grad();
      const double before = stage1_batch_loss(model, one, rows, {1.0, 1.0, 0.0}, true).total;
      std::vector<Matrix> saved;
      for (auto* p : model.params().all()) saved.push_back(p->value);
      bool decreased = false;
      for (double lr : {1e-3, 1e-4, 1e-5, 1e-6}) {
        auto all = model.params().all();
        for (std::size_t i = 0; i < all.size(); ++i) all[i]->value = saved[i];
        TrainConfig t;
        t.learning_rate = lr;
        Adam adam(all, t);
        adam.step();
        if (stage1_batch_loss(model, one, rows, {1.0, 1.0, 0.0}, false).total < before) {
          decreased = true;
          break;
        }
      }
      CHECK(decreased);
    }
  }

  TEST_CASE("misaligned utterances are rejected") {
    Utterance u = *test::small_corpus().select("train").front();
    u.phones.durations.back() += 1;
    UnetTts model(test::tiny_config(), 3);
    CHECK_THROWS_AS(stage2_batch_loss(model, {&u}, {}, false), AlignmentError);
  }

  TEST_CASE("batches are a deterministic function of seed and step") {
    const auto a = sample_batch(3, 17, 24, 8), b = sample_batch(3, 17, 24, 8);
    CHECK(a == b);
    CHECK(a.size() == 8);
    CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == 8);
    for (auto i : a) CHECK(i < 24);
    CHECK(sample_batch(3, 18, 24, 8) != a);
    CHECK(sample_batch(3, 1, 5, 8).size() == 5);
  }

  TEST_CASE("identical seeds give identical loss streams") {
    auto t = quick_config(12);
    const auto a = train_stage1(test::small_corpus(), test::tiny_config(), t);
    const auto b = train_stage1(test::small_corpus(), test::tiny_config(), t);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    t.seed = 6;
    const auto c = train_stage1(test::small_corpus(), test::tiny_config(), t);
    CHECK(!(a.train == c.train));
    for (const auto& r : a.train) {
      CHECK(std::isfinite(r.total));
      CHECK(r.total == doctest::Approx(r.l1_mel + r.mse_duration).epsilon(1e-12));
    }
  }

  TEST_CASE("checkpoint save, load and save again is byte-identical") {
    const auto dir = test::temp_dir("ckpt");
    const Checkpoint& ck = stage1_checkpoint();
    save_checkpoint(ck, dir / "a.ckpt");
    const Checkpoint back = load_checkpoint(dir / "a.ckpt");
    save_checkpoint(back, dir / "b.ckpt");
    CHECK(test::read_bytes(dir / "a.ckpt") == test::read_bytes(dir / "b.ckpt"));
    CHECK(back.step == ck.step);
    CHECK(back.model == ck.model);
    CHECK(back.train == ck.train);
    CHECK(back.rng_key == ck.rng_key);
    CHECK(back.rng_counter == ck.rng_counter);
    CHECK(!fs::exists(dir / "a.ckpt.tmp"));
    fs::remove_all(dir);
  }

  TEST_CASE("damaged or mismatched checkpoints are refused") {
    const auto dir = test::temp_dir("ckpt_bad");
    save_checkpoint(stage1_checkpoint(), dir / "good.ckpt");
    const std::string bytes = test::read_bytes(dir / "good.ckpt");

    write_bytes(dir / "trunc.ckpt", bytes.substr(0, bytes.size() * 2 / 3));
    CHECK_THROWS_AS(load_checkpoint(dir / "trunc.ckpt"), LoadError);

    std::string flipped = bytes;
    flipped[flipped.size() - 100] ^= 0x01;
    write_bytes(dir / "flip.ckpt", flipped);
    CHECK_THROWS_AS(load_checkpoint(dir / "flip.ckpt"), LoadError);

    Container c = Container::load(dir / "good.ckpt");
    c.meta["format"] = kCheckpointFormat + 1;
    c.save(dir / "future.ckpt");
    CHECK_THROWS_AS(load_checkpoint(dir / "future.ckpt"), LoadError);

    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);

    auto other = test::tiny_config();
    other.hidden = 8;
    CHECK_THROWS_AS(load_checkpoint(dir / "good.ckpt", other), StateError);
    CHECK_NOTHROW(load_checkpoint(dir / "good.ckpt", test::tiny_config()));

    CHECK_THROWS_AS(train_stage2(test::small_corpus(), stage1_checkpoint(), other, quick_config(2)), StateError);
    CHECK_THROWS_AS(load_unet(stage1_checkpoint()), StateError);
    fs::remove_all(dir);
  }

  TEST_CASE("resuming reproduces the uninterrupted run exactly") {
    const auto whole = test::temp_dir("resume_whole"), split = test::temp_dir("resume_split");
    const auto cfg20 = quick_config(20), cfg10 = quick_config(10);
    const auto& corpus = test::small_corpus();

    SUBCASE("stage 1") {
      const auto full = train_stage1(corpus, test::tiny_config(), cfg20, {whole, {}, {}, false});
      train_stage1(corpus, test::tiny_config(), cfg10, {split, {}, {}, false});
      const auto mid = load_checkpoint(split / "last.ckpt", test::tiny_config());
      CHECK(mid.step == 10);
      const auto rest = train_stage1(corpus, test::tiny_config(), cfg20, {split, mid, {}, false});
      REQUIRE(rest.train.size() == 10);
      CHECK(std::equal(rest.train.begin(), rest.train.end(), full.train.begin() + 10));
      CHECK(rest.val == std::vector<LossReport>(full.val.end() - 2, full.val.end()));
      CHECK(test::read_bytes(whole / "train_loss.csv") == test::read_bytes(split / "train_loss.csv"));
      CHECK(test::read_bytes(whole / "val_loss.csv") == test::read_bytes(split / "val_loss.csv"));
      CHECK(test::read_bytes(whole / "last.ckpt") == test::read_bytes(split / "last.ckpt"));
    }

    SUBCASE("stage 2") {
      const auto full = train_stage2(corpus, stage1_checkpoint(), test::tiny_config(), cfg20, {whole, {}, {}, false});
      train_stage2(corpus, stage1_checkpoint(), test::tiny_config(), cfg10, {split, {}, {}, false});
      const auto mid = load_checkpoint(split / "last.ckpt", test::tiny_config());
      const auto rest = train_stage2(corpus, stage1_checkpoint(), test::tiny_config(), cfg20, {split, mid, {}, false});
      CHECK(std::equal(rest.train.begin(), rest.train.end(), full.train.begin() + 10));
      CHECK(test::read_bytes(whole / "train_loss.csv") == test::read_bytes(split / "train_loss.csv"));
      CHECK(test::read_bytes(whole / "last.ckpt") == test::read_bytes(split / "last.ckpt"));
    }
    fs::remove_all(whole);
    fs::remove_all(split);
  }

  TEST_CASE("resume refuses a checkpoint from the other stage") {
    CHECK_THROWS_AS(train_stage2(test::small_corpus(), stage1_checkpoint(), test::tiny_config(), quick_config(2),
                                 {{}, stage1_checkpoint(), {}, false}),
                    StateError);
  }

  TEST_CASE("the best checkpoint tracks the lowest validation loss") {
    const auto dir = test::temp_dir("best");
    const auto r = train_stage1(test::small_corpus(), test::tiny_config(), quick_config(20), {dir, {}, {}, false});
    const auto best = load_checkpoint(dir / "best.ckpt");
    const auto it = std::min_element(r.val.begin(), r.val.end(),
                                     [](const LossReport& a, const LossReport& b) { return a.total < b.total; });
    CHECK(best.best);
    CHECK(best.best_step == it->step);
    CHECK(best.best_val == it->total);
    CHECK(read_loss_csv(dir / "val_loss.csv") == r.val);
    CHECK(read_loss_csv(dir / "train_loss.csv") == r.train);
    fs::remove_all(dir);
  }

  TEST_CASE("stage 2 leaves the content encoder untouched") {
    const auto r = train_stage2(test::small_corpus(), stage1_checkpoint(), test::tiny_config(), quick_config(15));
    const Checkpoint& s1 = stage1_checkpoint();
    long frozen = 0, moved = 0;
    for (const auto& e : r.final.data.arrays()) {
      if (e.name.rfind("param/", 0) != 0) continue;
      const std::string name = e.name.substr(6);
      const Matrix now = r.final.param(name);
      if (name.rfind("content.", 0) == 0 || name.rfind("duration.", 0) == 0) {
        CHECK(test::bit_equal(now, s1.param(name)));
        ++frozen;
      } else if (!test::bit_equal(now, UnetTts(test::tiny_config(), 5).params().get(name).value)) {
        ++moved;
      }
    }
    CHECK(frozen > 0);
    CHECK(moved > 0);
    CHECK(r.alignment.checks == 15 * 4);
    CHECK(r.alignment.violations == 0);
    const auto model = load_unet(r.final);
    CHECK(model->trained);
  }

  TEST_CASE("the duration predictor can be unfrozen in stage 2") {
    TrainOptions opt;
    opt.unfreeze_duration = true;
    const auto r = train_stage2(test::small_corpus(), stage1_checkpoint(), test::tiny_config(), quick_config(5), opt);
    UnetTts names(test::tiny_config());
    bool changed = false;
    for (auto* p : names.params().with_prefix("duration."))
      changed = changed || !test::bit_equal(r.final.param(p->name), stage1_checkpoint().param(p->name));
    CHECK(changed);
    for (auto* p : names.params().with_prefix("content."))
      CHECK(test::bit_equal(r.final.param(p->name), stage1_checkpoint().param(p->name)));
  }

  TEST_CASE("median-filtered validation curve falls over 200 steps") {
    auto t = quick_config(200);
    t.val_every = 10;
    const auto r = train_stage2(test::small_corpus(), stage1_checkpoint(), test::tiny_config(), t);
    std::vector<double> smooth;
    for (std::size_t i = 0; i + 5 <= r.val.size(); ++i) {
      std::vector<double> w;
      for (std::size_t k = i; k < i + 5; ++k) w.push_back(r.val[k].l1_mel);
      smooth.push_back(median(w));
    }
    REQUIRE(smooth.size() >= 10);
    const double first = (smooth[0] + smooth[1] + smooth[2]) / 3.0;
    const double last = (smooth[smooth.size() - 1] + smooth[smooth.size() - 2] + smooth[smooth.size() - 3]) / 3.0;
    CHECK(first > last);
  }

  TEST_CASE("duration correlation is a Pearson coefficient") {
    PretrainModel model(test::tiny_config(), 2);
    const auto batch = test::small_corpus().select("train");
    const double r = duration_correlation(model.content, model.duration, batch);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
    model.duration.head.weight->value.setZero();
    CHECK(duration_correlation(model.content, model.duration, batch) == 0.0);
  }
}

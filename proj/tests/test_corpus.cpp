// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "utts/corpus.hpp"
#include "utts/error.hpp"

using namespace utts;
namespace fs = std::filesystem;

namespace {

const Corpus& default_corpus() {
  static const Corpus c = build_corpus(CorpusSpec{});
  return c;
}

StyleProfile monotone_style() {
  StyleProfile s;
  s.name = "monotone";
  s.f0_range_mult = 0.0;
  s.pause_prob = 0.0;
  return s;
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("inventory has silence plus voiced and unvoiced phonemes") {
    const auto inv = PhonemeInventory::generate(16, 7);
    CHECK(inv.size() == 17);
    CHECK(inv.symbols[0] == "sil");
    CHECK(std::count(inv.voiced.begin() + 1, inv.voiced.end(), true) > 0);
    CHECK(std::count(inv.voiced.begin() + 1, inv.voiced.end(), false) > 0);
    for (const auto& e : inv.envelopes) {
      CHECK(e.size() == 80);
      CHECK(e.allFinite());
    }
    const auto ids = inv.parse("sil v1 u3 sil");
    CHECK(inv.format(ids) == "sil v1 u3 sil");
    CHECK_THROWS_AS(inv.id_of("zz"), InputError);
  }

  TEST_CASE("speaker and style profiles respect their ranges") {
    const CorpusRenderer r(CorpusSpec{});
    for (const auto& s : r.speakers()) {
      CHECK(s.f0_base >= 90.0);
      CHECK(s.f0_base <= 260.0);
      CHECK(s.rate_scale >= 0.6);
      CHECK(s.rate_scale <= 1.6);
    }
    const auto styles = StyleProfile::standard();
    REQUIRE(styles.size() == 5);
    CHECK(styles[kStyleSad].name == "sad");
    CHECK(styles[kStyleSad].duration_mult == 1.5);
    CHECK(styles[kStyleAngry].energy_mult > styles[kStyleNeutral].energy_mult);
    for (const auto& s : styles) {
      CHECK(s.duration_mult > 0.0);
      CHECK(s.energy_mult > 0.0);
      CHECK(s.pause_prob >= 0.0);
      CHECK(s.pause_prob < 1.0);
    }
  }

  TEST_CASE("invalid corpus specs are rejected") {
    auto s = CorpusSpec{};
    s.train_speakers = 3;
    CHECK_THROWS_AS(build_corpus(s), ConfigError);
    s = CorpusSpec{};
    s.clone_speakers = 1;
    CHECK_THROWS_AS(build_corpus(s), ConfigError);
    s = CorpusSpec{};
    s.min_len = 10;
    s.max_len = 5;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    auto j = CorpusSpec{}.to_json();
    j["speakrs"] = 1;
    CHECK_THROWS_AS(CorpusSpec::from_json(j), ConfigError);
  }

  TEST_CASE("silence renders at the log floor") {
    const CorpusRenderer r(test::small_spec());
    const PhonemeSequence ph{{0, 0}, {4, 3}};
    const auto [mel, f0] = r.render(ph, r.speakers()[0], r.styles()[0], 5);
    CHECK(mel.frames() == 7);
    CHECK((mel.data.array() == kLogMelFloor).all());
    for (double v : f0.values) CHECK(v == 0.0);
  }

  TEST_CASE("doubling energy shifts phoneme energy by ln 2") {
    const CorpusRenderer r(test::small_spec());
    const auto ids = r.inventory().parse("sil v1 u3 v2 v4 sil");
    const PhonemeSequence ph{ids, {3, 5, 4, 6, 5, 3}};
    StyleProfile loud = r.styles()[kStyleNeutral];
    loud.energy_mult = 2.0;
    const auto [a, fa] = r.render(ph, r.speakers()[1], r.styles()[kStyleNeutral], 11);
    const auto [b, fb] = r.render(ph, r.speakers()[1], loud, 11);
    const auto ea = phoneme_energy(a, ph.durations), eb = phoneme_energy(b, ph.durations);
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (ids[p] == PhonemeInventory::kSilence) CHECK(eb[p] == ea[p]);
      else CHECK(eb[p] - ea[p] == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    }
  }

  TEST_CASE("F0 is recovered on at least 95 percent of voiced frames over 100 monotone utterances") {
    const CorpusRenderer r(CorpusSpec{});
    const auto style = monotone_style();
    const auto grid = f0_grid();
    long voiced = 0, hits = 0;
    for (int n = 0; n < 100; ++n) {
      const auto& spk = r.speakers()[static_cast<std::size_t>(n) % r.speakers().size()];
      const auto ids = r.make_text(static_cast<std::uint64_t>(n), 0, style);
      const PhonemeSequence ph{ids, r.realize_durations(ids, spk, style, static_cast<std::uint64_t>(n))};
      const auto [mel, truth] = r.render(ph, spk, style, 1000 + static_cast<std::uint64_t>(n));
      const auto est = estimate_f0_mel(mel, grid, r.harmonics());
      for (std::size_t t = 0; t < truth.values.size(); ++t) {
        if (truth.values[t] <= 0.0) continue;
        ++voiced;
        if (std::abs(est.values[t] - truth.values[t]) <= 10.0) ++hits;
      }
    }
    REQUIRE(voiced > 1000);
    CHECK(static_cast<double>(hits) / static_cast<double>(voiced) >= 0.95);
  }

  TEST_CASE("monotone style keeps F0 spread near the jitter floor") {
    const CorpusRenderer r(CorpusSpec{});
    const auto style = monotone_style();
    const auto& spk = r.speakers()[2];
    const auto ids = r.make_text(99, 0, style);
    const PhonemeSequence ph{ids, r.realize_durations(ids, spk, style, 99)};
    const auto [mel, truth] = r.render(ph, spk, style, 42);
    std::vector<double> v;
    for (double x : truth.values)
      if (x > 0.0) v.push_back(x);
    REQUIRE(v.size() > 20);
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(v.size()));
    CHECK(sd < 2.0);
    CHECK(mean == doctest::Approx(spk.f0_base).epsilon(0.02));
  }

  TEST_CASE("slow style lengthens durations by about 1.5") {
    const auto& c = default_corpus();
    for (int spk : c.speakers_in("clone")) {
      const auto sad = corpus_stats(c, {"clone", spk, kStyleSad});
      const auto neutral = corpus_stats(c, {"clone", spk, kStyleNeutral});
      CHECK(sad.durations.mean / neutral.durations.mean == doctest::Approx(1.5).epsilon(0.10));
    }
  }

  TEST_CASE("empty filters are input errors") {
    CHECK_THROWS_AS(corpus_stats(test::small_corpus(), {"clone", std::nullopt, 17}), InputError);
    CHECK_THROWS_AS(corpus_stats(test::small_corpus(), {"nowhere", std::nullopt, std::nullopt}), InputError);
  }

  TEST_CASE("manifest counts and split partition") {
    const auto& c = default_corpus();
    const auto& s = c.spec;
    CHECK(s.utterance_count() == (12 + 2) * 40 + 4 * 40 * 5);
    CHECK(static_cast<int>(c.manifest.size()) == s.utterance_count());
    CHECK(c.utterances.size() == c.manifest.size());

    const auto train = c.speakers_in("train"), val = c.speakers_in("val"), clone = c.speakers_in("clone");
    CHECK(train.size() == 12);
    CHECK(val.size() == 2);
    CHECK(clone.size() == 4);
    const std::set<int> train_set(train.begin(), train.end());
    for (int id : clone) CHECK(train_set.count(id) == 0);
    for (int id : val) CHECK(train_set.count(id) == 0);
    for (const auto* u : c.select("train")) CHECK(train_set.count(u->speaker_id) == 1);

    for (int spk : clone)
      for (int e = 0; e < 5; ++e) CHECK(c.select("clone", e, spk).size() == 40);
    CHECK_THROWS_AS(c.speaker_row(clone.front()), InputError);
    CHECK(c.speaker_row(train.front()) == 0);
  }

  TEST_CASE("every utterance is aligned") {
    for (const auto& u : default_corpus().utterances) {
      const int total = std::accumulate(u.phones.durations.begin(), u.phones.durations.end(), 0);
      REQUIRE(total == u.mel.frames());
      REQUIRE(u.f0_truth.values.size() == static_cast<std::size_t>(u.mel.frames()));
      REQUIRE(u.phones.ids.size() == u.phones.durations.size());
      REQUIRE(u.phones.ids.size() >= 10);
      REQUIRE(u.mel.n_mels() == 80);
    }
  }

  TEST_CASE("same-speaker utterances are closer than cross-speaker ones") {
    const auto& c = default_corpus();
    std::vector<CepstralVector> ceps;
    ceps.reserve(c.utterances.size());
    for (const auto& u : c.utterances) ceps.push_back(average_cepstrum(u.mel, 13));
    double same = 0.0, cross = 0.0;
    long n_same = 0, n_cross = 0;
    for (std::size_t i = 0; i < ceps.size(); i += 3) {
      for (std::size_t j = i + 1; j < ceps.size(); j += 3) {
        const double d = mcd(ceps[i], ceps[j]);
        if (c.utterances[i].speaker_id == c.utterances[j].speaker_id) {
          same += d;
          ++n_same;
        } else {
          cross += d;
          ++n_cross;
        }
      }
    }
    REQUIRE(n_same > 100);
    CHECK(same / static_cast<double>(n_same) < cross / static_cast<double>(n_cross));
  }

  TEST_CASE("same seed twice gives byte-identical corpora") {
    const auto a = test::temp_dir("corpus_a"), b = test::temp_dir("corpus_b");
    generate_corpus(test::small_spec(), a);
    generate_corpus(test::small_spec(), b);
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(a))
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
    CHECK(files.size() == static_cast<std::size_t>(test::small_spec().utterance_count()) + 2);
    for (const auto& f : files) {
      INFO(f.string());
      REQUIRE(fs::exists(b / f));
      CHECK(test::read_bytes(a / f) == test::read_bytes(b / f));
    }
    auto other = test::small_spec();
    other.seed = 8;
    const auto d = test::temp_dir("corpus_d");
    generate_corpus(other, d);
    CHECK(test::read_bytes(a / "manifest.jsonl") != test::read_bytes(d / "manifest.jsonl"));
    fs::remove_all(a);
    fs::remove_all(b);
    fs::remove_all(d);
  }

  TEST_CASE("a stored corpus loads back bit-exactly") {
    const auto dir = test::temp_dir("corpus_load");
    const auto made = generate_corpus(test::small_spec(), dir);
    const auto loaded = Corpus::load(dir);
    REQUIRE(loaded.utterances.size() == made.utterances.size());
    CHECK(loaded.spec.to_json() == made.spec.to_json());
    for (std::size_t i = 0; i < made.utterances.size(); ++i) {
      const auto& x = made.utterances[i];
      const auto& y = loaded.utterances[i];
      CHECK(x.id == y.id);
      CHECK(x.phones.ids == y.phones.ids);
      CHECK(x.phones.durations == y.phones.durations);
      CHECK(x.f0_truth.values == y.f0_truth.values);
      CHECK(test::bit_equal(x.mel.data, y.mel.data));
    }
    fs::remove_all(dir);
  }

  TEST_CASE("missing or damaged corpus files") {
    CHECK_THROWS_AS(Corpus::load("/nonexistent/corpus"), IoError);
    const auto dir = test::temp_dir("corpus_bad");
    const auto made = generate_corpus(test::small_spec(), dir);
    fs::remove(dir / made.manifest.front().path);
    CHECK_THROWS_AS(Corpus::load(dir), IoError);

    const auto path = dir / made.manifest.back().path;
    auto bytes = test::read_bytes(path);
    bytes.resize(bytes.size() / 2);
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
    CHECK_THROWS_AS(load_utterance(path), LoadError);
    fs::remove_all(dir);
  }

  TEST_CASE("evaluation re-renders match stored utterances") {
    const auto& c = test::small_corpus();
    const auto& u = *c.select("clone", kStyleHappy).front();
    const auto again = c.renderer().make_utterance(u.phones.ids, u.speaker_id, u.style_id, u.text_id);
    CHECK(again.id == u.id);
    CHECK(test::bit_equal(again.mel.data, u.mel.data));
  }
}

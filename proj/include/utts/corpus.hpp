// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Deterministic mel-domain corpus with exact durations and ground-truth F0.
// Speakers differ in coarse spectral traits (pitch level, tilt, formant
// position, speaking rate); styles differ in duration, pitch range, energy
// and pause rate.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "utts/dsp.hpp"
#include "utts/model.hpp"
#include "utts/rng.hpp"

namespace utts {

struct PhonemeInventory {
  static constexpr int kSilence = 0;

  std::vector<std::string> symbols;      // symbols[0] == "sil"
  std::vector<Eigen::VectorXd> envelopes;  // log-domain, n_mels each
  std::vector<bool> voiced;
  std::vector<double> base_duration;     // frames

  int size() const { return static_cast<int>(symbols.size()); }
  int id_of(const std::string& symbol) const;  // throws InputError
  // Space-separated symbols -> ids.
  std::vector<int> parse(const std::string& text) const;
  std::string format(const std::vector<int>& ids) const;

  static PhonemeInventory generate(int n_regular, std::uint64_t seed, int n_mels = 80);
};

struct SpeakerProfile {
  int speaker_id = 0;
  double f0_base = 150.0;        // Hz
  double spectral_tilt = 0.0;    // log-units across the mel band
  double formant_shift = 0.0;    // mel bins
  double rate_scale = 1.0;       // duration multiplier
  std::string split;             // train / val / clone

  nlohmann::json to_json() const;
};

struct StyleProfile {
  int style_id = 0;
  std::string name = "neutral";
  double duration_mult = 1.0;
  double f0_range_mult = 1.0;
  double energy_mult = 1.0;
  double pause_prob = 0.0;

  nlohmann::json to_json() const;
  // neutral, happy, angry, sad, surprise.
  static std::vector<StyleProfile> standard();
};

inline constexpr int kStyleNeutral = 0;
inline constexpr int kStyleHappy = 1;
inline constexpr int kStyleAngry = 2;     // high energy
inline constexpr int kStyleSad = 3;       // slow
inline constexpr int kStyleSurprise = 4;

struct Utterance {
  std::string id;
  PhonemeSequence phones;  // with durations
  MelSpectrogram mel;
  F0Track f0_truth;
  int speaker_id = 0;
  int style_id = 0;
  int text_id = 0;
  std::string split;
};

struct CorpusSpec {
  int train_speakers = 12;
  int val_speakers = 2;
  int clone_speakers = 4;
  int utterances_per_speaker = 40;
  int min_len = 8;
  int max_len = 20;
  int n_regular_phonemes = 16;
  std::uint64_t seed = 7;

  void validate() const;
  nlohmann::json to_json() const;
  static CorpusSpec from_json(const nlohmann::json& j);
  int speaker_count() const { return train_speakers + val_speakers + clone_speakers; }
  // Number of utterances the manifest will list.
  int utterance_count() const;
};

// Everything needed to render: shared by generation and evaluation.
class CorpusRenderer {
 public:
  explicit CorpusRenderer(const CorpusSpec& spec);

  const CorpusSpec& spec() const { return spec_; }
  const PhonemeInventory& inventory() const { return inventory_; }
  const HarmonicModel& harmonics() const { return harmonics_; }
  const std::vector<SpeakerProfile>& speakers() const { return speakers_; }
  const std::vector<StyleProfile>& styles() const { return styles_; }

  // Random text of regular phonemes, framed by silence, with pauses inserted
  // at the style's rate.
  std::vector<int> make_text(std::uint64_t text_seed, std::uint64_t pause_seed, const StyleProfile& style) const;
  Durations realize_durations(const std::vector<int>& ids, const SpeakerProfile& speaker, const StyleProfile& style,
                              std::uint64_t seed) const;
  std::pair<MelSpectrogram, F0Track> render(const PhonemeSequence& phones, const SpeakerProfile& speaker,
                                            const StyleProfile& style, std::uint64_t seed) const;

  // Renders text `ids` for (speaker, style) with the corpus seed schedule.
  Utterance make_utterance(const std::vector<int>& ids, int speaker_id, int style_id, int text_id) const;

  std::uint64_t render_seed(int speaker_id, int text_id, int style_id) const;

 private:
  CorpusSpec spec_;
  PhonemeInventory inventory_;
  HarmonicModel harmonics_;
  std::vector<SpeakerProfile> speakers_;
  std::vector<StyleProfile> styles_;
};

std::pair<MelSpectrogram, F0Track> render_mel(const PhonemeSequence& phones, const SpeakerProfile& speaker,
                                              const StyleProfile& style, const PhonemeInventory& inventory,
                                              const HarmonicModel& harmonics, std::uint64_t seed);

struct ManifestEntry {
  std::string id;
  int speaker_id = 0;
  int style_id = 0;
  int text_id = 0;
  std::string split;
  int n_phones = 0;
  int n_frames = 0;
  std::string path;  // relative to the corpus root

  nlohmann::json to_json() const;
  static ManifestEntry from_json(const nlohmann::json& j);
};

class Corpus {
 public:
  CorpusSpec spec;
  std::vector<ManifestEntry> manifest;
  std::vector<Utterance> utterances;  // parallel to manifest

  const CorpusRenderer& renderer() const;
  std::vector<const Utterance*> select(const std::string& split, std::optional<int> style = std::nullopt,
                                       std::optional<int> speaker = std::nullopt) const;
  const Utterance& by_id(const std::string& id) const;
  std::vector<int> speakers_in(const std::string& split) const;

  // Maps train speaker ids onto pre-training table rows.
  int speaker_row(int speaker_id) const;

  static Corpus load(const std::filesystem::path& root);

 private:
  mutable std::shared_ptr<CorpusRenderer> renderer_;
};

// Builds the corpus in memory.
Corpus build_corpus(const CorpusSpec& spec);
// Writes corpus.json, manifest.jsonl and utts/*.utts below root.
Corpus generate_corpus(const CorpusSpec& spec, const std::filesystem::path& root);

void save_utterance(const Utterance& u, const std::filesystem::path& path);
Utterance load_utterance(const std::filesystem::path& path);

struct UtteranceFilter {
  std::optional<std::string> split;
  std::optional<int> speaker_id;
  std::optional<int> style_id;
};

struct GroupStats {
  int utterances = 0;
  long phonemes = 0;
  long voiced_frames = 0;
  DurationStats durations;  // over every phoneme, silence included
  double mean_energy = 0.0; // over non-silence phonemes
  double mean_f0 = 0.0;     // over voiced ground-truth frames
  double f0_std = 0.0;
};

// Throws InputError when the filter selects nothing.
GroupStats corpus_stats(const Corpus& corpus, const UtteranceFilter& filter);

}  // namespace utts

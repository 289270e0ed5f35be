// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "utts/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "utts/container.hpp"
#include "utts/error.hpp"

namespace utts {

namespace {

constexpr double kF0ContourDepth = 0.12;  // relative swing at f0_range_mult 1
constexpr double kF0JitterHz = 1.0;
constexpr double kVoicedJitter = 0.05;    // log-mel noise, voiced frames
constexpr double kUnvoicedJitter = 0.25;
constexpr double kUnvoicedLevel = -1.0;
constexpr double kDurationJitter = 0.08;  // log-normal spread of phoneme durations

std::string speaker_split(const CorpusSpec& spec, int id) {
  if (id < spec.train_speakers) return "train";
  if (id < spec.train_speakers + spec.val_speakers) return "val";
  return "clone";
}

}  // namespace

// ---------------------------------------------------------------------------

int PhonemeInventory::id_of(const std::string& symbol) const {
  for (std::size_t i = 0; i < symbols.size(); ++i)
    if (symbols[i] == symbol) return static_cast<int>(i);
  throw InputError("unknown phoneme symbol '" + symbol + "'");
}

std::vector<int> PhonemeInventory::parse(const std::string& text) const {
  std::istringstream in(text);
  std::vector<int> ids;
  for (std::string tok; in >> tok;) ids.push_back(id_of(tok));
  if (ids.empty()) throw InputError("phoneme text is empty");
  return ids;
}

std::string PhonemeInventory::format(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += symbols.at(static_cast<std::size_t>(id));
  }
  return out;
}

PhonemeInventory PhonemeInventory::generate(int n_regular, std::uint64_t seed, int n_mels) {
  if (n_regular < 2) throw ConfigError("inventory needs at least two regular phonemes");
  PhonemeInventory inv;
  const Rng root = Rng(seed).fork(0x1a7e);
  inv.symbols.push_back("sil");
  inv.envelopes.push_back(Eigen::VectorXd::Zero(n_mels));
  inv.voiced.push_back(false);
  inv.base_duration.push_back(4.0);
  // Roughly two thirds voiced; ids 1..n_regular, guaranteed mix.
  for (int p = 1; p <= n_regular; ++p) {
    Rng rng = root.fork(static_cast<std::uint64_t>(p));
    const bool voiced = (p % 3) != 0;
    inv.symbols.push_back((voiced ? "v" : "u") + std::to_string(p));
    inv.voiced.push_back(voiced);
    inv.base_duration.push_back(rng.uniform(2.5, 8.5));
    Eigen::VectorXd env = Eigen::VectorXd::Zero(n_mels);
    for (int k = 1; k <= 3; ++k) {
      const double amp = rng.uniform(-0.8, 0.8) / k;
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (int b = 0; b < n_mels; ++b)
        env(b) += amp * std::cos(std::numbers::pi * k * b / (n_mels - 1) + phase);
    }
    const int formants = 2 + static_cast<int>(rng.below(2));
    for (int f = 0; f < formants; ++f) {
      const double centre = rng.uniform(5.0, n_mels - 10.0);
      const double width = rng.uniform(4.0, 8.0);
      const double height = rng.uniform(0.6, 1.6);
      for (int b = 0; b < n_mels; ++b) env(b) += height * std::exp(-0.5 * std::pow((b - centre) / width, 2));
    }
    inv.envelopes.push_back(env);
  }
  return inv;
}

nlohmann::json SpeakerProfile::to_json() const {
  return {{"speaker_id", speaker_id},         {"f0_base", f0_base},       {"spectral_tilt", spectral_tilt},
          {"formant_shift", formant_shift}, {"rate_scale", rate_scale}, {"split", split}};
}

nlohmann::json StyleProfile::to_json() const {
  return {{"style_id", style_id},           {"name", name},
          {"duration_mult", duration_mult}, {"f0_range_mult", f0_range_mult},
          {"energy_mult", energy_mult},     {"pause_prob", pause_prob}};
}

std::vector<StyleProfile> StyleProfile::standard() {
  return {
      {kStyleNeutral, "neutral", 1.0, 1.0, 1.0, 0.05},
      {kStyleHappy, "happy", 0.85, 1.8, 1.4, 0.05},
      {kStyleAngry, "angry", 0.9, 1.4, 2.0, 0.02},
      {kStyleSad, "sad", 1.5, 0.5, 0.6, 0.15},
      {kStyleSurprise, "surprise", 0.8, 2.2, 1.6, 0.05},
  };
}

// ---------------------------------------------------------------------------

void CorpusSpec::validate() const {
  if (train_speakers < 4) throw ConfigError("corpus: need at least 4 train speakers");
  if (clone_speakers < 2) throw ConfigError("corpus: need at least 2 clone speakers");
  if (val_speakers < 0) throw ConfigError("corpus: val speaker count must be >= 0");
  if (utterances_per_speaker < 1) throw ConfigError("corpus: utterances_per_speaker must be >= 1");
  if (min_len < 1 || max_len < min_len) throw ConfigError("corpus: need 1 <= min_len <= max_len");
  if (n_regular_phonemes < 2) throw ConfigError("corpus: need at least 2 regular phonemes");
}

nlohmann::json CorpusSpec::to_json() const {
  return {{"train_speakers", train_speakers},
          {"val_speakers", val_speakers},
          {"clone_speakers", clone_speakers},
          {"utterances_per_speaker", utterances_per_speaker},
          {"min_len", min_len},
          {"max_len", max_len},
          {"n_regular_phonemes", n_regular_phonemes},
          {"seed", seed}};
}

CorpusSpec CorpusSpec::from_json(const nlohmann::json& j) {
  CorpusSpec s;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "train_speakers") s.train_speakers = value.get<int>();
      else if (key == "val_speakers") s.val_speakers = value.get<int>();
      else if (key == "clone_speakers") s.clone_speakers = value.get<int>();
      else if (key == "utterances_per_speaker") s.utterances_per_speaker = value.get<int>();
      else if (key == "min_len") s.min_len = value.get<int>();
      else if (key == "max_len") s.max_len = value.get<int>();
      else if (key == "n_regular_phonemes") s.n_regular_phonemes = value.get<int>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else throw ConfigError("corpus spec: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("corpus spec: ") + e.what());
  }
  s.validate();
  return s;
}

int CorpusSpec::utterance_count() const {
  const int styles = static_cast<int>(StyleProfile::standard().size());
  return (train_speakers + val_speakers) * utterances_per_speaker + clone_speakers * utterances_per_speaker * styles;
}

// ---------------------------------------------------------------------------

CorpusRenderer::CorpusRenderer(const CorpusSpec& spec)
    : spec_(spec),
      inventory_(PhonemeInventory::generate(spec.n_regular_phonemes, spec.seed)),
      harmonics_(FramingConfig{}),
      styles_(StyleProfile::standard()) {
  spec_.validate();
  const Rng root = Rng(spec.seed).fork(0x5be4);
  for (int id = 0; id < spec.speaker_count(); ++id) {
    Rng rng = root.fork(static_cast<std::uint64_t>(id));
    SpeakerProfile s;
    s.speaker_id = id;
    s.f0_base = rng.uniform(90.0, 260.0);
    s.spectral_tilt = rng.uniform(-3.0, 3.0);
    s.formant_shift = rng.uniform(-4.0, 4.0);
    s.rate_scale = rng.uniform(0.7, 1.4);
    s.split = speaker_split(spec, id);
    speakers_.push_back(s);
  }
}

std::vector<int> CorpusRenderer::make_text(std::uint64_t text_seed, std::uint64_t pause_seed,
                                           const StyleProfile& style) const {
  Rng text_rng = Rng(spec_.seed).fork(0x7e47, text_seed);
  Rng pause_rng = Rng(spec_.seed).fork(0x9a05, pause_seed);
  const int len = text_rng.uniform_int(spec_.min_len, spec_.max_len);
  std::vector<int> ids{PhonemeInventory::kSilence};
  for (int i = 0; i < len; ++i) {
    ids.push_back(1 + static_cast<int>(text_rng.below(static_cast<std::uint64_t>(spec_.n_regular_phonemes))));
    if (i + 1 < len && pause_rng.uniform() < style.pause_prob) ids.push_back(PhonemeInventory::kSilence);
  }
  ids.push_back(PhonemeInventory::kSilence);
  return ids;
}

Durations CorpusRenderer::realize_durations(const std::vector<int>& ids, const SpeakerProfile& speaker,
                                            const StyleProfile& style, std::uint64_t seed) const {
  Rng rng = Rng(seed).fork(0xd0a7);
  Durations d;
  d.reserve(ids.size());
  for (int id : ids) {
    const double base = inventory_.base_duration.at(static_cast<std::size_t>(id));
    const double frames =
        base * speaker.rate_scale * style.duration_mult * std::exp(kDurationJitter * rng.normal());
    d.push_back(std::max(1, static_cast<int>(std::lround(frames))));
  }
  return d;
}

std::pair<MelSpectrogram, F0Track> render_mel(const PhonemeSequence& phones, const SpeakerProfile& speaker,
                                              const StyleProfile& style, const PhonemeInventory& inventory,
                                              const HarmonicModel& harmonics, std::uint64_t seed) {
  if (phones.ids.size() != phones.durations.size())
    throw InputError("render_mel: every phoneme needs a duration");
  long total = 0;
  for (int d : phones.durations) {
    if (d < 1) throw InputError("render_mel: durations must be >= 1");
    total += d;
  }
  const int n_mels = harmonics.framing().n_mels;
  Rng rng = Rng(seed).fork(0x3e1);
  const double period = rng.uniform(30.0, 60.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  Eigen::VectorXd tilt(n_mels);
  for (int b = 0; b < n_mels; ++b) tilt(b) = speaker.spectral_tilt * (static_cast<double>(b) / (n_mels - 1) - 0.5);
  const double gain = std::log(style.energy_mult);

  MelSpectrogram mel;
  mel.framing = harmonics.framing();
  mel.data.resize(total, n_mels);
  F0Track f0;
  f0.values.assign(static_cast<std::size_t>(total), 0.0);
  f0.search_lo = 60.0;
  f0.search_hi = 400.0;

  Eigen::Index t = 0;
  for (std::size_t p = 0; p < phones.ids.size(); ++p) {
    const int id = phones.ids[p];
    if (id < 0 || id >= inventory.size()) throw InputError("render_mel: phoneme id out of range");
    // Envelope moved along the mel axis by the speaker's formant shift.
    Eigen::VectorXd env(n_mels);
    const Eigen::VectorXd& src = inventory.envelopes[static_cast<std::size_t>(id)];
    for (int b = 0; b < n_mels; ++b) {
      const double x = std::clamp(b - speaker.formant_shift, 0.0, n_mels - 1.0);
      const int lo = std::min(static_cast<int>(std::floor(x)), n_mels - 2);
      const double frac = x - lo;
      env(b) = (1.0 - frac) * src(lo) + frac * src(lo + 1);
    }
    for (int r = 0; r < phones.durations[p]; ++r, ++t) {
      if (id == PhonemeInventory::kSilence) {
        mel.data.row(t).setConstant(kLogMelFloor);
        continue;
      }
      Eigen::VectorXd frame;
      if (inventory.voiced[static_cast<std::size_t>(id)]) {
        const double contour = 1.0 + kF0ContourDepth * style.f0_range_mult *
                                         std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase);
        const double hz = std::clamp(speaker.f0_base * contour + kF0JitterHz * rng.normal(), 60.0, 400.0);
        f0.values[static_cast<std::size_t>(t)] = hz;
        frame = harmonics.log_mel_template(hz);
        for (int b = 0; b < n_mels; ++b) frame(b) += kVoicedJitter * rng.normal();
      } else {
        frame = Eigen::VectorXd::Constant(n_mels, kUnvoicedLevel);
        for (int b = 0; b < n_mels; ++b) frame(b) += kUnvoicedJitter * rng.normal();
      }
      frame += env + tilt;
      frame.array() += gain;
      mel.data.row(t) = frame.cwiseMax(kLogMelFloor).transpose();
    }
  }
  return {std::move(mel), std::move(f0)};
}

std::pair<MelSpectrogram, F0Track> CorpusRenderer::render(const PhonemeSequence& phones,
                                                          const SpeakerProfile& speaker, const StyleProfile& style,
                                                          std::uint64_t seed) const {
  return render_mel(phones, speaker, style, inventory_, harmonics_, seed);
}

std::uint64_t CorpusRenderer::render_seed(int speaker_id, int text_id, int style_id) const {
  return Rng(spec_.seed).fork(0xa11, static_cast<std::uint64_t>(speaker_id) << 32 | static_cast<std::uint32_t>(text_id))
      .fork(static_cast<std::uint64_t>(style_id))
      .next_u64();
}

Utterance CorpusRenderer::make_utterance(const std::vector<int>& ids, int speaker_id, int style_id,
                                         int text_id) const {
  const SpeakerProfile& speaker = speakers_.at(static_cast<std::size_t>(speaker_id));
  const StyleProfile& style = styles_.at(static_cast<std::size_t>(style_id));
  const std::uint64_t seed = render_seed(speaker_id, text_id, style_id);
  Utterance u;
  u.speaker_id = speaker_id;
  u.style_id = style_id;
  u.text_id = text_id;
  u.split = speaker.split;
  u.phones.ids = ids;
  u.phones.durations = realize_durations(ids, speaker, style, seed);
  auto [mel, f0] = render(u.phones, speaker, style, seed);
  u.mel = std::move(mel);
  u.f0_truth = std::move(f0);
  char buf[64];
  std::snprintf(buf, sizeof buf, "spk%02d_t%03d_%s", speaker_id, text_id, style.name.c_str());
  u.id = buf;
  return u;
}

// ---------------------------------------------------------------------------

nlohmann::json ManifestEntry::to_json() const {
  return {{"id", id},       {"speaker_id", speaker_id}, {"style_id", style_id}, {"text_id", text_id},
          {"split", split}, {"n_phones", n_phones},     {"n_frames", n_frames}, {"path", path}};
}

ManifestEntry ManifestEntry::from_json(const nlohmann::json& j) {
  ManifestEntry e;
  try {
    e.id = j.at("id").get<std::string>();
    e.speaker_id = j.at("speaker_id").get<int>();
    e.style_id = j.at("style_id").get<int>();
    e.text_id = j.at("text_id").get<int>();
    e.split = j.at("split").get<std::string>();
    e.n_phones = j.at("n_phones").get<int>();
    e.n_frames = j.at("n_frames").get<int>();
    e.path = j.at("path").get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    throw LoadError(std::string("malformed manifest entry: ") + ex.what());
  }
  return e;
}

void save_utterance(const Utterance& u, const std::filesystem::path& path) {
  Container c;
  c.meta["id"] = u.id;
  c.meta["speaker_id"] = u.speaker_id;
  c.meta["style_id"] = u.style_id;
  c.meta["text_id"] = u.text_id;
  c.meta["split"] = u.split;
  c.meta["f0_search"] = {u.f0_truth.search_lo, u.f0_truth.search_hi};
  store(c, "mel", u.mel);
  c.put("f0", Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(u.f0_truth.values.data(),
                                                                 static_cast<Eigen::Index>(u.f0_truth.values.size()))));
  c.put("phones", u.phones.ids);
  c.put("durations", u.phones.durations);
  c.save(path);
}

Utterance load_utterance(const std::filesystem::path& path) {
  const Container c = Container::load(path);
  Utterance u;
  try {
    u.id = c.meta.at("id").get<std::string>();
    u.speaker_id = c.meta.at("speaker_id").get<int>();
    u.style_id = c.meta.at("style_id").get<int>();
    u.text_id = c.meta.at("text_id").get<int>();
    u.split = c.meta.at("split").get<std::string>();
    u.f0_truth.search_lo = c.meta.at("f0_search").at(0).get<double>();
    u.f0_truth.search_hi = c.meta.at("f0_search").at(1).get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("utterance '" + path.string() + "': " + e.what());
  }
  u.mel = load_mel(c, "mel");
  const Eigen::VectorXd f0 = c.vector("f0");
  u.f0_truth.values.assign(f0.data(), f0.data() + f0.size());
  u.phones.ids = c.ints("phones");
  u.phones.durations = c.ints("durations");
  long total = 0;
  for (int d : u.phones.durations) total += d;
  if (total != u.mel.frames() || static_cast<long>(u.f0_truth.values.size()) != u.mel.frames())
    throw AlignmentError("utterance '" + u.id + "': durations/F0 do not cover the spectrogram");
  return u;
}

// ---------------------------------------------------------------------------

const CorpusRenderer& Corpus::renderer() const {
  if (!renderer_) renderer_ = std::make_shared<CorpusRenderer>(spec);
  return *renderer_;
}

std::vector<const Utterance*> Corpus::select(const std::string& split, std::optional<int> style,
                                             std::optional<int> speaker) const {
  std::vector<const Utterance*> out;
  for (const auto& u : utterances) {
    if (!split.empty() && u.split != split) continue;
    if (style && u.style_id != *style) continue;
    if (speaker && u.speaker_id != *speaker) continue;
    out.push_back(&u);
  }
  return out;
}

const Utterance& Corpus::by_id(const std::string& id) const {
  for (const auto& u : utterances)
    if (u.id == id) return u;
  throw InputError("no utterance with id '" + id + "'");
}

std::vector<int> Corpus::speakers_in(const std::string& split) const {
  std::vector<int> ids;
  for (const auto& s : renderer().speakers())
    if (s.split == split) ids.push_back(s.speaker_id);
  return ids;
}

int Corpus::speaker_row(int speaker_id) const {
  if (speaker_id < 0 || speaker_id >= spec.train_speakers)
    throw InputError("speaker " + std::to_string(speaker_id) + " is not a train speaker");
  return speaker_id;
}

Corpus build_corpus(const CorpusSpec& spec) {
  spec.validate();
  Corpus corpus;
  corpus.spec = spec;
  const CorpusRenderer& r = corpus.renderer();
  const auto& styles = r.styles();
  const std::uint64_t n_styles = styles.size();

  for (const auto& speaker : r.speakers()) {
    for (int t = 0; t < spec.utterances_per_speaker; ++t) {
      const std::uint64_t text_seed = static_cast<std::uint64_t>(speaker.speaker_id) << 32 | static_cast<std::uint32_t>(t);
      std::vector<int> style_ids;
      if (speaker.split == "clone") {
        for (std::uint64_t e = 0; e < n_styles; ++e) style_ids.push_back(static_cast<int>(e));
      } else {
        Rng pick = Rng(spec.seed).fork(0x57e1, text_seed);
        style_ids.push_back(static_cast<int>(pick.below(n_styles)));
      }
      for (int e : style_ids) {
        const auto ids = r.make_text(text_seed, text_seed * 8 + static_cast<std::uint64_t>(e), styles[e]);
        Utterance u = r.make_utterance(ids, speaker.speaker_id, e, t);
        ManifestEntry m;
        m.id = u.id;
        m.speaker_id = u.speaker_id;
        m.style_id = u.style_id;
        m.text_id = u.text_id;
        m.split = u.split;
        m.n_phones = static_cast<int>(u.phones.ids.size());
        m.n_frames = static_cast<int>(u.mel.frames());
        m.path = "utts/" + u.id + ".utts";
        corpus.manifest.push_back(std::move(m));
        corpus.utterances.push_back(std::move(u));
      }
    }
  }
  return corpus;
}

Corpus generate_corpus(const CorpusSpec& spec, const std::filesystem::path& root) {
  Corpus corpus = build_corpus(spec);
  std::filesystem::create_directories(root / "utts");
  const CorpusRenderer& r = corpus.renderer();

  nlohmann::json meta;
  meta["spec"] = spec.to_json();
  meta["inventory"] = r.inventory().symbols;
  meta["speakers"] = nlohmann::json::array();
  for (const auto& s : r.speakers()) meta["speakers"].push_back(s.to_json());
  meta["styles"] = nlohmann::json::array();
  for (const auto& s : r.styles()) meta["styles"].push_back(s.to_json());
  {
    std::ofstream out(root / "corpus.json");
    if (!out) throw IoError("cannot write corpus.json under '" + root.string() + "'");
    out << meta.dump(2) << '\n';
  }
  std::ofstream manifest(root / "manifest.jsonl");
  if (!manifest) throw IoError("cannot write manifest under '" + root.string() + "'");
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    save_utterance(corpus.utterances[i], root / corpus.manifest[i].path);
    manifest << corpus.manifest[i].to_json().dump() << '\n';
  }
  return corpus;
}

Corpus Corpus::load(const std::filesystem::path& root) {
  Corpus corpus;
  {
    std::ifstream in(root / "corpus.json");
    if (!in) throw IoError("no corpus.json under '" + root.string() + "'");
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(in);
      corpus.spec = CorpusSpec::from_json(meta.at("spec"));
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(std::string("corpus.json: ") + e.what());
    }
  }
  std::ifstream manifest(root / "manifest.jsonl");
  if (!manifest) throw IoError("no manifest.jsonl under '" + root.string() + "'");
  for (std::string line; std::getline(manifest, line);) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(std::string("manifest.jsonl: ") + e.what());
    }
    ManifestEntry m = ManifestEntry::from_json(j);
    const auto path = root / m.path;
    if (!std::filesystem::exists(path)) throw IoError("manifest lists missing file '" + path.string() + "'");
    Utterance u = load_utterance(path);
    if (u.id != m.id) throw LoadError("manifest id '" + m.id + "' does not match file contents");
    corpus.manifest.push_back(std::move(m));
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

// ---------------------------------------------------------------------------

GroupStats corpus_stats(const Corpus& corpus, const UtteranceFilter& filter) {
  GroupStats g;
  Durations all;
  double energy_sum = 0.0;
  long energy_n = 0;
  double f0_sum = 0.0, f0_sq = 0.0;
  for (const auto& u : corpus.utterances) {
    if (filter.split && u.split != *filter.split) continue;
    if (filter.speaker_id && u.speaker_id != *filter.speaker_id) continue;
    if (filter.style_id && u.style_id != *filter.style_id) continue;
    ++g.utterances;
    all.insert(all.end(), u.phones.durations.begin(), u.phones.durations.end());
    const auto energy = phoneme_energy(u.mel, u.phones.durations);
    for (std::size_t p = 0; p < energy.size(); ++p) {
      if (u.phones.ids[p] == PhonemeInventory::kSilence) continue;
      energy_sum += energy[p];
      ++energy_n;
    }
    for (double hz : u.f0_truth.values) {
      if (hz <= 0.0) continue;
      f0_sum += hz;
      f0_sq += hz * hz;
      ++g.voiced_frames;
    }
  }
  if (g.utterances == 0) throw InputError("corpus_stats: filter selects no utterances");
  g.phonemes = static_cast<long>(all.size());
  g.durations = duration_mean_std(all);
  g.mean_energy = energy_n ? energy_sum / static_cast<double>(energy_n) : 0.0;
  if (g.voiced_frames > 0) {
    g.mean_f0 = f0_sum / static_cast<double>(g.voiced_frames);
    g.f0_std = std::sqrt(std::max(0.0, f0_sq / static_cast<double>(g.voiced_frames) - g.mean_f0 * g.mean_f0));
  }
  return g;
}

}  // namespace utts

// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "utts/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <iomanip>
#include <numbers>

#include <unsupported/Eigen/FFT>

#include "utts/error.hpp"

namespace utts {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Eigen::MatrixXd build_mel_filterbank(int sample_rate, int n_fft, int n_mels, double f_lo, double f_hi) {
  if (n_mels < 2) throw ConfigError("filterbank needs at least 2 mel bands");
  if (n_fft < 2 || sample_rate <= 0) throw ConfigError("filterbank needs n_fft >= 2 and a positive sample rate");
  if (!(f_lo >= 0.0 && f_lo < f_hi && f_hi <= sample_rate / 2.0))
    throw ConfigError("filterbank frequency range must satisfy 0 <= f_lo < f_hi <= sample_rate/2");

  const int n_bins = n_fft / 2 + 1;
  const double m_lo = hz_to_mel(f_lo);
  const double m_hi = hz_to_mel(f_hi);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(m_lo + (m_hi - m_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, n_bins);
  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      const double up = (f - left) / (centre - left);
      const double down = (right - f) / (right - centre);
      fb(m, k) = std::max(0.0, std::min(up, down));
    }
    // Sampled triangles rarely hit their apex exactly; rescale so each peak is 1.
    const double peak = fb.row(m).maxCoeff();
    if (peak > 0.0) fb.row(m) /= peak;
  }
  return fb;
}

Eigen::MatrixXd build_mel_filterbank(const FramingConfig& cfg) {
  return build_mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.f_lo, cfg.f_hi);
}

Eigen::Index frame_count(std::size_t n_samples, int hop) {
  return 1 + static_cast<Eigen::Index>(n_samples / static_cast<std::size_t>(hop));
}

namespace {

// Mirror index into [0, n) without repeating the edge sample.
std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * static_cast<long>(n - 1);
  long r = i % period;
  if (r < 0) r += period;
  return static_cast<std::size_t>(r < static_cast<long>(n) ? r : period - r);
}

}  // namespace

MelSpectrogram log_mel_spectrogram(std::span<const double> signal, const FramingConfig& cfg) {
  if (signal.empty()) throw InputError("log_mel_spectrogram: signal must contain at least one sample");
  if (cfg.win > cfg.n_fft || cfg.hop <= 0) throw ConfigError("log_mel_spectrogram: need hop > 0 and win <= n_fft");

  const Eigen::MatrixXd fb = build_mel_filterbank(cfg);
  const int n_bins = cfg.n_bins();
  const Eigen::Index frames = frame_count(signal.size(), cfg.hop);
  const long pad = cfg.n_fft / 2;

  // Periodic Hann, centred inside the FFT frame when win < n_fft.
  std::vector<double> window(static_cast<std::size_t>(cfg.n_fft), 0.0);
  const int offset = (cfg.n_fft - cfg.win) / 2;
  for (int n = 0; n < cfg.win; ++n)
    window[static_cast<std::size_t>(offset + n)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / cfg.win);

  Eigen::FFT<double> fft;
  std::vector<double> buf(static_cast<std::size_t>(cfg.n_fft));
  std::vector<std::complex<double>> spec;
  Eigen::VectorXd mag(n_bins);

  MelSpectrogram out;
  out.framing = cfg;
  out.data.resize(frames, cfg.n_mels);
  for (Eigen::Index t = 0; t < frames; ++t) {
    const long start = static_cast<long>(t) * cfg.hop - pad;
    for (int n = 0; n < cfg.n_fft; ++n)
      buf[static_cast<std::size_t>(n)] =
          signal[reflect_index(start + n, signal.size())] * window[static_cast<std::size_t>(n)];
    fft.fwd(spec, buf);
    for (int k = 0; k < n_bins; ++k) mag(k) = std::abs(spec[static_cast<std::size_t>(k)]);
    const Eigen::VectorXd mel = fb * mag;
    for (int m = 0; m < cfg.n_mels; ++m) out.data(t, m) = std::log(std::max(mel(m), kMelFloor));
  }
  return out;
}

Eigen::MatrixXd dct_basis(int n, int k) {
  if (k < 1 || k > n) throw ConfigError("DCT order must satisfy 1 <= K <= n");
  Eigen::MatrixXd basis(k, n);
  for (int i = 0; i < k; ++i) {
    const double scale = i == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int j = 0; j < n; ++j) basis(i, j) = scale * std::cos(std::numbers::pi * i * (2.0 * j + 1.0) / (2.0 * n));
  }
  return basis;
}

CepstralVector mel_cepstrum(const Eigen::VectorXd& profile, int k) {
  if (k > profile.size()) throw ConfigError("mel_cepstrum: K exceeds the number of mel bins");
  return {dct_basis(static_cast<int>(profile.size()), k) * profile};
}

Eigen::VectorXd inverse_mel_cepstrum(const CepstralVector& c, int n) {
  return dct_basis(n, static_cast<int>(c.coeffs.size())).transpose() * c.coeffs;
}

CepstralVector average_cepstrum(const MelSpectrogram& mel, int k) {
  if (mel.frames() < 1) throw InputError("average_cepstrum: spectrogram has no frames");
  const Eigen::MatrixXd basis = dct_basis(static_cast<int>(mel.n_mels()), k);
  // Per-frame cepstra (K x T), then the mean over time.
  const Eigen::MatrixXd cepstra = basis * mel.data.transpose();
  return {cepstra.rowwise().mean()};
}

double mcd(const CepstralVector& a, const CepstralVector& b) {
  if (a.coeffs.size() != b.coeffs.size()) throw InputError("mcd: cepstral orders differ");
  if (a.coeffs.size() < 2) throw ConfigError("mcd: need K >= 2");
  const Eigen::Index k = a.coeffs.size();
  const double sq = (a.coeffs.tail(k - 1) - b.coeffs.tail(k - 1)).squaredNorm();
  return 10.0 / std::numbers::ln10 * std::sqrt(2.0 * sq);
}

double mcd_time_averaged(const MelSpectrogram& a, const MelSpectrogram& b, int k) {
  if (a.n_mels() != b.n_mels()) throw InputError("mcd_time_averaged: mel band counts differ");
  if (k < 2) throw ConfigError("mcd_time_averaged: need K >= 2");
  return mcd(average_cepstrum(a, k), average_cepstrum(b, k));
}

Eigen::VectorXd frame_energy(const MelSpectrogram& mel) {
  return mel.data.array().exp().rowwise().mean().log().matrix();
}

std::vector<double> phoneme_energy(const MelSpectrogram& mel, const Durations& durations) {
  long total = 0;
  for (int d : durations) {
    if (d < 1) throw InputError("phoneme_energy: durations must be >= 1");
    total += d;
  }
  if (total != mel.frames())
    throw AlignmentError("phoneme_energy: durations cover " + std::to_string(total) + " frames but the spectrogram has " +
                         std::to_string(mel.frames()));
  const Eigen::VectorXd energy = frame_energy(mel);
  std::vector<double> out;
  out.reserve(durations.size());
  Eigen::Index t = 0;
  for (int d : durations) {
    out.push_back(energy.segment(t, d).mean());
    t += d;
  }
  return out;
}

HarmonicModel::HarmonicModel(const FramingConfig& cfg, double peak_width_hz, double noise_floor)
    : framing_(cfg), filterbank_(build_mel_filterbank(cfg)), peak_width_hz_(peak_width_hz), noise_floor_(noise_floor) {}

Eigen::VectorXd HarmonicModel::log_mel_template(double f0) const {
  const int n_bins = framing_.n_bins();
  const double nyquist = framing_.sample_rate / 2.0;
  const double bin_hz = static_cast<double>(framing_.sample_rate) / framing_.n_fft;
  Eigen::VectorXd line = Eigen::VectorXd::Constant(n_bins, noise_floor_);
  const double inv = 1.0 / (2.0 * peak_width_hz_ * peak_width_hz_);
  for (double h = f0; h < nyquist + 4.0 * peak_width_hz_; h += f0) {
    const int lo = std::max(0, static_cast<int>(std::floor((h - 4.0 * peak_width_hz_) / bin_hz)));
    const int hi = std::min(n_bins - 1, static_cast<int>(std::ceil((h + 4.0 * peak_width_hz_) / bin_hz)));
    for (int k = lo; k <= hi; ++k) {
      const double d = k * bin_hz - h;
      line(k) += std::exp(-d * d * inv);
    }
  }
  Eigen::VectorXd mel = filterbank_ * line;
  for (Eigen::Index i = 0; i < mel.size(); ++i) mel(i) = std::log(std::max(mel(i), kMelFloor));
  return mel;
}

std::vector<double> f0_grid(double lo, double hi, double step_hz) {
  std::vector<double> grid;
  for (double f = lo; f <= hi + 1e-9; f += step_hz) grid.push_back(f);
  return grid;
}

namespace {

// Removes the smooth envelope across mel bins (box filter, radius 3) and
// scales to unit norm. Returns false when nothing is left.
bool detrend_normalize(Eigen::VectorXd& v) {
  constexpr int kRadius = 3;
  const Eigen::Index n = v.size();
  Eigen::VectorXd smooth(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, i - kRadius);
    const Eigen::Index hi = std::min<Eigen::Index>(n - 1, i + kRadius);
    smooth(i) = v.segment(lo, hi - lo + 1).mean();
  }
  v -= smooth;
  const double norm = v.norm();
  if (norm < 1e-12) return false;
  v /= norm;
  return true;
}

}  // namespace

F0Track estimate_f0_mel(const MelSpectrogram& mel, std::span<const double> grid, const HarmonicModel& model,
                        double voicing_threshold) {
  if (grid.empty()) throw ConfigError("estimate_f0_mel: empty candidate grid");
  if (mel.n_mels() != model.framing().n_mels)
    throw InputError("estimate_f0_mel: spectrogram and harmonic model disagree on n_mels");

  Eigen::MatrixXd templates(mel.n_mels(), static_cast<Eigen::Index>(grid.size()));
  for (std::size_t g = 0; g < grid.size(); ++g) {
    Eigen::VectorXd t = model.log_mel_template(grid[g]);
    detrend_normalize(t);
    templates.col(static_cast<Eigen::Index>(g)) = t;
  }

  F0Track track;
  track.search_lo = *std::min_element(grid.begin(), grid.end());
  track.search_hi = *std::max_element(grid.begin(), grid.end());
  track.values.assign(static_cast<std::size_t>(mel.frames()), 0.0);
  for (Eigen::Index t = 0; t < mel.frames(); ++t) {
    Eigen::VectorXd frame = mel.data.row(t).transpose();
    if (frame.maxCoeff() <= kLogMelFloor + 1e-9) continue;  // silence
    if (!detrend_normalize(frame)) continue;
    const Eigen::VectorXd corr = templates.transpose() * frame;
    Eigen::Index best = 0;
    const double score = corr.maxCoeff(&best);
    if (score >= voicing_threshold) track.values[static_cast<std::size_t>(t)] = grid[static_cast<std::size_t>(best)];
  }
  return track;
}

DurationStats duration_mean_std(const Durations& durations) {
  if (durations.empty()) throw InputError("duration_mean_std: empty duration list");
  double sum = 0.0;
  for (int d : durations) sum += d;
  const double mean = sum / static_cast<double>(durations.size());
  double var = 0.0;
  for (int d : durations) var += (d - mean) * (d - mean);
  return {mean, std::sqrt(var / static_cast<double>(durations.size()))};
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << std::setprecision(10);
  return out;
}

}  // namespace

void write_csv(const MelSpectrogram& mel, const std::filesystem::path& path) {
  auto out = open_csv(path);
  for (Eigen::Index t = 0; t < mel.frames(); ++t) {
    for (Eigen::Index m = 0; m < mel.n_mels(); ++m) out << (m ? "," : "") << mel.data(t, m);
    out << '\n';
  }
}

void write_csv(const F0Track& f0, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "frame,f0_hz\n";
  for (std::size_t t = 0; t < f0.values.size(); ++t) out << t << ',' << f0.values[t] << '\n';
}

void write_csv(const CepstralVector& c, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "k,coeff\n";
  for (Eigen::Index k = 0; k < c.coeffs.size(); ++k) out << k << ',' << c.coeffs(k) << '\n';
}

void store(Container& c, const std::string& prefix, const MelSpectrogram& mel) {
  c.put(prefix, mel.data);
  c.meta[prefix] = {{"sample_rate", mel.framing.sample_rate}, {"n_fft", mel.framing.n_fft},
                    {"hop", mel.framing.hop},                 {"win", mel.framing.win},
                    {"n_mels", mel.framing.n_mels},           {"f_lo", mel.framing.f_lo},
                    {"f_hi", mel.framing.f_hi}};
}

MelSpectrogram load_mel(const Container& c, const std::string& prefix) {
  MelSpectrogram mel;
  mel.data = c.matrix(prefix);
  try {
    const auto& m = c.meta.at(prefix);
    mel.framing.sample_rate = m.at("sample_rate").get<int>();
    mel.framing.n_fft = m.at("n_fft").get<int>();
    mel.framing.hop = m.at("hop").get<int>();
    mel.framing.win = m.at("win").get<int>();
    mel.framing.n_mels = m.at("n_mels").get<int>();
    mel.framing.f_lo = m.at("f_lo").get<double>();
    mel.framing.f_hi = m.at("f_hi").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("mel metadata '" + prefix + "' malformed: " + e.what());
  }
  if (mel.data.cols() != mel.framing.n_mels) throw LoadError("mel '" + prefix + "' width disagrees with n_mels");
  return mel;
}

}  // namespace utts

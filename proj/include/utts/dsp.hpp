// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "utts/container.hpp"

namespace utts {

// Every log-mel value is ln(max(x, kMelFloor)).
inline constexpr double kMelFloor = 1e-10;
inline const double kLogMelFloor = -23.025850929940457;  // ln(1e-10)

struct FramingConfig {
  int sample_rate = 16000;
  int n_fft = 800;
  int hop = 200;
  int win = 800;
  int n_mels = 80;
  double f_lo = 0.0;
  double f_hi = 8000.0;

  int n_bins() const { return n_fft / 2 + 1; }
  bool operator==(const FramingConfig&) const = default;
};

// Natural-log mel magnitudes, one frame per row.
struct MelSpectrogram {
  Eigen::MatrixXd data;  // frames x n_mels
  FramingConfig framing;

  Eigen::Index frames() const { return data.rows(); }
  Eigen::Index n_mels() const { return data.cols(); }
};

// Per-phoneme frame counts.
using Durations = std::vector<int>;

struct CepstralVector {
  Eigen::VectorXd coeffs;
};

struct F0Track {
  std::vector<double> values;  // Hz, 0 marks unvoiced
  double search_lo = 0.0;
  double search_hi = 0.0;
};

struct DurationStats {
  double mean = 0.0;
  double std = 0.0;  // population
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Peak-normalised triangular filters on the HTK mel scale.
// Returns n_mels x (n_fft/2 + 1).
Eigen::MatrixXd build_mel_filterbank(int sample_rate, int n_fft, int n_mels, double f_lo, double f_hi);
Eigen::MatrixXd build_mel_filterbank(const FramingConfig& cfg);

// Number of centre-padded frames for n samples.
Eigen::Index frame_count(std::size_t n_samples, int hop);

// Reflect-padded, Hann-windowed STFT magnitudes projected onto the mel bank.
MelSpectrogram log_mel_spectrogram(std::span<const double> signal, const FramingConfig& cfg = {});

// K x n orthonormal DCT-II basis.
Eigen::MatrixXd dct_basis(int n, int k);
CepstralVector mel_cepstrum(const Eigen::VectorXd& profile, int k);
Eigen::VectorXd inverse_mel_cepstrum(const CepstralVector& c, int n);

// Time-average of the per-frame cepstra.
CepstralVector average_cepstrum(const MelSpectrogram& mel, int k);

// (10 / ln 10) * sqrt(2 * sum_{k>=1} (a_k - b_k)^2); c0 never contributes.
double mcd(const CepstralVector& a, const CepstralVector& b);
double mcd_time_averaged(const MelSpectrogram& a, const MelSpectrogram& b, int k = 13);

// ln(mean_bins exp(log-mel)) per frame.
Eigen::VectorXd frame_energy(const MelSpectrogram& mel);
// Mean frame energy of each phoneme's span.
std::vector<double> phoneme_energy(const MelSpectrogram& mel, const Durations& durations);

// Harmonic stack rendered in the mel domain. The corpus renderer and the F0
// estimator share this so that estimation is a matched-template search.
class HarmonicModel {
 public:
  explicit HarmonicModel(const FramingConfig& cfg = {}, double peak_width_hz = 25.0, double noise_floor = 0.02);

  // ln(max(FB * (harmonic line spectrum + floor), 1e-10)), n_mels entries.
  Eigen::VectorXd log_mel_template(double f0) const;

  const FramingConfig& framing() const { return framing_; }
  const Eigen::MatrixXd& filterbank() const { return filterbank_; }
  double peak_width_hz() const { return peak_width_hz_; }
  double noise_floor() const { return noise_floor_; }

 private:
  FramingConfig framing_;
  Eigen::MatrixXd filterbank_;
  double peak_width_hz_;
  double noise_floor_;
};

inline constexpr double kVoicingThreshold = 0.5;

// Candidate grid lo..hi (inclusive) in steps of step_hz.
std::vector<double> f0_grid(double lo = 60.0, double hi = 400.0, double step_hz = 1.0);

F0Track estimate_f0_mel(const MelSpectrogram& mel, std::span<const double> grid, const HarmonicModel& model,
                        double voicing_threshold = kVoicingThreshold);

DurationStats duration_mean_std(const Durations& durations);

// Inspection formats.
void write_csv(const MelSpectrogram& mel, const std::filesystem::path& path);
void write_csv(const F0Track& f0, const std::filesystem::path& path);
void write_csv(const CepstralVector& c, const std::filesystem::path& path);
void store(Container& c, const std::string& prefix, const MelSpectrogram& mel);
MelSpectrogram load_mel(const Container& c, const std::string& prefix);

}  // namespace utts

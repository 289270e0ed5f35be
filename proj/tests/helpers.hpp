// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <unistd.h>

#include "utts/corpus.hpp"
#include "utts/model.hpp"
#include "utts/rng.hpp"

namespace utts::test {

// Smallest corpus the generator accepts; renders in well under a second.
inline CorpusSpec small_spec() {
  CorpusSpec s;
  s.train_speakers = 4;
  s.val_speakers = 1;
  s.clone_speakers = 2;
  s.utterances_per_speaker = 6;
  s.min_len = 5;
  s.max_len = 8;
  return s;
}

inline const Corpus& small_corpus() {
  static const Corpus c = build_corpus(small_spec());
  return c;
}

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.hidden = 16;
  c.unet_levels = 2;
  c.content_blocks = 2;
  c.n_speakers = 4;
  return c;
}

inline Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() / ("utts_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline bool bit_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data(), a.data() + a.size(), b.data(), [](double x, double y) {
           return std::memcmp(&x, &y, sizeof x) == 0;
         });
}

}  // namespace utts::test

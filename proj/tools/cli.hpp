// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "utts/corpus.hpp"
#include "utts/model.hpp"
#include "utts/training.hpp"

namespace utts::cli {

extern const char* const kVersion;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

// Fully resolved settings for one invocation.
struct RunConfig {
  std::string command;
  std::optional<std::uint64_t> seed;  // overrides corpus.seed and train.seed
  std::string profile = "desk";       // desk | full
  std::filesystem::path corpus_root = "corpus";
  std::filesystem::path out;
  std::filesystem::path checkpoint = "runs/train/best.ckpt";
  std::filesystem::path from = "runs/pretrain/best.ckpt";
  std::filesystem::path resume;
  bool unfreeze_duration = false;
  bool png = false;
  CorpusSpec corpus;
  ModelConfig model;
  TrainConfig train;

  // Includes the version string; accepted back by resolve_config.
  nlohmann::json to_json() const;
};

std::filesystem::path default_out(const std::string& command);

// Documented defaults for a command, as JSON.
nlohmann::json default_config(const std::string& command, const std::string& profile,
                              std::optional<std::uint64_t> env_seed);

// Copies patch into base. Keys absent from base and type mismatches throw
// ConfigError naming the dotted key path.
void overlay(nlohmann::json& base, const nlohmann::json& patch, const std::string& path = "");

// defaults <- UTTS_SEED <- file <- flags. `flags` uses the same layout as
// the file. `env_seed` is the raw environment value (may be null).
RunConfig resolve_config(const std::string& command, const nlohmann::json* file, const nlohmann::json& flags,
                         const char* env_seed);

// Parses and dispatches; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace utts::cli

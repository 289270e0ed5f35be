// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <stdexcept>
#include <string>

namespace utts {

// Base of every error raised by the library. The CLI maps these to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration (frequency ranges, counts, stats list length).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed caller input (empty signals, bad phoneme ids, bad durations).
class InputError : public Error {
 public:
  using Error::Error;
};

// Tensor shape arithmetic failed.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Durations do not cover the frames they are paired with.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

// Operation requires state that is missing or incompatible (no checkpoint,
// config mismatch).
class StateError : public Error {
 public:
  using Error::Error;
};

// Container file could not be decoded.
class LoadError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A non-finite value appeared during numerical work.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace utts

#pragma once

#include <stdexcept>
#include <string>

namespace bforge {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration value violates its documented domain (beta <= 0, tau outside (0,1), ...).
class InvalidConfig : public Error {
 public:
  using Error::Error;
};

/// An input violates a precondition (wrong image shape, class index out of range, ...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or was asked to run on nothing.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// The backdoored detector failed the implant gate (ASR or stealthiness).
class ImplantFailure : public Error {
 public:
  using Error::Error;
};

/// Evaluation was asked to normalize by a zero reference mAP.
class InvalidReference : public Error {
 public:
  using Error::Error;
};

}  // namespace bforge

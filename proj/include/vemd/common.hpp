#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vemd {

// Every recoverable failure in the library derives from Error so callers
// (the CLI in particular) can map categories to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file or mismatched record layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Tensor shape contract violated.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Illegal or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad scalar argument (counts, sizes).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised when a loss component turns non-finite; carries the component name.
class TrainingAbort : public Error {
 public:
  TrainingAbort(std::string component, const std::string& what)
      : Error(what), component_(std::move(component)) {}
  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

/// 64-bit FNV-1a. Used for config and checkpoint content hashes.
std::uint64_t fnv1a64(std::span<const std::byte> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string to_hex(std::uint64_t value);

// Derives an independent seed for a named sub-stream (module init, data order, ...).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

}  // namespace vemd

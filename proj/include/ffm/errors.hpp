#pragma once

#include <stdexcept>
#include <string>

namespace ffm {

// Shape or broadcast mismatch between tensor operands.
class DimensionError : public std::runtime_error {
public:
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration: bad hyperparameters, malformed config files,
// incompatible checkpoint dims.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A scan was requested for more timesteps than the configured chunk bound
// allows in one pass. Callers should switch to chunked_scan.
class ChunkBoundError : public ConfigError {
public:
  explicit ChunkBoundError(const std::string& msg) : ConfigError(msg) {}
};

// Numeric failure: overflow guard tripped, non-finite input or output.
class StabilityError : public std::runtime_error {
public:
  explicit StabilityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Misuse of the tape (e.g. backward called twice on one recording).
class TapeError : public std::logic_error {
public:
  explicit TapeError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace ffm

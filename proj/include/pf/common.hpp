#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pf {

/// Error with a stable category used to derive process exit codes.
class Error : public std::runtime_error {
 public:
  enum class Kind { validation, runtime };

  explicit Error(std::string msg, Kind kind = Kind::runtime)
      : std::runtime_error(std::move(msg)), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline Error validation_error(std::string msg) {
  return Error(std::move(msg), Error::Kind::validation);
}

constexpr int kSampleRate = 16000;
constexpr int kChunkSamples = 16000;
constexpr int kFramesPerChunk = 40;
constexpr int kFrameHop = 400;

constexpr const char* kVersionString = "polyfuse-0.1.0";

}  // namespace pf

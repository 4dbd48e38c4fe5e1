#pragma once

// The neuralogram's embedding source. The paper-scale system uses a large
// pretrained audio network; here the interface admits a deterministic built-in
// stand-in and a file-backed table of precomputed embeddings. Implementations
// are immutable after construction and safe to share across threads.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pf/tensor.hpp"

namespace pf {

class Projector {
 public:
  virtual ~Projector() = default;

  /// Map 1600 samples (100 ms at 16 kHz) to a 1024-dim embedding. The ids
  /// identify the subwindow for implementations that look embeddings up
  /// rather than compute them.
  virtual std::vector<float> project(const std::string& clip_id, std::uint32_t chunk_index,
                                     std::uint32_t subchunk, const float* samples) const = 0;
};

/// Frozen random projector: three strided valid convolutions
/// (1->64 k=64 s=8, 64->256 k=16 s=8, 256->1024 k=8 s=2) with tanh after each,
/// orthonormal-row weights from a seeded Gram-Schmidt, then a global max over
/// the remaining time axis. Deterministic given the seed; never trained.
class StandInProjector : public Projector {
 public:
  explicit StandInProjector(unsigned seed = 1234);

  std::vector<float> project(const std::string& clip_id, std::uint32_t chunk_index,
                             std::uint32_t subchunk, const float* samples) const override;

 private:
  TensorF w1_, w2_, w3_;  // [Cout, Cin, K] each
};

/// Embeddings read from a feature-cache file (neuralogram records, one
/// [1024, 10] matrix per chunk). project() returns the requested column and
/// raises "missing precomputed embedding" for absent chunks.
class FileBackedProjector : public Projector {
 public:
  explicit FileBackedProjector(const std::string& cache_path);

  std::vector<float> project(const std::string& clip_id, std::uint32_t chunk_index,
                             std::uint32_t subchunk, const float* samples) const override;

 private:
  std::map<std::pair<std::string, std::uint32_t>, TensorF> table_;
};

}  // namespace pf

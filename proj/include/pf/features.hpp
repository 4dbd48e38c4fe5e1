#pragma once

// Per-chunk view representations: binary constant-Q peak map (80x40), MFCC
// matrix (12x40), raw waveform patches (40x400), and the neuralogram (1024x10)
// produced through a Projector. All operations are pure per chunk and safe to
// run in parallel across chunks.

#include <cstdint>
#include <string>

#include "pf/projector.hpp"
#include "pf/tensor.hpp"

namespace pf {

struct CqtConfig {
  std::size_t n_bins = 80;
  std::size_t bins_per_octave = 12;
  double f_min = 40.0;           // Hz; bin b sits at f_min * 2^(b / bins_per_octave)
  std::size_t hop = 400;         // samples (25 ms)
  std::uint32_t sample_rate = 16000;
};

/// Precomputed constant-Q analysis kernels. Each bin uses a Hann-windowed
/// complex exponential of length min(ceil(Q * sr / f_b), chunk length) with
/// Q = 1 / (2^(1/bins_per_octave) - 1); frames are centered at t * hop with
/// reflection padding. The whole pipeline runs in single precision so that
/// scaling the input by a power of two shifts every log-magnitude without
/// perturbing any comparison.
class CqtPlan {
 public:
  explicit CqtPlan(CqtConfig cfg = {});

  /// chunk: 16000 samples -> log-magnitude matrix [n_bins, 40],
  /// entry = ln(max(|X_b(t)|, 1e-10)).
  TensorF apply(const float* chunk) const;

  const CqtConfig& config() const { return cfg_; }

 private:
  CqtConfig cfg_;
  std::size_t pad_ = 0;  // reflection-padding width = longest half-window + 1
  struct Kernel {
    std::ptrdiff_t offset;  // window start relative to the frame center
    std::vector<float> re, im;
  };
  std::vector<Kernel> kernels_;
};

/// Log-magnitude CQT with the default configuration (shared cached plan).
TensorF cqt_log_magnitude(const float* chunk);

/// Binary peak map: mask(b,t) = 1 iff logmag(b,t) is >= every neighbor within
/// +-2 bins of the same frame and >= the median of all entries (even count:
/// lower-middle order statistic). Plateau ties all qualify.
TensorF peak_map(const TensorF& logmag);

/// MFCC matrix [12, 40]: per frame (1024-sample periodic Hann window centered
/// at t * 400, reflection padding) power spectrum -> 40 triangular mel bands
/// spanning 0-8000 Hz (area-normalized) -> ln(max(., 1e-10)) -> orthonormal
/// DCT-II -> coefficients 1..12 (coefficient 0 dropped). Internally double,
/// stored as f32.
TensorF mfcc(const float* chunk);

/// Reshape a 16000-sample chunk into 40 patches of 400 samples, time order.
TensorF patch_waveform(const float* chunk);

/// Ten projector outputs over 100 ms subwindows, stored as columns [1024, 10].
/// Validates output length and finiteness.
TensorF neuralogram(const float* chunk, const Projector& projector, const std::string& clip_id,
                    std::uint32_t chunk_index);

}  // namespace pf

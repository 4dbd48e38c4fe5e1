#include "pf/features.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numeric>

#include "pf/common.hpp"
#include "pf/kernels.hpp"

namespace pf {

namespace {

// reflect an out-of-range index back into [0, n): -1 -> 1, n -> n-2
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (i < 0) i = -i;
  const auto sn = static_cast<std::ptrdiff_t>(n);
  if (i >= sn) i = 2 * sn - 2 - i;
  return static_cast<std::size_t>(i);
}

// ---- radix-2 FFT, double, for the MFCC path --------------------------------

void fft_1024(std::array<std::complex<double>, 1024>& a) {
  constexpr std::size_t N = 1024;
  // bit reversal
  for (std::size_t i = 1, j = 0; i < N; ++i) {
    std::size_t bit = N >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= N; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < N; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// ---- MFCC plan: window, mel filterbank, DCT rows ---------------------------

constexpr std::size_t kFftSize = 1024;
constexpr std::size_t kMelBands = 40;
constexpr std::size_t kMfccKeep = 13;  // coefficients 0..12 before dropping c0

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

struct MfccPlan {
  std::array<double, kFftSize> window;                        // periodic Hann
  std::array<std::vector<std::pair<int, double>>, kMelBands> mel;  // (fft bin, weight)
  std::array<double, kMfccKeep * kMelBands> dct;              // orthonormal DCT-II rows 0..12

  MfccPlan() {
    for (std::size_t n = 0; n < kFftSize; ++n)
      window[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / kFftSize);

    // 42 mel-spaced edge frequencies over 0..8000 Hz; triangle i spans
    // edges [i-1, i, i+1] and is normalized to unit area
    const double m_hi = hz_to_mel(8000.0);
    std::array<double, kMelBands + 2> edge;
    for (std::size_t j = 0; j < edge.size(); ++j)
      edge[j] = mel_to_hz(m_hi * static_cast<double>(j) / (kMelBands + 1));
    const double bin_hz = 16000.0 / kFftSize;
    for (std::size_t i = 0; i < kMelBands; ++i) {
      const double lo = edge[i], mid = edge[i + 1], hi = edge[i + 2];
      const double area = 2.0 / (hi - lo);
      for (int k = 0; k <= static_cast<int>(kFftSize) / 2; ++k) {
        const double f = k * bin_hz;
        double w = 0.0;
        if (f > lo && f < mid)
          w = (f - lo) / (mid - lo);
        else if (f >= mid && f < hi)
          w = (hi - f) / (hi - mid);
        if (w > 0.0) mel[i].emplace_back(k, w * area);
      }
    }

    for (std::size_t k = 0; k < kMfccKeep; ++k) {
      const double alpha = std::sqrt((k == 0 ? 1.0 : 2.0) / kMelBands);
      for (std::size_t j = 0; j < kMelBands; ++j)
        dct[k * kMelBands + j] =
            alpha * std::cos(M_PI * static_cast<double>(k) * (2.0 * j + 1.0) / (2.0 * kMelBands));
    }
  }
};

const MfccPlan& mfcc_plan() {
  static const MfccPlan plan;
  return plan;
}

}  // namespace

// ---------------------------------------------------------------------------
// constant-Q transform
// ---------------------------------------------------------------------------

CqtPlan::CqtPlan(CqtConfig cfg) : cfg_(cfg) {
  if (cfg_.n_bins == 0 || cfg_.bins_per_octave == 0 || cfg_.hop == 0)
    throw validation_error("cqt: zero dimension in config");
  const double q = 1.0 / (std::pow(2.0, 1.0 / static_cast<double>(cfg_.bins_per_octave)) - 1.0);
  const double f_top =
      cfg_.f_min * std::pow(2.0, static_cast<double>(cfg_.n_bins - 1) / cfg_.bins_per_octave);
  if (f_top >= cfg_.sample_rate / 2.0)
    throw validation_error("cqt: top bin " + std::to_string(f_top) + " Hz reaches Nyquist");

  kernels_.resize(cfg_.n_bins);
  std::size_t max_half = 0;
  for (std::size_t b = 0; b < cfg_.n_bins; ++b) {
    const double f = cfg_.f_min * std::pow(2.0, static_cast<double>(b) / cfg_.bins_per_octave);
    const auto len = static_cast<std::size_t>(
        std::min(std::ceil(q * cfg_.sample_rate / f), static_cast<double>(kChunkSamples)));
    Kernel& k = kernels_[b];
    k.offset = -static_cast<std::ptrdiff_t>(len / 2);
    k.re.resize(len);
    k.im.resize(len);
    for (std::size_t n = 0; n < len; ++n) {
      const double w =
          (len > 1) ? 0.5 - 0.5 * std::cos(2.0 * M_PI * n / static_cast<double>(len - 1)) : 1.0;
      const double th = 2.0 * M_PI * f * static_cast<double>(n) / cfg_.sample_rate;
      k.re[n] = static_cast<float>(w * std::cos(th));
      k.im[n] = static_cast<float>(-w * std::sin(th));
    }
    max_half = std::max(max_half, len / 2 + 1);
  }
  pad_ = max_half + 1;
}

TensorF CqtPlan::apply(const float* chunk) const {
  const std::size_t n = kChunkSamples;
  std::vector<float> padded(n + 2 * pad_);
  for (std::size_t i = 0; i < padded.size(); ++i)
    padded[i] = chunk[reflect_index(static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(pad_), n)];

  TensorF out({cfg_.n_bins, kFramesPerChunk});
  kernels::detail::par_for(cfg_.n_bins, [&](std::size_t b) {
    const Kernel& k = kernels_[b];
    const std::size_t len = k.re.size();
    for (std::size_t t = 0; t < kFramesPerChunk; ++t) {
      const std::ptrdiff_t start =
          static_cast<std::ptrdiff_t>(t * cfg_.hop) + k.offset + static_cast<std::ptrdiff_t>(pad_);
      const float* x = padded.data() + start;
      float re = 0.f, im = 0.f;
#pragma omp simd reduction(+ : re, im)
      for (std::size_t i = 0; i < len; ++i) {
        re += x[i] * k.re[i];
        im += x[i] * k.im[i];
      }
      const float mag = std::sqrt(re * re + im * im);
      out.data[b * kFramesPerChunk + t] = std::log(std::max(mag, 1e-10f));
    }
  });
  return out;
}

TensorF cqt_log_magnitude(const float* chunk) {
  static const CqtPlan plan{CqtConfig{}};
  return plan.apply(chunk);
}

TensorF peak_map(const TensorF& logmag) {
  if (logmag.rank() != 2) throw validation_error("peak_map: expected a 2-d matrix");
  const std::size_t B = logmag.shape[0], T = logmag.shape[1];

  // lower-middle order statistic of all entries
  std::vector<float> sorted(logmag.data);
  const std::size_t mid = (sorted.size() - 1) / 2;
  std::nth_element(sorted.begin(), sorted.begin() + mid, sorted.end());
  const float median = sorted[mid];

  TensorF mask({B, T});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t b = 0; b < B; ++b) {
      const float v = logmag.data[b * T + t];
      if (v < median) continue;
      bool is_max = true;
      const std::size_t lo = (b >= 2) ? b - 2 : 0;
      const std::size_t hi = std::min(B - 1, b + 2);
      for (std::size_t bb = lo; bb <= hi && is_max; ++bb)
        if (logmag.data[bb * T + t] > v) is_max = false;
      if (is_max) mask.data[b * T + t] = 1.0f;
    }
  return mask;
}

TensorF mfcc(const float* chunk) {
  const MfccPlan& plan = mfcc_plan();
  TensorF out({12, kFramesPerChunk});
  std::array<std::complex<double>, kFftSize> buf;
  std::array<double, kFftSize / 2 + 1> power;
  std::array<double, kMelBands> logmel;
  for (std::size_t t = 0; t < kFramesPerChunk; ++t) {
    const std::ptrdiff_t start =
        static_cast<std::ptrdiff_t>(t * kFrameHop) - static_cast<std::ptrdiff_t>(kFftSize / 2);
    for (std::size_t n = 0; n < kFftSize; ++n)
      buf[n] = plan.window[n] *
               static_cast<double>(chunk[reflect_index(start + static_cast<std::ptrdiff_t>(n),
                                                       kChunkSamples)]);
    fft_1024(buf);
    for (std::size_t k = 0; k <= kFftSize / 2; ++k) power[k] = std::norm(buf[k]);
    for (std::size_t i = 0; i < kMelBands; ++i) {
      double acc = 0.0;
      for (const auto& [k, w] : plan.mel[i]) acc += w * power[k];
      logmel[i] = std::log(std::max(acc, 1e-10));
    }
    for (std::size_t k = 1; k < kMfccKeep; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < kMelBands; ++j) acc += plan.dct[k * kMelBands + j] * logmel[j];
      out.data[(k - 1) * kFramesPerChunk + t] = static_cast<float>(acc);
    }
  }
  return out;
}

TensorF patch_waveform(const float* chunk) {
  TensorF out({kFramesPerChunk, kFrameHop});
  std::copy(chunk, chunk + kChunkSamples, out.data.begin());
  return out;
}

TensorF neuralogram(const float* chunk, const Projector& projector, const std::string& clip_id,
                    std::uint32_t chunk_index) {
  constexpr std::size_t kCols = 10, kSub = 1600, kDim = 1024;
  TensorF out({kDim, kCols});
  for (std::size_t k = 0; k < kCols; ++k) {
    const std::vector<float> e =
        projector.project(clip_id, chunk_index, static_cast<std::uint32_t>(k), chunk + k * kSub);
    if (e.size() != kDim)
      throw validation_error("neuralogram: projector returned " + std::to_string(e.size()) +
                             " values, expected 1024");
    for (std::size_t d = 0; d < kDim; ++d) {
      if (!std::isfinite(e[d]))
        throw validation_error("neuralogram: non-finite projector output for clip '" + clip_id +
                               "' chunk " + std::to_string(chunk_index));
      out.data[d * kCols + k] = e[d];
    }
  }
  return out;
}

}  // namespace pf

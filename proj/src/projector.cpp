#include "pf/projector.hpp"

#include <cmath>
#include <random>

#include "pf/common.hpp"
#include "pf/io.hpp"
#include "pf/kernels.hpp"

namespace pf {

namespace {

// rows of [Cout, Cin*K] drawn gaussian then Gram-Schmidt orthonormalized;
// requires Cout <= Cin*K, which holds for all three layers
TensorF orthonormal_conv(std::size_t cout, std::size_t cin, std::size_t k, std::mt19937& rng) {
  const std::size_t dim = cin * k;
  std::vector<std::vector<double>> rows(cout, std::vector<double>(dim));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& r : rows)
    for (auto& v : r) v = gauss(rng);
  for (std::size_t i = 0; i < cout; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0;
      for (std::size_t d = 0; d < dim; ++d) dot += rows[i][d] * rows[j][d];
      for (std::size_t d = 0; d < dim; ++d) rows[i][d] -= dot * rows[j][d];
    }
    double norm = 0;
    for (double v : rows[i]) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-8) throw Error("projector init: degenerate row", Error::Kind::runtime);
    for (auto& v : rows[i]) v /= norm;
  }
  TensorF w({cout, cin, k});
  for (std::size_t i = 0; i < cout; ++i)
    for (std::size_t d = 0; d < dim; ++d) w.data[i * dim + d] = static_cast<float>(rows[i][d]);
  return w;
}

std::vector<float> conv_tanh(const std::vector<float>& x, std::size_t cin, std::size_t L,
                             const TensorF& w, std::size_t stride) {
  const std::size_t cout = w.shape[0], k = w.shape[2];
  const std::size_t lout = (L - k) / stride + 1;
  std::vector<float> y(cout * lout);
  kernels::conv1d_valid_strided(x.data(), w.ptr(), static_cast<const float*>(nullptr), y.data(),
                                cin, L, cout, k, stride);
  for (auto& v : y) v = std::tanh(v);
  return y;
}

}  // namespace

StandInProjector::StandInProjector(unsigned seed) {
  std::mt19937 rng(seed);
  w1_ = orthonormal_conv(64, 1, 64, rng);
  w2_ = orthonormal_conv(256, 64, 16, rng);
  w3_ = orthonormal_conv(1024, 256, 8, rng);
}

std::vector<float> StandInProjector::project(const std::string&, std::uint32_t, std::uint32_t,
                                             const float* samples) const {
  const std::vector<float> x(samples, samples + 1600);
  const std::vector<float> h1 = conv_tanh(x, 1, 1600, w1_, 8);     // [64, 193]
  const std::vector<float> h2 = conv_tanh(h1, 64, 193, w2_, 8);    // [256, 23]
  const std::vector<float> h3 = conv_tanh(h2, 256, 23, w3_, 2);    // [1024, 8]
  std::vector<float> out(1024);
  for (std::size_t c = 0; c < 1024; ++c) {
    float best = h3[c * 8];
    for (std::size_t t = 1; t < 8; ++t) best = std::max(best, h3[c * 8 + t]);
    out[c] = best;
  }
  return out;
}

FileBackedProjector::FileBackedProjector(const std::string& cache_path) {
  for (auto& rec : read_feature_file(cache_path)) {
    if (rec.view != View::neuralogram) continue;
    if (rec.data.shape != Shape{1024, 10})
      throw validation_error("projector cache '" + cache_path + "': record for clip '" +
                             rec.clip_id + "' has shape " + shape_str(rec.data.shape) +
                             ", expected [1024x10]");
    table_.emplace(std::make_pair(rec.clip_id, rec.chunk_index), std::move(rec.data));
  }
}

std::vector<float> FileBackedProjector::project(const std::string& clip_id,
                                                std::uint32_t chunk_index, std::uint32_t subchunk,
                                                const float*) const {
  const auto it = table_.find({clip_id, chunk_index});
  if (it == table_.end() || subchunk >= 10)
    throw validation_error("missing precomputed embedding for clip '" + clip_id + "' chunk " +
                           std::to_string(chunk_index) + " subchunk " + std::to_string(subchunk));
  std::vector<float> out(1024);
  for (std::size_t d = 0; d < 1024; ++d) out[d] = it->second.data[d * 10 + subchunk];
  return out;
}

}  // namespace pf

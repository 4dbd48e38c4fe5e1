#pragma once

// The per-view classification network: a view-specific front-end projects
// chunk features to 64-dim tokens (+ sinusoidal positions), a 6-layer
// pre-norm transformer with token max-pooling after layers 2 and 4 reduces
// the sequence, global average pooling yields the 64-dim embedding, and a
// 64 -> 2048 -> GELU -> n_classes head produces raw scores for Huber
// regression against multi-hot targets.

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>

#include "pf/autodiff.hpp"
#include "pf/io.hpp"
#include "pf/tensor.hpp"

namespace pf {

struct EncoderConfig {
  View view = View::pitch;
  std::size_t d_model = 64;
  std::size_t n_layers = 6;
  std::size_t n_heads = 12;
  std::size_t head_dim = 16;  // 12 * 16 = 192: attention runs wider than d_model
  std::size_t mlp_dim = 256;
  std::size_t head_hidden = 2048;
  std::size_t n_classes = 200;
  float dropout = 0.3f;

  void validate() const;
  Shape feature_shape() const;  // per-chunk [rows, cols] for this view
  std::size_t tokens() const;   // sequence length entering the transformer

  std::string to_json() const;
  static EncoderConfig from_json(const std::string& text);

  bool operator==(const EncoderConfig&) const = default;
};

template <typename T>
using NamedTensors = std::map<std::string, Tensor<T>>;

/// Per-parameter gradient sink lookup. A null function means "treat all
/// weights as constants"; a lookup returning nullptr records the leaf
/// without exporting its gradient.
template <typename T>
using ParamSink = std::function<Tensor<T>*(const std::string&)>;

/// Glorot-uniform weights, zero biases, unit layer-norm gains; tensors are
/// created (and RNG consumed) in one fixed order. Names carry the "model."
/// prefix used in checkpoints.
NamedTensors<float> init_encoder_weights(const EncoderConfig& cfg, std::uint32_t seed);

template <typename Dst, typename Src>
NamedTensors<Dst> cast_tensors(const NamedTensors<Src>& src) {
  NamedTensors<Dst> out;
  for (const auto& [k, v] : src) out.emplace(k, v.template cast<Dst>());
  return out;
}

struct EncoderOutput {
  Var embedding;  // [B, d_model], the pooled output ahead of the head
  Var scores;     // [B, n_classes]
};

/// Build the forward graph for a feature batch [B, rows, cols] matching the
/// view. Dropout (train mode) draws from `rng` in a fixed order.
template <typename T>
EncoderOutput encoder_forward(Graph<T>& g, const EncoderConfig& cfg,
                              const NamedTensors<T>& weights, Var features, Mode mode,
                              std::mt19937& rng, const ParamSink<T>& sink = nullptr);

/// One eval-mode pass outside any training loop; accepts [rows, cols] or
/// [B, rows, cols].
struct EncoderEval {
  TensorF embedding;
  TensorF scores;
};
EncoderEval encoder_infer(const EncoderConfig& cfg, const NamedTensors<float>& weights,
                          const TensorF& features);

}  // namespace pf

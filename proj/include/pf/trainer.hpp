#pragma once

// The supervised training loop shared by the per-view encoders and the
// fusion head: cosine learning-rate schedule between fixed endpoints, Adam,
// optional global-norm gradient clipping, seeded shuffling, per-epoch
// validation top-5, CSV logging, and resumable CRC-checked checkpoints.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pf/autodiff.hpp"
#include "pf/dataset.hpp"
#include "pf/encoder.hpp"
#include "pf/tensor.hpp"

namespace pf {

struct TrainConfig {
  std::size_t epochs = 300;
  float lr_start = 2e-4f;
  float lr_end = 1e-6f;
  std::size_t batch_size = 32;
  std::uint32_t seed = 1;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float adam_eps = 1e-8f;
  float clip_norm = 5.0f;  // <= 0 disables clipping
  std::size_t checkpoint_every = 10;  // epochs between resume checkpoints

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  bool operator==(const TrainConfig&) const = default;
};

/// Cosine decay pinned to the endpoints: exactly lr_start at epoch 0 and
/// lr_end at the final epoch. Out-of-range epochs are an error.
float lr_at(std::size_t epoch, const TrainConfig& cfg);

/// Scale all gradients by max_norm / ||g||_2 (global norm over every tensor)
/// when the norm exceeds max_norm; identity otherwise; max_norm <= 0 is a
/// no-op. A non-finite norm is an error.
void gradient_clip(NamedTensors<float>& grads, float max_norm);

/// In-memory supervised chunks for one view (or fused embeddings): feature
/// tensor, multi-hot target, and provenance per chunk.
struct ChunkSet {
  std::vector<TensorF> features;
  std::vector<std::vector<float>> targets;
  std::vector<std::string> clip_ids;
  std::vector<std::uint32_t> chunk_indices;

  std::size_t size() const { return features.size(); }
  void push(TensorF f, std::vector<float> t, std::string id, std::uint32_t chunk);
};

/// Assemble the ChunkSet for one split from a PFV1 feature cache, validating
/// per-clip completeness (every clip present, chunk indices contiguous from
/// 0, shapes matching the view) before any training can start.
ChunkSet load_view_chunks(const Manifest& manifest, View view, const std::string& cache_path,
                          Split split);

/// A trainable model: initial weights, an identity blob stored in
/// checkpoints, and a forward builder returning scores [B, n_classes] for a
/// stacked feature batch.
struct ModelSpec {
  NamedTensors<float> weights;
  std::string config_json;
  std::function<Var(GraphF&, const NamedTensors<float>&, Var, Mode, std::mt19937&,
                    const ParamSink<float>&)>
      forward;
};

struct TrainResult {
  std::string final_checkpoint;
  std::string best_checkpoint;  // empty if no validation data
  std::string log_path;
  double best_val_top5 = 0.0;
  std::vector<float> epoch_train_loss;
};

/// Run the loop; `model.weights` holds the final weights afterwards.
/// Checkpoints carry weights, Adam moments, and the RNG/epoch/step state;
/// resuming from one continues bit-identically with the uninterrupted run.
TrainResult train_model(ModelSpec& model, const TrainConfig& cfg, const ChunkSet& train,
                        const ChunkSet& val, const std::string& out_dir,
                        const std::string& resume_from = "");

/// Encoder ModelSpec: fresh Glorot weights and the per-view forward.
ModelSpec encoder_model(const EncoderConfig& cfg, std::uint32_t init_seed);

/// Per-view convenience wrapper around train_model.
TrainResult train_view(const EncoderConfig& ecfg, const TrainConfig& tcfg,
                       const ChunkSet& train, const ChunkSet& val, const std::string& out_dir,
                       const std::string& resume_from = "");

}  // namespace pf

#pragma once

// Multi-view late fusion: embeddings extracted from trained per-view encoder
// checkpoints, concatenated in a fixed view order, and classified by a fresh
// two-layer head trained on the concatenation. Encoders are never updated.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pf/dataset.hpp"
#include "pf/eval.hpp"
#include "pf/io.hpp"
#include "pf/trainer.hpp"

namespace pf {

/// Sort into the fixed pitch, timbre, waveform, neuralogram order.
/// Duplicates and empty lists are errors.
std::vector<View> normalize_views(std::vector<View> views);

struct FusionSpec {
  std::vector<View> views;     // must already be in canonical order
  std::size_t embed_dim = 64;  // per-view embedding width
  std::size_t head_hidden = 2048;
  std::size_t n_classes = 200;

  std::size_t input_dim() const { return views.size() * embed_dim; }
  void validate() const;
  std::string to_json() const;
  static FusionSpec from_json(const std::string& text);
  bool operator==(const FusionSpec&) const = default;
};

/// Load a training checkpoint into a runnable model — per-view encoder or
/// fusion head, decided by the stored config. Adam moments are dropped.
ModelSpec model_from_checkpoint(const std::string& path);

/// Eval-mode class scores for every chunk, batched; provenance preserved.
std::vector<ScoredItem> score_chunks(const ModelSpec& model, const ChunkSet& chunks,
                                     std::size_t batch_size = 32);

/// Run an encoder checkpoint over its view's features and write embeddings
/// as [embed_dim, 1] records keyed by the same clip/chunk pairs. The
/// checkpoint is fully read and checked before the output file is created.
void extract_embeddings(const std::string& checkpoint_path, View view, const ChunkSet& chunks,
                        const std::string& out_path, std::size_t batch_size = 32);

/// Stack [d_i, 1] columns into one [sum d_i, 1] column.
TensorF concat_embeddings(const std::vector<TensorF>& parts);

/// Join per-view embedding caches into fused chunks ([input_dim, 1] each)
/// for one split. Every (clip, chunk) seen in any view must be present in
/// all of them; gaps are reported per view.
ChunkSet build_fused_chunks(const Manifest& manifest, const FusionSpec& spec,
                            const std::map<View, std::string>& embed_caches, Split split);

/// Fresh Glorot head: linear -> GELU -> linear over the concatenation.
ModelSpec fusion_model(const FusionSpec& spec, std::uint32_t seed);

/// Train the head with the shared loop.
TrainResult train_fusion_head(const FusionSpec& spec, const TrainConfig& cfg,
                              const ChunkSet& train, const ChunkSet& val,
                              const std::string& out_dir, const std::string& resume_from = "");

}  // namespace pf

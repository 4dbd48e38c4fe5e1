#pragma once

// Binary containers shared across the pipeline.
//
// Feature cache ("PFV1"): magic, then records until EOF —
//   clip_id u32 length + bytes, chunk_index u32, view tag u8,
//   rows u32, cols u32, rows*cols f32 little-endian.
// Used for per-chunk view features, precomputed projector outputs, and
// extracted embeddings (stored [64, 1]).
//
// Checkpoint ("PFCK"): magic, format-version u32, JSON config blob
// (u32 length + bytes), then named tensors until 4 bytes before EOF —
//   name u32 length + bytes, rank u32, dims u32 each, f32 little-endian data —
// and a trailing CRC32 over every preceding byte.

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pf/tensor.hpp"

namespace pf {

enum class View : std::uint8_t { pitch = 0, timbre = 1, waveform = 2, neuralogram = 3 };

/// Canonical order; fixes embedding-concatenation layout.
inline constexpr std::array<View, 4> kAllViews{View::pitch, View::timbre, View::waveform,
                                               View::neuralogram};

const char* view_name(View v);
View view_from_name(const std::string& name);

struct FeatureRecord {
  std::string clip_id;
  std::uint32_t chunk_index = 0;
  View view = View::pitch;
  TensorF data;  // [rows, cols]
};

/// Streaming writer so per-chunk features need not be held in memory.
class FeatureFileWriter {
 public:
  explicit FeatureFileWriter(const std::string& path);
  ~FeatureFileWriter();
  void add(const FeatureRecord& rec);
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

void write_feature_file(const std::string& path, const std::vector<FeatureRecord>& records);
std::vector<FeatureRecord> read_feature_file(const std::string& path);

/// IEEE CRC-32 (reflected polynomial 0xEDB88320), one-shot.
std::uint32_t crc32_ieee(const void* data, std::size_t n);

struct Checkpoint {
  std::string config_json;
  std::map<std::string, TensorF> tensors;
};

/// Serialize with trailing CRC; written atomically via a temp file + rename.
void write_checkpoint(const std::string& path, const Checkpoint& ck);

/// Parse and verify; bad magic, version, truncation, or CRC mismatch throw.
Checkpoint read_checkpoint(const std::string& path);

}  // namespace pf

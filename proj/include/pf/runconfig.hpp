#pragma once

// The single JSON run configuration behind every command-line stage: paths,
// corpus parameters, encoder layout, training schedules (with per-view
// overrides), and the fusion head. Parsing is strict — unknown keys and type
// mismatches fail with a JSON pointer to the offending field — and the fully
// resolved config plus a version string are echoed for provenance before any
// stage computes.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pf/encoder.hpp"
#include "pf/fusion.hpp"
#include "pf/trainer.hpp"

namespace pf {

struct SynthParams {
  std::size_t classes = 8;
  std::size_t clips_per_class = 60;
  double seconds = 3.0;

  bool operator==(const SynthParams&) const = default;
};

struct RunConfig {
  std::string data_dir = "data";              // manifest.csv, vocab.txt, audio/
  std::string cache_dir = "cache";            // feature + embedding caches
  std::string checkpoint_dir = "checkpoints";
  std::string report_dir = "reports";
  std::uint32_t seed = 1;                     // default for every schedule's seed
  std::vector<View> views{View::pitch, View::timbre, View::waveform, View::neuralogram};
  SynthParams synth;
  EncoderConfig encoder;             // view and n_classes are filled per stage
  TrainConfig train;                 // encoder schedule
  TrainConfig head_train;            // fusion head schedule (shorter by default)
  std::size_t fusion_head_hidden = 2048;
  std::map<View, TrainConfig> train_overrides;  // fully resolved per view

  RunConfig();

  /// Strict parse; errors read "config error at /section/key: ...".
  static RunConfig from_json(const std::string& text);
  /// Parse a file, then apply the PF_CACHE_DIR environment override.
  static RunConfig load(const std::string& path);
  /// Fully resolved round-trippable JSON (defaults included).
  std::string to_json() const;

  bool operator==(const RunConfig&) const = default;

  EncoderConfig encoder_for(View v, std::size_t n_classes) const;
  const TrainConfig& train_for(View v) const;
  FusionSpec fusion_for(std::vector<View> fused_views, std::size_t n_classes) const;

  // Shared artifact layout, so every stage agrees on file names.
  std::string manifest_path() const;
  std::string vocab_path() const;
  std::string features_path(View v) const;   // <cache>/features_<view>.pfv
  std::string embeds_path(View v) const;     // <cache>/embeds_<view>.pfv
  std::string encoder_dir(View v) const;     // <ckpt>/<view>
  std::string head_dir(const std::vector<View>& fused_views) const;  // <ckpt>/head_<a+b>
};

/// Write `<report_dir>/resolved_config.json` and `<report_dir>/version.txt`.
/// Every stage calls this before computing anything.
void write_provenance(const RunConfig& cfg);

}  // namespace pf

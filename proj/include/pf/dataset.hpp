#pragma once

// Manifest + audio ingestion (CSV manifest, WAV decode, resample to 16 kHz,
// 1-second chunking, multi-hot label encoding) and a deterministic synthetic
// corpus generator.
//
// The synthetic corpus has two class families: pitch-coded classes share one
// spectral envelope (enforced by matching harmonic amplitudes against a
// common mel-band profile) but differ in fundamental, while timbre-coded
// classes share one fundamental but differ in envelope shape. Every fifth
// clip mixes one class from each family and carries both labels, so neither
// a pitch-only nor a timbre-only representation can separate everything.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pf/wav.hpp"

namespace pf {

enum class Split { train, val, test };

const char* split_name(Split s);
Split split_from_name(const std::string& s);

class LabelVocabulary {
 public:
  /// Names must be unique and there must be at least two of them.
  explicit LabelVocabulary(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }
  bool contains(const std::string& n) const { return index_.count(n) != 0; }
  std::size_t index(const std::string& n) const;  // throws on unknown name

  /// File format: one class name per line; line number = index.
  static LabelVocabulary load(const std::string& path);
  void save(const std::string& path) const;

  bool operator==(const LabelVocabulary& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

struct ClipRecord {
  std::string clip_id;
  std::string source;  // WAV path
  std::set<std::size_t> labels;
  Split split = Split::train;

  bool operator==(const ClipRecord&) const = default;
};

/// {0,1} vector of length vocab_size with ones at the label indices.
std::vector<float> multi_hot(const std::set<std::size_t>& labels, std::size_t vocab_size);

struct Chunk {
  std::string clip_id;
  std::uint32_t chunk_index = 0;
  std::vector<float> samples;  // exactly 16000
  std::vector<float> target;   // the parent clip's multi-hot labels
};

struct Manifest {
  LabelVocabulary vocab;
  std::vector<ClipRecord> records;
};

/// CSV rows `clip_id,labels,split` with `;`-separated label names; an
/// optional literal header row is skipped. Audio is resolved as
/// `<manifest dir>/audio/<clip_id>.wav`. Unknown labels, malformed rows,
/// and duplicate clip ids are hard errors naming the offending row.
Manifest load_manifest(const std::string& manifest_path, const std::string& vocab_path);

std::vector<ClipRecord> records_for_split(const std::vector<ClipRecord>& records, Split s);

/// Decode the record's WAV (any supported encoding/channel count) and
/// resample to 16 kHz; output amplitudes clamped to [-1, 1].
AudioClip decode_and_resample(const ClipRecord& rec);

/// Non-overlapping 1 s windows. A trailing remainder of at least 0.5 s is
/// zero-padded to a full chunk, shorter remainders are dropped, and clips
/// under 1 s pad to exactly one chunk. Empty clips are an error.
std::vector<Chunk> chunk_clip(const AudioClip& clip, const ClipRecord& rec,
                              std::size_t vocab_size);

struct SyntheticCorpus {
  LabelVocabulary vocab;
  std::vector<ClipRecord> records;
  std::string manifest_path;
  std::string vocab_path;
};

/// Writes `<out_dir>/vocab.txt`, `<out_dir>/manifest.csv`, and
/// `<out_dir>/audio/*.wav`. Deterministic given the seed (single RNG,
/// serial generation). n_classes must be even and at least 4; half the
/// classes are pitch-coded, half timbre-coded. Splits are 70/15/15 per
/// class in generation order.
SyntheticCorpus generate_synthetic_corpus(const std::string& out_dir, std::uint32_t seed,
                                          std::size_t n_classes = 8,
                                          std::size_t clips_per_class = 60,
                                          double seconds = 3.0);

}  // namespace pf

#pragma once

// Ranking metrics over raw score vectors: any-hit top-k accuracy at chunk or
// clip level, and clip-level macro mean average precision. Clip scores are
// the per-class mean over the clip's chunk scores. All tie-breaks are
// deterministic: classes by lower index, clips by lexicographic clip_id.

#include <cstdint>
#include <string>
#include <vector>

namespace pf {

/// One scored item — a chunk, or a clip after averaging.
struct ScoredItem {
  std::string clip_id;
  std::vector<float> scores;  // one per class
  std::vector<float> truth;   // multi-hot, same length
};

/// Any-hit rule: an item counts iff some true label ranks in the top k.
/// Ties broken toward the lower class index. Errors when items are empty or
/// have fewer than k classes.
double topk_accuracy(const std::vector<ScoredItem>& items, std::size_t k = 5);

/// Group chunks by clip_id (first-appearance order) and average the score
/// vectors; truth must agree across a clip's chunks.
std::vector<ScoredItem> average_chunk_scores(const std::vector<ScoredItem>& chunks);

struct ApReport {
  std::vector<double> per_class_ap;  // NaN for classes with no positives
  double map_macro = 0.0;            // mean over classes that have positives
};

/// Per class: rank clips by that class's score (descending, clip_id ascending
/// on ties); AP = mean over positives of precision at their ranks. Classes
/// without positives are excluded from the macro mean.
ApReport mean_average_precision(const std::vector<ScoredItem>& clips);

struct MetricsReport {
  double top5_chunk = 0.0;
  double top5_clip = 0.0;
  double map_macro = 0.0;
  std::vector<double> per_class_ap;

  std::string to_csv() const;   // metric,value rows + per-class AP rows
  std::string to_json() const;
};

/// Both metric families from chunk-level scores in one pass. The top-k
/// metrics use k = min(5, n_classes) so corpora with fewer than five classes
/// still evaluate (with a trivially saturated top-k).
MetricsReport compute_metrics(const std::vector<ScoredItem>& chunks);

}  // namespace pf

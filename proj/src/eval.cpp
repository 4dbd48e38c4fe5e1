#include "pf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "pf/common.hpp"

namespace pf {

namespace {

void check_item(const ScoredItem& it, std::size_t n_classes) {
  if (it.scores.size() != n_classes || it.truth.size() != n_classes)
    throw validation_error("scored item '" + it.clip_id + "': expected " +
                           std::to_string(n_classes) + " classes, got " +
                           std::to_string(it.scores.size()) + " scores / " +
                           std::to_string(it.truth.size()) + " truth");
  for (float v : it.scores)
    if (!std::isfinite(v))
      throw validation_error("scored item '" + it.clip_id + "': non-finite score");
}

}  // namespace

double topk_accuracy(const std::vector<ScoredItem>& items, std::size_t k) {
  if (items.empty()) throw validation_error("topk_accuracy: no items");
  const std::size_t n_classes = items[0].scores.size();
  if (n_classes < k)
    throw validation_error("topk_accuracy: " + std::to_string(n_classes) +
                           " classes but k = " + std::to_string(k));
  std::size_t correct = 0;
  std::vector<std::size_t> order(n_classes);
  for (const auto& it : items) {
    check_item(it, n_classes);
    std::iota(order.begin(), order.end(), 0);
    // score descending, class index ascending on ties
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (it.scores[a] != it.scores[b]) return it.scores[a] > it.scores[b];
                        return a < b;
                      });
    for (std::size_t r = 0; r < k; ++r)
      if (it.truth[order[r]] == 1.0f) {
        ++correct;
        break;
      }
  }
  return static_cast<double>(correct) / static_cast<double>(items.size());
}

std::vector<ScoredItem> average_chunk_scores(const std::vector<ScoredItem>& chunks) {
  if (chunks.empty()) throw validation_error("average_chunk_scores: no chunks");
  const std::size_t n_classes = chunks[0].scores.size();
  std::vector<ScoredItem> clips;
  std::map<std::string, std::size_t> pos;       // clip_id -> index in clips
  std::vector<std::size_t> counts;
  for (const auto& ch : chunks) {
    check_item(ch, n_classes);
    auto [it, fresh] = pos.emplace(ch.clip_id, clips.size());
    if (fresh) {
      clips.push_back(ch);
      counts.push_back(1);
      continue;
    }
    ScoredItem& clip = clips[it->second];
    if (clip.truth != ch.truth)
      throw validation_error("clip '" + ch.clip_id + "': chunks disagree on labels");
    for (std::size_t c = 0; c < n_classes; ++c) clip.scores[c] += ch.scores[c];
    ++counts[it->second];
  }
  for (std::size_t i = 0; i < clips.size(); ++i)
    for (auto& s : clips[i].scores) s /= static_cast<float>(counts[i]);
  return clips;
}

ApReport mean_average_precision(const std::vector<ScoredItem>& clips) {
  if (clips.empty()) throw validation_error("mean_average_precision: no clips");
  const std::size_t n_classes = clips[0].scores.size();
  for (const auto& c : clips) check_item(c, n_classes);

  ApReport rep;
  rep.per_class_ap.assign(n_classes, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  std::size_t with_pos = 0;
  std::vector<std::size_t> order(clips.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::size_t positives = 0;
    for (const auto& clip : clips) positives += clip.truth[c] == 1.0f;
    if (positives == 0) continue;

    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (clips[a].scores[c] != clips[b].scores[c])
        return clips[a].scores[c] > clips[b].scores[c];
      return clips[a].clip_id < clips[b].clip_id;
    });
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank)
      if (clips[order[rank]].truth[c] == 1.0f) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
      }
    rep.per_class_ap[c] = ap / static_cast<double>(positives);
    sum += rep.per_class_ap[c];
    ++with_pos;
  }
  if (with_pos == 0) throw validation_error("mean_average_precision: no class has a positive");
  rep.map_macro = sum / static_cast<double>(with_pos);
  return rep;
}

MetricsReport compute_metrics(const std::vector<ScoredItem>& chunks) {
  MetricsReport rep;
  if (chunks.empty()) throw validation_error("compute_metrics: no items");
  // clamp like the training-loop validation metric, so corpora with fewer
  // than five classes still report (a trivially saturated) top-k
  const std::size_t k = std::min<std::size_t>(5, chunks.front().scores.size());
  rep.top5_chunk = topk_accuracy(chunks, k);
  const auto clips = average_chunk_scores(chunks);
  rep.top5_clip = topk_accuracy(clips, k);
  auto ap = mean_average_precision(clips);
  rep.map_macro = ap.map_macro;
  rep.per_class_ap = std::move(ap.per_class_ap);
  return rep;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "metric,value\n";
  os << "top5_chunk," << top5_chunk << "\n";
  os << "top5_clip," << top5_clip << "\n";
  os << "map_macro," << map_macro << "\n";
  for (std::size_t c = 0; c < per_class_ap.size(); ++c) {
    os << "ap_class_" << c << ",";
    if (std::isnan(per_class_ap[c])) os << "n/a";
    else os << per_class_ap[c];
    os << "\n";
  }
  return os.str();
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["top5_chunk"] = top5_chunk;
  j["top5_clip"] = top5_clip;
  j["map_macro"] = map_macro;
  auto& arr = j["per_class_ap"] = nlohmann::json::array();
  for (double ap : per_class_ap) {
    if (std::isnan(ap)) arr.push_back(nullptr);
    else arr.push_back(ap);
  }
  return j.dump(2);
}

}  // namespace pf

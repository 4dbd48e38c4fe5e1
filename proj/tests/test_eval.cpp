#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "pf/common.hpp"
#include "pf/eval.hpp"

using namespace pf;

namespace {

ScoredItem item(std::string id, std::vector<float> scores, std::vector<std::size_t> labels) {
  ScoredItem it;
  it.clip_id = std::move(id);
  it.truth.assign(scores.size(), 0.0f);
  for (std::size_t c : labels) it.truth[c] = 1.0f;
  it.scores = std::move(scores);
  return it;
}

// Independent rank-counting top-k: a true label hits iff fewer than k classes
// beat it (higher score, or equal score with a lower index).
bool topk_hit_oracle(const ScoredItem& it, std::size_t k) {
  const std::size_t n = it.scores.size();
  for (std::size_t c = 0; c < n; ++c) {
    if (it.truth[c] != 1.0f) continue;
    std::size_t beaten_by = 0;
    for (std::size_t o = 0; o < n; ++o) {
      if (o == c) continue;
      if (it.scores[o] > it.scores[c] || (it.scores[o] == it.scores[c] && o < c)) ++beaten_by;
    }
    if (beaten_by < k) return true;
  }
  return false;
}

// Independent AP: precision at each positive's rank, ranks from pairwise
// comparisons (score descending, clip_id ascending on ties).
double ap_oracle(const std::vector<ScoredItem>& clips, std::size_t c) {
  auto rank_of = [&](std::size_t p) {
    std::size_t r = 1;
    for (std::size_t q = 0; q < clips.size(); ++q) {
      if (q == p) continue;
      if (clips[q].scores[c] > clips[p].scores[c] ||
          (clips[q].scores[c] == clips[p].scores[c] && clips[q].clip_id < clips[p].clip_id))
        ++r;
    }
    return r;
  };
  double ap = 0.0;
  std::size_t positives = 0;
  for (std::size_t p = 0; p < clips.size(); ++p) {
    if (clips[p].truth[c] != 1.0f) continue;
    ++positives;
    const std::size_t rp = rank_of(p);
    std::size_t pos_at_or_above = 0;
    for (std::size_t q = 0; q < clips.size(); ++q)
      if (clips[q].truth[c] == 1.0f && rank_of(q) <= rp) ++pos_at_or_above;
    ap += static_cast<double>(pos_at_or_above) / static_cast<double>(rp);
  }
  return positives ? ap / static_cast<double>(positives) : std::nan("");
}

}  // namespace

TEST_CASE("top-5 counts a label at rank five and rejects one at rank six") {
  // Four classes strictly above the true class: rank 5, inside the cutoff.
  auto in = item("a", {10, 9, 8, 7, 0.1f, 6, 0.2f, 0.3f}, {5});
  CHECK(topk_accuracy({in}, 5) == 1.0);
  // Five classes strictly above: rank 6, outside.
  auto out = item("a", {10, 9, 8, 7, 6.5f, 6, 0.2f, 0.3f}, {5});
  CHECK(topk_accuracy({out}, 5) == 0.0);
}

TEST_CASE("any-hit: one of several labels in the top k suffices") {
  // Truth {1, 7}; class 7 ranks 2nd even though class 1 ranks last.
  auto it = item("a", {9, 0.0f, 8, 7, 6, 5, 4, 8.5f}, {1, 7});
  CHECK(topk_accuracy({it}, 5) == 1.0);
  CHECK(topk_accuracy({it}, 1) == 0.0);  // top-1 is class 0, not a label
  // Both labels outside the top 2.
  CHECK(topk_accuracy({it}, 2) == 1.0);  // ranks: 0, 7 -> hit via class 7
}

TEST_CASE("equal scores break toward the lower class index") {
  auto tied = [](std::size_t label) {
    return item("a", {0, 0, 5, 0, 0, 5, 0, 0}, {label});
  };
  CHECK(topk_accuracy({tied(2)}, 1) == 1.0);  // class 2 wins the 2-vs-5 tie
  CHECK(topk_accuracy({tied(5)}, 1) == 0.0);
  CHECK(topk_accuracy({tied(5)}, 2) == 1.0);
}

TEST_CASE("top-k accuracy averages over items") {
  std::vector<ScoredItem> items = {
      item("a", {1, 0, 0}, {0}),
      item("b", {1, 0, 0}, {1}),
      item("c", {0, 1, 0}, {1}),
      item("d", {0, 0, 1}, {1}),
  };
  CHECK(topk_accuracy(items, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("top-k argument and item validation") {
  CHECK_THROWS_WITH_AS(topk_accuracy({}, 5), "topk_accuracy: no items", Error);
  auto three = item("a", {1, 2, 3}, {0});
  CHECK_THROWS_WITH_AS(topk_accuracy({three}, 5), "topk_accuracy: 3 classes but k = 5", Error);
  auto ragged = three;
  ragged.truth.pop_back();
  CHECK_THROWS_AS(topk_accuracy({three, ragged}, 2), Error);
  auto inf = item("bad", {1, std::numeric_limits<float>::infinity(), 0}, {0});
  CHECK_THROWS_WITH_AS(topk_accuracy({inf}, 2), "scored item 'bad': non-finite score", Error);
}

TEST_CASE("chunk averaging: per-class mean, first-appearance order, label agreement") {
  std::vector<ScoredItem> chunks = {
      item("b", {0.2f, 0.8f}, {1}),
      item("a", {1.0f, 0.0f}, {0}),
      item("b", {0.8f, 0.2f}, {1}),
      item("b", {0.5f, 0.5f}, {1}),
  };
  auto clips = average_chunk_scores(chunks);
  REQUIRE(clips.size() == 2);
  CHECK(clips[0].clip_id == "b");  // first appearance, not lexicographic
  CHECK(clips[1].clip_id == "a");
  CHECK(clips[0].scores[0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(clips[0].scores[1] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(clips[1].scores[0] == 1.0f);
  CHECK(clips[0].truth == std::vector<float>{0.0f, 1.0f});

  auto flipped = chunks;
  flipped[2].truth = {1.0f, 0.0f};
  CHECK_THROWS_WITH_AS(average_chunk_scores(flipped), "clip 'b': chunks disagree on labels",
                       Error);
}

TEST_CASE("average precision worked examples") {
  // Positives at ranks 1 and 3 of 3: AP = (1/1 + 2/3) / 2 = 5/6.
  std::vector<ScoredItem> clips = {
      item("a", {0.9f}, {0}),
      item("b", {0.5f}, {}),
      item("c", {0.1f}, {0}),
  };
  auto rep = mean_average_precision(clips);
  CHECK(rep.per_class_ap[0] == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(rep.map_macro == doctest::Approx(5.0 / 6.0).epsilon(1e-12));

  // Every clip positive: AP is 1 no matter the scores.
  std::vector<ScoredItem> all_pos = {
      item("a", {0.3f}, {0}), item("b", {0.9f}, {0}), item("c", {0.1f}, {0})};
  CHECK(mean_average_precision(all_pos).per_class_ap[0] == doctest::Approx(1.0).epsilon(1e-12));

  // Single positive ranked dead last of n: AP = 1/n.
  std::vector<ScoredItem> last;
  const std::size_t n = 7;
  for (std::size_t i = 0; i < n; ++i)
    last.push_back(item(std::string(1, static_cast<char>('a' + i)),
                        {static_cast<float>(n - i)}, i + 1 == n ? std::vector<std::size_t>{0}
                                                                : std::vector<std::size_t>{}));
  CHECK(mean_average_precision(last).per_class_ap[0] ==
        doctest::Approx(1.0 / static_cast<double>(n)).epsilon(1e-12));
}

TEST_CASE("classes without positives get NaN and stay out of the macro mean") {
  std::vector<ScoredItem> clips = {
      item("a", {0.9f, 0.4f, 0.1f}, {0}),
      item("b", {0.1f, 0.8f, 0.2f}, {0}),
  };
  auto rep = mean_average_precision(clips);
  CHECK(rep.per_class_ap[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::isnan(rep.per_class_ap[1]));
  CHECK(std::isnan(rep.per_class_ap[2]));
  CHECK(rep.map_macro == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<ScoredItem> none = {item("a", {0.9f, 0.4f}, {})};
  CHECK_THROWS_WITH_AS(mean_average_precision(none),
                       "mean_average_precision: no class has a positive", Error);
}

TEST_CASE("score ties rank clips by ascending clip_id") {
  // "a" negative, "b" positive, same score: "a" takes rank 1, AP = 1/2.
  std::vector<ScoredItem> clips = {item("a", {0.5f}, {}), item("b", {0.5f}, {0})};
  CHECK(mean_average_precision(clips).per_class_ap[0] == doctest::Approx(0.5).epsilon(1e-12));
  // Swap ids so the positive sorts first: AP = 1.
  std::vector<ScoredItem> swapped = {item("b", {0.5f}, {}), item("a", {0.5f}, {0})};
  CHECK(mean_average_precision(swapped).per_class_ap[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("metrics are invariant under a strictly increasing score transform") {
  std::mt19937 rng(404);
  std::uniform_real_distribution<float> U(-1.0f, 1.0f);
  std::uniform_int_distribution<std::size_t> L(0, 7);
  std::vector<ScoredItem> chunks;
  for (std::size_t i = 0; i < 60; ++i) {
    std::vector<float> s(8);
    for (auto& v : s) v = U(rng);
    // Three chunks per clip so averaging matters; snap scores to a grid so
    // exact ties survive the affine map.
    for (auto& v : s) v = std::round(v * 8.0f) / 8.0f;
    chunks.push_back(item("clip" + std::to_string(i / 3), s, {L(rng)}));
    chunks.back().truth = chunks[chunks.size() - 1 - (i % 3)].truth;  // keep clip labels agreeing
  }
  auto mapped = chunks;
  for (auto& ch : mapped)
    for (auto& v : ch.scores) v = 2.0f * v + 1.0f;  // exact in binary floating point
  auto a = compute_metrics(chunks);
  auto b = compute_metrics(mapped);
  CHECK(a.top5_chunk == b.top5_chunk);
  CHECK(a.top5_clip == b.top5_clip);
  CHECK(a.map_macro == doctest::Approx(b.map_macro).epsilon(1e-12));
}

TEST_CASE("a perfect predictor scores 1.0 everywhere") {
  std::mt19937 rng(7);
  std::uniform_int_distribution<std::size_t> L(0, 7);
  std::vector<ScoredItem> chunks;
  for (std::size_t i = 0; i < 40; ++i) {
    auto it = item("clip" + std::to_string(i / 2), std::vector<float>(8, 0.0f), {L(rng)});
    if (i % 2 == 1) it.truth = chunks.back().truth;
    it.scores.assign(it.truth.begin(), it.truth.end());
    chunks.push_back(std::move(it));
  }
  auto rep = compute_metrics(chunks);
  CHECK(rep.top5_chunk == 1.0);
  CHECK(rep.top5_clip == 1.0);
  CHECK(rep.map_macro == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("random single-label top-5 over 8 classes sits near 5/8") {
  std::mt19937 rng(1234);
  std::uniform_real_distribution<float> U(0.0f, 1.0f);
  std::uniform_int_distribution<std::size_t> L(0, 7);
  std::vector<ScoredItem> items;
  items.reserve(20000);
  for (std::size_t i = 0; i < 20000; ++i) {
    std::vector<float> s(8);
    for (auto& v : s) v = U(rng);
    items.push_back(item("x" + std::to_string(i), s, {L(rng)}));
  }
  const double acc = topk_accuracy(items, 5);
  CHECK(acc == doctest::Approx(5.0 / 8.0).epsilon(0.02));
}

TEST_CASE("top-k and AP agree with rank-counting oracles on random instances") {
  std::mt19937 rng(99);
  std::uniform_int_distribution<std::size_t> NC(1, 8), NI(1, 10), K(1, 8), NL(0, 2);
  std::uniform_int_distribution<int> S(-4, 4);
  for (std::size_t trial = 0; trial < 300; ++trial) {
    const std::size_t n_classes = NC(rng);
    const std::size_t n_items = NI(rng);
    std::vector<ScoredItem> items;
    bool any_pos = false;
    for (std::size_t i = 0; i < n_items; ++i) {
      std::vector<float> s(n_classes);
      for (auto& v : s) v = static_cast<float>(S(rng)) / 4.0f;  // coarse grid forces ties
      std::vector<std::size_t> labels;
      const std::size_t nl = std::min(NL(rng), n_classes);
      while (labels.size() < nl) {
        std::size_t c = std::uniform_int_distribution<std::size_t>(0, n_classes - 1)(rng);
        if (std::find(labels.begin(), labels.end(), c) == labels.end()) labels.push_back(c);
      }
      any_pos = any_pos || !labels.empty();
      items.push_back(item("clip" + std::to_string(i), s, labels));
    }
    const std::size_t k = std::min(K(rng), n_classes);
    std::size_t hits = 0;
    for (const auto& it : items) hits += topk_hit_oracle(it, k);
    CHECK(topk_accuracy(items, k) ==
          doctest::Approx(static_cast<double>(hits) / n_items).epsilon(1e-12));

    if (!any_pos) continue;
    auto rep = mean_average_precision(items);
    double macro = 0.0;
    std::size_t with_pos = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
      const double want = ap_oracle(items, c);
      if (std::isnan(want)) {
        CHECK(std::isnan(rep.per_class_ap[c]));
        continue;
      }
      CHECK(rep.per_class_ap[c] == doctest::Approx(want).epsilon(1e-12));
      macro += want;
      ++with_pos;
    }
    CHECK(rep.map_macro == doctest::Approx(macro / with_pos).epsilon(1e-12));
  }
}

TEST_CASE("report serialization marks empty classes") {
  MetricsReport rep;
  rep.top5_chunk = 0.75;
  rep.top5_clip = 0.5;
  rep.map_macro = 0.25;
  rep.per_class_ap = {1.0, std::nan(""), 0.5};
  const std::string csv = rep.to_csv();
  CHECK(csv.find("metric,value\n") == 0);
  CHECK(csv.find("top5_chunk,0.75") != std::string::npos);
  CHECK(csv.find("ap_class_1,n/a") != std::string::npos);
  CHECK(csv.find("ap_class_2,0.5") != std::string::npos);
  const std::string js = rep.to_json();
  CHECK(js.find("null") != std::string::npos);
  CHECK(js.find("\"map_macro\": 0.25") != std::string::npos);
}

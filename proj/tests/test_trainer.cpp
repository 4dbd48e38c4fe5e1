#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "pf/io.hpp"
#include "pf/trainer.hpp"

using namespace pf;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("pf_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Minimal trainable model: scores = flatten(features) * W + b. Keeps the
// loop tests fast and makes every update hand-checkable.
ModelSpec linear_model(std::size_t d, std::size_t c, std::uint32_t seed) {
  ModelSpec m;
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> U(-0.3f, 0.3f);
  TensorF w({d, c}), b({c});
  for (auto& v : w.data) v = U(rng);
  for (auto& v : b.data) v = U(rng);
  m.weights.emplace("lin.w", std::move(w));
  m.weights.emplace("lin.b", std::move(b));
  m.config_json = "{\"toy\":{\"d\":" + std::to_string(d) + ",\"c\":" + std::to_string(c) + "}}";
  m.forward = [d](GraphF& g, const NamedTensors<float>& weights, Var x, Mode, std::mt19937&,
                  const ParamSink<float>& sink) {
    auto P = [&](const std::string& name) {
      const TensorF& t = weights.at(name);
      return sink ? g.leaf(t, sink(name), name) : g.value(t, name);
    };
    const Shape& s = g.val(x).shape;
    Var flat = g.reshape(x, {s[0], d});
    return g.add(g.matmul(flat, P("lin.w")), P("lin.b"));
  };
  return m;
}

// Near-separable toy chunks: class k gets a bump at coordinate k plus a
// deterministic wiggle; n_per chunks per class, all features [d, 1].
ChunkSet toy_chunks(std::size_t n_classes, std::size_t n_per, std::uint32_t seed) {
  ChunkSet s;
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> U(-0.2f, 0.2f);
  for (std::size_t k = 0; k < n_classes; ++k)
    for (std::size_t i = 0; i < n_per; ++i) {
      TensorF f({n_classes, 1});
      for (auto& v : f.data) v = U(rng);
      f.data[k] += 2.0f;
      std::vector<float> t(n_classes, 0.0f);
      t[k] = 1.0f;
      s.push(std::move(f), std::move(t), "c" + std::to_string(k) + "_" + std::to_string(i),
             0);
    }
  return s;
}

TrainConfig toy_config(std::size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.lr_start = 0.05f;
  cfg.lr_end = 1e-4f;
  cfg.batch_size = 8;
  cfg.seed = 5;
  cfg.checkpoint_every = 2;
  return cfg;
}

}  // namespace

TEST_CASE("cosine schedule hits both endpoints exactly and never increases") {
  TrainConfig cfg;  // 300 epochs, 2e-4 -> 1e-6
  CHECK(lr_at(0, cfg) == cfg.lr_start);
  CHECK(lr_at(cfg.epochs - 1, cfg) == cfg.lr_end);
  float prev = lr_at(0, cfg);
  for (std::size_t e = 1; e < cfg.epochs; ++e) {
    const float cur = lr_at(e, cfg);
    CHECK(cur <= prev);
    prev = cur;
  }
  // Half-period symmetry of the cosine: mirrored epochs sum to the endpoints.
  CHECK(static_cast<double>(lr_at(149, cfg)) + static_cast<double>(lr_at(150, cfg)) ==
        doctest::Approx(static_cast<double>(cfg.lr_start) + static_cast<double>(cfg.lr_end))
            .epsilon(1e-8));
  CHECK_THROWS_WITH_AS(lr_at(300, cfg), "lr_at: epoch 300 out of range for 300 epochs", Error);

  TrainConfig one = cfg;
  one.epochs = 1;
  CHECK(lr_at(0, one) == one.lr_start);
}

TEST_CASE("train config JSON round-trips and rejects junk") {
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.lr_start = 3e-3f;
  cfg.lr_end = 1e-5f;
  cfg.seed = 42;
  CHECK(TrainConfig::from_json(cfg.to_json()) == cfg);
  CHECK_THROWS_WITH_AS(TrainConfig::from_json("{\"epoch\":3}"),
                       "train config: unknown key 'epoch'", Error);
  CHECK_THROWS_WITH_AS(TrainConfig::from_json("{\"epochs\":\"many\"}"),
                       "train config: bad value for 'epochs'", Error);
  CHECK_THROWS_AS(TrainConfig::from_json("not json"), Error);
  CHECK_THROWS_WITH_AS(TrainConfig::from_json("{\"lr_end\":0.1,\"lr_start\":0.001}"),
                       "train config: lr_end must not exceed lr_start", Error);
  CHECK_THROWS_WITH_AS(TrainConfig::from_json("{\"epochs\":0}"),
                       "train config: epochs must be >= 1", Error);
}

TEST_CASE("gradient clipping scales by the global norm across tensors") {
  NamedTensors<float> g;
  g.emplace("a", TensorF({std::size_t{1}}, {3.0f}));
  g.emplace("b", TensorF({std::size_t{1}}, {4.0f}));
  gradient_clip(g, 1.0f);  // global norm 5 -> scale 1/5
  CHECK(g.at("a").data[0] == doctest::Approx(0.6f).epsilon(1e-6));
  CHECK(g.at("b").data[0] == doctest::Approx(0.8f).epsilon(1e-6));

  NamedTensors<float> under;
  under.emplace("a", TensorF({std::size_t{2}}, {0.6f, 0.8f}));  // norm 1 < 2
  auto before = under.at("a").data;
  gradient_clip(under, 2.0f);
  CHECK(under.at("a").data == before);

  NamedTensors<float> off;
  off.emplace("a", TensorF({std::size_t{1}}, {1e10f}));
  gradient_clip(off, 0.0f);  // disabled
  CHECK(off.at("a").data[0] == 1e10f);
  gradient_clip(off, -3.0f);
  CHECK(off.at("a").data[0] == 1e10f);

  NamedTensors<float> zeros;
  zeros.emplace("a", TensorF({std::size_t{3}}));
  gradient_clip(zeros, 1.0f);
  for (float v : zeros.at("a").data) CHECK(v == 0.0f);

  NamedTensors<float> bad;
  bad.emplace("a", TensorF({std::size_t{1}}, {std::numeric_limits<float>::infinity()}));
  CHECK_THROWS_WITH_AS(gradient_clip(bad, 1.0f), "gradient clip: non-finite gradient norm",
                       Error);
}

TEST_CASE("view chunks load from a feature cache with completeness checks") {
  auto dir = tmp_dir("chunks");
  LabelVocabulary vocab({"low", "high"});
  Manifest man{vocab, {}};
  man.records.push_back({"clip_a", "unused.wav", {0}, Split::train});
  man.records.push_back({"clip_b", "unused.wav", {0, 1}, Split::train});
  man.records.push_back({"clip_v", "unused.wav", {1}, Split::val});

  auto rec = [](std::string id, std::uint32_t chunk, View v, Shape shape) {
    FeatureRecord r;
    r.clip_id = std::move(id);
    r.chunk_index = chunk;
    r.view = v;
    r.data = TensorF(shape);
    r.data.data[0] = static_cast<float>(chunk) + 1.0f;
    return r;
  };
  const Shape mf{12, 40};
  const std::string cache = (dir / "feat.pfv").string();
  write_feature_file(cache, {
                                rec("clip_a", 0, View::timbre, mf),
                                rec("clip_a", 1, View::timbre, mf),
                                rec("clip_b", 0, View::timbre, mf),
                                rec("clip_v", 0, View::timbre, mf),
                                rec("clip_a", 0, View::pitch, {80, 40}),  // other view: ignored
                            });

  auto train = load_view_chunks(man, View::timbre, cache, Split::train);
  REQUIRE(train.size() == 3);
  CHECK(train.clip_ids == std::vector<std::string>{"clip_a", "clip_a", "clip_b"});
  CHECK(train.chunk_indices == std::vector<std::uint32_t>{0, 1, 0});
  CHECK(train.features[1].data[0] == 2.0f);
  CHECK(train.targets[0] == std::vector<float>{1.0f, 0.0f});
  CHECK(train.targets[2] == std::vector<float>{1.0f, 1.0f});
  auto val = load_view_chunks(man, View::timbre, cache, Split::val);
  REQUIRE(val.size() == 1);
  CHECK(val.clip_ids[0] == "clip_v");

  // Missing clip for the requested view.
  CHECK_THROWS_WITH(load_view_chunks(man, View::waveform, cache, Split::train),
                    doctest::Contains("has no waveform records for clip 'clip_a'"));
  // Non-contiguous chunk indices.
  write_feature_file(cache, {rec("clip_a", 0, View::timbre, mf), rec("clip_a", 2, View::timbre, mf),
                             rec("clip_b", 0, View::timbre, mf)});
  CHECK_THROWS_WITH(load_view_chunks(man, View::timbre, cache, Split::train),
                    doctest::Contains("not contiguous (expected chunk 1, found 2)"));
  // Shape mismatch against the view's layout.
  write_feature_file(cache, {rec("clip_a", 0, View::timbre, {12, 39}),
                             rec("clip_b", 0, View::timbre, mf)});
  CHECK_THROWS_WITH(load_view_chunks(man, View::timbre, cache, Split::train),
                    doctest::Contains("is [12x39] but timbre features are [12x40]"));
  // Duplicate (clip, chunk) record.
  write_feature_file(cache, {rec("clip_a", 0, View::timbre, mf), rec("clip_a", 0, View::timbre, mf)});
  CHECK_THROWS_WITH(load_view_chunks(man, View::timbre, cache, Split::train),
                    doctest::Contains("duplicate timbre record for clip 'clip_a' chunk 0"));
}

TEST_CASE("training drives the toy loss down and logs every epoch") {
  auto dir = tmp_dir("overfit");
  auto model = linear_model(6, 6, 11);
  auto cfg = toy_config(40);
  auto train = toy_chunks(6, 4, 21);
  auto val = toy_chunks(6, 2, 22);
  auto res = train_model(model, cfg, train, val, dir.string());

  REQUIRE(res.epoch_train_loss.size() == 40);
  CHECK(res.epoch_train_loss.front() / res.epoch_train_loss.back() >= 5.0f);
  CHECK(res.best_val_top5 == 1.0);  // top-5 of 6 classes saturates on this toy set
  CHECK(fs::exists(res.final_checkpoint));
  CHECK(fs::exists(res.best_checkpoint));

  const std::string log = slurp(res.log_path);
  std::istringstream is(log);
  std::string line;
  std::getline(is, line);
  CHECK(line == "epoch,step,lr,train_loss,val_top5");
  std::size_t rows = 0;
  std::string last;
  while (std::getline(is, line))
    if (!line.empty()) {
      last = line;
      ++rows;
    }
  CHECK(rows == 40);
  CHECK(last.rfind("39,120,", 0) == 0);  // 3 batches per epoch, 40 epochs

  // Periodic checkpoints at the configured cadence.
  CHECK(fs::exists(dir / "epoch_0002.pfck"));
  CHECK(fs::exists(dir / "epoch_0040.pfck"));
  CHECK(!fs::exists(dir / "epoch_0003.pfck"));
}

TEST_CASE("same seed reproduces checkpoints and logs byte for byte") {
  auto d1 = tmp_dir("det1"), d2 = tmp_dir("det2"), d3 = tmp_dir("det3");
  auto cfg = toy_config(6);
  auto train = toy_chunks(5, 4, 31);
  auto val = toy_chunks(5, 2, 32);

  auto m1 = linear_model(5, 5, 11);
  auto r1 = train_model(m1, cfg, train, val, d1.string());
  auto m2 = linear_model(5, 5, 11);
  auto r2 = train_model(m2, cfg, train, val, d2.string());
  CHECK(slurp(r1.final_checkpoint) == slurp(r2.final_checkpoint));
  CHECK(slurp(r1.log_path) == slurp(r2.log_path));

  auto m3 = linear_model(5, 5, 11);
  auto cfg3 = cfg;
  cfg3.seed = 99;
  auto r3 = train_model(m3, cfg3, train, val, d3.string());
  CHECK(slurp(r1.final_checkpoint) != slurp(r3.final_checkpoint));
}

TEST_CASE("saved weights reload bit-exact and reproduce the forward pass") {
  auto dir = tmp_dir("roundtrip");
  auto model = linear_model(4, 4, 3);
  auto cfg = toy_config(3);
  auto train = toy_chunks(4, 3, 41);
  auto res = train_model(model, cfg, train, {}, dir.string());

  const Checkpoint ck = read_checkpoint(res.final_checkpoint);
  for (const auto& [name, w] : model.weights) {
    REQUIRE(ck.tensors.count(name) == 1);
    const TensorF& stored = ck.tensors.at(name);
    REQUIRE(stored.shape == w.shape);
    CHECK(std::memcmp(stored.ptr(), w.ptr(), w.numel() * sizeof(float)) == 0);
    REQUIRE(ck.tensors.count("adam.m." + name) == 1);
    REQUIRE(ck.tensors.count("adam.v." + name) == 1);
  }

  // Forward with reloaded weights matches the in-memory model exactly.
  auto reloaded = linear_model(4, 4, 999);  // different init, then overwritten
  for (auto& [name, w] : reloaded.weights) w = ck.tensors.at(name);
  TensorF x({std::size_t{2}, std::size_t{4}, std::size_t{1}});
  for (std::size_t i = 0; i < x.numel(); ++i) x.data[i] = 0.1f * static_cast<float>(i) - 0.3f;
  std::mt19937 rng(0);
  GraphF ga, gb;
  Var sa = model.forward(ga, model.weights, ga.value(x), Mode::eval, rng, nullptr);
  Var sb = reloaded.forward(gb, reloaded.weights, gb.value(x), Mode::eval, rng, nullptr);
  CHECK(std::memcmp(ga.val(sa).ptr(), gb.val(sb).ptr(), ga.val(sa).numel() * sizeof(float)) ==
        0);

  // No validation data: no best checkpoint, top-5 reported as 0 in the log.
  CHECK(res.best_checkpoint.empty());
  CHECK(res.best_val_top5 == 0.0);
}

TEST_CASE("resuming from a mid-run checkpoint matches the uninterrupted run") {
  auto da = tmp_dir("resume_a"), db = tmp_dir("resume_b");
  auto cfg = toy_config(6);  // checkpoints every 2 epochs
  auto train = toy_chunks(5, 4, 51);
  auto val = toy_chunks(5, 2, 52);

  auto ma = linear_model(5, 5, 11);
  auto ra = train_model(ma, cfg, train, val, da.string());

  // Fresh weights; everything is restored from the epoch-2 checkpoint.
  auto mb = linear_model(5, 5, 11);
  auto rb = train_model(mb, cfg, train, val, db.string(), (da / "epoch_0002.pfck").string());

  CHECK(slurp(ra.final_checkpoint) == slurp(rb.final_checkpoint));
  CHECK(slurp(da / "epoch_0006.pfck") == slurp(db / "epoch_0006.pfck"));

  // The resumed log holds exactly the remaining epochs, matching the tail of
  // the uninterrupted log.
  std::istringstream a(slurp(ra.log_path)), b(slurp(rb.log_path));
  std::vector<std::string> la, lb;
  std::string line;
  while (std::getline(a, line)) la.push_back(line);
  while (std::getline(b, line)) lb.push_back(line);
  REQUIRE(la.size() == 7);  // header + 6 epochs
  REQUIRE(lb.size() == 5);  // header + epochs 2..5
  CHECK(lb[0] == la[0]);
  for (std::size_t i = 0; i < 4; ++i) CHECK(lb[1 + i] == la[3 + i]);
}

TEST_CASE("resume rejects mismatched models, configs, and foreign checkpoints") {
  auto dir = tmp_dir("resume_bad");
  auto model = linear_model(4, 4, 3);
  auto cfg = toy_config(2);
  auto train = toy_chunks(4, 3, 61);
  auto res = train_model(model, cfg, train, {}, dir.string());

  auto other = linear_model(5, 5, 3);
  CHECK_THROWS_WITH(
      train_model(other, cfg, toy_chunks(5, 3, 61), {}, dir.string(), res.final_checkpoint),
      doctest::Contains("different model configuration"));

  auto model2 = linear_model(4, 4, 3);
  auto cfg2 = cfg;
  cfg2.lr_start = 0.01f;
  CHECK_THROWS_WITH(train_model(model2, cfg2, train, {}, dir.string(), res.final_checkpoint),
                    doctest::Contains("different training configuration"));

  const std::string foreign = (dir / "foreign.pfck").string();
  write_checkpoint(foreign, Checkpoint{"{}", {{"w", TensorF({std::size_t{1}})}}});
  auto model3 = linear_model(4, 4, 3);
  CHECK_THROWS_WITH(train_model(model3, cfg, train, {}, dir.string(), foreign),
                    doctest::Contains("is not a training checkpoint"));
}

TEST_CASE("a non-finite loss aborts with the offending batch") {
  auto dir = tmp_dir("diverge");
  auto model = linear_model(3, 3, 3);
  auto cfg = toy_config(1);
  auto train = toy_chunks(3, 2, 71);
  train.features[2].data[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train_model(model, cfg, train, {}, dir.string());
    FAIL("expected divergence error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("training diverged: non-finite loss at step 1") != std::string::npos);
    CHECK(msg.find("c1_0#0") != std::string::npos);  // the poisoned chunk's clip id
  }
}

TEST_CASE("train_model validates its inputs") {
  auto dir = tmp_dir("validate");
  auto model = linear_model(3, 3, 3);
  auto cfg = toy_config(1);
  CHECK_THROWS_WITH_AS(train_model(model, cfg, {}, {}, dir.string()),
                       "train: no training chunks", Error);

  auto train = toy_chunks(3, 2, 81);
  auto bad = train;
  bad.features[1] = TensorF({std::size_t{2}, std::size_t{1}});
  CHECK_THROWS_WITH(train_model(model, cfg, bad, {}, dir.string()),
                    doctest::Contains("chunk 1 is [2x1] but the first chunk is [3x1]"));

  auto ragged = train;
  ragged.targets[1].pop_back();
  CHECK_THROWS_WITH(train_model(model, cfg, ragged, {}, dir.string()),
                    doctest::Contains("has 2 classes, expected 3"));

  ModelSpec hollow;
  hollow.config_json = "{}";
  CHECK_THROWS_AS(train_model(hollow, cfg, train, {}, dir.string()), Error);
}

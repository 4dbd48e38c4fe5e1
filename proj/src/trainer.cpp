#include "pf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pf/eval.hpp"
#include "pf/io.hpp"
#include "pf/kernels.hpp"

#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace pf {

void TrainConfig::validate() const {
  if (epochs < 1) throw validation_error("train config: epochs must be >= 1");
  if (batch_size < 1) throw validation_error("train config: batch_size must be >= 1");
  if (!(lr_start > 0.0f) || !std::isfinite(lr_start))
    throw validation_error("train config: lr_start must be positive");
  if (!(lr_end > 0.0f) || !std::isfinite(lr_end))
    throw validation_error("train config: lr_end must be positive");
  if (lr_end > lr_start) throw validation_error("train config: lr_end must not exceed lr_start");
  if (!(beta1 >= 0.0f && beta1 < 1.0f))
    throw validation_error("train config: beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0f && beta2 < 1.0f))
    throw validation_error("train config: beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0f)) throw validation_error("train config: adam_eps must be positive");
  if (checkpoint_every < 1) throw validation_error("train config: checkpoint_every must be >= 1");
}

std::string TrainConfig::to_json() const {
  json j;
  j["epochs"] = epochs;
  j["lr_start"] = lr_start;
  j["lr_end"] = lr_end;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["clip_norm"] = clip_norm;
  j["checkpoint_every"] = checkpoint_every;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw validation_error(std::string("train config: bad JSON: ") + e.what());
  }
  if (!j.is_object()) throw validation_error("train config: expected a JSON object");
  TrainConfig cfg;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "epochs")
        cfg.epochs = value.get<std::size_t>();
      else if (key == "lr_start")
        cfg.lr_start = value.get<float>();
      else if (key == "lr_end")
        cfg.lr_end = value.get<float>();
      else if (key == "batch_size")
        cfg.batch_size = value.get<std::size_t>();
      else if (key == "seed")
        cfg.seed = value.get<std::uint32_t>();
      else if (key == "beta1")
        cfg.beta1 = value.get<float>();
      else if (key == "beta2")
        cfg.beta2 = value.get<float>();
      else if (key == "adam_eps")
        cfg.adam_eps = value.get<float>();
      else if (key == "clip_norm")
        cfg.clip_norm = value.get<float>();
      else if (key == "checkpoint_every")
        cfg.checkpoint_every = value.get<std::size_t>();
      else
        throw validation_error("train config: unknown key '" + key + "'");
    } catch (const json::exception&) {
      throw validation_error("train config: bad value for '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

float lr_at(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch >= cfg.epochs)
    throw validation_error("lr_at: epoch " + std::to_string(epoch) + " out of range for " +
                           std::to_string(cfg.epochs) + " epochs");
  if (epoch == 0) return cfg.lr_start;
  if (epoch == cfg.epochs - 1) return cfg.lr_end;
  const double span = static_cast<double>(cfg.lr_start) - static_cast<double>(cfg.lr_end);
  const double phase = M_PI * static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
  return static_cast<float>(static_cast<double>(cfg.lr_end) +
                            0.5 * span * (1.0 + std::cos(phase)));
}

void gradient_clip(NamedTensors<float>& grads, float max_norm) {
  if (max_norm <= 0.0f) return;
  double total = 0.0;
  for (const auto& [name, g] : grads) total += kernels::sum_squares(g.ptr(), g.numel());
  const double norm = std::sqrt(total);
  if (!std::isfinite(norm)) throw Error("gradient clip: non-finite gradient norm");
  if (norm <= static_cast<double>(max_norm)) return;
  const float scale = static_cast<float>(static_cast<double>(max_norm) / norm);
  for (auto& [name, g] : grads)
    for (float& x : g.data) x *= scale;
}

void ChunkSet::push(TensorF f, std::vector<float> t, std::string id, std::uint32_t chunk) {
  features.push_back(std::move(f));
  targets.push_back(std::move(t));
  clip_ids.push_back(std::move(id));
  chunk_indices.push_back(chunk);
}

ChunkSet load_view_chunks(const Manifest& manifest, View view, const std::string& cache_path,
                          Split split) {
  const std::vector<FeatureRecord> records = read_feature_file(cache_path);
  std::map<std::string, std::map<std::uint32_t, const FeatureRecord*>> by_clip;
  for (const FeatureRecord& r : records) {
    if (r.view != view) continue;
    if (!by_clip[r.clip_id].emplace(r.chunk_index, &r).second)
      throw Error("feature cache '" + cache_path + "': duplicate " + view_name(view) +
                  " record for clip '" + r.clip_id + "' chunk " + std::to_string(r.chunk_index));
  }
  EncoderConfig probe;
  probe.view = view;
  const Shape want = probe.feature_shape();
  ChunkSet out;
  for (const ClipRecord& rec : records_for_split(manifest.records, split)) {
    auto it = by_clip.find(rec.clip_id);
    if (it == by_clip.end())
      throw Error("feature cache '" + cache_path + "' has no " + view_name(view) +
                  " records for clip '" + rec.clip_id + "'; run the features step first");
    std::uint32_t expect = 0;
    for (const auto& [ci, fr] : it->second) {
      if (ci != expect)
        throw Error("feature cache '" + cache_path + "': clip '" + rec.clip_id + "' " +
                    view_name(view) + " chunks are not contiguous (expected chunk " +
                    std::to_string(expect) + ", found " + std::to_string(ci) + ")");
      if (fr->data.shape != want)
        throw Error("feature cache '" + cache_path + "': clip '" + rec.clip_id + "' chunk " +
                    std::to_string(ci) + " is " + shape_str(fr->data.shape) + " but " +
                    view_name(view) + " features are " + shape_str(want));
      out.push(fr->data, multi_hot(rec.labels, manifest.vocab.size()), rec.clip_id, ci);
      ++expect;
    }
  }
  return out;
}

namespace {

json parse_config_blob(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw validation_error(std::string(what) + " is not valid JSON: " + e.what());
  }
}

std::string format_csv_row(std::size_t epoch, std::uint64_t step, float lr, float train_loss,
                           double val_top5) {
  char row[192];
  std::snprintf(row, sizeof row, "%zu,%llu,%.9g,%.9g,%.6f\n", epoch,
                static_cast<unsigned long long>(step), static_cast<double>(lr),
                static_cast<double>(train_loss), val_top5);
  return row;
}

}  // namespace

TrainResult train_model(ModelSpec& model, const TrainConfig& cfg, const ChunkSet& train,
                        const ChunkSet& val, const std::string& out_dir,
                        const std::string& resume_from) {
  cfg.validate();
  if (!model.forward) throw validation_error("train: model has no forward function");
  if (model.weights.empty()) throw validation_error("train: model has no weights");
  if (train.size() == 0) throw validation_error("train: no training chunks");

  const Shape fshape = train.features[0].shape;
  const std::size_t n_classes = train.targets[0].size();
  if (n_classes == 0) throw validation_error("train: empty target vectors");
  auto check_set = [&](const ChunkSet& s, const char* what) {
    if (s.targets.size() != s.features.size() || s.clip_ids.size() != s.features.size() ||
        s.chunk_indices.size() != s.features.size())
      throw validation_error(std::string("train: ragged ") + what + " chunk set");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.features[i].shape != fshape)
        throw validation_error(std::string("train: ") + what + " chunk " + std::to_string(i) +
                               " is " + shape_str(s.features[i].shape) + " but the first chunk is " +
                               shape_str(fshape));
      if (s.targets[i].size() != n_classes)
        throw validation_error(std::string("train: ") + what + " chunk " + std::to_string(i) +
                               " has " + std::to_string(s.targets[i].size()) + " classes, expected " +
                               std::to_string(n_classes));
    }
  };
  check_set(train, "train");
  check_set(val, "validation");

  fs::create_directories(out_dir);

  const json model_cfg = parse_config_blob(model.config_json, "train: model config");
  const json train_cfg = parse_config_blob(cfg.to_json(), "train: train config");

  NamedTensors<float> grads, m1, m2;
  for (const auto& [name, w] : model.weights) {
    grads.emplace(name, TensorF(w.shape));
    m1.emplace(name, TensorF(w.shape));
    m2.emplace(name, TensorF(w.shape));
  }

  std::mt19937 rng(cfg.seed);
  std::size_t start_epoch = 0;
  std::uint64_t step = 0;
  double best_val = 0.0;
  bool have_best = false;

  if (!resume_from.empty()) {
    const Checkpoint ck = read_checkpoint(resume_from);
    const json j = parse_config_blob(ck.config_json, "resume: checkpoint config");
    if (!j.contains("model") || !j.contains("train") || !j.contains("state"))
      throw validation_error("resume: '" + resume_from + "' is not a training checkpoint");
    if (j["model"] != model_cfg)
      throw validation_error("resume: '" + resume_from +
                             "' was written for a different model configuration");
    if (j["train"] != train_cfg)
      throw validation_error("resume: '" + resume_from +
                             "' was written for a different training configuration");
    const json& st = j["state"];
    try {
      start_epoch = st.at("epoch").get<std::size_t>();
      step = st.at("step").get<std::uint64_t>();
      best_val = st.at("best_val_top5").get<double>();
      have_best = st.at("have_best").get<bool>();
      std::istringstream is(st.at("rng").get<std::string>());
      is >> rng;
      if (!is) throw Error("resume: cannot parse RNG state in '" + resume_from + "'");
    } catch (const json::exception& e) {
      throw validation_error("resume: bad state block in '" + resume_from + "': " + e.what());
    }
    if (start_epoch > cfg.epochs)
      throw validation_error("resume: checkpoint is at epoch " + std::to_string(start_epoch) +
                             " but the schedule has only " + std::to_string(cfg.epochs));
    for (auto& [name, w] : model.weights) {
      auto fetch = [&](const std::string& key) -> const TensorF& {
        auto it = ck.tensors.find(key);
        if (it == ck.tensors.end())
          throw Error("resume: '" + resume_from + "' is missing tensor '" + key + "'");
        if (it->second.shape != w.shape)
          throw Error("resume: tensor '" + key + "' in '" + resume_from + "' is " +
                      shape_str(it->second.shape) + ", expected " + shape_str(w.shape));
        return it->second;
      };
      w = fetch(name);
      m1.at(name) = fetch("adam.m." + name);
      m2.at(name) = fetch("adam.v." + name);
    }
  }

  const std::string log_path = out_dir + "/train_log.csv";
  const bool append_log = !resume_from.empty() && fs::exists(log_path);
  std::ofstream log(log_path, append_log ? std::ios::app : std::ios::trunc);
  if (!log) throw Error("cannot open '" + log_path + "' for writing");
  if (!append_log) log << "epoch,step,lr,train_loss,val_top5\n";

  const std::size_t feat_numel = train.features[0].numel();
  auto stack_features = [&](const ChunkSet& s, const std::vector<std::size_t>& idx) {
    Shape sh;
    sh.push_back(idx.size());
    sh.insert(sh.end(), fshape.begin(), fshape.end());
    TensorF out(sh);
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy(s.features[idx[i]].data.begin(), s.features[idx[i]].data.end(),
                out.data.begin() + i * feat_numel);
    return out;
  };
  auto stack_targets = [&](const ChunkSet& s, const std::vector<std::size_t>& idx) {
    TensorF out({idx.size(), n_classes});
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy(s.targets[idx[i]].begin(), s.targets[idx[i]].end(),
                out.data.begin() + i * n_classes);
    return out;
  };

  auto evaluate = [&]() -> double {
    if (val.size() == 0) return 0.0;
    std::vector<ScoredItem> items;
    items.reserve(val.size());
    std::mt19937 eval_rng(0);
    for (std::size_t off = 0; off < val.size(); off += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, val.size() - off);
      std::vector<std::size_t> idx(b);
      std::iota(idx.begin(), idx.end(), off);
      GraphF g;
      Var x = g.value(stack_features(val, idx), "val_batch");
      Var scores = model.forward(g, model.weights, x, Mode::eval, eval_rng, nullptr);
      const TensorF& sv = g.val(scores);
      for (std::size_t i = 0; i < b; ++i) {
        ScoredItem item;
        item.clip_id = val.clip_ids[off + i];
        item.scores.assign(sv.data.begin() + i * n_classes, sv.data.begin() + (i + 1) * n_classes);
        item.truth = val.targets[off + i];
        items.push_back(std::move(item));
      }
    }
    return topk_accuracy(items, std::min<std::size_t>(5, n_classes));
  };

  auto save_checkpoint = [&](const std::string& path, std::size_t next_epoch) {
    std::ostringstream os;
    os << rng;
    json st;
    st["epoch"] = next_epoch;
    st["step"] = step;
    st["rng"] = os.str();
    st["best_val_top5"] = best_val;
    st["have_best"] = have_best;
    json full;
    full["model"] = model_cfg;
    full["train"] = train_cfg;
    full["state"] = st;
    Checkpoint ck;
    ck.config_json = full.dump();
    for (const auto& [name, w] : model.weights) {
      ck.tensors.emplace(name, w);
      ck.tensors.emplace("adam.m." + name, m1.at(name));
      ck.tensors.emplace("adam.v." + name, m2.at(name));
    }
    write_checkpoint(path, ck);
  };

  TrainResult res;
  res.log_path = log_path;
  const std::string best_path = out_dir + "/best.pfck";

  ParamSink<float> sink = [&grads](const std::string& name) -> TensorF* {
    auto it = grads.find(name);
    return it == grads.end() ? nullptr : &it->second;
  };

  std::vector<std::size_t> order(train.size());

  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const float lr = lr_at(epoch, cfg);
    // Rebuilt from identity every epoch so the permutation depends only on
    // the RNG state, keeping resumed runs aligned with uninterrupted ones.
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, order.size() - off);
      const std::vector<std::size_t> idx(order.begin() + off, order.begin() + off + b);
      for (auto& [name, gt] : grads) std::fill(gt.data.begin(), gt.data.end(), 0.0f);
      GraphF g;
      Var x = g.value(stack_features(train, idx), "batch");
      Var t = g.value(stack_targets(train, idx), "targets");
      Var scores = model.forward(g, model.weights, x, Mode::train, rng, sink);
      Var loss = g.huber(scores, t);
      const float loss_value = g.val(loss).data[0];
      if (!std::isfinite(loss_value)) {
        std::string clips;
        for (std::size_t i : idx) {
          if (!clips.empty()) clips += ", ";
          clips += train.clip_ids[i] + "#" + std::to_string(train.chunk_indices[i]);
        }
        throw Error("training diverged: non-finite loss at step " + std::to_string(step + 1) +
                    " (lr " + std::to_string(lr) + "; batch clips: " + clips + ")");
      }
      g.backward(loss);
      gradient_clip(grads, cfg.clip_norm);
      ++step;
      const double bias1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(step));
      const double bias2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(step));
      for (auto& [name, w] : model.weights)
        kernels::adam_step(w.ptr(), m1.at(name).ptr(), m2.at(name).ptr(), grads.at(name).ptr(),
                           w.numel(), lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
                           static_cast<float>(bias1), static_cast<float>(bias2));
      loss_sum += loss_value;
      ++n_batches;
    }
    const float train_loss = static_cast<float>(loss_sum / static_cast<double>(n_batches));
    res.epoch_train_loss.push_back(train_loss);

    const double val_top5 = evaluate();
    log << format_csv_row(epoch, step, lr, train_loss, val_top5);
    log.flush();

    if (val.size() > 0 && (!have_best || val_top5 > best_val)) {
      best_val = val_top5;
      have_best = true;
      save_checkpoint(best_path, epoch + 1);
    }
    if ((epoch + 1) % cfg.checkpoint_every == 0) {
      char name[40];
      std::snprintf(name, sizeof name, "epoch_%04zu.pfck", epoch + 1);
      save_checkpoint(out_dir + "/" + name, epoch + 1);
    }
  }

  res.final_checkpoint = out_dir + "/final.pfck";
  save_checkpoint(res.final_checkpoint, cfg.epochs);
  if (have_best) {
    res.best_val_top5 = best_val;
    // A resumed run only rewrites best.pfck on a strict improvement, so the
    // file may live in the original run's directory rather than this one.
    if (fs::exists(best_path)) res.best_checkpoint = best_path;
  }
  return res;
}

ModelSpec encoder_model(const EncoderConfig& cfg, std::uint32_t init_seed) {
  cfg.validate();
  ModelSpec spec;
  spec.weights = init_encoder_weights(cfg, init_seed);
  spec.config_json = cfg.to_json();
  spec.forward = [cfg](GraphF& g, const NamedTensors<float>& weights, Var x, Mode mode,
                       std::mt19937& rng, const ParamSink<float>& sink) {
    return encoder_forward<float>(g, cfg, weights, x, mode, rng, sink).scores;
  };
  return spec;
}

TrainResult train_view(const EncoderConfig& ecfg, const TrainConfig& tcfg, const ChunkSet& train,
                       const ChunkSet& val, const std::string& out_dir,
                       const std::string& resume_from) {
  ModelSpec model = encoder_model(ecfg, tcfg.seed);
  return train_model(model, tcfg, train, val, out_dir, resume_from);
}

}  // namespace pf

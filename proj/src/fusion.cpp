#include "pf/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

using json = nlohmann::json;

namespace pf {

std::vector<View> normalize_views(std::vector<View> views) {
  if (views.empty()) throw validation_error("fusion: no views given");
  std::sort(views.begin(), views.end(),
            [](View a, View b) { return static_cast<int>(a) < static_cast<int>(b); });
  for (std::size_t i = 1; i < views.size(); ++i)
    if (views[i] == views[i - 1])
      throw validation_error(std::string("fusion: duplicate view '") + view_name(views[i]) + "'");
  return views;
}

void FusionSpec::validate() const {
  if (views.empty()) throw validation_error("fusion head config: no views");
  for (std::size_t i = 1; i < views.size(); ++i)
    if (static_cast<int>(views[i]) <= static_cast<int>(views[i - 1]))
      throw validation_error(
          "fusion head config: views must be unique and in pitch, timbre, waveform, "
          "neuralogram order");
  if (embed_dim < 1) throw validation_error("fusion head config: embed_dim must be >= 1");
  if (head_hidden < 1) throw validation_error("fusion head config: head_hidden must be >= 1");
  if (n_classes < 2) throw validation_error("fusion head config: n_classes must be >= 2");
}

std::string FusionSpec::to_json() const {
  json j;
  auto& arr = j["views"] = json::array();
  for (View v : views) arr.push_back(view_name(v));
  j["embed_dim"] = embed_dim;
  j["head_hidden"] = head_hidden;
  j["n_classes"] = n_classes;
  return j.dump();
}

FusionSpec FusionSpec::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw validation_error(std::string("fusion head config: bad JSON: ") + e.what());
  }
  if (!j.is_object()) throw validation_error("fusion head config: expected a JSON object");
  FusionSpec spec;
  spec.views.clear();
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "views") {
        for (const auto& name : value) spec.views.push_back(view_from_name(name.get<std::string>()));
      } else if (key == "embed_dim") {
        spec.embed_dim = value.get<std::size_t>();
      } else if (key == "head_hidden") {
        spec.head_hidden = value.get<std::size_t>();
      } else if (key == "n_classes") {
        spec.n_classes = value.get<std::size_t>();
      } else {
        throw validation_error("fusion head config: unknown key '" + key + "'");
      }
    } catch (const json::exception&) {
      throw validation_error("fusion head config: bad value for '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

namespace {

json parse_checkpoint_config(const Checkpoint& ck, const std::string& path) {
  json j;
  try {
    j = json::parse(ck.config_json);
  } catch (const json::exception& e) {
    throw Error("checkpoint '" + path + "': bad config JSON: " + e.what());
  }
  if (!j.is_object() || !j.contains("model"))
    throw Error("checkpoint '" + path + "' has no model configuration");
  return j;
}

NamedTensors<float> strip_adam(const std::map<std::string, TensorF>& tensors) {
  NamedTensors<float> weights;
  for (const auto& [name, t] : tensors)
    if (name.rfind("adam.", 0) != 0) weights.emplace(name, t);
  return weights;
}

TensorF glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937& rng) {
  const float limit = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  std::uniform_real_distribution<float> U(-limit, limit);
  TensorF t(std::move(shape));
  for (auto& v : t.data) v = U(rng);
  return t;
}

TensorF stack_features(const ChunkSet& s, std::size_t off, std::size_t b) {
  Shape sh;
  sh.push_back(b);
  sh.insert(sh.end(), s.features[0].shape.begin(), s.features[0].shape.end());
  TensorF out(sh);
  const std::size_t per = s.features[0].numel();
  for (std::size_t i = 0; i < b; ++i)
    std::copy(s.features[off + i].data.begin(), s.features[off + i].data.end(),
              out.data.begin() + i * per);
  return out;
}

}  // namespace

ModelSpec model_from_checkpoint(const std::string& path) {
  const Checkpoint ck = read_checkpoint(path);
  const json j = parse_checkpoint_config(ck, path);
  const json& blob = j["model"];

  ModelSpec spec;
  spec.weights = strip_adam(ck.tensors);
  spec.config_json = blob.dump();
  if (blob.is_object() && blob.contains("fusion")) {
    FusionSpec fspec;
    try {
      fspec = FusionSpec::from_json(blob["fusion"].dump());
    } catch (const Error& e) {
      throw Error("checkpoint '" + path + "': " + e.what());
    }
    spec.forward = fusion_model(fspec, 0).forward;
  } else {
    EncoderConfig ecfg;
    try {
      ecfg = EncoderConfig::from_json(blob.dump());
    } catch (const Error& e) {
      throw Error("checkpoint '" + path + "': " + e.what());
    }
    spec.forward = [ecfg](GraphF& g, const NamedTensors<float>& w, Var x, Mode mode,
                          std::mt19937& rng, const ParamSink<float>& sink) {
      return encoder_forward<float>(g, ecfg, w, x, mode, rng, sink).scores;
    };
  }
  return spec;
}

std::vector<ScoredItem> score_chunks(const ModelSpec& model, const ChunkSet& chunks,
                                     std::size_t batch_size) {
  if (!model.forward) throw validation_error("score_chunks: model has no forward function");
  if (batch_size < 1) throw validation_error("score_chunks: batch_size must be >= 1");
  std::vector<ScoredItem> items;
  items.reserve(chunks.size());
  std::mt19937 rng(0);
  for (std::size_t off = 0; off < chunks.size(); off += batch_size) {
    const std::size_t b = std::min(batch_size, chunks.size() - off);
    GraphF g;
    Var scores = model.forward(g, model.weights, g.value(stack_features(chunks, off, b)),
                               Mode::eval, rng, nullptr);
    const TensorF& sv = g.val(scores);
    const std::size_t n_classes = sv.shape.back();
    for (std::size_t i = 0; i < b; ++i) {
      ScoredItem item;
      item.clip_id = chunks.clip_ids[off + i];
      item.scores.assign(sv.data.begin() + i * n_classes, sv.data.begin() + (i + 1) * n_classes);
      item.truth = chunks.targets[off + i];
      items.push_back(std::move(item));
    }
  }
  return items;
}

void extract_embeddings(const std::string& checkpoint_path, View view, const ChunkSet& chunks,
                        const std::string& out_path, std::size_t batch_size) {
  if (batch_size < 1) throw validation_error("extract_embeddings: batch_size must be >= 1");
  const Checkpoint ck = read_checkpoint(checkpoint_path);  // CRC verified before any write
  const json j = parse_checkpoint_config(ck, checkpoint_path);
  EncoderConfig cfg;
  try {
    cfg = EncoderConfig::from_json(j["model"].dump());
  } catch (const Error&) {
    throw validation_error("checkpoint '" + checkpoint_path + "' is not an encoder checkpoint");
  }
  if (cfg.view != view)
    throw validation_error("checkpoint '" + checkpoint_path + "' encodes the " +
                           view_name(cfg.view) + " view, not " + view_name(view));
  const NamedTensors<float> weights = strip_adam(ck.tensors);
  const Shape want = cfg.feature_shape();
  for (std::size_t i = 0; i < chunks.size(); ++i)
    if (chunks.features[i].shape != want)
      throw validation_error("extract_embeddings: chunk " + std::to_string(i) + " is " +
                             shape_str(chunks.features[i].shape) + " but " + view_name(view) +
                             " features are " + shape_str(want));

  FeatureFileWriter writer(out_path);
  std::mt19937 rng(0);
  for (std::size_t off = 0; off < chunks.size(); off += batch_size) {
    const std::size_t b = std::min(batch_size, chunks.size() - off);
    GraphF g;
    auto out = encoder_forward<float>(g, cfg, weights, g.value(stack_features(chunks, off, b)),
                                      Mode::eval, rng, nullptr);
    const TensorF& emb = g.val(out.embedding);  // [b, d_model]
    for (std::size_t i = 0; i < b; ++i) {
      FeatureRecord rec;
      rec.clip_id = chunks.clip_ids[off + i];
      rec.chunk_index = chunks.chunk_indices[off + i];
      rec.view = view;
      rec.data = TensorF({cfg.d_model, 1});
      std::copy(emb.data.begin() + i * cfg.d_model, emb.data.begin() + (i + 1) * cfg.d_model,
                rec.data.data.begin());
      writer.add(rec);
    }
  }
}

TensorF concat_embeddings(const std::vector<TensorF>& parts) {
  if (parts.empty()) throw validation_error("concat_embeddings: no parts");
  std::size_t total = 0;
  for (const TensorF& p : parts) {
    if (p.rank() != 2 || p.shape[1] != 1)
      throw validation_error("concat_embeddings: part is " + shape_str(p.shape) +
                             ", expected a [d x 1] column");
    total += p.shape[0];
  }
  TensorF out({total, 1});
  auto dst = out.data.begin();
  for (const TensorF& p : parts) dst = std::copy(p.data.begin(), p.data.end(), dst);
  return out;
}

ChunkSet build_fused_chunks(const Manifest& manifest, const FusionSpec& spec,
                            const std::map<View, std::string>& embed_caches, Split split) {
  spec.validate();
  for (View v : spec.views)
    if (!embed_caches.count(v))
      throw validation_error(std::string("fused chunks: no embedding cache given for view '") +
                             view_name(v) + "'");

  const Shape want{spec.embed_dim, std::size_t{1}};
  std::map<View, std::map<std::pair<std::string, std::uint32_t>, const TensorF*>> by_view;
  std::map<View, std::vector<FeatureRecord>> storage;
  for (View v : spec.views) {
    const std::string& path = embed_caches.at(v);
    storage[v] = read_feature_file(path);
    auto& index = by_view[v];
    for (const FeatureRecord& rec : storage[v]) {
      if (rec.view != v)
        throw Error("embedding cache '" + path + "' holds " + view_name(rec.view) +
                    " records, expected " + view_name(v));
      if (rec.data.shape != want)
        throw Error("embedding cache '" + path + "': clip '" + rec.clip_id + "' chunk " +
                    std::to_string(rec.chunk_index) + " is " + shape_str(rec.data.shape) +
                    ", expected " + shape_str(want));
      if (!index.emplace(std::make_pair(rec.clip_id, rec.chunk_index), &rec.data).second)
        throw Error("embedding cache '" + path + "': duplicate record for clip '" + rec.clip_id +
                    "' chunk " + std::to_string(rec.chunk_index));
    }
  }

  ChunkSet out;
  std::vector<std::string> missing;
  for (const ClipRecord& rec : records_for_split(manifest.records, split)) {
    // The chunk universe for a clip is the union over views; each view must
    // then cover all of it.
    std::set<std::uint32_t> universe;
    for (View v : spec.views)
      for (const auto& [key, data] : by_view[v])
        if (key.first == rec.clip_id) universe.insert(key.second);
    if (universe.empty()) {
      missing.push_back(rec.clip_id + " (all views)");
      continue;
    }
    if (*universe.rbegin() + 1 != universe.size())
      throw Error("fused chunks: clip '" + rec.clip_id + "' has gaps in its chunk indices");
    for (std::uint32_t ci = 0; ci < universe.size(); ++ci) {
      std::vector<TensorF> parts;
      bool complete = true;
      for (View v : spec.views) {
        auto it = by_view[v].find({rec.clip_id, ci});
        if (it == by_view[v].end()) {
          missing.push_back(rec.clip_id + "#" + std::to_string(ci) + " (" + view_name(v) + ")");
          complete = false;
        } else if (complete) {
          parts.push_back(*it->second);
        }
      }
      if (complete)
        out.push(concat_embeddings(parts), multi_hot(rec.labels, manifest.vocab.size()),
                 rec.clip_id, ci);
    }
  }
  if (!missing.empty()) {
    std::string list;
    const std::size_t show = std::min<std::size_t>(missing.size(), 8);
    for (std::size_t i = 0; i < show; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > show)
      list += ", and " + std::to_string(missing.size() - show) + " more";
    throw Error("fused chunks: missing embeddings for " + list);
  }
  return out;
}

ModelSpec fusion_model(const FusionSpec& spec, std::uint32_t seed) {
  spec.validate();
  ModelSpec model;
  std::mt19937 rng(seed);
  const std::size_t in = spec.input_dim();
  model.weights.emplace("head.fc1.w", glorot({in, spec.head_hidden}, in, spec.head_hidden, rng));
  model.weights.emplace("head.fc1.b", TensorF({spec.head_hidden}));
  model.weights.emplace("head.fc2.w",
                        glorot({spec.head_hidden, spec.n_classes}, spec.head_hidden,
                               spec.n_classes, rng));
  model.weights.emplace("head.fc2.b", TensorF({spec.n_classes}));
  json blob;
  blob["fusion"] = json::parse(spec.to_json());
  model.config_json = blob.dump();
  model.forward = [spec, in](GraphF& g, const NamedTensors<float>& weights, Var x, Mode,
                             std::mt19937&, const ParamSink<float>& sink) {
    const Shape& s = g.val(x).shape;
    if (s.size() != 3 || s[1] != in || s[2] != 1)
      throw validation_error("fused features must be [B x " + std::to_string(in) + " x 1], got " +
                             shape_str(s));
    auto P = [&](const std::string& name) {
      auto it = weights.find(name);
      if (it == weights.end())
        throw Error("fusion head: missing weight '" + name + "'");
      return sink ? g.leaf(it->second, sink(name), name) : g.value(it->second, name);
    };
    Var flat = g.reshape(x, {s[0], in});
    Var hidden = g.gelu(g.add(g.matmul(flat, P("head.fc1.w")), P("head.fc1.b")));
    return g.add(g.matmul(hidden, P("head.fc2.w")), P("head.fc2.b"));
  };
  return model;
}

TrainResult train_fusion_head(const FusionSpec& spec, const TrainConfig& cfg,
                              const ChunkSet& train, const ChunkSet& val,
                              const std::string& out_dir, const std::string& resume_from) {
  ModelSpec model = fusion_model(spec, cfg.seed);
  return train_model(model, cfg, train, val, out_dir, resume_from);
}

}  // namespace pf

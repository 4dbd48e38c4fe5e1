#include "pf/encoder.hpp"

#include <cmath>

#include "json.hpp"
#include "pf/common.hpp"

namespace pf {

void EncoderConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || head_dim < 1 || mlp_dim < 1 || head_hidden < 1 ||
      n_classes < 2)
    throw validation_error("encoder config: all dimensions must be >= 1 (and n_classes >= 2)");
  if (n_layers < 2 || n_layers % 2 != 0)
    throw validation_error("encoder config: n_layers must be even and >= 2, got " +
                           std::to_string(n_layers));
  if (!(dropout >= 0.0f && dropout < 1.0f))
    throw validation_error("encoder config: dropout must be in [0, 1)");
}

Shape EncoderConfig::feature_shape() const {
  switch (view) {
    case View::pitch: return {80, 40};
    case View::timbre: return {12, 40};
    case View::waveform: return {40, 400};
    case View::neuralogram: return {1024, 10};
  }
  throw validation_error("encoder config: bad view");
}

std::size_t EncoderConfig::tokens() const { return view == View::neuralogram ? 10 : 40; }

std::string EncoderConfig::to_json() const {
  nlohmann::json j;
  j["view"] = view_name(view);
  j["d_model"] = d_model;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["head_dim"] = head_dim;
  j["mlp_dim"] = mlp_dim;
  j["head_hidden"] = head_hidden;
  j["n_classes"] = n_classes;
  j["dropout"] = dropout;
  return j.dump();
}

EncoderConfig EncoderConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("encoder config: bad JSON: ") + e.what());
  }
  EncoderConfig cfg;
  for (const auto& [key, val] : j.items()) {
    try {
      if (key == "view") cfg.view = view_from_name(val.get<std::string>());
      else if (key == "d_model") cfg.d_model = val.get<std::size_t>();
      else if (key == "n_layers") cfg.n_layers = val.get<std::size_t>();
      else if (key == "n_heads") cfg.n_heads = val.get<std::size_t>();
      else if (key == "head_dim") cfg.head_dim = val.get<std::size_t>();
      else if (key == "mlp_dim") cfg.mlp_dim = val.get<std::size_t>();
      else if (key == "head_hidden") cfg.head_hidden = val.get<std::size_t>();
      else if (key == "n_classes") cfg.n_classes = val.get<std::size_t>();
      else if (key == "dropout") cfg.dropout = val.get<float>();
      else throw validation_error("encoder config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw validation_error("encoder config: bad value for '" + key + "': " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kWaveFilters = 128;
constexpr std::size_t kWaveKernel = 200;

TensorF glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937& rng) {
  const float limit = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  std::uniform_real_distribution<float> u(-limit, limit);
  TensorF t(std::move(shape));
  for (auto& v : t.data) v = u(rng);
  return t;
}

}  // namespace

NamedTensors<float> init_encoder_weights(const EncoderConfig& cfg, std::uint32_t seed) {
  cfg.validate();
  std::mt19937 rng(seed);
  NamedTensors<float> w;
  auto zeros = [](Shape s) { return TensorF(std::move(s)); };
  auto ones = [](Shape s) {
    TensorF t(std::move(s));
    for (auto& v : t.data) v = 1.0f;
    return t;
  };

  const std::size_t d = cfg.d_model;
  const Shape fs = cfg.feature_shape();
  if (cfg.view == View::waveform) {
    w.emplace("model.frontend.conv.w",
              glorot({kWaveFilters, kWaveKernel}, kWaveKernel, kWaveFilters * kWaveKernel, rng));
    w.emplace("model.frontend.conv.b", zeros({kWaveFilters}));
    w.emplace("model.frontend.proj.w", glorot({kWaveFilters, d}, kWaveFilters, d, rng));
    w.emplace("model.frontend.proj.b", zeros({d}));
  } else {
    w.emplace("model.frontend.w", glorot({fs[0], d}, fs[0], d, rng));
    w.emplace("model.frontend.b", zeros({d}));
  }

  const std::size_t a = cfg.n_heads * cfg.head_dim;
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const std::string base = "model.layers." + std::to_string(i) + ".";
    w.emplace(base + "ln1.gamma", ones({d}));
    w.emplace(base + "ln1.beta", zeros({d}));
    // no bias on the key projection: softmax subtracts any constant shared
    // across a score row, so a K bias can never influence the output
    for (const char* p : {"q", "k", "v"}) {
      w.emplace(base + "attn." + std::string(p) + ".w", glorot({d, a}, d, a, rng));
      if (*p != 'k') w.emplace(base + "attn." + std::string(p) + ".b", zeros({a}));
    }
    w.emplace(base + "attn.out.w", glorot({a, d}, a, d, rng));
    w.emplace(base + "attn.out.b", zeros({d}));
    w.emplace(base + "ln2.gamma", ones({d}));
    w.emplace(base + "ln2.beta", zeros({d}));
    w.emplace(base + "mlp.fc1.w", glorot({d, cfg.mlp_dim}, d, cfg.mlp_dim, rng));
    w.emplace(base + "mlp.fc1.b", zeros({cfg.mlp_dim}));
    w.emplace(base + "mlp.fc2.w", glorot({cfg.mlp_dim, d}, cfg.mlp_dim, d, rng));
    w.emplace(base + "mlp.fc2.b", zeros({d}));
  }

  w.emplace("model.head.fc1.w", glorot({d, cfg.head_hidden}, d, cfg.head_hidden, rng));
  w.emplace("model.head.fc1.b", zeros({cfg.head_hidden}));
  w.emplace("model.head.fc2.w", glorot({cfg.head_hidden, cfg.n_classes}, cfg.head_hidden,
                                       cfg.n_classes, rng));
  w.emplace("model.head.fc2.b", zeros({cfg.n_classes}));
  return w;
}

// ---------------------------------------------------------------------------
// Forward graph
// ---------------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> positional_encoding(std::size_t tokens, std::size_t d) {
  Tensor<T> pe({tokens, d});
  for (std::size_t pos = 0; pos < tokens; ++pos)
    for (std::size_t i = 0; 2 * i < d; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      pe.data[pos * d + 2 * i] = static_cast<T>(std::sin(angle));
      if (2 * i + 1 < d) pe.data[pos * d + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  return pe;
}

}  // namespace

template <typename T>
EncoderOutput encoder_forward(Graph<T>& g, const EncoderConfig& cfg,
                              const NamedTensors<T>& weights, Var features, Mode mode,
                              std::mt19937& rng, const ParamSink<T>& sink) {
  cfg.validate();
  const Shape fs = cfg.feature_shape();
  const Shape& xs = g.val(features).shape;
  if (xs.size() != 3 || xs[1] != fs[0] || xs[2] != fs[1])
    throw validation_error(std::string("encoder: ") + view_name(cfg.view) +
                           " features must be [B x " + std::to_string(fs[0]) + " x " +
                           std::to_string(fs[1]) + "], got " + shape_str(xs));
  const std::size_t B = xs[0];
  if (B == 0) throw validation_error("encoder: empty batch");

  auto P = [&](const std::string& name) -> Var {
    auto it = weights.find(name);
    if (it == weights.end()) throw validation_error("encoder: missing weight '" + name + "'");
    if (!sink) return g.value(it->second, name);
    return g.leaf(it->second, sink(name), name);
  };
  const T p = static_cast<T>(cfg.dropout);
  const std::size_t d = cfg.d_model;
  const std::size_t h = cfg.n_heads, hd = cfg.head_dim, a = h * hd;

  // ---- front-end: per-view projection to [B, T, d] tokens ----
  std::size_t t_cur = cfg.tokens();
  Var tok;
  if (cfg.view == View::waveform) {
    Var pooled = g.conv1d_max(features, P("model.frontend.conv.w"),
                              P("model.frontend.conv.b"));  // [B, 40, 128]
    Var flat = g.reshape(pooled, {B * t_cur, kWaveFilters});
    Var proj = g.add(g.matmul(flat, P("model.frontend.proj.w")), P("model.frontend.proj.b"));
    tok = g.reshape(proj, {B, t_cur, d});
  } else {
    Var cols = g.transpose(features, {0, 2, 1});  // [B, T, rows]
    Var flat = g.reshape(cols, {B * t_cur, fs[0]});
    Var proj = g.add(g.matmul(flat, P("model.frontend.w")), P("model.frontend.b"));
    tok = g.reshape(proj, {B, t_cur, d});
  }
  tok = g.add(tok, g.value(positional_encoding<T>(t_cur, d), "positions"));

  // ---- transformer stack with token pooling after layers 2 and 4 ----
  Var x = tok;
  const T inv_sqrt_hd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  for (std::size_t layer = 0; layer < cfg.n_layers; ++layer) {
    const std::string base = "model.layers." + std::to_string(layer) + ".";

    Var n1 = g.layernorm(x, P(base + "ln1.gamma"), P(base + "ln1.beta"));
    Var flat = g.reshape(n1, {B * t_cur, d});
    auto heads = [&](const char* which) {
      Var y = g.matmul(flat, P(base + "attn." + which + ".w"));  // [B*T, a]
      if (*which != 'k') y = g.add(y, P(base + "attn." + which + ".b"));
      y = g.reshape(y, {B, t_cur, h, hd});
      y = g.transpose(y, {0, 2, 1, 3});                          // [B, h, T, hd]
      return g.reshape(y, {B * h, t_cur, hd});
    };
    Var q = heads("q"), k = heads("k"), v = heads("v");
    Var scores = g.scale(g.bmm(q, g.transpose(k, {0, 2, 1})), inv_sqrt_hd);  // [B*h, T, T]
    Var probs = g.dropout(g.softmax_lastdim(scores), p, mode, rng);
    Var ctx = g.bmm(probs, v);                             // [B*h, T, hd]
    ctx = g.reshape(ctx, {B, h, t_cur, hd});
    ctx = g.transpose(ctx, {0, 2, 1, 3});
    ctx = g.reshape(ctx, {B * t_cur, a});
    Var attn = g.add(g.matmul(ctx, P(base + "attn.out.w")), P(base + "attn.out.b"));
    x = g.add(x, g.reshape(attn, {B, t_cur, d}));

    Var n2 = g.layernorm(x, P(base + "ln2.gamma"), P(base + "ln2.beta"));
    Var hmid = g.add(g.matmul(g.reshape(n2, {B * t_cur, d}), P(base + "mlp.fc1.w")),
                     P(base + "mlp.fc1.b"));
    hmid = g.dropout(g.gelu(hmid), p, mode, rng);
    Var mlp = g.add(g.matmul(hmid, P(base + "mlp.fc2.w")), P(base + "mlp.fc2.b"));
    x = g.add(x, g.reshape(mlp, {B, t_cur, d}));

    if ((layer == 1 || layer == 3) && layer + 1 < cfg.n_layers) {
      x = g.max_pool_tokens(x);
      t_cur = (t_cur + 1) / 2;
    }
  }

  EncoderOutput out;
  out.embedding = g.mean_axis(x, 1);  // [B, d]

  Var hh = g.add(g.matmul(out.embedding, P("model.head.fc1.w")), P("model.head.fc1.b"));
  out.scores = g.add(g.matmul(g.gelu(hh), P("model.head.fc2.w")), P("model.head.fc2.b"));
  return out;
}

template EncoderOutput encoder_forward<float>(Graph<float>&, const EncoderConfig&,
                                              const NamedTensors<float>&, Var, Mode,
                                              std::mt19937&, const ParamSink<float>&);
template EncoderOutput encoder_forward<double>(Graph<double>&, const EncoderConfig&,
                                               const NamedTensors<double>&, Var, Mode,
                                               std::mt19937&, const ParamSink<double>&);

EncoderEval encoder_infer(const EncoderConfig& cfg, const NamedTensors<float>& weights,
                          const TensorF& features) {
  TensorF batch = features;
  if (batch.rank() == 2) batch = TensorF({1, batch.shape[0], batch.shape[1]}, batch.data);
  GraphF g;
  std::mt19937 rng(0);  // eval mode: never consulted
  Var feat = g.value(batch, "features");
  EncoderOutput out = encoder_forward(g, cfg, weights, feat, Mode::eval, rng);
  return EncoderEval{g.val(out.embedding), g.val(out.scores)};
}

}  // namespace pf

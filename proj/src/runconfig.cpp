#include "pf/runconfig.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pf/common.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace pf {

namespace {

[[noreturn]] void bad(const std::string& pointer, const std::string& what) {
  throw validation_error("config error at " + pointer + ": " + what);
}

// Re-point a section validator's message ("train config: epochs must be...")
// at the config location it came from.
std::string strip_prefix(std::string msg, const std::string& prefix) {
  if (msg.rfind(prefix, 0) == 0) msg.erase(0, prefix.size());
  return msg;
}

template <typename T>
T get_unsigned(const json& v, const std::string& pointer) {
  if (!v.is_number_unsigned())
    bad(pointer, "expected a non-negative integer");
  return v.get<T>();
}

float get_float(const json& v, const std::string& pointer) {
  if (!v.is_number()) bad(pointer, "expected a number");
  return v.get<float>();
}

std::string get_string(const json& v, const std::string& pointer) {
  if (!v.is_string() || v.get<std::string>().empty())
    bad(pointer, "expected a non-empty string");
  return v.get<std::string>();
}

void apply_train(TrainConfig& cfg, const json& section, const std::string& ptr) {
  if (!section.is_object()) bad(ptr, "expected an object");
  for (const auto& [key, value] : section.items()) {
    const std::string p = ptr + "/" + key;
    if (key == "epochs")
      cfg.epochs = get_unsigned<std::size_t>(value, p);
    else if (key == "lr_start")
      cfg.lr_start = get_float(value, p);
    else if (key == "lr_end")
      cfg.lr_end = get_float(value, p);
    else if (key == "batch_size")
      cfg.batch_size = get_unsigned<std::size_t>(value, p);
    else if (key == "seed")
      cfg.seed = get_unsigned<std::uint32_t>(value, p);
    else if (key == "beta1")
      cfg.beta1 = get_float(value, p);
    else if (key == "beta2")
      cfg.beta2 = get_float(value, p);
    else if (key == "adam_eps")
      cfg.adam_eps = get_float(value, p);
    else if (key == "clip_norm")
      cfg.clip_norm = get_float(value, p);
    else if (key == "checkpoint_every")
      cfg.checkpoint_every = get_unsigned<std::size_t>(value, p);
    else
      bad(p, "unknown key");
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    bad(ptr, strip_prefix(e.what(), "train config: "));
  }
}

void apply_encoder(EncoderConfig& cfg, const json& section, const std::string& ptr) {
  if (!section.is_object()) bad(ptr, "expected an object");
  for (const auto& [key, value] : section.items()) {
    const std::string p = ptr + "/" + key;
    if (key == "d_model")
      cfg.d_model = get_unsigned<std::size_t>(value, p);
    else if (key == "n_layers")
      cfg.n_layers = get_unsigned<std::size_t>(value, p);
    else if (key == "n_heads")
      cfg.n_heads = get_unsigned<std::size_t>(value, p);
    else if (key == "head_dim")
      cfg.head_dim = get_unsigned<std::size_t>(value, p);
    else if (key == "mlp_dim")
      cfg.mlp_dim = get_unsigned<std::size_t>(value, p);
    else if (key == "head_hidden")
      cfg.head_hidden = get_unsigned<std::size_t>(value, p);
    else if (key == "dropout")
      cfg.dropout = get_float(value, p);
    else
      bad(p, "unknown key");  // view and n_classes are derived, not configured
  }
  try {
    EncoderConfig probe = cfg;
    probe.view = View::pitch;
    probe.n_classes = 2;
    probe.validate();
  } catch (const Error& e) {
    bad(ptr, strip_prefix(e.what(), "encoder config: "));
  }
}

void apply_synth(SynthParams& p, const json& section, const std::string& ptr) {
  if (!section.is_object()) bad(ptr, "expected an object");
  for (const auto& [key, value] : section.items()) {
    const std::string kp = ptr + "/" + key;
    if (key == "classes")
      p.classes = get_unsigned<std::size_t>(value, kp);
    else if (key == "clips_per_class")
      p.clips_per_class = get_unsigned<std::size_t>(value, kp);
    else if (key == "seconds") {
      if (!value.is_number()) bad(kp, "expected a number");
      p.seconds = value.get<double>();
    } else
      bad(kp, "unknown key");
  }
  if (p.classes < 4 || p.classes % 2 != 0)
    bad(ptr, "classes must be even and at least 4");
  if (p.clips_per_class < 1) bad(ptr, "clips_per_class must be >= 1");
  if (!(p.seconds > 0.0)) bad(ptr, "seconds must be positive");
}

}  // namespace

RunConfig::RunConfig() { head_train.epochs = 100; }

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw validation_error(std::string("config error: not valid JSON: ") + e.what());
  }
  if (!j.is_object()) bad("/", "expected a JSON object");

  static const std::vector<std::string> known = {
      "data_dir", "cache_dir", "checkpoint_dir", "report_dir", "seed",    "views",
      "synth",    "encoder",   "train",          "head_train", "fusion",  "train_overrides"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) bad("/" + key, "unknown key");

  RunConfig cfg;
  if (j.contains("data_dir")) cfg.data_dir = get_string(j["data_dir"], "/data_dir");
  if (j.contains("cache_dir")) cfg.cache_dir = get_string(j["cache_dir"], "/cache_dir");
  if (j.contains("checkpoint_dir"))
    cfg.checkpoint_dir = get_string(j["checkpoint_dir"], "/checkpoint_dir");
  if (j.contains("report_dir")) cfg.report_dir = get_string(j["report_dir"], "/report_dir");
  if (j.contains("seed")) cfg.seed = get_unsigned<std::uint32_t>(j["seed"], "/seed");

  // Schedule seeds default to the global seed unless a section names one.
  cfg.train.seed = cfg.seed;
  cfg.head_train.seed = cfg.seed;

  if (j.contains("views")) {
    if (!j["views"].is_array() || j["views"].empty())
      bad("/views", "expected a non-empty array of view names");
    std::vector<View> views;
    for (const auto& name : j["views"]) {
      if (!name.is_string()) bad("/views", "expected a non-empty array of view names");
      try {
        views.push_back(view_from_name(name.get<std::string>()));
      } catch (const Error& e) {
        bad("/views", e.what());
      }
    }
    try {
      cfg.views = normalize_views(std::move(views));
    } catch (const Error& e) {
      bad("/views", strip_prefix(e.what(), "fusion: "));
    }
  }
  if (j.contains("synth")) apply_synth(cfg.synth, j["synth"], "/synth");
  if (j.contains("encoder")) apply_encoder(cfg.encoder, j["encoder"], "/encoder");
  if (j.contains("train")) apply_train(cfg.train, j["train"], "/train");
  if (j.contains("head_train")) apply_train(cfg.head_train, j["head_train"], "/head_train");
  if (j.contains("fusion")) {
    const json& f = j["fusion"];
    if (!f.is_object()) bad("/fusion", "expected an object");
    for (const auto& [key, value] : f.items()) {
      if (key == "head_hidden")
        cfg.fusion_head_hidden = get_unsigned<std::size_t>(value, "/fusion/head_hidden");
      else
        bad("/fusion/" + key, "unknown key");
    }
    if (cfg.fusion_head_hidden < 1) bad("/fusion/head_hidden", "must be >= 1");
  }
  if (j.contains("train_overrides")) {
    const json& o = j["train_overrides"];
    if (!o.is_object()) bad("/train_overrides", "expected an object keyed by view name");
    for (const auto& [key, value] : o.items()) {
      View v;
      try {
        v = view_from_name(key);
      } catch (const Error& e) {
        bad("/train_overrides/" + key, e.what());
      }
      TrainConfig per = cfg.train;  // override on top of the resolved base
      apply_train(per, value, "/train_overrides/" + key);
      cfg.train_overrides[v] = per;
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw validation_error("cannot open config '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  RunConfig cfg = from_json(os.str());
  if (const char* cache = std::getenv("PF_CACHE_DIR"); cache && *cache) cfg.cache_dir = cache;
  return cfg;
}

std::string RunConfig::to_json() const {
  json j;
  j["data_dir"] = data_dir;
  j["cache_dir"] = cache_dir;
  j["checkpoint_dir"] = checkpoint_dir;
  j["report_dir"] = report_dir;
  j["seed"] = seed;
  auto& varr = j["views"] = json::array();
  for (View v : views) varr.push_back(view_name(v));
  j["synth"] = {{"classes", synth.classes},
                {"clips_per_class", synth.clips_per_class},
                {"seconds", synth.seconds}};
  j["encoder"] = {{"d_model", encoder.d_model},   {"n_layers", encoder.n_layers},
                  {"n_heads", encoder.n_heads},   {"head_dim", encoder.head_dim},
                  {"mlp_dim", encoder.mlp_dim},   {"head_hidden", encoder.head_hidden},
                  {"dropout", encoder.dropout}};
  auto train_json = [](const TrainConfig& t) {
    return json{{"epochs", t.epochs},
                {"lr_start", t.lr_start},
                {"lr_end", t.lr_end},
                {"batch_size", t.batch_size},
                {"seed", t.seed},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"adam_eps", t.adam_eps},
                {"clip_norm", t.clip_norm},
                {"checkpoint_every", t.checkpoint_every}};
  };
  j["train"] = train_json(train);
  j["head_train"] = train_json(head_train);
  j["fusion"] = {{"head_hidden", fusion_head_hidden}};
  auto& over = j["train_overrides"] = json::object();
  for (const auto& [v, t] : train_overrides) over[view_name(v)] = train_json(t);
  return j.dump();
}

EncoderConfig RunConfig::encoder_for(View v, std::size_t n_classes) const {
  EncoderConfig cfg = encoder;
  cfg.view = v;
  cfg.n_classes = n_classes;
  cfg.validate();
  return cfg;
}

const TrainConfig& RunConfig::train_for(View v) const {
  auto it = train_overrides.find(v);
  return it == train_overrides.end() ? train : it->second;
}

FusionSpec RunConfig::fusion_for(std::vector<View> fused_views, std::size_t n_classes) const {
  FusionSpec spec;
  spec.views = normalize_views(std::move(fused_views));
  spec.embed_dim = encoder.d_model;
  spec.head_hidden = fusion_head_hidden;
  spec.n_classes = n_classes;
  spec.validate();
  return spec;
}

std::string RunConfig::manifest_path() const { return data_dir + "/manifest.csv"; }
std::string RunConfig::vocab_path() const { return data_dir + "/vocab.txt"; }

std::string RunConfig::features_path(View v) const {
  return cache_dir + "/features_" + view_name(v) + ".pfv";
}

std::string RunConfig::embeds_path(View v) const {
  return cache_dir + "/embeds_" + view_name(v) + ".pfv";
}

std::string RunConfig::encoder_dir(View v) const {
  return checkpoint_dir + "/" + view_name(v);
}

std::string RunConfig::head_dir(const std::vector<View>& fused_views) const {
  std::string name = checkpoint_dir + "/head_";
  for (std::size_t i = 0; i < fused_views.size(); ++i)
    name += std::string(i ? "+" : "") + view_name(fused_views[i]);
  return name;
}

void write_provenance(const RunConfig& cfg) {
  fs::create_directories(cfg.report_dir);
  {
    std::ofstream out(cfg.report_dir + "/resolved_config.json", std::ios::trunc);
    if (!out) throw Error("cannot write '" + cfg.report_dir + "/resolved_config.json'");
    out << json::parse(cfg.to_json()).dump(2) << "\n";
  }
  std::ofstream out(cfg.report_dir + "/version.txt", std::ios::trunc);
  if (!out) throw Error("cannot write '" + cfg.report_dir + "/version.txt'");
  out << kVersionString << "\n";
}

}  // namespace pf

// Command-line surface for the multi-view audio embedding pipeline. Every
// subcommand reads one JSON run config, echoes the fully resolved config and
// version string to the report directory before computing, and exits 0 on
// success, 1 on a validation problem (bad flags, bad config, missing
// prerequisite artifacts), 2 on a runtime failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pf/dataset.hpp"
#include "pf/eval.hpp"
#include "pf/fusion.hpp"
#include "pf/gradcheck.hpp"
#include "pf/pipeline.hpp"
#include "pf/runconfig.hpp"
#include "pf/trainer.hpp"

namespace fs = std::filesystem;
using namespace pf;

namespace {

// When --config is not given and the default file is absent, a pure-defaults
// config applies (an explicit path must exist). PF_CACHE_DIR wins either way.
RunConfig resolve_config(const std::string& path, bool explicitly_given) {
  if (!explicitly_given && !fs::exists(path)) {
    RunConfig cfg;
    if (const char* cache = std::getenv("PF_CACHE_DIR"); cache && *cache) cfg.cache_dir = cache;
    return cfg;
  }
  return RunConfig::load(path);
}

void require_artifact(const std::string& path, const std::string& producer) {
  if (!fs::exists(path))
    throw validation_error("missing '" + path + "'; run `pf " + producer + "` first");
}

Manifest load_corpus(const RunConfig& cfg) {
  require_artifact(cfg.manifest_path(), "synth-data");
  require_artifact(cfg.vocab_path(), "synth-data");
  return load_manifest(cfg.manifest_path(), cfg.vocab_path());
}

std::vector<View> parse_views(const std::vector<std::string>& names) {
  std::vector<View> views;
  views.reserve(names.size());
  for (const auto& n : names) views.push_back(view_from_name(n));
  return normalize_views(std::move(views));
}

ChunkSet load_all_splits(const Manifest& manifest, View view, const std::string& cache) {
  ChunkSet all;
  for (Split s : {Split::train, Split::val, Split::test}) {
    ChunkSet part = load_view_chunks(manifest, view, cache, s);
    for (std::size_t i = 0; i < part.size(); ++i)
      all.push(std::move(part.features[i]), std::move(part.targets[i]),
               std::move(part.clip_ids[i]), part.chunk_indices[i]);
  }
  return all;
}

std::map<View, std::string> embed_caches_for(const RunConfig& cfg,
                                             const std::vector<View>& views) {
  std::map<View, std::string> caches;
  for (View v : views) {
    require_artifact(cfg.embeds_path(v), std::string("embed --view ") + view_name(v));
    caches[v] = cfg.embeds_path(v);
  }
  return caches;
}

// ---- stages (shared between single subcommands and `pipeline`) -------------

void stage_synth(const RunConfig& cfg) {
  SyntheticCorpus corpus = generate_synthetic_corpus(
      cfg.data_dir, cfg.seed, cfg.synth.classes, cfg.synth.clips_per_class, cfg.synth.seconds);
  std::printf("synth-data: %zu clips, %zu classes -> %s\n", corpus.records.size(),
              corpus.vocab.size(), corpus.manifest_path.c_str());
}

void stage_features(const RunConfig& cfg, View view, std::size_t jobs) {
  const Manifest manifest = load_corpus(cfg);
  fs::create_directories(cfg.cache_dir);
  build_feature_cache(manifest, view, cfg.features_path(view), jobs);
  std::printf("features: %s view -> %s\n", view_name(view), cfg.features_path(view).c_str());
}

void stage_train_encoder(const RunConfig& cfg, View view, const std::string& resume) {
  const Manifest manifest = load_corpus(cfg);
  require_artifact(cfg.features_path(view), std::string("features --view ") + view_name(view));
  const ChunkSet train = load_view_chunks(manifest, view, cfg.features_path(view), Split::train);
  const ChunkSet val = load_view_chunks(manifest, view, cfg.features_path(view), Split::val);
  const EncoderConfig ecfg = cfg.encoder_for(view, manifest.vocab.size());
  std::printf("train-encoder: %s view, %zu train / %zu val chunks, %zu epochs\n",
              view_name(view), train.size(), val.size(), cfg.train_for(view).epochs);
  TrainResult res = train_view(ecfg, cfg.train_for(view), train, val, cfg.encoder_dir(view),
                               resume);
  std::printf("train-encoder: best val top-5 %.4f, final %s\n", res.best_val_top5,
              res.final_checkpoint.c_str());
}

void stage_embed(const RunConfig& cfg, View view) {
  const Manifest manifest = load_corpus(cfg);
  require_artifact(cfg.features_path(view), std::string("features --view ") + view_name(view));
  const std::string ckpt = cfg.encoder_dir(view) + "/final.pfck";
  require_artifact(ckpt, std::string("train-encoder --view ") + view_name(view));
  const ChunkSet chunks = load_all_splits(manifest, view, cfg.features_path(view));
  extract_embeddings(ckpt, view, chunks, cfg.embeds_path(view));
  std::printf("embed: %zu %s chunks -> %s\n", chunks.size(), view_name(view),
              cfg.embeds_path(view).c_str());
}

void stage_train_head(const RunConfig& cfg, const std::vector<View>& views,
                      const std::string& resume) {
  const Manifest manifest = load_corpus(cfg);
  const auto caches = embed_caches_for(cfg, views);
  const FusionSpec spec = cfg.fusion_for(views, manifest.vocab.size());
  const ChunkSet train = build_fused_chunks(manifest, spec, caches, Split::train);
  const ChunkSet val = build_fused_chunks(manifest, spec, caches, Split::val);
  std::printf("train-head: %zu views, %zu train / %zu val chunks, %zu epochs\n",
              spec.views.size(), train.size(), val.size(), cfg.head_train.epochs);
  TrainResult res =
      train_fusion_head(spec, cfg.head_train, train, val, cfg.head_dir(spec.views), resume);
  std::printf("train-head: best val top-5 %.4f, final %s\n", res.best_val_top5,
              res.final_checkpoint.c_str());
}

void stage_eval(const RunConfig& cfg, const std::vector<View>& views, Split split,
                const std::string& split_name) {
  const Manifest manifest = load_corpus(cfg);
  const auto caches = embed_caches_for(cfg, views);
  const FusionSpec spec = cfg.fusion_for(views, manifest.vocab.size());
  const std::string ckpt = cfg.head_dir(spec.views) + "/final.pfck";
  std::string views_flag;
  for (View v : spec.views) views_flag += std::string(views_flag.empty() ? "" : ",") + view_name(v);
  require_artifact(ckpt, "train-head --views " + views_flag);

  const ChunkSet chunks = build_fused_chunks(manifest, spec, caches, split);
  const ModelSpec model = model_from_checkpoint(ckpt);
  const MetricsReport report = compute_metrics(score_chunks(model, chunks));

  fs::create_directories(cfg.report_dir);
  const std::string stem = cfg.report_dir + "/metrics_" + split_name;
  std::ofstream(stem + ".csv", std::ios::trunc) << report.to_csv();
  std::ofstream(stem + ".json", std::ios::trunc) << report.to_json() << "\n";
  std::printf("eval: %s split, %zu chunks\n%s", split_name.c_str(), chunks.size(),
              report.to_csv().c_str());
  std::printf("eval: wrote %s.csv and %s.json\n", stem.c_str(), stem.c_str());
}

void stage_gradcheck() {
  std::size_t failed = 0, total = 0;
  run_gradcheck_suite([&](const SuiteResult& r) {
    ++total;
    failed += r.report.pass ? 0 : 1;
    std::printf("gradcheck %-22s %-4s max_rel_err %.3e  (%zu coords", r.name.c_str(),
                r.report.pass ? "ok" : "FAIL", r.report.max_rel_err, r.report.coords_checked);
    if (r.report.coords_skipped > 0)
      std::printf(", %zu skipped at kinks", r.report.coords_skipped);
    std::printf(", %.1fs)%s%s\n", r.seconds, r.report.failure.empty() ? "" : "  ",
                r.report.failure.c_str());
    std::fflush(stdout);
  });
  if (failed > 0)
    throw Error("gradcheck: " + std::to_string(failed) + " of " + std::to_string(total) +
                " entries failed");
  std::printf("gradcheck: all %zu entries passed\n", total);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-view audio embeddings: per-view transformer encoders with late fusion"};
  app.require_subcommand(1);

  std::string config_path = "run.json";
  std::string view_name_arg, resume, split_name = "test";
  std::vector<std::string> views_arg;
  std::size_t jobs = 0;

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run config")->capture_default_str();
    return sub;
  };
  auto with_view = [&](CLI::App* sub) {
    sub->add_option("--view", view_name_arg, "pitch | timbre | waveform | neuralogram")
        ->required();
    return sub;
  };

  auto* synth = with_config(app.add_subcommand("synth-data", "generate the synthetic corpus"));
  auto* features =
      with_view(with_config(app.add_subcommand("features", "build one view's feature cache")));
  features->add_option("--jobs", jobs, "worker threads (0 = all cores)");
  auto* train_enc = with_view(
      with_config(app.add_subcommand("train-encoder", "train one view's encoder")));
  train_enc->add_option("--resume", resume, "checkpoint to continue from");
  auto* embed = with_view(with_config(
      app.add_subcommand("embed", "extract embeddings from a trained encoder")));
  auto* train_head =
      with_config(app.add_subcommand("train-head", "train a fusion head over embeddings"));
  train_head->add_option("--views", views_arg, "comma-separated view list")
      ->required()
      ->delimiter(',');
  train_head->add_option("--resume", resume, "checkpoint to continue from");
  auto* eval_cmd = with_config(app.add_subcommand("eval", "score a split and write metrics"));
  eval_cmd->add_option("--views", views_arg, "comma-separated view list")
      ->required()
      ->delimiter(',');
  eval_cmd->add_option("--split", split_name, "train | val | test")->capture_default_str();
  auto* gradcheck_cmd = with_config(
      app.add_subcommand("gradcheck", "finite-difference check of every op and network"));
  auto* pipeline_cmd = with_config(
      app.add_subcommand("pipeline", "all stages: corpus, features, encoders, fusion, eval"));
  pipeline_cmd->add_option("--jobs", jobs, "worker threads for feature extraction");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the parse error
    return code == 0 ? 0 : 1;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const RunConfig cfg = resolve_config(config_path, sub->count("--config") > 0);
    write_provenance(cfg);

    if (sub == synth) {
      stage_synth(cfg);
    } else if (sub == features) {
      stage_features(cfg, view_from_name(view_name_arg), jobs);
    } else if (sub == train_enc) {
      stage_train_encoder(cfg, view_from_name(view_name_arg), resume);
    } else if (sub == embed) {
      stage_embed(cfg, view_from_name(view_name_arg));
    } else if (sub == train_head) {
      stage_train_head(cfg, parse_views(views_arg), resume);
    } else if (sub == eval_cmd) {
      stage_eval(cfg, parse_views(views_arg), split_from_name(split_name), split_name);
    } else if (sub == gradcheck_cmd) {
      stage_gradcheck();
    } else if (sub == pipeline_cmd) {
      stage_synth(cfg);
      for (View v : cfg.views) {
        stage_features(cfg, v, jobs);
        stage_train_encoder(cfg, v, "");
        stage_embed(cfg, v);
      }
      stage_train_head(cfg, cfg.views, "");
      stage_eval(cfg, cfg.views, Split::test, "test");
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.kind() == Error::Kind::validation ? 1 : 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}

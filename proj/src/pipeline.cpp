#include "pf/pipeline.hpp"

#include <omp.h>

#include <exception>
#include <memory>
#include <vector>

namespace pf {

TensorF view_features(View view, const Chunk& chunk, const Projector* projector) {
  switch (view) {
    case View::pitch:
      return peak_map(cqt_log_magnitude(chunk.samples.data()));
    case View::timbre:
      return mfcc(chunk.samples.data());
    case View::waveform:
      return patch_waveform(chunk.samples.data());
    case View::neuralogram: {
      static const StandInProjector standin;
      return neuralogram(chunk.samples.data(), projector ? *projector : standin, chunk.clip_id,
                         chunk.chunk_index);
    }
  }
  throw validation_error("view_features: bad view tag");
}

void build_feature_cache(const Manifest& manifest, View view, const std::string& out_path,
                         int jobs, const Projector* projector) {
  const std::size_t n = manifest.records.size();
  if (n == 0) throw validation_error("feature cache: manifest has no clips");

  std::vector<std::vector<FeatureRecord>> per_clip(n);
  std::vector<std::exception_ptr> failed(n);
  const int threads = jobs > 0 ? jobs : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      const ClipRecord& rec = manifest.records[i];
      const AudioClip clip = decode_and_resample(rec);
      for (Chunk& ch : chunk_clip(clip, rec, manifest.vocab.size())) {
        FeatureRecord out;
        out.clip_id = ch.clip_id;
        out.chunk_index = ch.chunk_index;
        out.view = view;
        out.data = view_features(view, ch, projector);
        per_clip[i].push_back(std::move(out));
      }
    } catch (...) {
      failed[i] = std::current_exception();
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (failed[i]) std::rethrow_exception(failed[i]);

  FeatureFileWriter writer(out_path);
  for (const auto& records : per_clip)
    for (const FeatureRecord& rec : records) writer.add(rec);
}

}  // namespace pf

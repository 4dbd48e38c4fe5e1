#pragma once

// Corpus-level plumbing shared by the command-line stages: per-chunk view
// features and bulk feature-cache construction, parallel across clips with
// byte-identical output at any thread count.

#include <string>

#include "pf/dataset.hpp"
#include "pf/features.hpp"
#include "pf/io.hpp"

namespace pf {

/// One chunk's representation for a view, [rows, cols] per the view layout.
/// The projector is only consulted for the neuralogram; null falls back to
/// the built-in stand-in.
TensorF view_features(View view, const Chunk& chunk, const Projector* projector = nullptr);

/// Decode every manifest clip (all splits) and write the view's features for
/// each chunk to a PFV1 cache. Clips are processed jobs-at-a-time (jobs <= 0
/// uses all cores); the output bytes never depend on jobs, and a failure
/// reports the first broken clip in manifest order.
void build_feature_cache(const Manifest& manifest, View view, const std::string& out_path,
                         int jobs = 0, const Projector* projector = nullptr);

}  // namespace pf

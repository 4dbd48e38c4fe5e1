#pragma once

// Central-finite-difference verification of reverse-mode gradients, run in
// double precision. The builder constructs a fresh graph each call:
//
//   Var build(Graph<double>& g, ParamMap& params, std::mt19937& input_rng, const SinkFn& sink)
//
// Contract: on the first call `params` is empty and the builder must fill it
// deterministically — not from input_rng, whose stream must be identical on
// every call. Each parameter enters the graph via
// g.leaf(params[name], sink(name)); the harness hands out gradient buffers
// through `sink` on the analytic pass and nullptr on difference passes. The
// harness perturbs one coordinate at a time and compares loss differences
// against the analytic gradients.

#include <functional>
#include <map>
#include <random>
#include <string>

#include "pf/autodiff.hpp"

namespace pf {

using ParamMap = std::map<std::string, TensorD>;
using SinkFn = std::function<TensorD*(const std::string&)>;
using ModelBuilder = std::function<Var(GraphD&, ParamMap&, std::mt19937&, const SinkFn&)>;

struct GradcheckReport {
  bool pass = false;
  double max_rel_err = 0.0;  // over all sampled coordinates
  std::string worst_param;   // tensor name attaining max_rel_err
  std::size_t worst_coord = 0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;  // non-smooth at the probe scale (see below)
  std::string failure;  // non-finite provenance, or empty
};

/// Compare analytic gradients against central differences (eps = 1e-5) at
/// >= 20 random coordinates per parameter tensor (all, if smaller). Relative
/// error uses denominator max(|a|,|b|,1e-6), so gradients below 1e-6 are held
/// to absolute agreement instead of a noise-measuring ratio; pass iff max
/// error < tolerance and every forward value and gradient is finite.
///
/// Coordinates where the loss is not smooth across [-eps, +eps] — an argmax
/// inside a max or conv-max flips, so the difference quotient straddles a
/// kink and measures nothing — are detected by the second difference
/// f(+eps) + f(-eps) - 2 f(0), which is O(eps^2 f'') when smooth but
/// O(eps * slope jump) at a kink. Such coordinates are skipped and counted
/// in coords_skipped rather than compared.
GradcheckReport gradcheck(const ModelBuilder& build, unsigned seed, double tolerance = 1e-5,
                          std::size_t coords_per_tensor = 20, double eps = 1e-5);

struct SuiteResult {
  std::string name;
  GradcheckReport report;
  double seconds = 0.0;
};

/// The standing verification battery: one named entry per graph primitive,
/// then the four full-size per-view networks (double precision, dropout off,
/// loss = Huber against a multi-hot target). `on_result`, if given, fires as
/// each entry finishes so progress can be streamed. The big convolutional
/// front-end samples fewer coordinates per tensor to keep the battery fast;
/// everything else uses the harness defaults.
std::vector<SuiteResult> run_gradcheck_suite(
    const std::function<void(const SuiteResult&)>& on_result = nullptr);

}  // namespace pf

#pragma once

// Constructors for the pi0-class inference graph in two forms:
//
//   build_pi0_graph_naive : one node per framework-level op (separate q/k/v
//                           projections, standalone norms/residuals/activations,
//                           explicit time-embedding concat in the action expert).
//   build_pi0_graph       : the fused form the rewrite pipeline produces
//                           (merged qkv, gated-FFN kernels, epilogue-fused
//                           scalars, folded time embedding, dead work pruned).
//
// Both derive every shape from ModelConfig arithmetic; running the full pass
// pipeline on the naive graph yields a graph isomorphic to the fused one.

#include "rtvla/graph.hpp"

namespace rtvla {

// Full-scale pi0 configuration (2 camera views by default).
ModelConfig default_config();

// Reduced configuration for numerical-equivalence testing: hidden widths
// divided by 16, layer counts capped at 2, flow steps capped at 2, one view.
// The vision encoder keeps 8 heads (16 would not divide the reduced width).
ModelConfig tiny_config();

Graph build_pi0_graph(const ModelConfig& cfg);
Graph build_pi0_graph_naive(const ModelConfig& cfg);

}  // namespace rtvla

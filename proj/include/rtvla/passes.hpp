#pragma once

// Equivalence-preserving graph rewrites and their weight-transformation
// rules. Each pass is a pure function Graph -> (Graph, rules); the rules say
// how to produce the rewritten graph's parameters from the original ones, so
// a numerical harness can check that outputs are preserved bit-for-nearly-bit.

#include "rtvla/evaluate.hpp"
#include "rtvla/graph.hpp"

#include <functional>
#include <string>
#include <vector>

namespace rtvla {

enum class RuleKind { Copy, PremultiplyDiag, ConcatCols, ComposeTimeFold, GammaStrip };

struct WeightRule {
    RuleKind kind = RuleKind::Copy;
    std::string dst;                // node whose parameters are produced
    std::vector<std::string> srcs;  // parameter sources, rule-specific order
    int64_t d_t = 0;                // ComposeTimeFold: time-embedding width
    int64_t steps = 0;              // ComposeTimeFold: bias-table rows
    std::string describe() const;
};

struct PassResult {
    std::string name;
    Graph graph;
    std::vector<WeightRule> rules;
    int sites = 0;  // pattern templates rewritten
    int64_t nodes_before = 0, nodes_after = 0;
    int64_t gemm_before = 0, gemm_after = 0;
};

PassResult absorb_rms_affine(const Graph& g);
PassResult fold_action_time_embed(const Graph& g);
PassResult fuse_qkv(const Graph& g);
PassResult fuse_gated_ffn(const Graph& g);
PassResult fuse_epilogues(const Graph& g);
PassResult prune_dead_nodes(const Graph& g);

using PassFn = PassResult (*)(const Graph&);

// The standard pass order. Names are the CLI-facing identifiers.
const std::vector<std::pair<std::string, PassFn>>& pass_registry();
std::vector<std::string> default_pass_names();
PassFn find_pass(const std::string& name);  // nullptr when unknown

// Derives the rewritten graph's parameters from the original store.
// Parameters of nodes present in both graphs carry over; rules override.
WeightStore apply_weight_rules(const Graph& before, const Graph& after,
                               const std::vector<WeightRule>& rules,
                               const WeightStore& old, int flow_steps);

struct PassReport {
    std::string name;
    int sites = 0;
    int64_t nodes_before = 0, nodes_after = 0;
    int64_t gemm_before = 0, gemm_after = 0;
    std::vector<std::string> weight_notes;
    double max_deviation = 0.0;  // across verification seeds
};

struct PipelineReport {
    std::vector<PassReport> passes;
    bool verified = false;    // verification was requested and ran
    bool verified_ok = true;  // all stages within tolerance
    std::string failed_pass;
    int seeds = 0;
    double tolerance = 0.0;
    double max_deviation = 0.0;
};

struct PipelineOptions {
    std::vector<std::string> passes = default_pass_names();
    bool verify = false;
    int seeds = 10;
    double tolerance = 1e-9;
};

struct PipelineResult {
    Graph graph;
    PipelineReport report;
};

// Applies the pass list to g. With verify set, every pass (and the composed
// chain) is additionally exercised on a reduced-width twin of the stock
// model and its outputs compared against the unrewritten twin across seeds;
// the full-scale graph itself is never evaluated (its weights would not fit).
PipelineResult run_pipeline(const Graph& g, const PipelineOptions& opt);

// Positional structural equality, ignoring node names: kinds, repeats,
// shapes, epilogues, bindings and reference topology (by node index) must
// all match.
bool graphs_isomorphic(const Graph& a, const Graph& b, std::string* why = nullptr);

}  // namespace rtvla

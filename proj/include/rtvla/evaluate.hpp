#pragma once

// Reference evaluator: runs a graph instance-by-instance in double precision.
// This is the oracle rewrite passes are verified against, so it is written
// for obvious correctness, not speed, and is only intended for reduced-width
// configurations (full-scale weights would not fit in memory).

#include "rtvla/graph.hpp"
#include "rtvla/tensor.hpp"

#include <unordered_map>
#include <vector>

namespace rtvla {

// All parameters of one node. Weight instance count follows the node's
// binding (Shared 1, PerInstance repeat, PerLayer layer_count).
struct WeightSet {
    std::vector<Tensor> w;                     // [k, m] per weight instance
    std::vector<std::vector<double>> bias;     // [m] per weight instance
    std::vector<std::vector<double>> gamma;    // norm affine, per weight instance
    Tensor bias_table;                         // [flow_steps, m] when has_bias_table
};

struct WeightStore {
    std::unordered_map<std::string, WeightSet> by_node;
};

struct Inputs {
    std::unordered_map<std::string, Tensor> by_source;
};

// Sinusoidal embedding of the flow step: tau = step / flow_steps scaled by a
// geometric frequency ladder over half the width, [sin..., cos...].
std::vector<double> time_embedding(int step, int dim, int flow_steps);

// Deterministic parameter/input generation. Every tensor's seed is derived
// from (seed, node id, instance, role), so regenerating a subset of nodes
// reproduces identical values.
WeightStore gen_weights(const Graph& g, uint64_t seed);
Inputs gen_inputs(const Graph& g, uint64_t seed);

// Evaluates the designated output node's final instance.
Tensor evaluate(const Graph& g, const WeightStore& weights, const Inputs& inputs);

// Largest elementwise |a-b| / (|b| + 1e-12) between two tensors.
double max_rel_deviation(const Tensor& a, const Tensor& b);

}  // namespace rtvla

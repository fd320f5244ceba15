#pragma once

// Folded computation-graph IR for pi0-class VLA inference.
//
// One node describes one kernel template; `repeat` is how many instances run
// per inference (e.g. one QKV node with repeat 18 covers all LLM layers).
// Dataflow between instances is expressed by typed input references:
//
//   "a"          instance i reads a's instance i
//   "a@prev"     instance i reads a's instance i-1 (loop carry)
//   "a@mod"      instance i reads a's instance i % repeat(a)   (KV reuse)
//   "a@div"      instance i reads a's instance i / (R/Ra)      (step input)
//   "a@last"     instance i reads a's instance (i+1)*(Ra/R)-1  (group exit)
//   "a?b"        group entry: a@div when i is a group start, else b@prev
//   any ref may end in "[lo:hi]" to slice output columns.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rtvla {

enum class Stage { VE, LLM, AE };

enum class NodeKind { Source, Gemm, FusedGatedGemm, Attention, Scalar, RmsStats, Concat, Slice };

enum class ScalarOp { RmsNorm, Bias, Residual, Gelu, Silu, Softmax, Mul };

enum class EpilogueOp { Bias, Residual, RmsScale, Rope, Gelu, Silu, GeluGate, SiluBias, Softmax };

enum class WeightBinding { None, Shared, PerInstance, PerLayer };

enum class ConcatAxis { Rows, Cols };

struct GemmShape {
    int64_t n = 0, k = 0, m = 0;
    bool operator==(const GemmShape&) const = default;
};

struct AttnDims {
    int heads = 0;
    int q_tokens = 0;
    int kv_tokens = 0;
    int head_dim = 0;
    int kv_heads = 1;
    bool operator==(const AttnDims&) const = default;
};

struct EpilogueEntry {
    EpilogueOp op = EpilogueOp::Bias;
    double scale = 1.0;                           // Residual: y = shortcut + scale*y
    int rope_head_dim = 0;                        // Rope
    int rope_pos_offset = 0;                      // Rope: position of row 0
    std::vector<std::array<int64_t, 2>> rope_ranges;  // Rope: column ranges rotated
    bool operator==(const EpilogueEntry&) const = default;
};

enum class RefKind { Plain, Prev, Mod, Div, Last, EntryOr };

struct InputRef {
    RefKind kind = RefKind::Plain;
    std::string id;        // producer (entry producer for EntryOr)
    std::string carry_id;  // EntryOr only
    int64_t slice_lo = -1, slice_hi = -1;  // column slice, -1 = whole
    bool sliced() const { return slice_lo >= 0; }
    bool operator==(const InputRef&) const = default;
};

InputRef parse_input_ref(const std::string& text);
std::string format_input_ref(const InputRef& ref);

struct Node {
    std::string id;
    NodeKind kind = NodeKind::Gemm;
    Stage stage = Stage::VE;
    int64_t repeat = 1;

    GemmShape shape;       // Gemm / FusedGatedGemm
    AttnDims attn;         // Attention
    ScalarOp op = ScalarOp::Bias;  // Scalar
    ConcatAxis axis = ConcatAxis::Cols;  // Concat
    int64_t rows = 0, cols = 0;    // Source output shape
    int64_t lo = 0, hi = 0;        // Slice: keep input rows [lo, hi)
    double scale = 1.0;            // Scalar Residual: out = in0 + scale * in1

    std::vector<EpilogueEntry> epilogue;
    std::vector<InputRef> inputs;

    WeightBinding weight = WeightBinding::None;
    int64_t layer_count = 0;   // PerLayer binding: instance i uses weight i % layer_count
    bool has_bias = false;         // bias vector alongside the main weight
    bool has_bias_table = false;   // Bias/SiluBias epilogue reads a per-step table row
    bool time_source = false;      // Source: instance s emits the flow-time embedding for step s
    double eps = 1e-6;             // RmsNorm / RmsStats
    std::string prologue;          // data-layout note carried into reports (e.g. "img2col")

    bool gemm_like() const {
        return kind == NodeKind::Gemm || kind == NodeKind::FusedGatedGemm ||
               kind == NodeKind::Attention;
    }
    int64_t weight_instances() const {
        switch (weight) {
            case WeightBinding::None: return 0;
            case WeightBinding::Shared: return 1;
            case WeightBinding::PerInstance: return repeat;
            case WeightBinding::PerLayer: return layer_count;
        }
        return 0;
    }
};

struct VisionConfig {
    int layers = 27;
    int width = 1152;
    int heads = 16;
    int head_dim = 72;
    int mlp = 4304;
    int patch_in = 588;
    bool operator==(const VisionConfig&) const = default;
};

struct LlmConfig {
    int layers = 18;
    int width = 2048;
    int q_heads = 8;
    int head_dim = 256;
    int kv_heads = 1;
    int mlp = 16384;
    bool operator==(const LlmConfig&) const = default;
};

struct ActionConfig {
    int layers = 18;
    int width = 1024;
    int q_heads = 8;
    int head_dim = 256;
    int kv_heads = 1;
    int mlp = 4096;
    int action_dim = 32;
    int state_dim = 32;
    bool operator==(const ActionConfig&) const = default;
};

struct ModelConfig {
    int views = 2;
    int prompt_tokens = 0;
    int tokens_per_view = 256;
    int chunk_len = 63;
    int flow_steps = 10;
    VisionConfig ve;
    LlmConfig llm;
    ActionConfig ae;

    int prefix_tokens() const { return views * tokens_per_view + prompt_tokens; }
    int suffix_tokens() const { return chunk_len + 1; }
    int cross_kv_tokens() const { return prefix_tokens() + suffix_tokens(); }
    bool operator==(const ModelConfig&) const = default;
};

struct Graph {
    ModelConfig config;
    std::vector<Node> nodes;
    std::string output;  // id of the designated output node (action chunk)

    const Node* find(const std::string& id) const;
    Node* find(const std::string& id);
    int index_of(const std::string& id) const;  // -1 when absent
};

// Structural validation; returns human-readable violations, empty when valid.
std::vector<std::string> validate(const Graph& g);

// Total GEMM instances under the counting convention used throughout:
// Gemm counts repeat, FusedGatedGemm counts repeat (one kernel per instance),
// Attention counts 2*repeat (score and value matmuls). Other kinds count 0.
int64_t count_gemm_instances(const Graph& g);

// Output shape of one node instance (rows, cols).
std::pair<int64_t, int64_t> node_output_shape(const Graph& g, const Node& n);

// Stable text names used by serialization and reports.
std::string to_string(Stage s);
std::string to_string(NodeKind k);
std::string to_string(ScalarOp o);
std::string to_string(EpilogueOp o);
std::string to_string(WeightBinding w);

}  // namespace rtvla

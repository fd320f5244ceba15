#include "rtvla/builder.hpp"

#include "rtvla/tensor.hpp"

#include <string>
#include <vector>

namespace rtvla {

ModelConfig default_config() {
    return ModelConfig{};
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.views = 1;
    cfg.flow_steps = 2;
    cfg.ve = VisionConfig{2, 72, 8, 9, 269, 588};
    cfg.llm = LlmConfig{2, 128, 8, 16, 1, 1024};
    cfg.ae = ActionConfig{2, 64, 8, 16, 1, 256, 2, 2};
    return cfg;
}

namespace {

// Terse node construction; inputs are given in the textual ref grammar.
struct GraphBuilder {
    Graph g;

    Node& add(const std::string& id, NodeKind kind, Stage stage, int64_t repeat,
              const std::vector<std::string>& inputs) {
        Node n;
        n.id = id;
        n.kind = kind;
        n.stage = stage;
        n.repeat = repeat;
        for (const auto& in : inputs) n.inputs.push_back(parse_input_ref(in));
        g.nodes.push_back(std::move(n));
        return g.nodes.back();
    }

    Node& source(const std::string& id, Stage stage, int64_t rows, int64_t cols) {
        Node& n = add(id, NodeKind::Source, stage, 1, {});
        n.rows = rows;
        n.cols = cols;
        return n;
    }

    Node& gemm(const std::string& id, Stage stage, int64_t repeat, int64_t n_, int64_t k,
               int64_t m, const std::vector<std::string>& inputs, WeightBinding w,
               bool bias) {
        Node& n = add(id, NodeKind::Gemm, stage, repeat, inputs);
        n.shape = {n_, k, m};
        n.weight = w;
        n.has_bias = bias;
        return n;
    }

    Node& attention(const std::string& id, Stage stage, int64_t repeat, int heads,
                    int q_tokens, int kv_tokens, int head_dim, int kv_heads,
                    const std::vector<std::string>& inputs) {
        Node& n = add(id, NodeKind::Attention, stage, repeat, inputs);
        n.attn = {heads, q_tokens, kv_tokens, head_dim, kv_heads};
        return n;
    }

    Node& scalar(const std::string& id, Stage stage, int64_t repeat, ScalarOp op,
                 const std::vector<std::string>& inputs) {
        Node& n = add(id, NodeKind::Scalar, stage, repeat, inputs);
        n.op = op;
        return n;
    }

    Node& rms_norm(const std::string& id, Stage stage, int64_t repeat,
                   const std::string& input, WeightBinding gamma, int64_t layer_count) {
        Node& n = scalar(id, stage, repeat, ScalarOp::RmsNorm, {input});
        n.weight = gamma;
        n.layer_count = layer_count;
        return n;
    }

    Node& rms_stats(const std::string& id, Stage stage, int64_t repeat,
                    const std::string& input) {
        Node& n = add(id, NodeKind::RmsStats, stage, repeat, {input});
        n.op = ScalarOp::RmsNorm;
        return n;
    }

    Node& concat(const std::string& id, Stage stage, int64_t repeat, ConcatAxis axis,
                 const std::vector<std::string>& inputs) {
        Node& n = add(id, NodeKind::Concat, stage, repeat, inputs);
        n.axis = axis;
        return n;
    }

    Node& slice_rows(const std::string& id, Stage stage, int64_t repeat,
                     const std::string& input, int64_t lo, int64_t hi) {
        Node& n = add(id, NodeKind::Slice, stage, repeat, {input});
        n.lo = lo;
        n.hi = hi;
        return n;
    }
};

EpilogueEntry epi(EpilogueOp op) {
    EpilogueEntry e;
    e.op = op;
    return e;
}

EpilogueEntry epi_residual(double scale) {
    EpilogueEntry e;
    e.op = EpilogueOp::Residual;
    e.scale = scale;
    return e;
}

EpilogueEntry epi_rope(int head_dim, int pos_offset,
                       std::vector<std::array<int64_t, 2>> ranges) {
    EpilogueEntry e;
    e.op = EpilogueOp::Rope;
    e.rope_head_dim = head_dim;
    e.rope_pos_offset = pos_offset;
    e.rope_ranges = std::move(ranges);
    return e;
}

struct Dims {
    // Vision encoder
    int64_t ve_n, ve_w, ve_qkv_m, ve_attn_q;
    // Language model
    int64_t llm_n, llm_w, llm_q, llm_kv, llm_qkv_m, llm_ffn_m;
    // Action expert
    int64_t ae_n, ae_w, ae_q, ae_kv_cols, ae_qkv_m, ae_ffn_m, ae_kv_len;
    int64_t chunk, act, state, t_dim;
    int prefix;
};

Dims derive(const ModelConfig& cfg) {
    Dims d;
    d.ve_n = int64_t(cfg.views) * cfg.tokens_per_view;
    d.ve_w = cfg.ve.width;
    d.ve_qkv_m = 3 * d.ve_w;
    d.ve_attn_q = d.ve_n;
    d.prefix = cfg.prefix_tokens();
    d.llm_n = d.prefix;
    d.llm_w = cfg.llm.width;
    d.llm_q = int64_t(cfg.llm.q_heads) * cfg.llm.head_dim;
    d.llm_kv = int64_t(cfg.llm.kv_heads) * cfg.llm.head_dim;
    d.llm_qkv_m = d.llm_q + 2 * d.llm_kv;
    d.llm_ffn_m = 2 * int64_t(cfg.llm.mlp);
    d.ae_n = cfg.suffix_tokens();
    d.ae_w = cfg.ae.width;
    d.ae_q = int64_t(cfg.ae.q_heads) * cfg.ae.head_dim;
    d.ae_kv_cols = int64_t(cfg.ae.kv_heads) * cfg.ae.head_dim;
    d.ae_qkv_m = d.ae_q + 2 * d.ae_kv_cols;
    d.ae_ffn_m = 2 * int64_t(cfg.ae.mlp);
    d.ae_kv_len = cfg.cross_kv_tokens();
    d.chunk = cfg.chunk_len;
    d.act = cfg.ae.action_dim;
    d.state = cfg.ae.state_dim;
    d.t_dim = cfg.ae.width;
    return d;
}

std::string range(int64_t lo, int64_t hi) {
    return "[" + std::to_string(lo) + ":" + std::to_string(hi) + "]";
}

void check_full_scale_shapes(const Graph& g, const ModelConfig& cfg) {
    if (!(cfg == default_config())) return;
    struct Want {
        const char* id;
        GemmShape shape;
    };
    // Shape table for the stock 2-view configuration; a mismatch here means
    // the derivation arithmetic regressed.
    static const Want wants[] = {
        {"ve.embed", {512, 588, 1152}},  {"ve.qkv", {512, 1152, 3456}},
        {"ve.proj", {512, 1152, 1152}},  {"ve.fc1", {512, 1152, 4304}},
        {"ve.fc2", {512, 4304, 1152}},   {"llm.proj_in", {512, 1152, 2048}},
        {"llm.qkv", {512, 2048, 2560}},  {"llm.proj", {512, 2048, 2048}},
        {"llm.down", {512, 16384, 2048}},{"ae.state_proj", {1, 32, 1024}},
        {"ae.qkv", {64, 1024, 2560}},    {"ae.proj", {64, 2048, 1024}},
        {"ae.down", {64, 4096, 1024}},   {"ae.head", {63, 1024, 32}},
    };
    for (const auto& w : wants) {
        const Node* n = g.find(w.id);
        if (n && !(n->shape == w.shape))
            throw ShapeError(std::string("builder: derived shape for ") + w.id +
                             " does not match the expected full-scale table");
    }
}

}  // namespace

Graph build_pi0_graph(const ModelConfig& cfg) {
    const Dims d = derive(cfg);
    GraphBuilder b;
    b.g.config = cfg;
    const int64_t L = cfg.llm.layers;      // deepest LLM trunk layer is dead weight
    const int64_t AR = int64_t(cfg.ae.layers) * cfg.flow_steps;
    const int64_t FS = cfg.flow_steps;

    // --- vision encoder ---------------------------------------------------
    b.source("patches", Stage::VE, d.ve_n, cfg.ve.patch_in);
    {
        Node& n = b.gemm("ve.embed", Stage::VE, 1, d.ve_n, cfg.ve.patch_in, d.ve_w,
                         {"patches"}, WeightBinding::Shared, true);
        n.epilogue = {epi(EpilogueOp::Bias)};
        n.prologue = "img2col";
    }
    b.rms_stats("ve.ln1", Stage::VE, cfg.ve.layers, "ve.embed?ve.fc2");
    {
        Node& n = b.gemm("ve.qkv", Stage::VE, cfg.ve.layers, d.ve_n, d.ve_w, d.ve_qkv_m,
                         {"ve.embed?ve.fc2", "ve.ln1"}, WeightBinding::PerInstance, true);
        n.epilogue = {epi(EpilogueOp::RmsScale), epi(EpilogueOp::Bias)};
    }
    b.attention("ve.attn", Stage::VE, cfg.ve.layers, cfg.ve.heads, int(d.ve_attn_q),
                int(d.ve_attn_q), cfg.ve.head_dim, cfg.ve.heads,
                {"ve.qkv" + range(0, d.ve_w), "ve.qkv" + range(d.ve_w, 2 * d.ve_w),
                 "ve.qkv" + range(2 * d.ve_w, 3 * d.ve_w)});
    {
        Node& n = b.gemm("ve.proj", Stage::VE, cfg.ve.layers, d.ve_n, d.ve_w, d.ve_w,
                         {"ve.attn", "ve.embed?ve.fc2"}, WeightBinding::PerInstance, true);
        n.epilogue = {epi(EpilogueOp::Bias), epi_residual(1.0)};
    }
    b.rms_stats("ve.ln2", Stage::VE, cfg.ve.layers, "ve.proj");
    {
        Node& n = b.gemm("ve.fc1", Stage::VE, cfg.ve.layers, d.ve_n, d.ve_w, cfg.ve.mlp,
                         {"ve.proj", "ve.ln2"}, WeightBinding::PerInstance, true);
        n.epilogue = {epi(EpilogueOp::RmsScale), epi(EpilogueOp::Bias),
                      epi(EpilogueOp::Gelu)};
    }
    {
        Node& n = b.gemm("ve.fc2", Stage::VE, cfg.ve.layers, d.ve_n, cfg.ve.mlp, d.ve_w,
                         {"ve.fc1", "ve.proj"}, WeightBinding::PerInstance, true);
        n.epilogue = {epi(EpilogueOp::Bias), epi_residual(1.0)};
    }
    b.rms_stats("ve.ln_out", Stage::VE, 1, "ve.fc2@last");

    // --- language model ---------------------------------------------------
    {
        Node& n = b.gemm("llm.proj_in", Stage::LLM, 1, d.ve_n, d.ve_w, d.llm_w,
                         {"ve.fc2@last", "ve.ln_out"}, WeightBinding::Shared, true);
        n.epilogue = {epi(EpilogueOp::RmsScale), epi(EpilogueOp::Bias)};
    }
    // Text tokens arrive already embedded at trunk width; they join the
    // projected image tokens along the row axis to form the full prefix.
    std::string trunk = "llm.proj_in";
    if (cfg.prompt_tokens > 0) {
        b.source("prompt", Stage::LLM, cfg.prompt_tokens, d.llm_w);
        b.concat("llm.tokens", Stage::LLM, 1, ConcatAxis::Rows,
                 {"llm.proj_in", "prompt"});
        trunk = "llm.tokens";
    }
    b.rms_stats("llm.ln1", Stage::LLM, L, trunk + "?llm.down");
    {
        Node& n = b.gemm("llm.qkv", Stage::LLM, L, d.llm_n, d.llm_w, d.llm_qkv_m,
                         {trunk + "?llm.down", "llm.ln1"}, WeightBinding::PerInstance,
                         false);
        n.epilogue = {epi(EpilogueOp::RmsScale),
                      epi_rope(cfg.llm.head_dim, 0,
                               {{0, d.llm_q}, {d.llm_q, d.llm_q + d.llm_kv}})};
    }
    b.attention("llm.attn", Stage::LLM, L - 1, cfg.llm.q_heads, int(d.llm_n),
                int(d.llm_n), cfg.llm.head_dim, cfg.llm.kv_heads,
                {"llm.qkv" + range(0, d.llm_q),
                 "llm.qkv" + range(d.llm_q, d.llm_q + d.llm_kv),
                 "llm.qkv" + range(d.llm_q + d.llm_kv, d.llm_qkv_m)});
    {
        Node& n = b.gemm("llm.proj", Stage::LLM, L - 1, d.llm_n, d.llm_q, d.llm_w,
                         {"llm.attn", trunk + "?llm.down"},
                         WeightBinding::PerInstance, false);
        n.epilogue = {epi_residual(1.0)};
    }
    b.rms_stats("llm.ln2", Stage::LLM, L - 1, "llm.proj");
    {
        Node& n = b.add("llm.ffn", NodeKind::FusedGatedGemm, Stage::LLM, L - 1,
                        {"llm.proj", "llm.ln2"});
        n.shape = {d.llm_n, d.llm_w, d.llm_ffn_m};
        n.weight = WeightBinding::PerInstance;
        n.epilogue = {epi(EpilogueOp::RmsScale), epi(EpilogueOp::GeluGate)};
    }
    {
        Node& n = b.gemm("llm.down", Stage::LLM, L - 1, d.llm_n, cfg.llm.mlp, d.llm_w,
                         {"llm.ffn", "llm.proj"}, WeightBinding::PerInstance, false);
        n.epilogue = {epi_residual(1.0)};
    }

    // --- action expert ----------------------------------------------------
    b.source("state", Stage::AE, 1, d.state);
    b.source("noise", Stage::AE, d.chunk, d.act);
    {
        Node& n = b.gemm("ae.state_proj", Stage::AE, 1, 1, d.state, d.ae_w, {"state"},
                         WeightBinding::Shared, true);
        n.epilogue = {epi(EpilogueOp::Bias)};
    }
    {
        // Action projection with the flow-time embedding folded in: the
        // per-step time branch survives only as a bias-table row.
        Node& n = b.gemm("ae.action_proj", Stage::AE, FS, d.chunk, d.act, d.ae_w,
                         {"noise?ae.head"}, WeightBinding::Shared, false);
        n.epilogue = {epi(EpilogueOp::SiluBias)};
        n.has_bias_table = true;
    }
    b.gemm("ae.action_out", Stage::AE, FS, d.chunk, d.ae_w, d.ae_w, {"ae.action_proj"},
           WeightBinding::Shared, true)
        .epilogue = {epi(EpilogueOp::Bias)};
    b.concat("ae.suffix", Stage::AE, FS, ConcatAxis::Rows,
             {"ae.state_proj@div", "ae.action_out"});
    b.rms_stats("ae.ln1", Stage::AE, AR, "ae.suffix?ae.down");
    {
        Node& n = b.gemm("ae.qkv", Stage::AE, AR, d.ae_n, d.ae_w, d.ae_qkv_m,
                         {"ae.suffix?ae.down", "ae.ln1"}, WeightBinding::PerLayer, false);
        n.layer_count = cfg.ae.layers;
        n.epilogue = {epi(EpilogueOp::RmsScale),
                      epi_rope(cfg.ae.head_dim, d.prefix,
                               {{0, d.ae_q}, {d.ae_q, d.ae_q + d.ae_kv_cols}})};
    }
    b.concat("ae.kcat", Stage::AE, AR, ConcatAxis::Rows,
             {"llm.qkv@mod" + range(d.llm_q, d.llm_q + d.llm_kv),
              "ae.qkv" + range(d.ae_q, d.ae_q + d.ae_kv_cols)});
    b.concat("ae.vcat", Stage::AE, AR, ConcatAxis::Rows,
             {"llm.qkv@mod" + range(d.llm_q + d.llm_kv, d.llm_qkv_m),
              "ae.qkv" + range(d.ae_q + d.ae_kv_cols, d.ae_qkv_m)});
    b.attention("ae.attn", Stage::AE, AR, cfg.ae.q_heads, int(d.ae_n), int(d.ae_kv_len),
                cfg.ae.head_dim, cfg.ae.kv_heads,
                {"ae.qkv" + range(0, d.ae_q), "ae.kcat", "ae.vcat"});
    {
        Node& n = b.gemm("ae.proj", Stage::AE, AR, d.ae_n, d.ae_q, d.ae_w,
                         {"ae.attn", "ae.suffix?ae.down"}, WeightBinding::PerLayer,
                         false);
        n.layer_count = cfg.ae.layers;
        n.epilogue = {epi_residual(1.0)};
    }
    b.rms_stats("ae.ln2", Stage::AE, AR, "ae.proj");
    {
        Node& n = b.add("ae.ffn", NodeKind::FusedGatedGemm, Stage::AE, AR,
                        {"ae.proj", "ae.ln2"});
        n.shape = {d.ae_n, d.ae_w, d.ae_ffn_m};
        n.weight = WeightBinding::PerLayer;
        n.layer_count = cfg.ae.layers;
        n.epilogue = {epi(EpilogueOp::RmsScale), epi(EpilogueOp::GeluGate)};
    }
    {
        Node& n = b.gemm("ae.down", Stage::AE, AR, d.ae_n, cfg.ae.mlp, d.ae_w,
                         {"ae.ffn", "ae.proj"}, WeightBinding::PerLayer, false);
        n.layer_count = cfg.ae.layers;
        n.epilogue = {epi_residual(1.0)};
    }
    b.slice_rows("ae.act_rows", Stage::AE, FS, "ae.down@last", 1, d.ae_n);
    b.rms_stats("ae.ln_out", Stage::AE, FS, "ae.act_rows");
    {
        // Velocity head with the Euler integration step fused as a scaled
        // residual on the carried action estimate.
        Node& n = b.gemm("ae.head", Stage::AE, FS, d.chunk, d.ae_w, d.act,
                         {"ae.act_rows", "ae.ln_out", "noise?ae.head"},
                         WeightBinding::Shared, true);
        n.epilogue = {epi(EpilogueOp::RmsScale), epi(EpilogueOp::Bias),
                      epi_residual(1.0 / FS)};
    }
    b.g.output = "ae.head";

    check_full_scale_shapes(b.g, cfg);
    return b.g;
}

Graph build_pi0_graph_naive(const ModelConfig& cfg) {
    const Dims d = derive(cfg);
    GraphBuilder b;
    b.g.config = cfg;
    const int64_t L = cfg.llm.layers;
    const int64_t AR = int64_t(cfg.ae.layers) * cfg.flow_steps;
    const int64_t FS = cfg.flow_steps;
    const int64_t AL = cfg.ae.layers;

    // --- vision encoder ---------------------------------------------------
    b.source("patches", Stage::VE, d.ve_n, cfg.ve.patch_in);
    {
        Node& n = b.gemm("ve.embed", Stage::VE, 1, d.ve_n, cfg.ve.patch_in, d.ve_w,
                         {"patches"}, WeightBinding::Shared, true);
        n.epilogue = {epi(EpilogueOp::Bias)};
        n.prologue = "img2col";
    }
    b.rms_norm("ve.ln1", Stage::VE, cfg.ve.layers, "ve.embed?ve.add2",
               WeightBinding::PerInstance, 0);
    for (const char* id : {"ve.q", "ve.k", "ve.v"})
        b.gemm(id, Stage::VE, cfg.ve.layers, d.ve_n, d.ve_w, d.ve_w, {"ve.ln1"},
               WeightBinding::PerInstance, true)
            .epilogue = {epi(EpilogueOp::Bias)};
    b.attention("ve.attn", Stage::VE, cfg.ve.layers, cfg.ve.heads, int(d.ve_attn_q),
                int(d.ve_attn_q), cfg.ve.head_dim, cfg.ve.heads,
                {"ve.q", "ve.k", "ve.v"});
    b.gemm("ve.proj", Stage::VE, cfg.ve.layers, d.ve_n, d.ve_w, d.ve_w, {"ve.attn"},
           WeightBinding::PerInstance, true)
        .epilogue = {epi(EpilogueOp::Bias)};
    b.scalar("ve.add1", Stage::VE, cfg.ve.layers, ScalarOp::Residual,
             {"ve.embed?ve.add2", "ve.proj"});
    b.rms_norm("ve.ln2", Stage::VE, cfg.ve.layers, "ve.add1", WeightBinding::PerInstance,
               0);
    b.gemm("ve.fc1", Stage::VE, cfg.ve.layers, d.ve_n, d.ve_w, cfg.ve.mlp, {"ve.ln2"},
           WeightBinding::PerInstance, true)
        .epilogue = {epi(EpilogueOp::Bias)};
    b.scalar("ve.gelu", Stage::VE, cfg.ve.layers, ScalarOp::Gelu, {"ve.fc1"});
    b.gemm("ve.fc2", Stage::VE, cfg.ve.layers, d.ve_n, cfg.ve.mlp, d.ve_w, {"ve.gelu"},
           WeightBinding::PerInstance, true)
        .epilogue = {epi(EpilogueOp::Bias)};
    b.scalar("ve.add2", Stage::VE, cfg.ve.layers, ScalarOp::Residual,
             {"ve.add1", "ve.fc2"});
    b.rms_norm("ve.ln_out", Stage::VE, 1, "ve.add2@last", WeightBinding::Shared, 0);

    // --- language model ---------------------------------------------------
    b.gemm("llm.proj_in", Stage::LLM, 1, d.ve_n, d.ve_w, d.llm_w, {"ve.ln_out"},
           WeightBinding::Shared, true)
        .epilogue = {epi(EpilogueOp::Bias)};
    // Text tokens arrive already embedded at trunk width; they join the
    // projected image tokens along the row axis to form the full prefix.
    std::string trunk = "llm.proj_in";
    if (cfg.prompt_tokens > 0) {
        b.source("prompt", Stage::LLM, cfg.prompt_tokens, d.llm_w);
        b.concat("llm.tokens", Stage::LLM, 1, ConcatAxis::Rows,
                 {"llm.proj_in", "prompt"});
        trunk = "llm.tokens";
    }
    b.rms_norm("llm.ln1", Stage::LLM, L, trunk + "?llm.add2",
               WeightBinding::PerInstance, 0);
    {
        Node& n = b.gemm("llm.q", Stage::LLM, L, d.llm_n, d.llm_w, d.llm_q, {"llm.ln1"},
                         WeightBinding::PerInstance, false);
        n.epilogue = {epi_rope(cfg.llm.head_dim, 0, {{0, d.llm_q}})};
    }
    {
        Node& n = b.gemm("llm.k", Stage::LLM, L, d.llm_n, d.llm_w, d.llm_kv,
                         {"llm.ln1"}, WeightBinding::PerInstance, false);
        n.epilogue = {epi_rope(cfg.llm.head_dim, 0, {{0, d.llm_kv}})};
    }
    b.gemm("llm.v", Stage::LLM, L, d.llm_n, d.llm_w, d.llm_kv, {"llm.ln1"},
           WeightBinding::PerInstance, false);
    b.attention("llm.attn", Stage::LLM, L, cfg.llm.q_heads, int(d.llm_n), int(d.llm_n),
                cfg.llm.head_dim, cfg.llm.kv_heads, {"llm.q", "llm.k", "llm.v"});
    b.gemm("llm.proj", Stage::LLM, L, d.llm_n, d.llm_q, d.llm_w, {"llm.attn"},
           WeightBinding::PerInstance, false);
    b.scalar("llm.add1", Stage::LLM, L, ScalarOp::Residual,
             {trunk + "?llm.add2", "llm.proj"});
    b.rms_norm("llm.ln2", Stage::LLM, L, "llm.add1", WeightBinding::PerInstance, 0);
    b.gemm("llm.up", Stage::LLM, L, d.llm_n, d.llm_w, cfg.llm.mlp, {"llm.ln2"},
           WeightBinding::PerInstance, false);
    b.gemm("llm.gate", Stage::LLM, L, d.llm_n, d.llm_w, cfg.llm.mlp, {"llm.ln2"},
           WeightBinding::PerInstance, false);
    b.scalar("llm.gate_act", Stage::LLM, L, ScalarOp::Gelu, {"llm.gate"});
    b.scalar("llm.mul", Stage::LLM, L, ScalarOp::Mul, {"llm.up", "llm.gate_act"});
    b.gemm("llm.down", Stage::LLM, L, d.llm_n, cfg.llm.mlp, d.llm_w, {"llm.mul"},
           WeightBinding::PerInstance, false);
    b.scalar("llm.add2", Stage::LLM, L, ScalarOp::Residual, {"llm.add1", "llm.down"});

    // --- action expert ----------------------------------------------------
    b.source("state", Stage::AE, 1, d.state);
    b.source("noise", Stage::AE, d.chunk, d.act);
    b.source("ae.time", Stage::AE, 1, d.t_dim).time_source = true;
    b.g.nodes.back().repeat = FS;
    b.gemm("ae.state_proj", Stage::AE, 1, 1, d.state, d.ae_w, {"state"},
           WeightBinding::Shared, true)
        .epilogue = {epi(EpilogueOp::Bias)};
    b.gemm("ae.act_in", Stage::AE, FS, d.chunk, d.act, d.ae_w, {"noise?ae.euler"},
           WeightBinding::Shared, true)
        .epilogue = {epi(EpilogueOp::Bias)};
    b.concat("ae.tcat", Stage::AE, FS, ConcatAxis::Cols, {"ae.time", "ae.act_in"});
    b.gemm("ae.mlp_in", Stage::AE, FS, d.chunk, d.t_dim + d.ae_w, d.ae_w, {"ae.tcat"},
           WeightBinding::Shared, true)
        .epilogue = {epi(EpilogueOp::Bias)};
    b.scalar("ae.mlp_act", Stage::AE, FS, ScalarOp::Silu, {"ae.mlp_in"});
    b.gemm("ae.mlp_out", Stage::AE, FS, d.chunk, d.ae_w, d.ae_w, {"ae.mlp_act"},
           WeightBinding::Shared, true)
        .epilogue = {epi(EpilogueOp::Bias)};
    b.concat("ae.suffix", Stage::AE, FS, ConcatAxis::Rows,
             {"ae.state_proj@div", "ae.mlp_out"});
    b.rms_norm("ae.ln1", Stage::AE, AR, "ae.suffix?ae.add2", WeightBinding::PerLayer,
               AL);
    {
        Node& n = b.gemm("ae.q", Stage::AE, AR, d.ae_n, d.ae_w, d.ae_q, {"ae.ln1"},
                         WeightBinding::PerLayer, false);
        n.layer_count = AL;
        n.epilogue = {epi_rope(cfg.ae.head_dim, d.prefix, {{0, d.ae_q}})};
    }
    {
        Node& n = b.gemm("ae.k", Stage::AE, AR, d.ae_n, d.ae_w, d.ae_kv_cols,
                         {"ae.ln1"}, WeightBinding::PerLayer, false);
        n.layer_count = AL;
        n.epilogue = {epi_rope(cfg.ae.head_dim, d.prefix, {{0, d.ae_kv_cols}})};
    }
    {
        Node& n = b.gemm("ae.v", Stage::AE, AR, d.ae_n, d.ae_w, d.ae_kv_cols,
                         {"ae.ln1"}, WeightBinding::PerLayer, false);
        n.layer_count = AL;
    }
    b.concat("ae.kcat", Stage::AE, AR, ConcatAxis::Rows,
             {"llm.k@mod", "ae.k"});
    b.concat("ae.vcat", Stage::AE, AR, ConcatAxis::Rows,
             {"llm.v@mod", "ae.v"});
    b.attention("ae.attn", Stage::AE, AR, cfg.ae.q_heads, int(d.ae_n), int(d.ae_kv_len),
                cfg.ae.head_dim, cfg.ae.kv_heads, {"ae.q", "ae.kcat", "ae.vcat"});
    {
        Node& n = b.gemm("ae.proj", Stage::AE, AR, d.ae_n, d.ae_q, d.ae_w, {"ae.attn"},
                         WeightBinding::PerLayer, false);
        n.layer_count = AL;
    }
    b.scalar("ae.add1", Stage::AE, AR, ScalarOp::Residual,
             {"ae.suffix?ae.add2", "ae.proj"});
    b.rms_norm("ae.ln2", Stage::AE, AR, "ae.add1", WeightBinding::PerLayer, AL);
    {
        Node& n = b.gemm("ae.up", Stage::AE, AR, d.ae_n, d.ae_w, cfg.ae.mlp, {"ae.ln2"},
                         WeightBinding::PerLayer, false);
        n.layer_count = AL;
    }
    {
        Node& n = b.gemm("ae.gate", Stage::AE, AR, d.ae_n, d.ae_w, cfg.ae.mlp,
                         {"ae.ln2"}, WeightBinding::PerLayer, false);
        n.layer_count = AL;
    }
    b.scalar("ae.gate_act", Stage::AE, AR, ScalarOp::Gelu, {"ae.gate"});
    b.scalar("ae.mul", Stage::AE, AR, ScalarOp::Mul, {"ae.up", "ae.gate_act"});
    {
        Node& n = b.gemm("ae.down", Stage::AE, AR, d.ae_n, cfg.ae.mlp, d.ae_w,
                         {"ae.mul"}, WeightBinding::PerLayer, false);
        n.layer_count = AL;
    }
    b.scalar("ae.add2", Stage::AE, AR, ScalarOp::Residual, {"ae.add1", "ae.down"});
    b.slice_rows("ae.act_rows", Stage::AE, FS, "ae.add2@last", 1, d.ae_n);
    b.rms_norm("ae.ln_out", Stage::AE, FS, "ae.act_rows", WeightBinding::Shared, 0);
    b.gemm("ae.head", Stage::AE, FS, d.chunk, d.ae_w, d.act, {"ae.ln_out"},
           WeightBinding::Shared, true)
        .epilogue = {epi(EpilogueOp::Bias)};
    {
        Node& n = b.scalar("ae.euler", Stage::AE, FS, ScalarOp::Residual,
                           {"noise?ae.euler", "ae.head"});
        n.scale = 1.0 / FS;
    }
    b.g.output = "ae.euler";
    return b.g;
}

}  // namespace rtvla

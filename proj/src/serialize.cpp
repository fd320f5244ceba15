#include "rtvla/serialize.hpp"

#include "rtvla/tensor.hpp"

#include "json_util.hpp"

#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

namespace rtvla {

using nlohmann::ordered_json;

namespace {

// ---- enum <-> string ------------------------------------------------------

template <typename T>
T enum_from(const std::string& s, std::initializer_list<T> all, const std::string& where) {
    for (T v : all)
        if (to_string(v) == s) return v;
    throw ParseError(where + ": unknown value '" + s + "'");
}

Stage stage_from(const std::string& s, const std::string& where) {
    return enum_from<Stage>(s, {Stage::VE, Stage::LLM, Stage::AE}, where);
}

NodeKind kind_from(const std::string& s, const std::string& where) {
    return enum_from<NodeKind>(s,
                               {NodeKind::Source, NodeKind::Gemm, NodeKind::FusedGatedGemm,
                                NodeKind::Attention, NodeKind::Scalar, NodeKind::RmsStats,
                                NodeKind::Concat, NodeKind::Slice},
                               where);
}

ScalarOp scalar_op_from(const std::string& s, const std::string& where) {
    return enum_from<ScalarOp>(s,
                               {ScalarOp::RmsNorm, ScalarOp::Bias, ScalarOp::Residual,
                                ScalarOp::Gelu, ScalarOp::Silu, ScalarOp::Softmax,
                                ScalarOp::Mul},
                               where);
}

EpilogueOp epi_op_from(const std::string& s, const std::string& where) {
    return enum_from<EpilogueOp>(s,
                                 {EpilogueOp::Bias, EpilogueOp::Residual,
                                  EpilogueOp::RmsScale, EpilogueOp::Rope, EpilogueOp::Gelu,
                                  EpilogueOp::Silu, EpilogueOp::GeluGate,
                                  EpilogueOp::SiluBias, EpilogueOp::Softmax},
                                 where);
}

WeightBinding binding_from(const std::string& s, const std::string& where) {
    return enum_from<WeightBinding>(s,
                                    {WeightBinding::None, WeightBinding::Shared,
                                     WeightBinding::PerInstance, WeightBinding::PerLayer},
                                    where);
}

using jsonio::Obj;

// ---- config ----------------------------------------------------------------

ordered_json config_json(const ModelConfig& c) {
    ordered_json j;
    j["views"] = c.views;
    j["prompt_tokens"] = c.prompt_tokens;
    j["tokens_per_view"] = c.tokens_per_view;
    j["chunk_len"] = c.chunk_len;
    j["flow_steps"] = c.flow_steps;
    j["ve"] = {{"layers", c.ve.layers},   {"width", c.ve.width}, {"heads", c.ve.heads},
               {"head_dim", c.ve.head_dim}, {"mlp", c.ve.mlp},   {"patch_in", c.ve.patch_in}};
    j["llm"] = {{"layers", c.llm.layers},     {"width", c.llm.width},
                {"q_heads", c.llm.q_heads},   {"head_dim", c.llm.head_dim},
                {"kv_heads", c.llm.kv_heads}, {"mlp", c.llm.mlp}};
    j["ae"] = {{"layers", c.ae.layers},     {"width", c.ae.width},
               {"q_heads", c.ae.q_heads},   {"head_dim", c.ae.head_dim},
               {"kv_heads", c.ae.kv_heads}, {"mlp", c.ae.mlp},
               {"action_dim", c.ae.action_dim}, {"state_dim", c.ae.state_dim}};
    return j;
}

ModelConfig config_from(const ordered_json& j) {
    Obj o(j, "config");
    ModelConfig c;
    c.views = o.num<int>("views", c.views, true);
    c.prompt_tokens = o.num<int>("prompt_tokens", c.prompt_tokens);
    c.tokens_per_view = o.num<int>("tokens_per_view", c.tokens_per_view);
    c.chunk_len = o.num<int>("chunk_len", c.chunk_len);
    c.flow_steps = o.num<int>("flow_steps", c.flow_steps);
    if (const ordered_json* v = o.get("ve", true)) {
        Obj s(*v, "config.ve");
        c.ve.layers = s.num<int>("layers", c.ve.layers, true);
        c.ve.width = s.num<int>("width", c.ve.width, true);
        c.ve.heads = s.num<int>("heads", c.ve.heads, true);
        c.ve.head_dim = s.num<int>("head_dim", c.ve.head_dim, true);
        c.ve.mlp = s.num<int>("mlp", c.ve.mlp, true);
        c.ve.patch_in = s.num<int>("patch_in", c.ve.patch_in, true);
        s.finish();
    }
    if (const ordered_json* v = o.get("llm", true)) {
        Obj s(*v, "config.llm");
        c.llm.layers = s.num<int>("layers", c.llm.layers, true);
        c.llm.width = s.num<int>("width", c.llm.width, true);
        c.llm.q_heads = s.num<int>("q_heads", c.llm.q_heads, true);
        c.llm.head_dim = s.num<int>("head_dim", c.llm.head_dim, true);
        c.llm.kv_heads = s.num<int>("kv_heads", c.llm.kv_heads, true);
        c.llm.mlp = s.num<int>("mlp", c.llm.mlp, true);
        s.finish();
    }
    if (const ordered_json* v = o.get("ae", true)) {
        Obj s(*v, "config.ae");
        c.ae.layers = s.num<int>("layers", c.ae.layers, true);
        c.ae.width = s.num<int>("width", c.ae.width, true);
        c.ae.q_heads = s.num<int>("q_heads", c.ae.q_heads, true);
        c.ae.head_dim = s.num<int>("head_dim", c.ae.head_dim, true);
        c.ae.kv_heads = s.num<int>("kv_heads", c.ae.kv_heads, true);
        c.ae.mlp = s.num<int>("mlp", c.ae.mlp, true);
        c.ae.action_dim = s.num<int>("action_dim", c.ae.action_dim, true);
        c.ae.state_dim = s.num<int>("state_dim", c.ae.state_dim, true);
        s.finish();
    }
    o.finish();
    return c;
}

// ---- nodes -----------------------------------------------------------------

ordered_json epilogue_json(const EpilogueEntry& e) {
    ordered_json j;
    j["op"] = to_string(e.op);
    if (e.op == EpilogueOp::Residual && e.scale != 1.0) j["scale"] = e.scale;
    if (e.op == EpilogueOp::Rope) {
        j["head_dim"] = e.rope_head_dim;
        j["pos_offset"] = e.rope_pos_offset;
        ordered_json ranges = ordered_json::array();
        for (const auto& r : e.rope_ranges) ranges.push_back({r[0], r[1]});
        j["ranges"] = std::move(ranges);
    }
    return j;
}

EpilogueEntry epilogue_from(const ordered_json& j, const std::string& where) {
    Obj o(j, where);
    EpilogueEntry e;
    e.op = epi_op_from(o.str("op", "", true), where + ".op");
    e.scale = o.num<double>("scale", 1.0);
    e.rope_head_dim = o.num<int>("head_dim", 0);
    e.rope_pos_offset = o.num<int>("pos_offset", 0);
    if (const ordered_json* v = o.get("ranges", false)) {
        if (!v->is_array()) throw ParseError(where + ".ranges: expected an array");
        for (const auto& r : *v) {
            if (!r.is_array() || r.size() != 2)
                throw ParseError(where + ".ranges: expected [lo, hi] pairs");
            e.rope_ranges.push_back({r[0].get<int64_t>(), r[1].get<int64_t>()});
        }
    }
    o.finish();
    return e;
}

ordered_json node_json(const Node& n) {
    ordered_json j;
    j["id"] = n.id;
    j["kind"] = to_string(n.kind);
    j["stage"] = to_string(n.stage);
    j["repeat"] = n.repeat;
    switch (n.kind) {
        case NodeKind::Source:
            j["rows"] = n.rows;
            j["cols"] = n.cols;
            if (n.time_source) j["time_source"] = true;
            break;
        case NodeKind::Gemm:
        case NodeKind::FusedGatedGemm:
            j["shape"] = {{"n", n.shape.n}, {"k", n.shape.k}, {"m", n.shape.m}};
            break;
        case NodeKind::Attention:
            j["attn"] = {{"heads", n.attn.heads},
                         {"q_tokens", n.attn.q_tokens},
                         {"kv_tokens", n.attn.kv_tokens},
                         {"head_dim", n.attn.head_dim},
                         {"kv_heads", n.attn.kv_heads}};
            break;
        case NodeKind::Scalar:
            j["op"] = to_string(n.op);
            if (n.op == ScalarOp::Residual && n.scale != 1.0) j["scale"] = n.scale;
            if (n.op == ScalarOp::RmsNorm) j["eps"] = n.eps;
            break;
        case NodeKind::RmsStats:
            j["eps"] = n.eps;
            break;
        case NodeKind::Concat:
            j["axis"] = n.axis == ConcatAxis::Rows ? "rows" : "cols";
            break;
        case NodeKind::Slice:
            j["lo"] = n.lo;
            j["hi"] = n.hi;
            break;
    }
    if (n.weight != WeightBinding::None) {
        j["weight"] = to_string(n.weight);
        if (n.weight == WeightBinding::PerLayer) j["layer_count"] = n.layer_count;
    }
    if (n.has_bias) j["has_bias"] = true;
    if (n.has_bias_table) j["has_bias_table"] = true;
    if (!n.prologue.empty()) j["prologue"] = n.prologue;
    if (!n.epilogue.empty()) {
        ordered_json arr = ordered_json::array();
        for (const auto& e : n.epilogue) arr.push_back(epilogue_json(e));
        j["epilogue"] = std::move(arr);
    }
    ordered_json ins = ordered_json::array();
    for (const auto& in : n.inputs) ins.push_back(format_input_ref(in));
    j["inputs"] = std::move(ins);
    return j;
}

Node node_from(const ordered_json& j, const std::string& where) {
    Obj o(j, where);
    Node n;
    n.id = o.str("id", "", true);
    n.kind = kind_from(o.str("kind", "", true), where + ".kind");
    n.stage = stage_from(o.str("stage", "", true), where + ".stage");
    n.repeat = o.num<int64_t>("repeat", 1);
    n.rows = o.num<int64_t>("rows", 0);
    n.cols = o.num<int64_t>("cols", 0);
    n.time_source = o.flag("time_source", false);
    if (const ordered_json* v = o.get("shape", false)) {
        Obj s(*v, where + ".shape");
        n.shape.n = s.num<int64_t>("n", 0, true);
        n.shape.k = s.num<int64_t>("k", 0, true);
        n.shape.m = s.num<int64_t>("m", 0, true);
        s.finish();
    }
    if (const ordered_json* v = o.get("attn", false)) {
        Obj s(*v, where + ".attn");
        n.attn.heads = s.num<int>("heads", 0, true);
        n.attn.q_tokens = s.num<int>("q_tokens", 0, true);
        n.attn.kv_tokens = s.num<int>("kv_tokens", 0, true);
        n.attn.head_dim = s.num<int>("head_dim", 0, true);
        n.attn.kv_heads = s.num<int>("kv_heads", 1);
        s.finish();
    }
    if (n.kind == NodeKind::Scalar)
        n.op = scalar_op_from(o.str("op", "", true), where + ".op");
    n.scale = o.num<double>("scale", 1.0);
    n.eps = o.num<double>("eps", 1e-6);
    std::string axis = o.str("axis", n.kind == NodeKind::Concat ? "cols" : "");
    if (n.kind == NodeKind::Concat) {
        if (axis != "rows" && axis != "cols")
            throw ParseError(where + ".axis: expected 'rows' or 'cols'");
        n.axis = axis == "rows" ? ConcatAxis::Rows : ConcatAxis::Cols;
    }
    n.lo = o.num<int64_t>("lo", 0);
    n.hi = o.num<int64_t>("hi", 0);
    n.weight = binding_from(o.str("weight", "none"), where + ".weight");
    n.layer_count = o.num<int64_t>("layer_count", 0);
    n.has_bias = o.flag("has_bias", false);
    n.has_bias_table = o.flag("has_bias_table", false);
    n.prologue = o.str("prologue", "");
    if (const ordered_json* v = o.get("epilogue", false)) {
        if (!v->is_array()) throw ParseError(where + ".epilogue: expected an array");
        for (size_t i = 0; i < v->size(); ++i)
            n.epilogue.push_back(
                epilogue_from((*v)[i], where + ".epilogue[" + std::to_string(i) + "]"));
    }
    if (const ordered_json* v = o.get("inputs", true)) {
        if (!v->is_array()) throw ParseError(where + ".inputs: expected an array");
        for (const auto& in : *v) {
            if (!in.is_string()) throw ParseError(where + ".inputs: expected strings");
            try {
                n.inputs.push_back(parse_input_ref(in.get<std::string>()));
            } catch (const ShapeError& e) {
                throw ParseError(where + ".inputs: " + e.what());
            }
        }
    }
    o.finish();
    return n;
}

}  // namespace

std::string serialize_graph(const Graph& g) {
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["config"] = config_json(g.config);
    j["output"] = g.output;
    ordered_json nodes = ordered_json::array();
    for (const auto& n : g.nodes) nodes.push_back(node_json(n));
    j["nodes"] = std::move(nodes);
    return j.dump(2) + "\n";
}

Graph parse_graph(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("graph document: ") + e.what());
    }
    Obj o(j, "graph");
    int version = o.num<int>("schema_version", 0, true);
    if (version != kSchemaVersion)
        throw ParseError("graph: unsupported schema_version " + std::to_string(version));
    Graph g;
    if (const ordered_json* v = o.get("config", true)) g.config = config_from(*v);
    g.output = o.str("output", "", true);
    if (const ordered_json* v = o.get("nodes", true)) {
        if (!v->is_array()) throw ParseError("graph.nodes: expected an array");
        for (size_t i = 0; i < v->size(); ++i)
            g.nodes.push_back(node_from((*v)[i], "nodes[" + std::to_string(i) + "]"));
    }
    o.finish();
    return g;
}

void write_text_file(const std::string& path, const std::string& text) {
    namespace fs = std::filesystem;
    fs::path target(path);
    fs::path dir = target.parent_path();
    fs::path tmp = (dir.empty() ? fs::path(".") : dir) /
                   (target.filename().string() + ".tmp." + std::to_string(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out << text;
        if (!out.good()) throw std::runtime_error("short write to '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw std::runtime_error("cannot rename into '" + path + "': " + ec.message());
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace rtvla

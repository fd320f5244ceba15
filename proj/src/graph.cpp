#include "rtvla/graph.hpp"

#include "rtvla/tensor.hpp"

#include <algorithm>
#include <functional>
#include <unordered_map>
#include <unordered_set>

namespace rtvla {

std::string to_string(Stage s) {
    switch (s) {
        case Stage::VE: return "ve";
        case Stage::LLM: return "llm";
        case Stage::AE: return "ae";
    }
    return "?";
}

std::string to_string(NodeKind k) {
    switch (k) {
        case NodeKind::Source: return "source";
        case NodeKind::Gemm: return "gemm";
        case NodeKind::FusedGatedGemm: return "fused_gated_gemm";
        case NodeKind::Attention: return "attention";
        case NodeKind::Scalar: return "scalar";
        case NodeKind::RmsStats: return "rms_stats";
        case NodeKind::Concat: return "concat";
        case NodeKind::Slice: return "slice";
    }
    return "?";
}

std::string to_string(ScalarOp o) {
    switch (o) {
        case ScalarOp::RmsNorm: return "rms_norm";
        case ScalarOp::Bias: return "bias";
        case ScalarOp::Residual: return "residual";
        case ScalarOp::Gelu: return "gelu";
        case ScalarOp::Silu: return "silu";
        case ScalarOp::Softmax: return "softmax";
        case ScalarOp::Mul: return "mul";
    }
    return "?";
}

std::string to_string(EpilogueOp o) {
    switch (o) {
        case EpilogueOp::Bias: return "bias";
        case EpilogueOp::Residual: return "residual";
        case EpilogueOp::RmsScale: return "rms_scale";
        case EpilogueOp::Rope: return "rope";
        case EpilogueOp::Gelu: return "gelu";
        case EpilogueOp::Silu: return "silu";
        case EpilogueOp::GeluGate: return "gelu_gate";
        case EpilogueOp::SiluBias: return "silu_bias";
        case EpilogueOp::Softmax: return "softmax";
    }
    return "?";
}

std::string to_string(WeightBinding w) {
    switch (w) {
        case WeightBinding::None: return "none";
        case WeightBinding::Shared: return "shared";
        case WeightBinding::PerInstance: return "per_instance";
        case WeightBinding::PerLayer: return "per_layer";
    }
    return "?";
}

InputRef parse_input_ref(const std::string& text) {
    InputRef r;
    std::string body = text;
    auto lb = body.find('[');
    if (lb != std::string::npos) {
        if (body.back() != ']') throw ShapeError("input ref: bad slice in '" + text + "'");
        std::string slice = body.substr(lb + 1, body.size() - lb - 2);
        auto colon = slice.find(':');
        if (colon == std::string::npos) throw ShapeError("input ref: bad slice in '" + text + "'");
        r.slice_lo = std::stoll(slice.substr(0, colon));
        r.slice_hi = std::stoll(slice.substr(colon + 1));
        body = body.substr(0, lb);
    }
    auto qm = body.find('?');
    if (qm != std::string::npos) {
        r.kind = RefKind::EntryOr;
        r.id = body.substr(0, qm);
        r.carry_id = body.substr(qm + 1);
        return r;
    }
    auto at = body.find('@');
    if (at == std::string::npos) {
        r.id = body;
        return r;
    }
    r.id = body.substr(0, at);
    std::string tag = body.substr(at + 1);
    if (tag == "prev") r.kind = RefKind::Prev;
    else if (tag == "mod") r.kind = RefKind::Mod;
    else if (tag == "div") r.kind = RefKind::Div;
    else if (tag == "last") r.kind = RefKind::Last;
    else throw ShapeError("input ref: unknown tag '@" + tag + "' in '" + text + "'");
    return r;
}

std::string format_input_ref(const InputRef& ref) {
    std::string s = ref.id;
    switch (ref.kind) {
        case RefKind::Plain: break;
        case RefKind::Prev: s += "@prev"; break;
        case RefKind::Mod: s += "@mod"; break;
        case RefKind::Div: s += "@div"; break;
        case RefKind::Last: s += "@last"; break;
        case RefKind::EntryOr: s += "?" + ref.carry_id; break;
    }
    if (ref.sliced())
        s += "[" + std::to_string(ref.slice_lo) + ":" + std::to_string(ref.slice_hi) + "]";
    return s;
}

const Node* Graph::find(const std::string& id) const {
    for (const auto& n : nodes)
        if (n.id == id) return &n;
    return nullptr;
}

Node* Graph::find(const std::string& id) {
    for (auto& n : nodes)
        if (n.id == id) return &n;
    return nullptr;
}

int Graph::index_of(const std::string& id) const {
    for (size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].id == id) return int(i);
    return -1;
}

int64_t count_gemm_instances(const Graph& g) {
    int64_t total = 0;
    for (const auto& n : g.nodes) {
        if (n.kind == NodeKind::Gemm || n.kind == NodeKind::FusedGatedGemm) total += n.repeat;
        else if (n.kind == NodeKind::Attention) total += 2 * n.repeat;
    }
    return total;
}

namespace {

std::pair<int64_t, int64_t> ref_shape(const Graph& g, const InputRef& r,
                                      std::unordered_map<std::string, std::pair<int64_t, int64_t>>& memo);

std::pair<int64_t, int64_t> shape_of(const Graph& g, const Node& n,
                                     std::unordered_map<std::string, std::pair<int64_t, int64_t>>& memo) {
    auto it = memo.find(n.id);
    if (it != memo.end()) return it->second;
    std::pair<int64_t, int64_t> out{0, 0};
    switch (n.kind) {
        case NodeKind::Source: out = {n.rows, n.cols}; break;
        case NodeKind::Gemm: out = {n.shape.n, n.shape.m}; break;
        case NodeKind::FusedGatedGemm: out = {n.shape.n, n.shape.m / 2}; break;
        case NodeKind::Attention:
            out = {n.attn.q_tokens, int64_t(n.attn.heads) * n.attn.head_dim};
            break;
        case NodeKind::Scalar:
            if (!n.inputs.empty()) out = ref_shape(g, n.inputs[0], memo);
            break;
        case NodeKind::RmsStats:
            if (!n.inputs.empty()) out = {ref_shape(g, n.inputs[0], memo).first, 1};
            break;
        case NodeKind::Slice:
            if (!n.inputs.empty()) out = {n.hi - n.lo, ref_shape(g, n.inputs[0], memo).second};
            break;
        case NodeKind::Concat: {
            int64_t rows = 0, cols = 0;
            for (const auto& in : n.inputs) {
                auto s = ref_shape(g, in, memo);
                if (n.axis == ConcatAxis::Cols) {
                    rows = std::max(rows, s.first);
                    cols += s.second;
                } else {
                    rows += s.first;
                    cols = std::max(cols, s.second);
                }
            }
            out = {rows, cols};
            break;
        }
    }
    memo[n.id] = out;
    return out;
}

std::pair<int64_t, int64_t> ref_shape(const Graph& g, const InputRef& r,
                                      std::unordered_map<std::string, std::pair<int64_t, int64_t>>& memo) {
    const Node* p = g.find(r.id);
    if (!p) return {0, 0};
    auto s = shape_of(g, *p, memo);
    if (r.sliced()) s.second = r.slice_hi - r.slice_lo;
    return s;
}

bool activation_entry(EpilogueOp op) {
    return op == EpilogueOp::Gelu || op == EpilogueOp::Silu || op == EpilogueOp::GeluGate ||
           op == EpilogueOp::SiluBias || op == EpilogueOp::Softmax;
}

}  // namespace

std::pair<int64_t, int64_t> node_output_shape(const Graph& g, const Node& n) {
    std::unordered_map<std::string, std::pair<int64_t, int64_t>> memo;
    return shape_of(g, n, memo);
}

std::vector<std::string> validate(const Graph& g) {
    std::vector<std::string> bad;
    std::unordered_map<std::string, const Node*> byid;
    for (const auto& n : g.nodes) {
        if (!byid.emplace(n.id, &n).second) bad.push_back("duplicate node id '" + n.id + "'");
        if (n.repeat < 1) bad.push_back("node '" + n.id + "': repeat must be >= 1");
    }
    if (!g.output.empty() && !byid.count(g.output))
        bad.push_back("output node '" + g.output + "' not found");

    auto stage_rank = [](Stage s) { return s == Stage::VE ? 0 : (s == Stage::LLM ? 1 : 2); };

    std::unordered_map<std::string, std::pair<int64_t, int64_t>> memo;
    for (const auto& n : g.nodes) {
        for (const auto& in : n.inputs) {
            auto check_producer = [&](const std::string& pid, bool carry) {
                auto it = byid.find(pid);
                if (it == byid.end()) {
                    bad.push_back("node '" + n.id + "': input '" + pid + "' not found");
                    return (const Node*)nullptr;
                }
                const Node* p = it->second;
                if (p->kind != NodeKind::Source && stage_rank(p->stage) > stage_rank(n.stage))
                    bad.push_back("node '" + n.id + "': input '" + pid + "' crosses stages backwards");
                int64_t ra = p->repeat, rb = n.repeat;
                bool ok = true;
                if (carry) ok = ra >= rb - 1;
                else switch (in.kind) {
                    case RefKind::Plain: ok = ra >= rb; break;
                    case RefKind::Prev: ok = ra >= rb - 1; break;
                    case RefKind::Mod:
                    case RefKind::Div: ok = ra > 0 && rb % ra == 0; break;
                    case RefKind::Last: ok = rb > 0 && ra % rb == 0; break;
                    case RefKind::EntryOr: ok = ra > 0 && rb % ra == 0; break;
                }
                if (!ok)
                    bad.push_back("node '" + n.id + "': repeat " + std::to_string(rb) +
                                  " incompatible with input '" + pid + "' repeat " + std::to_string(ra));
                if (in.sliced()) {
                    auto s = shape_of(g, *p, memo);
                    if (in.slice_lo < 0 || in.slice_hi <= in.slice_lo || in.slice_hi > s.second)
                        bad.push_back("node '" + n.id + "': slice [" + std::to_string(in.slice_lo) +
                                      ":" + std::to_string(in.slice_hi) + ") of '" + pid +
                                      "' exceeds producer cols " + std::to_string(s.second));
                }
                return p;
            };
            check_producer(in.id, false);
            if (in.kind == RefKind::EntryOr) check_producer(in.carry_id, true);
        }

        // epilogue rules
        if (!n.epilogue.empty() && !n.gemm_like())
            bad.push_back("node '" + n.id + "': epilogue on non-GEMM node");
        int acts = 0;
        for (const auto& e : n.epilogue) {
            if (activation_entry(e.op)) ++acts;
            if (e.op == EpilogueOp::Softmax)
                bad.push_back("node '" + n.id +
                              "': softmax epilogue is only valid on attention score matmuls, "
                              "which this IR keeps inside Attention nodes");
            if (e.op == EpilogueOp::GeluGate && n.kind != NodeKind::FusedGatedGemm)
                bad.push_back("node '" + n.id + "': gelu_gate epilogue requires a fused gated GEMM");
        }
        if (acts > 1)
            bad.push_back("node '" + n.id + "': more than one activation epilogue entry");
        if (n.kind == NodeKind::FusedGatedGemm && n.shape.m % 2 != 0)
            bad.push_back("node '" + n.id + "': fused gated GEMM m must be even");

        // dataflow shape checks
        if (n.kind == NodeKind::Gemm || n.kind == NodeKind::FusedGatedGemm) {
            if (!n.inputs.empty()) {
                auto s = ref_shape(g, n.inputs[0], memo);
                if (s.second && s.second != n.shape.k)
                    bad.push_back("node '" + n.id + "': k " + std::to_string(n.shape.k) +
                                  " != input '" + n.inputs[0].id + "' cols " + std::to_string(s.second));
                if (s.first && s.first != n.shape.n)
                    bad.push_back("node '" + n.id + "': n " + std::to_string(n.shape.n) +
                                  " != input '" + n.inputs[0].id + "' rows " + std::to_string(s.first));
            }
            auto out = shape_of(g, n, memo);
            size_t slot = 1;
            for (const auto& e : n.epilogue) {
                if (e.op == EpilogueOp::Residual || e.op == EpilogueOp::RmsScale) {
                    if (slot >= n.inputs.size()) {
                        bad.push_back("node '" + n.id + "': epilogue '" + to_string(e.op) +
                                      "' has no matching input operand");
                        continue;
                    }
                    auto s = ref_shape(g, n.inputs[slot], memo);
                    if (e.op == EpilogueOp::Residual && s != out && s.first)
                        bad.push_back("node '" + n.id + "': residual operand shape mismatch");
                    if (e.op == EpilogueOp::RmsScale && s.second != 1 && s.second)
                        bad.push_back("node '" + n.id + "': rms_scale operand must be [n,1] stats");
                    ++slot;
                }
            }
        } else if (n.kind == NodeKind::Attention) {
            if (n.inputs.size() != 3) {
                bad.push_back("node '" + n.id + "': attention needs q,k,v inputs");
            } else {
                auto q = ref_shape(g, n.inputs[0], memo);
                auto k = ref_shape(g, n.inputs[1], memo);
                auto v = ref_shape(g, n.inputs[2], memo);
                int64_t qc = int64_t(n.attn.heads) * n.attn.head_dim;
                int64_t kc = int64_t(n.attn.kv_heads) * n.attn.head_dim;
                if (q.second && q.second != qc)
                    bad.push_back("node '" + n.id + "': q cols " + std::to_string(q.second) +
                                  " != heads*head_dim " + std::to_string(qc));
                if ((k.second && k.second != kc) || (v.second && v.second != kc))
                    bad.push_back("node '" + n.id + "': k/v cols != kv_heads*head_dim");
                if (q.first && q.first != n.attn.q_tokens)
                    bad.push_back("node '" + n.id + "': q rows != q_tokens");
                if (k.first && k.first != n.attn.kv_tokens)
                    bad.push_back("node '" + n.id + "': kv rows " + std::to_string(k.first) +
                                  " != kv_tokens " + std::to_string(n.attn.kv_tokens));
            }
        } else if (n.kind == NodeKind::Slice) {
            if (n.inputs.size() != 1) {
                bad.push_back("node '" + n.id + "': slice wants exactly one input");
            } else {
                auto s = ref_shape(g, n.inputs[0], memo);
                if (n.lo < 0 || n.hi <= n.lo || (s.first && n.hi > s.first))
                    bad.push_back("node '" + n.id + "': row range [" + std::to_string(n.lo) +
                                  ":" + std::to_string(n.hi) + ") exceeds input rows " +
                                  std::to_string(s.first));
            }
        } else if (n.kind == NodeKind::Scalar) {
            size_t want = (n.op == ScalarOp::Residual || n.op == ScalarOp::Mul) ? 2 : 1;
            if (n.inputs.size() != want)
                bad.push_back("node '" + n.id + "': scalar op " + to_string(n.op) + " wants " +
                              std::to_string(want) + " inputs");
            else if (want == 2) {
                auto a = ref_shape(g, n.inputs[0], memo);
                auto b = ref_shape(g, n.inputs[1], memo);
                if (a != b && a.first && b.first)
                    bad.push_back("node '" + n.id + "': operand shapes differ");
            }
        }
    }

    // cycle check over same-iteration edges (carries are time-shifted and excluded)
    std::unordered_map<std::string, int> color;
    std::function<bool(const Node*)> dfs = [&](const Node* n) -> bool {
        int& c = color[n->id];
        if (c == 1) return false;
        if (c == 2) return true;
        c = 1;
        for (const auto& in : n->inputs) {
            if (in.kind == RefKind::Prev) continue;
            const Node* p = g.find(in.id);
            if (p && !dfs(p)) {
                bad.push_back("cycle through node '" + n->id + "'");
                c = 2;
                return false;
            }
        }
        c = 2;
        return true;
    };
    for (const auto& n : g.nodes) dfs(&n);

    return bad;
}

}  // namespace rtvla

#include "rtvla/passes.hpp"

#include "rtvla/builder.hpp"

#include <algorithm>
#include <future>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace rtvla {
namespace {

// ---------------------------------------------------------------------------
// small graph-surgery helpers

// Every node-id mention in a graph: input ids, carry ids, the output id.
template <typename Fn>
void for_each_ref(Graph& g, Fn&& fn) {
    for (auto& n : g.nodes) {
        for (auto& r : n.inputs) {
            fn(r.id);
            if (r.kind == RefKind::EntryOr) fn(r.carry_id);
        }
    }
    fn(g.output);
}

void redirect_refs(Graph& g, const std::string& from, const std::string& to) {
    for_each_ref(g, [&](std::string& id) {
        if (id == from) id = to;
    });
}

// Consumers of `id`: (node index, input slot, via_carry).
struct Use {
    size_t node = 0;
    size_t slot = 0;
    bool carry = false;
};

std::vector<Use> uses_of(const Graph& g, const std::string& id) {
    std::vector<Use> out;
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        const Node& n = g.nodes[i];
        for (size_t s = 0; s < n.inputs.size(); ++s) {
            if (n.inputs[s].id == id) out.push_back({i, s, false});
            if (n.inputs[s].kind == RefKind::EntryOr && n.inputs[s].carry_id == id)
                out.push_back({i, s, true});
        }
    }
    return out;
}

void erase_node(Graph& g, const std::string& id) {
    g.nodes.erase(std::remove_if(g.nodes.begin(), g.nodes.end(),
                                 [&](const Node& n) { return n.id == id; }),
                  g.nodes.end());
}

bool has_activation(const Node& n) {
    for (const auto& e : n.epilogue)
        if (e.op == EpilogueOp::Gelu || e.op == EpilogueOp::Silu ||
            e.op == EpilogueOp::GeluGate || e.op == EpilogueOp::SiluBias ||
            e.op == EpilogueOp::Softmax)
            return true;
    return false;
}

bool has_op(const Node& n, EpilogueOp op) {
    for (const auto& e : n.epilogue)
        if (e.op == op) return true;
    return false;
}

PassResult make_result(const std::string& name, const Graph& before, Graph after) {
    PassResult r;
    r.name = name;
    r.nodes_before = static_cast<int64_t>(before.nodes.size());
    r.nodes_after = static_cast<int64_t>(after.nodes.size());
    r.gemm_before = count_gemm_instances(before);
    r.gemm_after = count_gemm_instances(after);
    r.graph = std::move(after);
    return r;
}

std::string common_prefix(const std::vector<std::string>& ids) {
    if (ids.empty()) return "";
    std::string p = ids[0];
    for (const auto& s : ids) {
        size_t n = 0;
        while (n < p.size() && n < s.size() && p[n] == s[n]) ++n;
        p.resize(n);
    }
    return p;
}

std::string unique_id(const Graph& g, std::string id) {
    while (g.find(id) != nullptr) id += "_f";
    return id;
}

// Gamma/weight instance indexing must agree between a norm and the matrix
// node absorbing it: identical binding shape, or a shared gamma.
bool binding_compatible(const Node& norm, const Node& consumer) {
    if (norm.weight == WeightBinding::Shared) return true;
    if (norm.weight != consumer.weight) return false;
    if (norm.weight == WeightBinding::PerLayer &&
        norm.layer_count != consumer.layer_count)
        return false;
    if (norm.weight == WeightBinding::PerInstance && norm.repeat != consumer.repeat)
        return false;
    return true;
}

}  // namespace

std::string WeightRule::describe() const {
    std::ostringstream os;
    switch (kind) {
        case RuleKind::Copy:
            os << "copy " << dst;
            break;
        case RuleKind::PremultiplyDiag:
            os << "premultiply rows of " << dst << " by scales of " << srcs.at(1);
            break;
        case RuleKind::ConcatCols: {
            os << "concat columns of";
            for (const auto& s : srcs) os << ' ' << s;
            os << " into " << dst;
            break;
        }
        case RuleKind::ComposeTimeFold:
            os << "compose " << srcs.at(0) << " with " << srcs.at(1) << " into " << dst
               << " (bias table, " << steps << " rows)";
            break;
        case RuleKind::GammaStrip:
            os << "strip scales from " << dst;
            break;
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// pass 1: absorb_rms_affine
//
// A learned per-channel scale following an RMS statistic can be folded into
// the rows of every matrix that consumes the normalised tensor, leaving a
// parameter-free normalisation behind.

PassResult absorb_rms_affine(const Graph& g) {
    Graph out = g;
    std::vector<WeightRule> rules;
    int sites = 0;
    for (auto& norm : out.nodes) {
        if (norm.kind != NodeKind::Scalar || norm.op != ScalarOp::RmsNorm) continue;
        if (norm.weight == WeightBinding::None) continue;
        auto uses = uses_of(out, norm.id);
        if (uses.empty()) continue;
        bool ok = true;
        for (const Use& u : uses) {
            const Node& c = out.nodes[u.node];
            if (u.carry || u.slot != 0 || !c.gemm_like() ||
                c.kind == NodeKind::Attention || c.inputs[0].sliced() ||
                c.inputs[0].kind != RefKind::Plain || c.repeat != norm.repeat ||
                !binding_compatible(norm, c)) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        for (const Use& u : uses)
            rules.push_back({RuleKind::PremultiplyDiag,
                             out.nodes[u.node].id,
                             {out.nodes[u.node].id, norm.id}});
        rules.push_back({RuleKind::GammaStrip, norm.id, {norm.id}});
        norm.weight = WeightBinding::None;
        norm.layer_count = 0;
        ++sites;
    }
    PassResult r = make_result("absorb_rms_affine", g, std::move(out));
    r.rules = std::move(rules);
    r.sites = sites;
    return r;
}

// ---------------------------------------------------------------------------
// pass 2: fold_action_time_embed
//
// Pattern: a time-embedding source concatenated (columns, time first) onto a
// projection's output, fed through a second matrix and an activation. The
// two matrices compose into one, and the time contribution collapses into a
// per-step bias table because the embedding is constant per instance.

PassResult fold_action_time_embed(const Graph& g) {
    Graph out = g;
    std::vector<WeightRule> rules;
    int sites = 0;
    for (size_t ci = 0; ci < out.nodes.size(); ++ci) {
        Node& cat = out.nodes[ci];
        if (cat.kind != NodeKind::Concat || cat.axis != ConcatAxis::Cols ||
            cat.inputs.size() != 2)
            continue;
        if (cat.inputs[0].kind != RefKind::Plain || cat.inputs[0].sliced()) continue;
        if (cat.inputs[1].kind != RefKind::Plain || cat.inputs[1].sliced()) continue;
        Node* time = out.find(cat.inputs[0].id);
        Node* act = out.find(cat.inputs[1].id);
        if (!time || !act) continue;
        if (time->kind != NodeKind::Source || !time->time_source) continue;
        if (act->kind != NodeKind::Gemm || !act->has_bias || act->epilogue.size() != 1 ||
            act->epilogue[0].op != EpilogueOp::Bias)
            continue;
        if (uses_of(out, time->id).size() != 1 || uses_of(out, act->id).size() != 1)
            continue;
        auto cat_uses = uses_of(out, cat.id);
        if (cat_uses.size() != 1) continue;
        Node& mix = out.nodes[cat_uses[0].node];
        if (mix.kind != NodeKind::Gemm || cat_uses[0].slot != 0 ||
            mix.inputs[0].sliced() || !mix.has_bias || mix.epilogue.size() != 1 ||
            mix.epilogue[0].op != EpilogueOp::Bias)
            continue;
        auto mix_uses = uses_of(out, mix.id);
        if (mix_uses.size() != 1) continue;
        Node& actv = out.nodes[mix_uses[0].node];
        if (actv.kind != NodeKind::Scalar || actv.op != ScalarOp::Silu) continue;
        if (time->repeat != cat.repeat || act->repeat != cat.repeat ||
            mix.repeat != cat.repeat || actv.repeat != cat.repeat)
            continue;
        if (act->weight != WeightBinding::Shared || mix.weight != WeightBinding::Shared)
            continue;

        rules.push_back({RuleKind::ComposeTimeFold,
                         act->id,
                         {act->id, mix.id},
                         time->cols,
                         act->repeat});
        act->shape.m = mix.shape.m;
        act->has_bias = false;
        act->has_bias_table = true;
        act->epilogue = {EpilogueEntry{EpilogueOp::SiluBias}};
        std::string act_id = act->id, actv_id = actv.id;
        std::string time_id = time->id, cat_id = cat.id, mix_id = mix.id;
        redirect_refs(out, actv_id, act_id);
        erase_node(out, time_id);
        erase_node(out, cat_id);
        erase_node(out, mix_id);
        erase_node(out, actv_id);
        ++sites;
        ci = 0;  // iterators invalidated; restart scan
    }
    PassResult r = make_result("fold_action_time_embed", g, std::move(out));
    r.rules = std::move(rules);
    r.sites = sites;
    return r;
}

// ---------------------------------------------------------------------------
// pass 3: fuse_qkv
//
// Three matrix nodes sharing input, shape prefix and epilogue family merge
// into one with horizontally concatenated weights; consumers switch to
// column slices of the fused output.

namespace {

std::string ref_signature(const InputRef& r) { return format_input_ref(r); }

std::string group_key(const Node& n) {
    std::ostringstream os;
    os << to_string(n.stage) << '|' << n.repeat << '|' << n.shape.n << '|' << n.shape.k
       << '|' << static_cast<int>(n.weight) << '|' << n.layer_count << '|'
       << (n.has_bias ? 1 : 0) << '|';
    for (const auto& in : n.inputs) os << ref_signature(in) << ';';
    os << '|';
    for (const auto& e : n.epilogue) {
        if (e.op == EpilogueOp::Rope) continue;  // merged with offsets
        os << static_cast<int>(e.op) << ':' << e.scale << ';';
    }
    return os.str();
}

}  // namespace

PassResult fuse_qkv(const Graph& g) {
    Graph out = g;
    std::vector<WeightRule> rules;
    int sites = 0;

    std::map<std::string, std::vector<std::string>> groups;
    std::vector<std::string> order;
    for (const Node& n : out.nodes) {
        if (n.kind != NodeKind::Gemm) continue;
        if (has_activation(n) || has_op(n, EpilogueOp::Residual) ||
            has_op(n, EpilogueOp::RmsScale))
            continue;
        std::string key = group_key(n);
        if (groups[key].empty()) order.push_back(key);
        groups[key].push_back(n.id);
    }

    for (const auto& key : order) {
        const auto ids = groups[key];
        if (ids.size() != 3) continue;

        // A member referenced through a carry edge cannot be sliced; skip.
        bool carried = false;
        for (const auto& id : ids)
            for (const Use& u : uses_of(out, id))
                if (u.carry) carried = true;
        if (carried || out.output == ids[0] || out.output == ids[1] ||
            out.output == ids[2])
            continue;

        // Rope merge compatibility: all rope entries must agree on dims.
        int64_t rope_hd = -1, rope_off = 0;
        bool rope_ok = true, any_rope = false;
        for (const auto& id : ids) {
            const Node* m = out.find(id);
            for (const auto& e : m->epilogue) {
                if (e.op != EpilogueOp::Rope) continue;
                if (any_rope && (e.rope_head_dim != rope_hd || e.rope_pos_offset != rope_off))
                    rope_ok = false;
                rope_hd = e.rope_head_dim;
                rope_off = e.rope_pos_offset;
                any_rope = true;
            }
        }
        if (!rope_ok) continue;

        std::vector<int64_t> base(ids.size() + 1, 0);
        for (size_t i = 0; i < ids.size(); ++i)
            base[i + 1] = base[i] + out.find(ids[i])->shape.m;

        Node fused = *out.find(ids[0]);
        fused.id = unique_id(out, common_prefix(ids) + "qkv");
        fused.shape.m = base.back();
        fused.epilogue.clear();
        if (fused.has_bias) fused.epilogue.push_back({EpilogueOp::Bias});
        if (any_rope) {
            EpilogueEntry rope{EpilogueOp::Rope};
            rope.rope_head_dim = rope_hd;
            rope.rope_pos_offset = rope_off;
            for (size_t i = 0; i < ids.size(); ++i)
                for (const auto& e : out.find(ids[i])->epilogue)
                    if (e.op == EpilogueOp::Rope)
                        for (const auto& rg : e.rope_ranges)
                            rope.rope_ranges.push_back({rg[0] + base[i], rg[1] + base[i]});
            fused.epilogue.push_back(rope);
        }

        // Rewire consumers onto slices of the fused output.
        for (size_t i = 0; i < ids.size(); ++i) {
            for (auto& n : out.nodes) {
                for (auto& in : n.inputs) {
                    if (in.id != ids[i]) continue;
                    in.id = fused.id;
                    if (in.sliced()) {
                        in.slice_lo += base[i];
                        in.slice_hi += base[i];
                    } else {
                        in.slice_lo = base[i];
                        in.slice_hi = base[i + 1];
                    }
                }
            }
        }

        // Fused node takes the first member's position; others vanish.
        for (auto& n : out.nodes)
            if (n.id == ids[0]) n = fused;
        erase_node(out, ids[1]);
        erase_node(out, ids[2]);

        rules.push_back({RuleKind::ConcatCols, fused.id, ids});
        ++sites;
    }

    PassResult r = make_result("fuse_qkv", g, std::move(out));
    r.rules = std::move(rules);
    r.sites = sites;
    return r;
}

// ---------------------------------------------------------------------------
// pass 4: fuse_gated_ffn
//
// Pattern: two matrices from the same input (value and gate), an activation
// on the gate and an elementwise product. They merge into one wide matrix
// with a gated-activation epilogue.

PassResult fuse_gated_ffn(const Graph& g) {
    Graph out = g;
    std::vector<WeightRule> rules;
    int sites = 0;

    for (size_t mi = 0; mi < out.nodes.size(); ++mi) {
        Node& mul = out.nodes[mi];
        if (mul.kind != NodeKind::Scalar || mul.op != ScalarOp::Mul) continue;
        if (mul.inputs.size() != 2) continue;
        if (mul.inputs[0].kind != RefKind::Plain || mul.inputs[0].sliced()) continue;
        if (mul.inputs[1].kind != RefKind::Plain || mul.inputs[1].sliced()) continue;
        Node* up = out.find(mul.inputs[0].id);
        Node* actv = out.find(mul.inputs[1].id);
        if (!up || !actv) continue;
        if (actv->kind != NodeKind::Scalar || actv->op != ScalarOp::Gelu) continue;
        if (actv->inputs.size() != 1 || actv->inputs[0].kind != RefKind::Plain ||
            actv->inputs[0].sliced())
            continue;
        Node* gate = out.find(actv->inputs[0].id);
        if (!gate || up->kind != NodeKind::Gemm || gate->kind != NodeKind::Gemm)
            continue;
        if (!up->epilogue.empty() || !gate->epilogue.empty()) continue;
        if (up->has_bias || gate->has_bias) continue;
        if (up->shape.n != gate->shape.n || up->shape.k != gate->shape.k ||
            up->shape.m != gate->shape.m)
            continue;
        if (up->repeat != gate->repeat || up->repeat != mul.repeat ||
            actv->repeat != mul.repeat)
            continue;
        if (up->weight != gate->weight || up->layer_count != gate->layer_count)
            continue;
        if (up->inputs.size() != gate->inputs.size()) continue;
        bool same_in = true;
        for (size_t s = 0; s < up->inputs.size(); ++s)
            if (ref_signature(up->inputs[s]) != ref_signature(gate->inputs[s]))
                same_in = false;
        if (!same_in) continue;
        if (uses_of(out, up->id).size() != 1 || uses_of(out, gate->id).size() != 1 ||
            uses_of(out, actv->id).size() != 1)
            continue;
        if (out.output == up->id || out.output == gate->id || out.output == actv->id)
            continue;

        std::string up_id = up->id, gate_id = gate->id, actv_id = actv->id,
                    mul_id = mul.id;
        Node fused = *up;
        fused.kind = NodeKind::FusedGatedGemm;
        fused.id = unique_id(out, common_prefix({up_id, gate_id}) + "ffn");
        fused.shape.m = 2 * up->shape.m;
        fused.epilogue = {EpilogueEntry{EpilogueOp::GeluGate}};
        for (auto& n : out.nodes)
            if (n.id == up_id) n = fused;
        erase_node(out, gate_id);
        erase_node(out, actv_id);
        redirect_refs(out, mul_id, fused.id);
        erase_node(out, mul_id);
        rules.push_back({RuleKind::ConcatCols, fused.id, {up_id, gate_id}});
        ++sites;
        mi = 0;
    }

    PassResult r = make_result("fuse_gated_ffn", g, std::move(out));
    r.rules = std::move(rules);
    r.sites = sites;
    return r;
}

// ---------------------------------------------------------------------------
// pass 5: fuse_epilogues
//
// Folds elementwise tails into the matrix kernels that produce their inputs:
//   (a) unary activations whose sole producer/consumer pair qualifies,
//   (b) residual additions onto the producing matrix (operand appended),
//   (c) parameter-free RMS normalisation: the node becomes a statistics
//       kernel and each consuming matrix applies the scales itself.

namespace {

bool fuse_activation_step(Graph& out, int& sites) {
    for (auto& s : out.nodes) {
        if (s.kind != NodeKind::Scalar) continue;
        if (s.op != ScalarOp::Gelu && s.op != ScalarOp::Silu) continue;
        if (s.inputs.size() != 1 || s.inputs[0].kind != RefKind::Plain ||
            s.inputs[0].sliced())
            continue;
        Node* gm = out.find(s.inputs[0].id);
        if (!gm || !(gm->kind == NodeKind::Gemm || gm->kind == NodeKind::FusedGatedGemm))
            continue;
        if (gm->repeat != s.repeat || has_activation(*gm) ||
            has_op(*gm, EpilogueOp::Residual))
            continue;
        if (uses_of(out, gm->id).size() != 1 || out.output == gm->id) continue;
        gm->epilogue.push_back(
            {s.op == ScalarOp::Gelu ? EpilogueOp::Gelu : EpilogueOp::Silu});
        std::string sid = s.id;
        redirect_refs(out, sid, gm->id);
        erase_node(out, sid);
        ++sites;
        return true;
    }
    return false;
}

bool fuse_residual_step(Graph& out, int& sites) {
    for (auto& s : out.nodes) {
        if (s.kind != NodeKind::Scalar || s.op != ScalarOp::Residual) continue;
        if (s.inputs.size() != 2) continue;
        const InputRef& y = s.inputs[1];
        if (y.kind != RefKind::Plain || y.sliced()) continue;
        Node* gm = out.find(y.id);
        if (!gm || !(gm->kind == NodeKind::Gemm || gm->kind == NodeKind::FusedGatedGemm))
            continue;
        if (gm->repeat != s.repeat || has_op(*gm, EpilogueOp::Residual)) continue;
        if (uses_of(out, gm->id).size() != 1 || out.output == gm->id) continue;
        EpilogueEntry e{EpilogueOp::Residual};
        e.scale = s.scale;
        gm->epilogue.push_back(e);
        gm->inputs.push_back(s.inputs[0]);
        std::string sid = s.id;
        redirect_refs(out, sid, gm->id);
        erase_node(out, sid);
        ++sites;
        return true;
    }
    return false;
}

// Operand slots are consumed in epilogue order starting at input index 1;
// a freshly prepended scale entry therefore claims index 1.
bool fuse_norm_step(Graph& out, int& sites) {
    for (auto& s : out.nodes) {
        if (s.kind != NodeKind::Scalar || s.op != ScalarOp::RmsNorm) continue;
        if (s.weight != WeightBinding::None) continue;
        if (s.inputs.size() != 1) continue;
        auto uses = uses_of(out, s.id);
        if (uses.empty()) continue;
        bool ok = true;
        for (const Use& u : uses) {
            const Node& c = out.nodes[u.node];
            if (u.carry || u.slot != 0 ||
                !(c.kind == NodeKind::Gemm || c.kind == NodeKind::FusedGatedGemm) ||
                c.inputs[0].sliced() || c.inputs[0].kind != RefKind::Plain ||
                c.repeat != s.repeat || has_op(c, EpilogueOp::RmsScale)) {
                ok = false;
                break;
            }
        }
        if (!ok || out.output == s.id) continue;
        InputRef pre = s.inputs[0];
        for (const Use& u : uses) {
            Node& c = out.nodes[u.node];
            c.inputs[0] = pre;
            InputRef stats;
            stats.kind = RefKind::Plain;
            stats.id = s.id;
            c.inputs.insert(c.inputs.begin() + 1, stats);
            c.epilogue.insert(c.epilogue.begin(), EpilogueEntry{EpilogueOp::RmsScale});
        }
        s.kind = NodeKind::RmsStats;
        s.op = ScalarOp::RmsNorm;
        ++sites;
        return true;
    }
    return false;
}

}  // namespace

PassResult fuse_epilogues(const Graph& g) {
    Graph out = g;
    int sites = 0;
    bool changed = true;
    while (changed) {
        changed = fuse_activation_step(out, sites) || fuse_residual_step(out, sites) ||
                  fuse_norm_step(out, sites);
    }
    PassResult r = make_result("fuse_epilogues", g, std::move(out));
    r.sites = sites;
    return r;
}

// ---------------------------------------------------------------------------
// pass 6: prune_dead_nodes
//
// Instance-level liveness from the final output instance backwards. A node
// whose live set is a shorter prefix of its unroll gets its repeat reduced;
// nodes with no live instances disappear.

namespace {

// Instances of `ref` touched by consumer instance i.
void dep_instances(const Graph& g, const InputRef& ref, const Node& consumer,
                   int64_t i, std::vector<std::pair<const Node*, int64_t>>& out) {
    const Node* p = g.find(ref.id);
    if (!p) return;
    int64_t ra = p->repeat, rb = consumer.repeat;
    switch (ref.kind) {
        case RefKind::Plain:
            out.push_back({p, i});
            break;
        case RefKind::Prev:
            if (i > 0) out.push_back({p, i - 1});
            break;
        case RefKind::Mod:
            out.push_back({p, i % ra});
            break;
        case RefKind::Div:
            out.push_back({p, i / (rb / ra)});
            break;
        case RefKind::Last:
            out.push_back({p, (i + 1) * (ra / rb) - 1});
            break;
        case RefKind::EntryOr: {
            int64_t group = rb / ra;
            if (i % group == 0) {
                out.push_back({p, i / group});
            } else {
                const Node* c = g.find(ref.carry_id);
                if (c) out.push_back({c, i - 1});
            }
            break;
        }
    }
}

}  // namespace

PassResult prune_dead_nodes(const Graph& g) {
    Graph out = g;
    std::map<std::string, std::vector<char>> live;
    for (const Node& n : out.nodes) live[n.id].assign(static_cast<size_t>(n.repeat), 0);

    const Node* root = out.find(out.output);
    std::vector<std::pair<const Node*, int64_t>> work;
    if (root) work.push_back({root, root->repeat - 1});
    while (!work.empty()) {
        auto [n, i] = work.back();
        work.pop_back();
        if (i < 0 || i >= n->repeat) continue;
        auto& v = live[n->id];
        if (v[static_cast<size_t>(i)]) continue;
        v[static_cast<size_t>(i)] = 1;
        for (const auto& ref : n->inputs) dep_instances(out, ref, *n, i, work);
    }

    int sites = 0;
    std::vector<std::string> dead;
    for (auto& n : out.nodes) {
        const auto& v = live[n.id];
        int64_t prefix = 0;
        while (prefix < n.repeat && v[static_cast<size_t>(prefix)]) ++prefix;
        bool holes = false;
        for (int64_t i = prefix; i < n.repeat; ++i)
            if (v[static_cast<size_t>(i)]) holes = true;
        if (holes) continue;  // conservative: only prefix truncation is safe
        if (prefix == 0) {
            dead.push_back(n.id);
            ++sites;
        } else if (prefix < n.repeat) {
            n.repeat = prefix;
            ++sites;
        }
    }
    for (const auto& id : dead) erase_node(out, id);

    PassResult r = make_result("prune_dead_nodes", g, std::move(out));
    r.sites = sites;
    return r;
}

// ---------------------------------------------------------------------------
// registry

const std::vector<std::pair<std::string, PassFn>>& pass_registry() {
    static const std::vector<std::pair<std::string, PassFn>> reg = {
        {"absorb_rms_affine", &absorb_rms_affine},
        {"fold_action_time_embed", &fold_action_time_embed},
        {"fuse_qkv", &fuse_qkv},
        {"fuse_gated_ffn", &fuse_gated_ffn},
        {"fuse_epilogues", &fuse_epilogues},
        {"prune_dead_nodes", &prune_dead_nodes},
    };
    return reg;
}

std::vector<std::string> default_pass_names() {
    std::vector<std::string> names;
    for (const auto& [n, f] : pass_registry()) names.push_back(n);
    return names;
}

PassFn find_pass(const std::string& name) {
    for (const auto& [n, f] : pass_registry())
        if (n == name) return f;
    return nullptr;
}

// ---------------------------------------------------------------------------
// weight rules

WeightStore apply_weight_rules(const Graph& before, const Graph& after,
                               const std::vector<WeightRule>& rules,
                               const WeightStore& old, int flow_steps) {
    WeightStore next;
    for (const Node& n : after.nodes) {
        auto it = old.by_node.find(n.id);
        if (it != old.by_node.end()) next.by_node[n.id] = it->second;
    }
    for (const WeightRule& rule : rules) {
        switch (rule.kind) {
            case RuleKind::Copy:
                break;
            case RuleKind::GammaStrip: {
                auto it = next.by_node.find(rule.dst);
                if (it != next.by_node.end()) it->second.gamma.clear();
                break;
            }
            case RuleKind::PremultiplyDiag: {
                WeightSet& dst = next.by_node.at(rule.dst);
                const WeightSet& nw = old.by_node.at(rule.srcs.at(1));
                if (nw.gamma.size() != dst.w.size() && nw.gamma.size() != 1)
                    throw NumericError("premultiply: instance counts disagree for " +
                                       rule.dst);
                for (size_t wi = 0; wi < dst.w.size(); ++wi) {
                    const auto& gamma = nw.gamma[nw.gamma.size() == 1 ? 0 : wi];
                    Tensor& w = dst.w[wi];
                    if (static_cast<int64_t>(gamma.size()) != w.rows)
                        throw NumericError("premultiply: scale length mismatch for " +
                                           rule.dst);
                    for (int64_t r = 0; r < w.rows; ++r)
                        for (int64_t c = 0; c < w.cols; ++c) w.at(r, c) *= gamma[r];
                }
                break;
            }
            case RuleKind::ConcatCols: {
                const Node* dn = after.find(rule.dst);
                if (!dn) throw NumericError("concat: missing node " + rule.dst);
                WeightSet fused;
                size_t insts = old.by_node.at(rule.srcs.at(0)).w.size();
                for (size_t wi = 0; wi < insts; ++wi) {
                    int64_t k = old.by_node.at(rule.srcs.at(0)).w[wi].rows;
                    int64_t m = 0;
                    for (const auto& s : rule.srcs) m += old.by_node.at(s).w[wi].cols;
                    Tensor w(k, m);
                    std::vector<double> bias;
                    int64_t off = 0;
                    for (const auto& s : rule.srcs) {
                        const WeightSet& part = old.by_node.at(s);
                        const Tensor& pw = part.w[wi];
                        for (int64_t r = 0; r < k; ++r)
                            for (int64_t c = 0; c < pw.cols; ++c)
                                w.at(r, off + c) = pw.at(r, c);
                        if (dn->has_bias) {
                            const auto& pb = part.bias.at(wi);
                            bias.insert(bias.end(), pb.begin(), pb.end());
                        }
                        off += pw.cols;
                    }
                    fused.w.push_back(std::move(w));
                    if (dn->has_bias) fused.bias.push_back(std::move(bias));
                }
                next.by_node[rule.dst] = std::move(fused);
                break;
            }
            case RuleKind::ComposeTimeFold: {
                const WeightSet& act = old.by_node.at(rule.srcs.at(0));
                const WeightSet& mix = old.by_node.at(rule.srcs.at(1));
                const Tensor& wa = act.w.at(0);
                const Tensor& wm = mix.w.at(0);
                int64_t d_t = rule.d_t;
                Tensor wm_act(wa.cols, wm.cols);  // rows d_t.. of the mix matrix
                for (int64_t r = 0; r < wa.cols; ++r)
                    for (int64_t c = 0; c < wm.cols; ++c)
                        wm_act.at(r, c) = wm.at(d_t + r, c);
                WeightSet composed;
                composed.w.push_back(matmul(wa, wm_act));
                Tensor table(rule.steps, wm.cols);
                for (int64_t s = 0; s < rule.steps; ++s) {
                    std::vector<double> emb =
                        time_embedding(s, d_t, flow_steps);
                    for (int64_t c = 0; c < wm.cols; ++c) {
                        double v = mix.bias.at(0).at(static_cast<size_t>(c));
                        for (int64_t j = 0; j < d_t; ++j)
                            v += emb[static_cast<size_t>(j)] * wm.at(j, c);
                        for (int64_t r = 0; r < wa.cols; ++r)
                            v += act.bias.at(0).at(static_cast<size_t>(r)) *
                                 wm_act.at(r, c);
                        table.at(s, c) = v;
                    }
                }
                composed.bias_table = std::move(table);
                next.by_node[rule.dst] = std::move(composed);
                break;
            }
        }
    }
    (void)before;
    return next;
}

// ---------------------------------------------------------------------------
// pipeline driver + verification

namespace {

struct ChainStage {
    std::string name;
    Graph graph;
    std::vector<WeightRule> rules;
};

}  // namespace

PipelineResult run_pipeline(const Graph& g, const PipelineOptions& opt) {
    PipelineResult result;
    result.report.tolerance = opt.tolerance;

    Graph cur = g;
    for (const auto& name : opt.passes) {
        PassFn fn = find_pass(name);
        if (!fn) throw std::invalid_argument("unknown pass: " + name);
        PassResult pr = fn(cur);
        PassReport rep;
        rep.name = pr.name;
        rep.sites = pr.sites;
        rep.nodes_before = pr.nodes_before;
        rep.nodes_after = pr.nodes_after;
        rep.gemm_before = pr.gemm_before;
        rep.gemm_after = pr.gemm_after;
        for (const auto& rule : pr.rules) rep.weight_notes.push_back(rule.describe());
        result.report.passes.push_back(std::move(rep));
        cur = std::move(pr.graph);
        validate(cur);
    }
    result.graph = std::move(cur);

    if (!opt.verify || opt.passes.empty()) return result;

    // Numerical check on a reduced-width twin of the stock model: the same
    // pass list runs on the twin and every stage's output is compared with
    // the unrewritten twin's. Full-scale parameters are never materialised.
    result.report.verified = true;
    result.report.seeds = opt.seeds;
    Graph twin = build_pi0_graph_naive(tiny_config());
    std::vector<ChainStage> chain;
    {
        Graph t = twin;
        for (const auto& name : opt.passes) {
            PassResult pr = find_pass(name)(t);
            t = pr.graph;
            chain.push_back({name, t, std::move(pr.rules)});
        }
    }

    int flow_steps = twin.config.flow_steps;
    auto run_seed = [&](uint64_t seed) {
        std::vector<double> devs(chain.size(), 0.0);
        WeightStore w0 = gen_weights(twin, seed);
        Inputs x = gen_inputs(twin, seed);
        Tensor y0 = evaluate(twin, w0, x);
        const Graph* prev_g = &twin;
        WeightStore w = w0;
        for (size_t si = 0; si < chain.size(); ++si) {
            w = apply_weight_rules(*prev_g, chain[si].graph, chain[si].rules, w,
                                   flow_steps);
            Tensor y = evaluate(chain[si].graph, w, x);
            devs[si] = max_rel_deviation(y, y0);
            prev_g = &chain[si].graph;
        }
        return devs;
    };

    std::vector<std::future<std::vector<double>>> futs;
    for (int s = 0; s < opt.seeds; ++s)
        futs.push_back(std::async(std::launch::async, run_seed,
                                  static_cast<uint64_t>(s) + 1));
    for (auto& f : futs) {
        std::vector<double> devs = f.get();
        for (size_t si = 0; si < devs.size(); ++si) {
            auto& rep = result.report.passes[si];
            rep.max_deviation = std::max(rep.max_deviation, devs[si]);
            result.report.max_deviation =
                std::max(result.report.max_deviation, devs[si]);
        }
    }
    for (const auto& rep : result.report.passes) {
        if (rep.max_deviation > opt.tolerance) {
            result.report.verified_ok = false;
            result.report.failed_pass = rep.name;
            break;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// structural comparison

namespace {

bool refs_match(const Graph& a, const Graph& b, const InputRef& ra, const InputRef& rb,
                std::string* why, const std::string& ctx) {
    auto fail = [&](const std::string& msg) {
        if (why) *why = ctx + ": " + msg;
        return false;
    };
    if (ra.kind != rb.kind) return fail("ref kind differs");
    if (ra.slice_lo != rb.slice_lo || ra.slice_hi != rb.slice_hi)
        return fail("ref slice differs");
    if (a.index_of(ra.id) != b.index_of(rb.id)) return fail("ref target differs");
    if (ra.kind == RefKind::EntryOr &&
        a.index_of(ra.carry_id) != b.index_of(rb.carry_id))
        return fail("carry target differs");
    return true;
}

}  // namespace

bool graphs_isomorphic(const Graph& a, const Graph& b, std::string* why) {
    auto fail = [&](const std::string& msg) {
        if (why) *why = msg;
        return false;
    };
    if (a.nodes.size() != b.nodes.size()) return fail("node counts differ");
    for (size_t i = 0; i < a.nodes.size(); ++i) {
        const Node& x = a.nodes[i];
        const Node& y = b.nodes[i];
        std::string ctx = "node " + std::to_string(i) + " (" + x.id + " / " + y.id + ")";
        auto nfail = [&](const std::string& msg) {
            if (why) *why = ctx + ": " + msg;
            return false;
        };
        if (x.kind != y.kind) return nfail("kind differs");
        if (x.stage != y.stage) return nfail("stage differs");
        if (x.repeat != y.repeat) return nfail("repeat differs");
        if (x.shape.n != y.shape.n || x.shape.k != y.shape.k || x.shape.m != y.shape.m)
            return nfail("shape differs");
        if (x.attn.heads != y.attn.heads || x.attn.q_tokens != y.attn.q_tokens ||
            x.attn.kv_tokens != y.attn.kv_tokens ||
            x.attn.head_dim != y.attn.head_dim || x.attn.kv_heads != y.attn.kv_heads)
            return nfail("attention dims differ");
        if (x.op != y.op) return nfail("scalar op differs");
        if (x.axis != y.axis) return nfail("concat axis differs");
        if (x.rows != y.rows || x.cols != y.cols) return nfail("source dims differ");
        if (x.lo != y.lo || x.hi != y.hi) return nfail("slice bounds differ");
        if (x.scale != y.scale) return nfail("scale differs");
        if (x.eps != y.eps) return nfail("eps differs");
        if (x.weight != y.weight || x.layer_count != y.layer_count)
            return nfail("weight binding differs");
        if (x.has_bias != y.has_bias || x.has_bias_table != y.has_bias_table)
            return nfail("bias flags differ");
        if (x.time_source != y.time_source) return nfail("time flag differs");
        if (x.prologue != y.prologue) return nfail("prologue differs");
        if (x.epilogue.size() != y.epilogue.size()) return nfail("epilogue size differs");
        for (size_t e = 0; e < x.epilogue.size(); ++e) {
            const auto& p = x.epilogue[e];
            const auto& q = y.epilogue[e];
            if (p.op != q.op || p.scale != q.scale ||
                p.rope_head_dim != q.rope_head_dim ||
                p.rope_pos_offset != q.rope_pos_offset ||
                p.rope_ranges != q.rope_ranges)
                return nfail("epilogue entry " + std::to_string(e) + " differs");
        }
        if (x.inputs.size() != y.inputs.size()) return nfail("input counts differ");
        for (size_t s = 0; s < x.inputs.size(); ++s)
            if (!refs_match(a, b, x.inputs[s], y.inputs[s], why,
                            ctx + " input " + std::to_string(s)))
                return false;
    }
    if (a.index_of(a.output) != b.index_of(b.output)) return fail("output differs");
    return true;
}

}  // namespace rtvla

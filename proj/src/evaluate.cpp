#include "rtvla/evaluate.hpp"

#include <cmath>
#include <map>
#include <string>

namespace rtvla {

namespace {

enum Role : uint64_t { kWeight = 1, kBias = 2, kGamma = 3, kTable = 4, kInput = 5 };

int64_t fan_in(const Node& n) {
    switch (n.kind) {
        case NodeKind::Gemm:
        case NodeKind::FusedGatedGemm: return n.shape.k;
        default: return 0;
    }
}

}  // namespace

std::vector<double> time_embedding(int step, int dim, int flow_steps) {
    if (dim % 2 != 0) throw ShapeError("time_embedding: dim must be even");
    const int half = dim / 2;
    const double tau = flow_steps > 0 ? double(step) / flow_steps : 0.0;
    const double f_lo = 0.25, f_hi = 250.0;
    std::vector<double> e(static_cast<size_t>(dim));
    for (int j = 0; j < half; ++j) {
        double t = half > 1 ? double(j) / (half - 1) : 0.0;
        double f = f_lo * std::pow(f_hi / f_lo, t);
        e[size_t(j)] = std::sin(tau * f);
        e[size_t(half + j)] = std::cos(tau * f);
    }
    return e;
}

WeightStore gen_weights(const Graph& g, uint64_t seed) {
    WeightStore store;
    for (const auto& n : g.nodes) {
        const int64_t insts = n.weight_instances();
        const bool norm = n.kind == NodeKind::Scalar && n.op == ScalarOp::RmsNorm;
        if (insts == 0 && !n.has_bias_table) continue;
        WeightSet ws;
        for (int64_t i = 0; i < insts; ++i) {
            if (norm) {
                auto t = random_tensor(1, node_output_shape(g, n).second, -0.25, 0.25,
                                       seed_hash(seed, n.id, uint64_t(i), kGamma));
                std::vector<double> gamma(t.data.size());
                for (size_t j = 0; j < gamma.size(); ++j) gamma[j] = 1.0 + t.data[j];
                ws.gamma.push_back(std::move(gamma));
                continue;
            }
            const double lim = 1.0 / std::sqrt(double(std::max<int64_t>(1, fan_in(n))));
            ws.w.push_back(random_tensor(n.shape.k, n.shape.m, -lim, lim,
                                         seed_hash(seed, n.id, uint64_t(i), kWeight)));
            if (n.has_bias) {
                auto t = random_tensor(1, n.shape.m, -lim, lim,
                                       seed_hash(seed, n.id, uint64_t(i), kBias));
                ws.bias.push_back(std::move(t.data));
            }
        }
        if (n.has_bias_table) {
            const double lim = 1.0 / std::sqrt(double(std::max<int64_t>(1, fan_in(n))));
            ws.bias_table = Tensor(n.repeat, n.shape.m);
            for (int64_t s = 0; s < n.repeat; ++s) {
                auto row = random_tensor(1, n.shape.m, -lim, lim,
                                         seed_hash(seed, n.id, uint64_t(s), kTable));
                for (int64_t c = 0; c < n.shape.m; ++c) ws.bias_table.at(s, c) = row.at(0, c);
            }
        }
        store.by_node[n.id] = std::move(ws);
    }
    return store;
}

Inputs gen_inputs(const Graph& g, uint64_t seed) {
    Inputs in;
    for (const auto& n : g.nodes) {
        if (n.kind != NodeKind::Source || n.time_source) continue;
        in.by_source[n.id] =
            random_tensor(n.rows, n.cols, -1.0, 1.0, seed_hash(seed, n.id, 0, kInput));
    }
    return in;
}

namespace {

struct Evaluator {
    const Graph& g;
    const WeightStore& weights;
    const Inputs& inputs;
    std::map<std::pair<std::string, int64_t>, Tensor> memo;
    std::map<std::pair<int, int>, RopeTable> rope_tables;  // (head_dim, positions)

    const WeightSet& wset(const Node& n) {
        auto it = weights.by_node.find(n.id);
        if (it == weights.by_node.end())
            throw NumericError("no weights for node '" + n.id + "'");
        return it->second;
    }

    int64_t weight_index(const Node& n, int64_t inst) const {
        switch (n.weight) {
            case WeightBinding::Shared: return 0;
            case WeightBinding::PerInstance: return inst;
            case WeightBinding::PerLayer: return inst % n.layer_count;
            case WeightBinding::None: break;
        }
        throw NumericError("node '" + n.id + "' has no weight binding");
    }

    Tensor slice_cols(const Tensor& t, int64_t lo, int64_t hi) {
        Tensor out(t.rows, hi - lo);
        for (int64_t r = 0; r < t.rows; ++r)
            for (int64_t c = lo; c < hi; ++c) out.at(r, c - lo) = t.at(r, c);
        return out;
    }

    Tensor ref_value(const Node& consumer, const InputRef& ref, int64_t inst) {
        const Node* p = g.find(ref.id);
        if (!p) throw NumericError("input '" + ref.id + "' not found");
        int64_t target = inst;
        const Node* producer = p;
        switch (ref.kind) {
            case RefKind::Plain: target = inst; break;
            case RefKind::Prev:
                if (inst == 0) throw NumericError("'" + consumer.id + "' reads before start");
                target = inst - 1;
                break;
            case RefKind::Mod: target = inst % p->repeat; break;
            case RefKind::Div: target = inst / (consumer.repeat / p->repeat); break;
            case RefKind::Last: target = (inst + 1) * (p->repeat / consumer.repeat) - 1; break;
            case RefKind::EntryOr: {
                int64_t group = consumer.repeat / p->repeat;
                if (inst % group == 0) {
                    target = inst / group;
                } else {
                    producer = g.find(ref.carry_id);
                    if (!producer)
                        throw NumericError("carry '" + ref.carry_id + "' not found");
                    target = inst - 1;
                }
                break;
            }
        }
        Tensor t = value(*producer, target);
        if (ref.sliced()) t = slice_cols(t, ref.slice_lo, ref.slice_hi);
        return t;
    }

    const RopeTable& rope(int head_dim, int positions) {
        auto key = std::make_pair(head_dim, positions);
        auto it = rope_tables.find(key);
        if (it == rope_tables.end())
            it = rope_tables.emplace(key, make_rope_table(positions, head_dim, 10000.0)).first;
        return it->second;
    }

    void apply_epilogue(const Node& n, int64_t inst, Tensor& z) {
        size_t slot = 1;  // operand inputs follow the data input
        const int64_t winst =
            n.weight == WeightBinding::None ? 0 : weight_index(n, inst);
        for (const auto& e : n.epilogue) {
            switch (e.op) {
                case EpilogueOp::RmsScale: {
                    Tensor s = ref_value(n, n.inputs.at(slot++), inst);
                    for (int64_t r = 0; r < z.rows; ++r)
                        for (int64_t c = 0; c < z.cols; ++c) z.at(r, c) *= s.at(r, 0);
                    break;
                }
                case EpilogueOp::Bias: {
                    const auto& b = wset(n).bias.at(size_t(winst));
                    for (int64_t r = 0; r < z.rows; ++r)
                        for (int64_t c = 0; c < z.cols; ++c) z.at(r, c) += b[size_t(c)];
                    break;
                }
                case EpilogueOp::Rope: {
                    const RopeTable& table =
                        rope(e.rope_head_dim, e.rope_pos_offset + int(z.rows));
                    std::vector<int> pos(size_t(z.rows));
                    for (int64_t r = 0; r < z.rows; ++r)
                        pos[size_t(r)] = e.rope_pos_offset + int(r);
                    for (const auto& rg : e.rope_ranges) {
                        Tensor sub = slice_cols(z, rg[0], rg[1]);
                        sub = rope_apply(sub, table, pos);
                        for (int64_t r = 0; r < z.rows; ++r)
                            for (int64_t c = rg[0]; c < rg[1]; ++c)
                                z.at(r, c) = sub.at(r, c - rg[0]);
                    }
                    break;
                }
                case EpilogueOp::Gelu: z = gelu(z); break;
                case EpilogueOp::Silu: z = silu(z); break;
                case EpilogueOp::GeluGate: {
                    int64_t half = z.cols / 2;
                    Tensor out(z.rows, half);
                    for (int64_t r = 0; r < z.rows; ++r)
                        for (int64_t c = 0; c < half; ++c)
                            out.at(r, c) = z.at(r, c) * gelu(z.at(r, half + c));
                    z = std::move(out);
                    break;
                }
                case EpilogueOp::SiluBias: {
                    const Tensor& table = wset(n).bias_table;
                    for (int64_t r = 0; r < z.rows; ++r)
                        for (int64_t c = 0; c < z.cols; ++c)
                            z.at(r, c) = silu(z.at(r, c) + table.at(inst, c));
                    break;
                }
                case EpilogueOp::Residual: {
                    Tensor base = ref_value(n, n.inputs.at(slot++), inst);
                    if (!base.same_shape(z))
                        throw NumericError("node '" + n.id + "': residual shape mismatch");
                    for (size_t i = 0; i < z.data.size(); ++i)
                        z.data[i] = base.data[i] + e.scale * z.data[i];
                    break;
                }
                case EpilogueOp::Softmax:
                    throw NumericError("node '" + n.id + "': softmax epilogue unsupported");
            }
        }
    }

    Tensor attention(const Node& n, int64_t inst) {
        Tensor q = ref_value(n, n.inputs.at(0), inst);
        Tensor k = ref_value(n, n.inputs.at(1), inst);
        Tensor v = ref_value(n, n.inputs.at(2), inst);
        const int dh = n.attn.head_dim;
        Tensor out(q.rows, int64_t(n.attn.heads) * dh);
        for (int h = 0; h < n.attn.heads; ++h) {
            const int kvh = h % n.attn.kv_heads;
            Tensor scores(q.rows, k.rows);
            const double inv = 1.0 / std::sqrt(double(dh));
            for (int64_t i = 0; i < q.rows; ++i)
                for (int64_t j = 0; j < k.rows; ++j) {
                    double acc = 0;
                    for (int c = 0; c < dh; ++c)
                        acc += q.at(i, int64_t(h) * dh + c) * k.at(j, int64_t(kvh) * dh + c);
                    scores.at(i, j) = acc * inv;
                }
            Tensor p = softmax_rows(scores);
            for (int64_t i = 0; i < q.rows; ++i)
                for (int c = 0; c < dh; ++c) {
                    double acc = 0;
                    for (int64_t j = 0; j < k.rows; ++j)
                        acc += p.at(i, j) * v.at(j, int64_t(kvh) * dh + c);
                    out.at(i, int64_t(h) * dh + c) = acc;
                }
        }
        return out;
    }

    Tensor compute(const Node& n, int64_t inst) {
        switch (n.kind) {
            case NodeKind::Source: {
                if (n.time_source) {
                    auto e = time_embedding(int(inst), int(n.cols), g.config.flow_steps);
                    Tensor t(1, n.cols);
                    t.data = std::move(e);
                    return t;
                }
                auto it = inputs.by_source.find(n.id);
                if (it == inputs.by_source.end())
                    throw NumericError("no input for source '" + n.id + "'");
                return it->second;
            }
            case NodeKind::Gemm:
            case NodeKind::FusedGatedGemm: {
                Tensor x = ref_value(n, n.inputs.at(0), inst);
                const auto& ws = wset(n);
                Tensor z = matmul(x, ws.w.at(size_t(weight_index(n, inst))));
                apply_epilogue(n, inst, z);
                return z;
            }
            case NodeKind::Attention: return attention(n, inst);
            case NodeKind::Scalar: {
                switch (n.op) {
                    case ScalarOp::RmsNorm: {
                        Tensor x = ref_value(n, n.inputs.at(0), inst);
                        if (n.weight == WeightBinding::None) {
                            std::vector<double> ones(size_t(x.cols), 1.0);
                            return rms_norm(x, ones, n.eps);
                        }
                        return rms_norm(x, wset(n).gamma.at(size_t(weight_index(n, inst))),
                                        n.eps);
                    }
                    case ScalarOp::Residual: {
                        Tensor a = ref_value(n, n.inputs.at(0), inst);
                        Tensor b = ref_value(n, n.inputs.at(1), inst);
                        for (size_t i = 0; i < a.data.size(); ++i)
                            a.data[i] += n.scale * b.data[i];
                        return a;
                    }
                    case ScalarOp::Gelu: return gelu(ref_value(n, n.inputs.at(0), inst));
                    case ScalarOp::Silu: return silu(ref_value(n, n.inputs.at(0), inst));
                    case ScalarOp::Mul: {
                        Tensor a = ref_value(n, n.inputs.at(0), inst);
                        Tensor b = ref_value(n, n.inputs.at(1), inst);
                        for (size_t i = 0; i < a.data.size(); ++i) a.data[i] *= b.data[i];
                        return a;
                    }
                    default:
                        throw NumericError("scalar op " + to_string(n.op) +
                                           " has no evaluator");
                }
            }
            case NodeKind::RmsStats:
                return rms_scales(ref_value(n, n.inputs.at(0), inst), n.eps);
            case NodeKind::Concat: {
                std::vector<Tensor> parts;
                for (const auto& in : n.inputs) parts.push_back(ref_value(n, in, inst));
                if (n.axis == ConcatAxis::Rows) {
                    int64_t rows = 0;
                    for (const auto& p : parts) rows += p.rows;
                    Tensor out(rows, parts.at(0).cols);
                    int64_t r0 = 0;
                    for (const auto& p : parts) {
                        for (int64_t r = 0; r < p.rows; ++r)
                            for (int64_t c = 0; c < p.cols; ++c) out.at(r0 + r, c) = p.at(r, c);
                        r0 += p.rows;
                    }
                    return out;
                }
                int64_t rows = 0, cols = 0;
                for (const auto& p : parts) {
                    rows = std::max(rows, p.rows);
                    cols += p.cols;
                }
                Tensor out(rows, cols);
                int64_t c0 = 0;
                for (const auto& p : parts) {  // 1-row parts broadcast down the rows
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t c = 0; c < p.cols; ++c)
                            out.at(r, c0 + c) = p.at(p.rows == 1 ? 0 : r, c);
                    c0 += p.cols;
                }
                return out;
            }
            case NodeKind::Slice: {
                Tensor x = ref_value(n, n.inputs.at(0), inst);
                Tensor out(n.hi - n.lo, x.cols);
                for (int64_t r = n.lo; r < n.hi; ++r)
                    for (int64_t c = 0; c < x.cols; ++c) out.at(r - n.lo, c) = x.at(r, c);
                return out;
            }
        }
        throw NumericError("unreachable node kind");
    }

    const Tensor& value(const Node& n, int64_t inst) {
        if (inst < 0 || inst >= n.repeat)
            throw NumericError("node '" + n.id + "': instance " + std::to_string(inst) +
                               " out of range");
        auto key = std::make_pair(n.id, inst);
        auto it = memo.find(key);
        if (it != memo.end()) return it->second;
        Tensor t = compute(n, inst);
        return memo.emplace(std::move(key), std::move(t)).first->second;
    }
};

}  // namespace

Tensor evaluate(const Graph& g, const WeightStore& weights, const Inputs& inputs) {
    const Node* out = g.find(g.output);
    if (!out) throw NumericError("graph has no output node '" + g.output + "'");
    Evaluator ev{g, weights, inputs, {}, {}};
    return ev.value(*out, out->repeat - 1);
}

double max_rel_deviation(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw NumericError("max_rel_deviation: shape mismatch");
    double worst = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = std::fabs(a.data[i] - b.data[i]) / (std::fabs(b.data[i]) + 1e-12);
        worst = std::max(worst, d);
    }
    return worst;
}

}  // namespace rtvla

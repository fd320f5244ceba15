#include "rtvla/costmodel.hpp"

#include "rtvla/serialize.hpp"

#include "json_util.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

namespace rtvla {

using nlohmann::ordered_json;
using jsonio::Obj;

// ---------------------------------------------------------------------------
// hardware

HardwareSpec rtx4090() { return HardwareSpec{}; }

std::string serialize_hardware(const HardwareSpec& hw) {
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["name"] = hw.name;
    j["bandwidth_bytes_per_s"] = hw.bandwidth_bytes_per_s;
    j["mac_per_s"] = hw.mac_per_s;
    j["sm_count"] = hw.sm_count;
    j["dtype_bytes"] = hw.dtype_bytes;
    j["sync_overhead_s_per_kernel"] = hw.sync_overhead_s_per_kernel;
    j["l2_bytes"] = hw.l2_bytes;
    return j.dump(2) + "\n";
}

HardwareSpec parse_hardware(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const ordered_json::parse_error& e) {
        throw ParseError(std::string("hardware document: ") + e.what());
    }
    Obj o(j, "hardware");
    HardwareSpec hw;
    o.num<int>("schema_version", kSchemaVersion);
    hw.name = o.str("name", hw.name, true);
    hw.bandwidth_bytes_per_s = o.num<double>("bandwidth_bytes_per_s", 0.0, true);
    hw.mac_per_s = o.num<double>("mac_per_s", 0.0, true);
    hw.sm_count = o.num<int>("sm_count", 0, true);
    hw.dtype_bytes = o.num<int>("dtype_bytes", 0, true);
    hw.sync_overhead_s_per_kernel = o.num<double>("sync_overhead_s_per_kernel", 0.0);
    hw.l2_bytes = o.num<int64_t>("l2_bytes", 0);
    o.finish();
    if (hw.bandwidth_bytes_per_s <= 0 || hw.mac_per_s <= 0 || hw.sm_count <= 0 ||
        hw.dtype_bytes <= 0)
        throw ParseError("hardware: rates, SM count and dtype size must be positive");
    return hw;
}

HardwareSpec load_hardware(const std::string& path) {
    return parse_hardware(read_text_file(path));
}

HardwareSpec resolve_hardware(const std::string& name_or_path) {
    if (name_or_path.empty() || name_or_path == "rtx4090") return rtx4090();
    namespace fs = std::filesystem;
    if (fs::exists(name_or_path)) return load_hardware(name_or_path);
    if (const char* dir = std::getenv("RTVLA_HW_DIR")) {
        fs::path p = fs::path(dir) / (name_or_path + ".json");
        if (fs::exists(p)) return load_hardware(p.string());
    }
    throw ParseError("unknown hardware '" + name_or_path +
                     "' (not a builtin, not a file, not under RTVLA_HW_DIR)");
}

// ---------------------------------------------------------------------------
// roofline

double roofline_gemm(const GemmShape& s, const HardwareSpec& hw) {
    double mem = double(hw.dtype_bytes) * double(s.k) * double(s.m) /
                 hw.bandwidth_bytes_per_s;
    double comp = double(s.n) * double(s.k) * double(s.m) / hw.mac_per_s;
    return std::max(mem, comp);
}

double roofline_attention(const AttnDims& a, const HardwareSpec& hw) {
    return 2.0 * double(a.heads) * double(a.q_tokens) * double(a.kv_tokens) *
           double(a.head_dim) / hw.mac_per_s;
}

bool gemm_memory_bound(const GemmShape& s, const HardwareSpec& hw) {
    double mem = double(hw.dtype_bytes) * double(s.k) * double(s.m) /
                 hw.bandwidth_bytes_per_s;
    double comp = double(s.n) * double(s.k) * double(s.m) / hw.mac_per_s;
    return mem > comp;
}

// ---------------------------------------------------------------------------
// sync presets

const std::vector<SyncPreset>& sync_presets() {
    // Totals measured for a 1378-kernel inference, expressed per kernel.
    static const std::vector<SyncPreset> presets = {
        {"none", 0.0},
        {"pytorch", 12.92e-3 / 1378.0},
        {"cuda_graph", 1.72e-3 / 1378.0},
        {"software_barrier", 0.86e-3 / 1378.0},
    };
    return presets;
}

double sync_per_kernel(const std::string& name) {
    for (const auto& p : sync_presets())
        if (p.name == name) return p.seconds_per_kernel;
    throw std::invalid_argument("unknown sync preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// tile planner

namespace {

constexpr std::array<int64_t, 5> kTileDims = {16, 32, 64, 128, 256};
constexpr std::array<int, 4> kSplits = {1, 2, 4, 8};

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

int64_t pow2floor(int64_t v) {
    int64_t p = 1;
    while (p * 2 <= v) p *= 2;
    return p;
}

int64_t derive_bk(int64_t k, int split) {
    int64_t q = std::max<int64_t>(1, k / split);
    int64_t bk = pow2floor(q);
    bk = std::min<int64_t>(bk, 64);
    bk = std::max<int64_t>(bk, 16);
    return bk;
}

}  // namespace

int64_t block_count(const GemmShape& s, const TileConfig& t) {
    return ceil_div(s.n, t.bm) * ceil_div(s.m, t.bn) * t.split_k;
}

double wave_efficiency(int64_t blocks, int sm_count) {
    int64_t waves = ceil_div(blocks, sm_count);
    return double(blocks) / double(waves * sm_count);
}

// A bm x bn tile performs bm*bn MACs per bm+bn operands staged from shared
// memory, so its arithmetic intensity is bm*bn/(bm+bn).  Tiles below the
// MAC-saturating intensity (64x64 and up) run the units at a reduced rate.
constexpr double kMacSaturatingIntensity = 32.0;

double modeled_time(const GemmShape& s, const HardwareSpec& hw, const TileConfig& t) {
    double mem = double(hw.dtype_bytes) * double(s.k) * double(s.m) /
                 hw.bandwidth_bytes_per_s;
    double comp = double(s.n) * double(s.k) * double(s.m) / hw.mac_per_s;
    double intensity = double(t.bm * t.bn) / double(t.bm + t.bn);
    double derate = std::max(1.0, kMacSaturatingIntensity / intensity);
    double eff = wave_efficiency(block_count(s, t), hw.sm_count);
    // Split-k writes (and re-reads) partial results once per extra split.
    double extra = double(t.split_k - 1) * double(s.n) * double(s.m) * 8.0 /
                   hw.bandwidth_bytes_per_s;
    return std::max(mem, comp * derate) / eff + extra;
}

std::string KernelPlan::strategy() const {
    std::ostringstream os;
    if (partial) {
        os << "partial split";
        if (tile2.split_k > 1) os << "-" << tile2.split_k;
        return os.str();
    }
    os << "triton " << tile.bm << "," << tile.bn << "," << tile.bk;
    if (tile.split_k > 1) os << "," << tile.split_k;
    return os.str();
}

KernelPlan plan_tiles(const GemmShape& s, const HardwareSpec& hw) {
    KernelPlan best;
    bool first = true;
    for (int64_t bm : kTileDims) {
        for (int64_t bn : kTileDims) {
            for (int split : kSplits) {
                if (split > 1 && int64_t(split) * 16 > s.k) continue;  // each K-split needs a full slab
                TileConfig t{bm, bn, derive_bk(s.k, split), split};
                double tm = modeled_time(s, hw, t);
                bool take = first || tm < best.modeled_s;
                if (!take && tm == best.modeled_s) {
                    auto key = std::make_tuple(t.bm, t.bn, t.bk, t.split_k);
                    auto cur = std::make_tuple(best.tile.bm, best.tile.bn, best.tile.bk,
                                               best.tile.split_k);
                    take = key < cur;
                }
                if (take) {
                    best.tile = t;
                    best.blocks = block_count(s, t);
                    best.wave_eff = wave_efficiency(best.blocks, hw.sm_count);
                    best.modeled_s = tm;
                    first = false;
                }
            }
        }
    }
    return best;
}

namespace {

struct PartPick {
    bool ok = false;
    TileConfig t;
    double time = 0.0;
};

// Best tile whose launch covers the device with exactly one full wave.
PartPick best_exact_fill(const GemmShape& s, const HardwareSpec& hw) {
    PartPick best;
    for (int64_t bm : kTileDims) {
        for (int64_t bn : kTileDims) {
            for (int split : kSplits) {
                if (split > 1 && int64_t(split) * 16 > s.k) continue;  // each K-split needs a full slab
                TileConfig t{bm, bn, derive_bk(s.k, split), split};
                if (block_count(s, t) != hw.sm_count) continue;
                double tm = modeled_time(s, hw, t);
                bool take = !best.ok || tm < best.time;
                if (!take && tm == best.time) {
                    // prefer fewer splits, then squarer (larger min-dim) tiles
                    auto key = std::make_tuple(t.split_k, -std::min(t.bm, t.bn), t.bm,
                                               t.bn, t.bk);
                    auto cur = std::make_tuple(best.t.split_k,
                                               -std::min(best.t.bm, best.t.bn),
                                               best.t.bm, best.t.bn, best.t.bk);
                    take = key < cur;
                }
                if (take) {
                    best.ok = true;
                    best.t = t;
                    best.time = tm;
                }
            }
        }
    }
    return best;
}

}  // namespace

KernelPlan plan_partial_split(const GemmShape& s, const HardwareSpec& hw) {
    KernelPlan single = plan_tiles(s, hw);

    bool found = false;
    double best_total = 0;
    int64_t best_m1 = 0;
    PartPick best_a, best_b;
    auto cand_key = [](const PartPick& a, const PartPick& b, int64_t m1) {
        return std::make_tuple(a.t.split_k + b.t.split_k, -std::min(a.t.bm, a.t.bn),
                               -std::min(b.t.bm, b.t.bn), -m1, a.t.bm, a.t.bn, a.t.bk,
                               a.t.split_k, b.t.bm, b.t.bn, b.t.bk, b.t.split_k);
    };
    for (int64_t m1 = 16; m1 <= s.m - 16; m1 += 16) {
        GemmShape pa{s.n, s.k, m1};
        GemmShape pb{s.n, s.k, s.m - m1};
        PartPick a = best_exact_fill(pa, hw);
        PartPick b = best_exact_fill(pb, hw);
        if (!a.ok || !b.ok) continue;
        double total = a.time + b.time;
        bool take = !found || total < best_total;
        if (!take && total == best_total)
            take = cand_key(a, b, m1) < cand_key(best_a, best_b, best_m1);
        if (take) {
            found = true;
            best_total = total;
            best_m1 = m1;
            best_a = a;
            best_b = b;
        }
    }

    if (!found || best_total >= single.modeled_s) return single;

    KernelPlan plan;
    plan.partial = true;
    plan.m1 = best_m1;
    plan.m2 = s.m - best_m1;
    plan.tile = best_a.t;
    plan.blocks = hw.sm_count;
    plan.tile2 = best_b.t;
    plan.blocks2 = hw.sm_count;
    plan.wave_eff = 1.0;
    plan.modeled_s = best_total;
    return plan;
}

// ---------------------------------------------------------------------------
// calibration

std::string serialize_calibration(const CalibrationTable& t) {
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["hardware"] = t.hardware;
    j["views"] = t.views;
    ordered_json rows = ordered_json::array();
    for (const auto& r : t.rows) {
        ordered_json row;
        row["shape"] = r.shape;
        row["repeat"] = r.repeat;
        row["actual_ms"] = r.actual_ms;
        rows.push_back(row);
    }
    j["rows"] = rows;
    if (t.has_reported_totals) {
        j["stage_totals_ms"] = {{"ve", t.reported_ve_ms},
                                {"llm", t.reported_llm_ms},
                                {"ae", t.reported_ae_ms}};
        j["total_ms"] = t.reported_total_ms;
    }
    return j.dump(2) + "\n";
}

CalibrationTable parse_calibration(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const ordered_json::parse_error& e) {
        throw ParseError(std::string("calibration document: ") + e.what());
    }
    Obj o(j, "calibration");
    CalibrationTable t;
    o.num<int>("schema_version", kSchemaVersion);
    t.hardware = o.str("hardware", "");
    t.views = o.num<int>("views", 0);
    const ordered_json* rows = o.get("rows", true);
    if (!rows->is_array()) throw ParseError("calibration.rows: expected an array");
    int i = 0;
    for (const auto& rj : *rows) {
        Obj ro(rj, "calibration.rows[" + std::to_string(i) + "]");
        CalibrationRow r;
        r.shape = ro.str("shape", "", true);
        r.repeat = ro.num<int64_t>("repeat", 1);
        r.actual_ms = ro.num<double>("actual_ms", 0.0, true);
        ro.finish();
        t.rows.push_back(std::move(r));
        ++i;
    }
    if (const ordered_json* st = o.get("stage_totals_ms", false)) {
        Obj so(*st, "calibration.stage_totals_ms");
        t.has_reported_totals = true;
        t.reported_ve_ms = so.num<double>("ve", 0.0, true);
        t.reported_llm_ms = so.num<double>("llm", 0.0, true);
        t.reported_ae_ms = so.num<double>("ae", 0.0, true);
        so.finish();
        t.reported_total_ms = o.num<double>("total_ms", 0.0, true);
    } else {
        o.num<double>("total_ms", 0.0);
    }
    o.finish();
    return t;
}

CalibrationTable load_calibration(const std::string& path) {
    return parse_calibration(read_text_file(path));
}

namespace {

std::string join_rows(const std::vector<std::string>& rows) {
    std::string s = "calibration reconciliation failed:";
    for (const auto& r : rows) s += "\n  " + r;
    return s;
}

}  // namespace

CalibrationError::CalibrationError(const std::vector<std::string>& rows)
    : std::runtime_error(join_rows(rows)), mismatches(rows) {}

// ---------------------------------------------------------------------------
// analysis

std::string gemm_shape_str(const GemmShape& s) {
    std::ostringstream os;
    os << s.n << "x" << s.k << "x" << s.m;
    return os.str();
}

std::string attn_shape_str(const AttnDims& a) {
    std::ostringstream os;
    os << "attn " << a.heads << "x" << a.q_tokens << "^2x" << a.head_dim;
    return os.str();
}

namespace {

// Display tag for the folded RMS scale. The vision tower's norms are shown
// as "ln" (they come from layer-norm-style blocks); rotary rows show "rms".
std::string rms_tag(const Node& n) {
    bool has_rope = false;
    for (const auto& e : n.epilogue)
        if (e.op == EpilogueOp::Rope) has_rope = true;
    switch (n.stage) {
        case Stage::VE: return "ln";
        case Stage::LLM: return has_rope ? "rms" : "ln";
        case Stage::AE: return "rms";
    }
    return "rms";
}

std::string oprs_for(const Node& n) {
    std::vector<std::string> tags;
    if (!n.prologue.empty()) tags.push_back(n.prologue);
    bool has_rms = false, has_res = false, has_gelu = false;
    for (const auto& e : n.epilogue) {
        if (e.op == EpilogueOp::RmsScale) has_rms = true;
        if (e.op == EpilogueOp::Residual) has_res = true;
        if (e.op == EpilogueOp::Gelu) has_gelu = true;
    }
    for (const auto& e : n.epilogue) {
        switch (e.op) {
            case EpilogueOp::RmsScale:
                // fused Euler-step rows display only the residual update
                if (!has_res) tags.push_back(rms_tag(n));
                break;
            case EpilogueOp::Bias:
                if (!has_gelu && !(has_res && has_rms)) tags.push_back("bias");
                break;
            case EpilogueOp::Rope: tags.push_back("rope"); break;
            case EpilogueOp::Gelu: tags.push_back("gelu"); break;
            case EpilogueOp::Silu: tags.push_back("silu"); break;
            case EpilogueOp::GeluGate: tags.push_back("gate"); break;
            case EpilogueOp::SiluBias: tags.push_back("bias, silu"); break;
            case EpilogueOp::Residual: tags.push_back("res"); break;
            case EpilogueOp::Softmax: tags.push_back("softmax"); break;
        }
    }
    std::string out;
    for (size_t i = 0; i < tags.size(); ++i) {
        if (i) out += ", ";
        out += tags[i];
    }
    return out;
}

CostRow gemm_row(const Node& n, const HardwareSpec& hw) {
    CostRow row;
    row.node_id = n.id;
    row.stage = n.stage;
    row.times = n.repeat;
    row.shape = n.shape;
    row.shape_str = gemm_shape_str(n.shape);
    row.roofline_ms = roofline_gemm(n.shape, hw) * double(n.repeat) * 1e3;
    KernelPlan plan = plan_partial_split(n.shape, hw);
    row.modeled_ms = plan.modeled_s * double(n.repeat) * 1e3;
    row.memory_bound = gemm_memory_bound(n.shape, hw);
    row.strategy =
        n.kind == NodeKind::FusedGatedGemm ? "fused gate" : plan.strategy();
    row.oprs = oprs_for(n);
    return row;
}

int stage_index(Stage s) { return s == Stage::VE ? 0 : (s == Stage::LLM ? 1 : 2); }

std::string fmt_ms(double ms) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << ms;
    return os.str();
}

}  // namespace

Breakdown analyze(const Graph& g, const HardwareSpec& hw,
                  const std::string& sync_preset_name, const CalibrationTable* calib) {
    Breakdown b;
    b.hardware = hw.name;
    b.sync_preset = sync_preset_name;
    b.sync_s_per_kernel = sync_per_kernel(sync_preset_name);
    b.kernel_count = count_gemm_instances(g);

    for (const Node& n : g.nodes) {
        if (n.kind == NodeKind::Gemm || n.kind == NodeKind::FusedGatedGemm) {
            b.rows.push_back(gemm_row(n, hw));
        } else if (n.kind == NodeKind::Attention) {
            if (n.attn.q_tokens == n.attn.kv_tokens) {
                CostRow row;
                row.node_id = n.id;
                row.stage = n.stage;
                row.times = n.repeat;
                row.attention = true;
                row.attn = n.attn;
                row.shape_str = attn_shape_str(n.attn);
                row.roofline_ms =
                    roofline_attention(n.attn, hw) * double(n.repeat) * 1e3;
                row.modeled_ms = row.roofline_ms;
                row.memory_bound = false;
                row.strategy = "torch";
                row.oprs = "softmax";
                b.rows.push_back(std::move(row));
            } else {
                // Cross attention costs as two plain GEMMs over all heads.
                int64_t rows_out = int64_t(n.attn.heads) * n.attn.q_tokens;
                Node score = n;
                score.id = n.id + ".score";
                score.kind = NodeKind::Gemm;
                score.shape = {rows_out, n.attn.head_dim, n.attn.kv_tokens};
                score.epilogue.clear();
                score.prologue.clear();
                CostRow srow = gemm_row(score, hw);
                srow.oprs = "softmax";
                b.rows.push_back(std::move(srow));
                Node value = n;
                value.id = n.id + ".value";
                value.kind = NodeKind::Gemm;
                value.shape = {rows_out, n.attn.kv_tokens, n.attn.head_dim};
                value.epilogue.clear();
                value.prologue.clear();
                CostRow vrow = gemm_row(value, hw);
                vrow.oprs = "";
                b.rows.push_back(std::move(vrow));
            }
        }
    }

    for (const CostRow& r : b.rows) {
        b.stages[stage_index(r.stage)].roofline_ms += r.roofline_ms;
        b.stages[stage_index(r.stage)].modeled_ms += r.modeled_ms;
        b.roofline_total_ms += r.roofline_ms;
        b.modeled_total_ms += r.modeled_ms;
    }
    b.sync_total_ms = double(b.kernel_count) * b.sync_s_per_kernel * 1e3;
    b.roofline_with_sync_ms = b.roofline_total_ms + b.sync_total_ms;

    if (calib) {
        std::vector<std::string> mismatches;
        if (calib->views != 0 && calib->views != g.config.views)
            mismatches.push_back("views: table covers " + std::to_string(calib->views) +
                                 ", graph has " + std::to_string(g.config.views));
        for (const auto& cr : calib->rows) {
            bool matched = false;
            for (auto& row : b.rows) {
                if (row.has_actual || row.shape_str != cr.shape ||
                    row.times != cr.repeat)
                    continue;
                row.has_actual = true;
                row.actual_ms = cr.actual_ms;
                matched = true;
                break;
            }
            if (!matched)
                mismatches.push_back(cr.shape + " x" + std::to_string(cr.repeat) +
                                     ": no unmatched graph row with this shape");
        }
        if (!mismatches.empty()) throw CalibrationError(mismatches);

        b.has_calibration = true;
        for (const CostRow& r : b.rows) {
            if (!r.has_actual) continue;
            auto& st = b.stages[stage_index(r.stage)];
            st.has_actual = true;
            st.actual_ms += r.actual_ms;
            b.actual_row_sum_ms += r.actual_ms;
        }
        if (calib->has_reported_totals) {
            b.has_reported_totals = true;
            b.reported_stage_ms[0] = calib->reported_ve_ms;
            b.reported_stage_ms[1] = calib->reported_llm_ms;
            b.reported_stage_ms[2] = calib->reported_ae_ms;
            b.reported_total_ms = calib->reported_total_ms;
            if (std::abs(b.reported_total_ms - b.actual_row_sum_ms) > 5e-4)
                b.notes.push_back(
                    "measured rows sum to " + fmt_ms(b.actual_row_sum_ms) +
                    " ms but the measurement source reports " +
                    fmt_ms(b.reported_total_ms) +
                    " ms; both are shown, neither is adjusted");
        }
        for (const CostRow& r : b.rows) {
            if (r.attention && r.has_actual && r.actual_ms > 1.5 * r.roofline_ms)
                b.notes.push_back("calibration gap: " + r.shape_str + " x" +
                                  std::to_string(r.times) + " measured " +
                                  fmt_ms(r.actual_ms) + " ms vs roofline " +
                                  fmt_ms(r.roofline_ms) + " ms");
        }

        // Measured cost of one prunable trunk layer: rows unrolled exactly
        // layers-1 times, averaged per layer.
        int64_t pruned_repeat = int64_t(g.config.llm.layers) - 1;
        double sum = 0;
        bool any = false;
        for (const CostRow& r : b.rows) {
            if (r.stage == Stage::LLM && r.times == pruned_repeat && r.has_actual) {
                sum += r.actual_ms;
                any = true;
            }
        }
        if (any && pruned_repeat > 0) {
            b.has_pruned_layer_cost = true;
            b.pruned_layer_cost_ms = sum / double(pruned_repeat);
        }
    }
    return b;
}

}  // namespace rtvla

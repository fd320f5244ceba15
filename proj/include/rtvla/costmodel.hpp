#pragma once

// Latency prediction: roofline bounds per kernel, a tile/wave-quantization
// model for concrete launch plans, kernel-synchronization overhead presets,
// and reconciliation against measured timings.

#include "rtvla/graph.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rtvla {

struct HardwareSpec {
    std::string name = "rtx4090";
    double bandwidth_bytes_per_s = 1.01e12;
    double mac_per_s = 9.14e13;
    int sm_count = 128;
    int dtype_bytes = 2;
    double sync_overhead_s_per_kernel = 0.0;
    int64_t l2_bytes = 75497472;  // activations assumed resident here
};

HardwareSpec rtx4090();
std::string serialize_hardware(const HardwareSpec& hw);
HardwareSpec parse_hardware(const std::string& text);
HardwareSpec load_hardware(const std::string& path);
// Accepts a builtin name ("rtx4090"), a file path, or a name resolved under
// $RTVLA_HW_DIR/<name>.json.
HardwareSpec resolve_hardware(const std::string& name_or_path);

// Seconds for one instance. The memory term covers the weight matrix only;
// activations are assumed cache-resident.
double roofline_gemm(const GemmShape& s, const HardwareSpec& hw);
// Seconds for one instance, both attention matmuls, compute term only.
double roofline_attention(const AttnDims& a, const HardwareSpec& hw);
// True when the bandwidth term strictly exceeds the compute term.
bool gemm_memory_bound(const GemmShape& s, const HardwareSpec& hw);

struct SyncPreset {
    std::string name;
    double seconds_per_kernel = 0.0;
};
const std::vector<SyncPreset>& sync_presets();
double sync_per_kernel(const std::string& name);  // invalid_argument if unknown

// --------------------------------------------------------------------------
// tile planner

struct TileConfig {
    int64_t bm = 64, bn = 64, bk = 64;
    int split_k = 1;
};

int64_t block_count(const GemmShape& s, const TileConfig& t);
double wave_efficiency(int64_t blocks, int sm_count);
// max(mem, compute*derate)/wave_eff + extra result traffic for split-k.
double modeled_time(const GemmShape& s, const HardwareSpec& hw, const TileConfig& t);

struct KernelPlan {
    TileConfig tile;
    int64_t blocks = 0;
    double wave_eff = 1.0;
    double modeled_s = 0.0;
    // Column-split launch: two kernels sized so each fills the device exactly.
    bool partial = false;
    int64_t m1 = 0, m2 = 0;
    TileConfig tile2;
    int64_t blocks2 = 0;
    std::string strategy() const;  // "triton 64,64,64[,2]" / "partial split-2"
};

KernelPlan plan_tiles(const GemmShape& s, const HardwareSpec& hw);
// Tries splitting columns into two exact-device-fill kernels; returns the
// single-kernel plan unless the split is strictly faster.
KernelPlan plan_partial_split(const GemmShape& s, const HardwareSpec& hw);

// --------------------------------------------------------------------------
// calibration (measured timings)

struct CalibrationRow {
    std::string shape;  // display string, e.g. "512x2048x2560" or "attn 8x512^2x256"
    int64_t repeat = 1;
    double actual_ms = 0.0;  // row total across instances
};

struct CalibrationTable {
    std::string hardware;
    int views = 0;
    std::vector<CalibrationRow> rows;
    bool has_reported_totals = false;
    double reported_ve_ms = 0, reported_llm_ms = 0, reported_ae_ms = 0;
    double reported_total_ms = 0;
};

std::string serialize_calibration(const CalibrationTable& t);
CalibrationTable parse_calibration(const std::string& text);
CalibrationTable load_calibration(const std::string& path);

struct CalibrationError : public std::runtime_error {
    std::vector<std::string> mismatches;
    explicit CalibrationError(const std::vector<std::string>& rows);
};

// --------------------------------------------------------------------------
// graph analysis

struct CostRow {
    std::string node_id;
    Stage stage = Stage::VE;
    int64_t times = 1;
    std::string shape_str;
    bool attention = false;  // fused self-attention display row
    GemmShape shape;         // valid for GEMM-style rows
    AttnDims attn;           // valid when attention
    double roofline_ms = 0.0;  // row total
    double modeled_ms = 0.0;   // row total
    bool memory_bound = false;
    std::string strategy;
    std::string oprs;
    bool has_actual = false;
    double actual_ms = 0.0;  // row total
};

struct StageSubtotal {
    double roofline_ms = 0, modeled_ms = 0, actual_ms = 0;
    bool has_actual = false;
};

struct Breakdown {
    std::string hardware;
    std::vector<CostRow> rows;
    StageSubtotal stages[3];  // VE, LLM, AE
    double roofline_total_ms = 0, modeled_total_ms = 0;
    std::string sync_preset = "none";
    double sync_s_per_kernel = 0;
    int64_t kernel_count = 0;
    double sync_total_ms = 0;
    double roofline_with_sync_ms = 0;
    bool has_calibration = false;
    double actual_row_sum_ms = 0;       // sum of measured rows
    bool has_reported_totals = false;   // totals the measurement source printed
    double reported_stage_ms[3] = {0, 0, 0};
    double reported_total_ms = 0;
    bool has_pruned_layer_cost = false;
    double pruned_layer_cost_ms = 0;  // measured cost of one prunable layer
    std::vector<std::string> notes;
};

// sync_preset_name must name a preset from sync_presets().
// calib == nullptr skips the measured column; rows that cannot be matched by
// (shape string, repeat) raise CalibrationError listing them.
Breakdown analyze(const Graph& g, const HardwareSpec& hw,
                  const std::string& sync_preset_name,
                  const CalibrationTable* calib);

std::string gemm_shape_str(const GemmShape& s);
std::string attn_shape_str(const AttnDims& a);

}  // namespace rtvla

#include "rtvla/report.hpp"

#include "rtvla/serialize.hpp"

#include "json.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rtvla {

using nlohmann::ordered_json;

namespace {

const char* kStageLabel[3] = {"Vision Encoder", "LLM", "Action Expert"};
const char* kStageKey[3] = {"ve", "llm", "ae"};

double round3(double ms) { return std::round(ms * 1000.0) / 1000.0; }

std::string fmt(double ms) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << ms;
    return os.str();
}

int stage_index(Stage s) { return s == Stage::VE ? 0 : (s == Stage::LLM ? 1 : 2); }

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        out += c;
    }
    out += "\"";
    return out;
}

std::string render_markdown(const Breakdown& b) {
    std::ostringstream os;
    os << "| Times | Shape | Roofline | Modeled | Strategy | Oprs | Calibrated |\n";
    os << "|---:|:---|---:|---:|:---|:---|---:|\n";
    int prev_stage = -1;
    auto subtotal_row = [&](int si) {
        const StageSubtotal& st = b.stages[si];
        os << "| | **" << kStageLabel[si] << "** | **" << fmt(st.roofline_ms)
           << "** | **" << fmt(st.modeled_ms) << "** | | | "
           << (st.has_actual ? "**" + fmt(st.actual_ms) + "**" : "") << " |\n";
    };
    for (const CostRow& r : b.rows) {
        int si = stage_index(r.stage);
        if (prev_stage >= 0 && si != prev_stage) subtotal_row(prev_stage);
        prev_stage = si;
        os << "| " << r.times << " | " << r.shape_str << " | " << fmt(r.roofline_ms)
           << " | " << fmt(r.modeled_ms) << " | " << r.strategy << " | " << r.oprs
           << " | " << (r.has_actual ? fmt(r.actual_ms) : "/") << " |\n";
    }
    if (prev_stage >= 0) subtotal_row(prev_stage);
    os << "| | **In total** | **" << fmt(b.roofline_total_ms) << "** | **"
       << fmt(b.modeled_total_ms) << "** | | | "
       << (b.has_calibration ? "**" + fmt(b.actual_row_sum_ms) + "**" : "") << " |\n";
    os << "\n";
    os << "Kernels: " << b.kernel_count << "\n";
    os << "Sync preset: " << b.sync_preset << " ("
       << fmt(b.sync_s_per_kernel * 1e6) << " us/kernel, total "
       << fmt(b.sync_total_ms) << " ms)\n";
    os << "Roofline total with sync: " << fmt(b.roofline_with_sync_ms) << " ms\n";
    if (b.has_reported_totals) {
        os << "Reported calibrated totals: " << kStageLabel[0] << " "
           << fmt(b.reported_stage_ms[0]) << " ms, " << kStageLabel[1] << " "
           << fmt(b.reported_stage_ms[1]) << " ms, " << kStageLabel[2] << " "
           << fmt(b.reported_stage_ms[2]) << " ms, total "
           << fmt(b.reported_total_ms) << " ms\n";
    }
    if (b.has_pruned_layer_cost)
        os << "Measured cost per prunable trunk layer: "
           << fmt(b.pruned_layer_cost_ms) << " ms\n";
    for (const auto& note : b.notes) os << "Note: " << note << "\n";
    return os.str();
}

std::string render_csv(const Breakdown& b) {
    std::ostringstream os;
    os << "kind,times,shape,roofline_ms,modeled_ms,strategy,oprs,calibrated_ms\n";
    int prev_stage = -1;
    auto subtotal_row = [&](int si) {
        const StageSubtotal& st = b.stages[si];
        os << "subtotal,," << csv_quote(kStageLabel[si]) << "," << fmt(st.roofline_ms)
           << "," << fmt(st.modeled_ms) << ",,,"
           << (st.has_actual ? fmt(st.actual_ms) : "") << "\n";
    };
    for (const CostRow& r : b.rows) {
        int si = stage_index(r.stage);
        if (prev_stage >= 0 && si != prev_stage) subtotal_row(prev_stage);
        prev_stage = si;
        os << "row," << r.times << "," << csv_quote(r.shape_str) << ","
           << fmt(r.roofline_ms) << "," << fmt(r.modeled_ms) << ","
           << csv_quote(r.strategy) << "," << csv_quote(r.oprs) << ","
           << (r.has_actual ? fmt(r.actual_ms) : "") << "\n";
    }
    if (prev_stage >= 0) subtotal_row(prev_stage);
    os << "total,,," << fmt(b.roofline_total_ms) << "," << fmt(b.modeled_total_ms)
       << ",,," << (b.has_calibration ? fmt(b.actual_row_sum_ms) : "") << "\n";
    os << "sync," << b.kernel_count << "," << csv_quote(b.sync_preset) << ","
       << fmt(b.sync_total_ms) << ",,,,\n";
    os << "total_with_sync,,," << fmt(b.roofline_with_sync_ms) << ",,,,\n";
    return os.str();
}

std::string render_json(const Breakdown& b) {
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["hardware"] = b.hardware;
    j["sync_preset"] = b.sync_preset;
    j["kernel_count"] = b.kernel_count;
    ordered_json rows = ordered_json::array();
    for (const CostRow& r : b.rows) {
        ordered_json row;
        row["node"] = r.node_id;
        row["stage"] = kStageKey[stage_index(r.stage)];
        row["times"] = r.times;
        row["shape"] = r.shape_str;
        row["roofline_ms"] = round3(r.roofline_ms);
        row["modeled_ms"] = round3(r.modeled_ms);
        row["memory_bound"] = r.memory_bound;
        row["strategy"] = r.strategy;
        row["oprs"] = r.oprs;
        if (r.has_actual) row["calibrated_ms"] = round3(r.actual_ms);
        rows.push_back(row);
    }
    j["rows"] = rows;
    ordered_json stages;
    for (int si = 0; si < 3; ++si) {
        ordered_json st;
        st["roofline_ms"] = round3(b.stages[si].roofline_ms);
        st["modeled_ms"] = round3(b.stages[si].modeled_ms);
        if (b.stages[si].has_actual)
            st["calibrated_ms"] = round3(b.stages[si].actual_ms);
        stages[kStageKey[si]] = st;
    }
    j["stage_totals"] = stages;
    ordered_json totals;
    totals["roofline_ms"] = round3(b.roofline_total_ms);
    totals["modeled_ms"] = round3(b.modeled_total_ms);
    totals["sync_ms"] = round3(b.sync_total_ms);
    totals["roofline_with_sync_ms"] = round3(b.roofline_with_sync_ms);
    if (b.has_calibration) totals["calibrated_row_sum_ms"] = round3(b.actual_row_sum_ms);
    if (b.has_reported_totals) {
        totals["reported_total_ms"] = round3(b.reported_total_ms);
        ordered_json rep;
        for (int si = 0; si < 3; ++si)
            rep[kStageKey[si]] = round3(b.reported_stage_ms[si]);
        totals["reported_stage_ms"] = rep;
    }
    j["totals"] = totals;
    if (b.has_pruned_layer_cost)
        j["pruned_layer_cost_ms"] = round3(b.pruned_layer_cost_ms);
    if (!b.notes.empty()) j["notes"] = b.notes;
    return j.dump(2) + "\n";
}

}  // namespace

std::string render_report(const Breakdown& b, const std::string& format) {
    if (format == "markdown") return render_markdown(b);
    if (format == "csv") return render_csv(b);
    if (format == "json") return render_json(b);
    throw std::invalid_argument("unknown report format '" + format +
                                "' (expected markdown, csv, or json)");
}

}  // namespace rtvla

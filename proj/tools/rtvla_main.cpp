// rtvla: graph construction, rewrite pipeline, latency analysis, kernel
// planning, and streaming simulation for pi0-class VLA inference.
//
// Exit codes: 0 success, 2 usage or document-parse error, 3 rewrite
// verification failure, 4 calibration mismatch, 5 scenario budget failure.

#include "CLI11.hpp"

#include "rtvla/builder.hpp"
#include "rtvla/costmodel.hpp"
#include "rtvla/graph.hpp"
#include "rtvla/passes.hpp"
#include "rtvla/report.hpp"
#include "rtvla/serialize.hpp"
#include "rtvla/streamsim.hpp"

#include <cinttypes>
#include <cstdio>
#include <string>
#include <vector>

namespace {

std::vector<std::string> split_passes(const std::string& arg) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos <= arg.size()) {
        size_t comma = arg.find(',', pos);
        if (comma == std::string::npos) comma = arg.size();
        std::string item = arg.substr(pos, comma - pos);
        if (!item.empty()) out.push_back(item);
        pos = comma + 1;
    }
    return out;
}

rtvla::Graph load_graph(const std::string& path) {
    try {
        return rtvla::parse_graph(rtvla::read_text_file(path));
    } catch (const rtvla::ParseError& e) {
        throw rtvla::ParseError(path + ": " + e.what());
    }
}

rtvla::GemmShape parse_shape(const std::string& text) {
    rtvla::GemmShape s;
    char extra = 0;
    if (std::sscanf(text.c_str(), "%" SCNd64 "x%" SCNd64 "x%" SCNd64 "%c", &s.n,
                    &s.k, &s.m, &extra) != 3 ||
        s.n <= 0 || s.k <= 0 || s.m <= 0)
        throw std::invalid_argument("bad GEMM shape '" + text +
                                    "' (expected NxKxM with positive sizes)");
    return s;
}

int cmd_build(int views, int prompt_tokens, bool naive, const std::string& out) {
    rtvla::ModelConfig mc = rtvla::default_config();
    mc.views = views;
    mc.prompt_tokens = prompt_tokens;
    rtvla::Graph g =
        naive ? rtvla::build_pi0_graph_naive(mc) : rtvla::build_pi0_graph(mc);
    rtvla::write_text_file(out, rtvla::serialize_graph(g));
    std::printf("wrote %s\n", out.c_str());
    std::printf("views %d, prompt tokens %d: %zu nodes, %" PRId64
                " gemm instances\n",
                views, prompt_tokens, g.nodes.size(),
                rtvla::count_gemm_instances(g));
    return 0;
}

int cmd_optimize(const std::string& in, const std::string& out,
                 const rtvla::PipelineOptions& opt) {
    rtvla::Graph g = load_graph(in);
    rtvla::PipelineResult res = rtvla::run_pipeline(g, opt);
    for (const rtvla::PassReport& p : res.report.passes) {
        std::printf("%-22s sites %3d   nodes %3" PRId64 " -> %3" PRId64
                    "   gemm instances %5" PRId64 " -> %5" PRId64 "\n",
                    p.name.c_str(), p.sites, p.nodes_before, p.nodes_after,
                    p.gemm_before, p.gemm_after);
        for (const std::string& note : p.weight_notes)
            std::printf("    %s\n", note.c_str());
    }
    rtvla::write_text_file(out, rtvla::serialize_graph(res.graph));
    std::printf("wrote %s\n", out.c_str());
    if (res.report.verified) {
        std::printf("verification: %d seeds, tolerance %.1e, max deviation %.3e\n",
                    res.report.seeds, res.report.tolerance,
                    res.report.max_deviation);
        if (!res.report.verified_ok) {
            std::fprintf(stderr, "verification FAILED in pass '%s'\n",
                         res.report.failed_pass.c_str());
            return 3;
        }
    }
    return 0;
}

int cmd_analyze(const std::string& in, const std::string& hw,
                const std::string& sync, const std::string& calib,
                const std::string& format, const std::string& out) {
    rtvla::Graph g = load_graph(in);
    rtvla::HardwareSpec spec = rtvla::resolve_hardware(hw);
    rtvla::CalibrationTable table;
    bool has_calib = !calib.empty();
    if (has_calib) table = rtvla::load_calibration(calib);
    rtvla::Breakdown b =
        rtvla::analyze(g, spec, sync, has_calib ? &table : nullptr);
    std::string report = rtvla::render_report(b, format);
    if (out.empty()) {
        std::fputs(report.c_str(), stdout);
    } else {
        rtvla::write_text_file(out, report);
        std::printf("wrote %s\n", out.c_str());
    }
    std::printf("roofline ms: VE %.3f, LLM %.3f, AE %.3f, total %.3f",
                b.stages[0].roofline_ms, b.stages[1].roofline_ms,
                b.stages[2].roofline_ms, b.roofline_total_ms);
    if (b.sync_total_ms > 0.0)
        std::printf(" (+%.3f sync = %.3f)", b.sync_total_ms,
                    b.roofline_with_sync_ms);
    std::printf("\n");
    if (b.has_reported_totals)
        std::printf("calibrated ms: VE %.3f, LLM %.3f, AE %.3f, total %.3f\n",
                    b.reported_stage_ms[0], b.reported_stage_ms[1],
                    b.reported_stage_ms[2], b.reported_total_ms);
    return 0;
}

int cmd_plan(const std::string& shape_text, const std::string& hw) {
    rtvla::GemmShape s = parse_shape(shape_text);
    rtvla::HardwareSpec spec = rtvla::resolve_hardware(hw);
    rtvla::KernelPlan plan = rtvla::plan_partial_split(s, spec);
    std::printf("shape %s on %s\n", rtvla::gemm_shape_str(s).c_str(),
                spec.name.c_str());
    std::printf("roofline %.3f us, %s bound\n",
                rtvla::roofline_gemm(s, spec) * 1e6,
                rtvla::gemm_memory_bound(s, spec) ? "memory" : "compute");
    std::printf("strategy: %s\n", plan.strategy().c_str());
    if (plan.partial) {
        std::printf("  part 1: m=%" PRId64 " tile %" PRId64 ",%" PRId64 ",%" PRId64
                    ",%d  blocks %" PRId64 "\n",
                    plan.m1, plan.tile.bm, plan.tile.bn, plan.tile.bk,
                    plan.tile.split_k, plan.blocks);
        std::printf("  part 2: m=%" PRId64 " tile %" PRId64 ",%" PRId64 ",%" PRId64
                    ",%d  blocks %" PRId64 "\n",
                    plan.m2, plan.tile2.bm, plan.tile2.bn, plan.tile2.bk,
                    plan.tile2.split_k, plan.blocks2);
    } else {
        std::printf("  blocks %" PRId64 ", wave efficiency %.4f\n", plan.blocks,
                    plan.wave_eff);
    }
    std::printf("modeled %.3f us\n", plan.modeled_s * 1e6);
    return 0;
}

int cmd_simulate(const std::string& config, const std::string& trace_path,
                 const std::string& report_path) {
    rtvla::SimConfig cfg;
    if (!config.empty()) cfg = rtvla::load_sim_config(config);
    rtvla::StreamTrace tr = rtvla::simulate(cfg);
    rtvla::LoopReport lr = rtvla::measure_loops(tr);
    std::fputs(rtvla::loop_report_summary(lr).c_str(), stdout);
    if (!trace_path.empty()) {
        rtvla::export_trace(tr, trace_path);
        std::printf("wrote %s (%zu events)\n", trace_path.c_str(),
                    tr.events.size());
    }
    if (!report_path.empty()) {
        rtvla::write_text_file(report_path, rtvla::loop_report_json(lr));
        std::printf("wrote %s\n", report_path.c_str());
    }
    return 0;
}

int cmd_pen_check(const std::string& config, double offset, double inference) {
    rtvla::SimConfig cfg;
    if (!config.empty()) cfg = rtvla::load_sim_config(config);
    if (inference >= 0.0) cfg.inference_time = inference;
    rtvla::PenReport r = offset < 0.0 ? rtvla::pen_worst_case(cfg)
                                      : rtvla::pen_scenario(cfg, offset);
    for (const rtvla::PenTerm& t : r.terms)
        std::printf("%-20s %7.1f ms\n", t.name.c_str(), t.seconds * 1e3);
    std::printf("%-20s %7.1f ms (budget %.1f ms)\n", "total", r.total * 1e3,
                rtvla::kReactionBudget * 1e3);
    std::printf("%s\n", r.success ? "PASS: within reaction budget"
                                  : "FAIL: exceeds reaction budget");
    return r.success ? 0 : 5;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"graph, latency, and streaming analysis for pi0-class VLA inference"};
    app.require_subcommand(1);
    int rc = 0;

    // build
    auto* build = app.add_subcommand("build", "emit the inference graph document");
    int views = 2;
    int prompt_tokens = 0;
    std::string build_out;
    build->add_option("--views", views, "camera views")->check(CLI::Range(1, 3));
    bool build_naive = false;
    build->add_option("--prompt-tokens", prompt_tokens, "extra prompt tokens")
        ->check(CLI::NonNegativeNumber);
    build->add_flag("--naive", build_naive,
                    "emit the unoptimized reference graph");
    build->add_option("--out", build_out, "output graph path")->required();
    build->callback(
        [&] { rc = cmd_build(views, prompt_tokens, build_naive, build_out); });

    // optimize
    auto* opt = app.add_subcommand("optimize", "run rewrite passes over a graph");
    std::string opt_in, opt_out, passes_arg;
    bool verify = false;
    int seeds = 10;
    opt->add_option("--in", opt_in, "input graph path")->required();
    opt->add_option("--out", opt_out, "output graph path")->required();
    auto* passes_opt = opt->add_option(
        "--passes", passes_arg, "comma-separated pass list (empty = none)");
    opt->add_flag("--verify", verify, "numerically verify each pass");
    opt->add_option("--seeds", seeds, "verification seeds")
        ->check(CLI::PositiveNumber);
    opt->callback([&] {
        rtvla::PipelineOptions po;
        if (passes_opt->count() > 0) po.passes = split_passes(passes_arg);
        po.verify = verify;
        po.seeds = seeds;
        rc = cmd_optimize(opt_in, opt_out, po);
    });

    // analyze
    auto* an = app.add_subcommand("analyze", "roofline/latency report for a graph");
    std::string an_in, an_hw = "rtx4090", an_sync = "none", an_calib,
                an_format = "markdown", an_out;
    an->add_option("--in", an_in, "input graph path")->required();
    an->add_option("--hw", an_hw, "hardware preset name or spec path");
    an->add_option("--sync", an_sync,
                   "sync preset: none|pytorch|cuda_graph|software_barrier");
    an->add_option("--calib", an_calib, "calibration table path");
    an->add_option("--format", an_format, "report format: markdown|csv|json");
    an->add_option("--out", an_out, "report output path (default stdout)");
    an->callback(
        [&] { rc = cmd_analyze(an_in, an_hw, an_sync, an_calib, an_format, an_out); });

    // plan
    auto* plan = app.add_subcommand("plan", "tile/split plan for one GEMM shape");
    std::string plan_shape, plan_hw = "rtx4090";
    plan->add_option("--shape", plan_shape, "GEMM shape NxKxM")->required();
    plan->add_option("--hw", plan_hw, "hardware preset name or spec path");
    plan->callback([&] { rc = cmd_plan(plan_shape, plan_hw); });

    // simulate
    auto* sim = app.add_subcommand("simulate", "run the streaming-inference simulator");
    std::string sim_config, sim_trace, sim_report;
    sim->add_option("--config", sim_config, "sim config path (default: built-in)");
    sim->add_option("--trace", sim_trace, "write Chrome trace JSON here");
    sim->add_option("--report", sim_report, "write loop report JSON here");
    sim->callback([&] { rc = cmd_simulate(sim_config, sim_trace, sim_report); });

    // pen-check
    auto* pen = app.add_subcommand("pen-check", "reaction-budget check");
    std::string pen_config;
    double pen_offset = -1.0;
    double pen_inference = -1.0;
    pen->add_option("--config", pen_config, "sim config path (default: built-in)");
    pen->add_option("--offset", pen_offset,
                    "release offset after a capture, seconds (default: worst case)");
    pen->add_option("--inference", pen_inference,
                    "override inference latency, seconds");
    pen->callback([&] { rc = cmd_pen_check(pen_config, pen_offset, pen_inference); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const rtvla::CalibrationError& e) {
        std::fprintf(stderr, "calibration mismatch:\n%s\n", e.what());
        return 4;
    } catch (const rtvla::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return rc;
}

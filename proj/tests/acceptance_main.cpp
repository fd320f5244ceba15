// Acceptance gate: ten checks, one PASS/FAIL line each, nonzero exit when any
// fail. Expected values and tolerances are pinned in code; timings are wall
// clock for the work inside the check.

#include "rtvla/builder.hpp"
#include "rtvla/costmodel.hpp"
#include "rtvla/passes.hpp"
#include "rtvla/report.hpp"
#include "rtvla/serialize.hpp"
#include "rtvla/streamsim.hpp"
#include "rtvla/tensor.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

using namespace rtvla;

#ifndef RTVLA_DATA_DIR
#error "RTVLA_DATA_DIR must point at the repository data directory"
#endif

namespace {

int failures = 0;

void criterion(int n, const char* desc, double budget_s,
               const std::function<bool(std::string&)>& body) {
    auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
        ok = body(detail);
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > budget_s) {
        ok = false;
        detail += (detail.empty() ? "" : "; ") + std::string("over time budget");
    }
    std::printf("%s criterion %d: %s (%.2fs)%s%s\n", ok ? "PASS" : "FAIL", n, desc, secs,
                detail.empty() ? "" : " -- ", detail.c_str());
    if (!ok) ++failures;
}

bool close(double got, double want, double tol, std::string& why, const char* label) {
    if (std::fabs(got - want) <= tol) return true;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s: got %.6f, want %.6f +/- %.6f", label, got, want, tol);
    why += (why.empty() ? "" : "; ");
    why += buf;
    return false;
}

Breakdown analyze_views(int views, const std::string& sync) {
    ModelConfig cfg = default_config();
    cfg.views = views;
    return analyze(build_pi0_graph(cfg), rtx4090(), sync, nullptr);
}

}  // namespace

int main() {
    criterion(1, "two-view roofline rows, stage subtotals, and total", 1.0, [](std::string& why) {
        Breakdown b = analyze_views(2, "none");
        if (b.rows.size() != 22) {
            why = "expected 22 cost rows, got " + std::to_string(b.rows.size());
            return false;
        }
        // Row totals in ms; tolerance is 0.5% or one unit in the third decimal,
        // whichever is larger.
        const double expect[22] = {0.004, 0.602, 0.178, 0.201, 0.750, 0.750, 0.013, 0.529,
                                   0.200, 0.399, 6.391, 3.195, 0.000, 0.001, 0.021, 0.934,
                                   0.149, 0.149, 0.748, 2.990, 1.495, 0.001};
        bool ok = true;
        for (int i = 0; i < 22; ++i) {
            double tol = std::max(0.005 * expect[i], 0.00051);
            ok &= close(b.rows[size_t(i)].roofline_ms, expect[i], tol,
                        why, b.rows[size_t(i)].node_id.c_str());
        }
        ok &= close(b.stages[0].roofline_ms, 2.485, 0.005 * 2.485, why, "VE subtotal");
        ok &= close(b.stages[1].roofline_ms, 10.727, 0.005 * 10.727, why, "LLM subtotal");
        ok &= close(b.stages[2].roofline_ms, 6.486, 0.005 * 6.486, why, "AE subtotal");
        ok &= close(b.roofline_total_ms, 19.698, 0.005 * 19.698, why, "total");
        return ok;
    });

    criterion(2, "one- and three-view roofline totals", 1.0, [](std::string& why) {
        bool ok = close(analyze_views(1, "none").roofline_total_ms, 12.8, 0.2, why, "1 view");
        ok &= close(analyze_views(3, "none").roofline_total_ms, 26.7, 0.2, why, "3 views");
        return ok;
    });

    criterion(3, "software-barrier sync lower bounds", 1.0, [](std::string& why) {
        const double expect[3] = {13.7, 20.6, 27.6};
        bool ok = true;
        for (int v = 1; v <= 3; ++v) {
            Breakdown b = analyze_views(v, "software_barrier");
            if (b.kernel_count != 1378) {
                why += "kernel count " + std::to_string(b.kernel_count);
                ok = false;
            }
            ok &= close(b.roofline_with_sync_ms, expect[v - 1], 0.1, why, "with sync");
        }
        return ok;
    });

    criterion(4, "partial split-k plan for 512x1152x1152", 1.0, [](std::string& why) {
        KernelPlan p = plan_partial_split({512, 1152, 1152}, rtx4090());
        bool ok = true;
        auto expect = [&](bool cond, const char* label) {
            if (!cond) {
                why += (why.empty() ? "" : "; ");
                why += label;
                ok = false;
            }
        };
        expect(p.partial, "plan is not partial");
        expect(p.m1 == 1024, "part 1 m != 1024");
        expect(p.m2 == 128, "part 2 m != 128");
        expect(p.tile.bm == 64 && p.tile.bn == 64, "part 1 tile != 64x64");
        expect(p.tile.split_k == 1, "part 1 split != 1");
        expect(p.blocks == 128, "part 1 blocks != 128");
        expect(p.tile2.bm == 32 && p.tile2.bn == 32, "part 2 tile != 32x32");
        expect(p.tile2.split_k == 2, "part 2 split != 2");
        expect(p.blocks2 == 128, "part 2 blocks != 128");
        return ok;
    });

    criterion(5, "pass and pipeline equivalence to 1e-9 over 10 seeds", 30.0,
              [](std::string& why) {
        PipelineOptions opt;
        opt.verify = true;
        opt.seeds = 10;
        opt.tolerance = 1e-9;
        PipelineResult res = run_pipeline(build_pi0_graph_naive(default_config()), opt);
        bool ok = true;
        if (!res.report.verified || !res.report.verified_ok) {
            why = "verification failed in '" + res.report.failed_pass + "'";
            ok = false;
        }
        if (res.report.passes.size() != 6) {
            why += " pass count != 6";
            ok = false;
        }
        for (const PassReport& p : res.report.passes)
            if (p.max_deviation > 1e-9) {
                why += " " + p.name + " deviation " + std::to_string(p.max_deviation);
                ok = false;
            }
        if (res.report.max_deviation > 1e-9) {
            why += " pipeline deviation too large";
            ok = false;
        }
        Graph again = run_pipeline(res.graph, PipelineOptions{}).graph;
        if (serialize_graph(again) != serialize_graph(res.graph)) {
            why += " pipeline not idempotent";
            ok = false;
        }
        return ok;
    });

    criterion(6, "pruning yields 18/17 layer repeats and a 0.7 ms measured delta", 1.0,
              [](std::string& why) {
        Graph opt = run_pipeline(build_pi0_graph_naive(default_config()), PipelineOptions{}).graph;
        bool ok = true;
        const Node* qkv = opt.find("llm.qkv");
        const Node* down = opt.find("llm.down");
        const Node* attn = opt.find("llm.attn");
        if (!qkv || qkv->repeat != 18) {
            why += "llm.qkv repeat != 18";
            ok = false;
        }
        if (!down || down->repeat != 17 || !attn || attn->repeat != 17) {
            why += " pruned trunk repeat != 17";
            ok = false;
        }
        CalibrationTable calib =
            load_calibration(std::string(RTVLA_DATA_DIR) + "/calib_rtx4090_2views.json");
        Breakdown b = analyze(build_pi0_graph(default_config()), rtx4090(), "none", &calib);
        if (!b.has_pruned_layer_cost) {
            why += " no pruned-layer cost";
            return false;
        }
        ok &= close(b.pruned_layer_cost_ms, 0.7, 0.1, why, "pruned layer cost");
        return ok;
    });

    criterion(7, "fitted overlap model predicts both concurrent points within 5%", 1.0,
              [](std::string& why) {
        EtaFit fit = calibrate_eta(builtin_eta_points());
        double p1 = concurrent_makespan(0.016562, 0.011001, fit.eta) * 1e3;
        double p2 = concurrent_makespan(0.016562, 0.0176016, fit.eta) * 1e3;
        bool ok = true;
        if (std::fabs(p1 - 26.3) / 26.3 > 0.05) {
            why += "vlm+10ae prediction " + std::to_string(p1);
            ok = false;
        }
        if (std::fabs(p2 - 32.7) / 32.7 > 0.05) {
            why += " vlm+16ae prediction " + std::to_string(p2);
            ok = false;
        }
        return ok;
    });

    criterion(8, "streaming sim sustains 30 VLM/s, 480 AE/s, 30 tok/s in deadline", 5.0,
              [](std::string& why) {
        SimConfig cfg;
        cfg.horizon = 10.0;
        LoopReport r = measure_loops(simulate(cfg));
        bool ok = true;
        if (std::fabs(r.vlm_per_s - 30.0) > 1e-9) {
            why += "vlm rate " + std::to_string(r.vlm_per_s);
            ok = false;
        }
        if (r.ae_per_s < 480.0) {
            why += " ae rate " + std::to_string(r.ae_per_s);
            ok = false;
        }
        if (std::fabs(r.text_rate - 30.0) > 1e-9) {
            why += " text rate " + std::to_string(r.text_rate);
            ok = false;
        }
        if (!r.frame_makespan.present || r.frame_makespan.worst > 0.0333) {
            why += " frame makespan " + std::to_string(r.frame_makespan.worst);
            ok = false;
        }
        if (!r.quick.present || r.quick.best < 0.0015 || r.quick.best > 0.0035) {
            why += " quick best " + std::to_string(r.quick.best);
            ok = false;
        }
        if (!r.slow.present || r.slow.best < 1.0 / 30.0 - 1e-12) {
            why += " slow best " + std::to_string(r.slow.best);
            ok = false;
        }
        if (!r.feasible) {
            why += " infeasible";
            ok = false;
        }
        return ok;
    });

    criterion(9, "pen catch fits the 200 ms budget; the slower stack does not", 1.0,
              [](std::string& why) {
        SimConfig cfg;  // 2-frame camera delay, 27.3 ms inference, 60 ms actuation
        PenReport worst = pen_worst_case(cfg);
        bool ok = true;
        ok &= close(worst.total * 1e3, 187.3, 0.1, why, "stock worst case");
        if (!worst.success) {
            why += " stock scenario over budget";
            ok = false;
        }
        SimConfig slow = cfg;
        slow.inference_time = 0.0537;
        PenReport fail = pen_worst_case(slow);
        ok &= close(fail.total * 1e3, 213.7, 0.1, why, "slow-stack worst case");
        if (fail.success) {
            why += " slow stack unexpectedly within budget";
            ok = false;
        }
        return ok;
    });

    criterion(10, "property suites: boundedness, buffer immutability, makespan, round-trips",
              60.0, [](std::string& why) {
        bool ok = true;

        // Boundedness per row: prefix stages are compute-bound, weight-bearing
        // action-expert GEMMs are bandwidth-bound, attention-derived rows are
        // compute-bound.
        Breakdown b = analyze_views(2, "none");
        for (const CostRow& r : b.rows) {
            if (r.attention) continue;
            bool cross = r.node_id.find(".attn.") != std::string::npos;
            bool want = (r.stage == Stage::AE) && !cross;
            if (r.memory_bound != want) {
                why += " boundedness " + r.node_id;
                ok = false;
            }
        }

        // Committed trajectory slots never change, across >=100 random configs.
        Rng rng(4242);
        for (int trial = 0; trial < 100 && ok; ++trial) {
            TrajectoryBuffer buf(480.0);
            std::map<int64_t, std::pair<int64_t, double>> frozen;
            double cursor = 0.0;
            for (int step = 0; step < 40; ++step) {
                if (rng.next_unit() < 0.5) {
                    cursor += rng.next_uniform(0.0, 0.03);
                    buf.advance_cursor(cursor);
                    if (buf.written_count() > 0) {
                        for (int64_t k = buf.min_written(); k <= buf.max_written(); ++k) {
                            const auto* s = buf.slot(k);
                            if (s && buf.slot_time(k) <= cursor && !frozen.count(k))
                                frozen[k] = {s->writer, s->value};
                        }
                    }
                } else {
                    int64_t first = buf.slot_at_or_after(cursor) + int64_t(rng.next_u64() % 24) - 6;
                    buf.write_window(first, 1 + int(rng.next_u64() % 64), step, rng.next_u64());
                }
                for (const auto& [k, wv] : frozen) {
                    const auto* s = buf.slot(k);
                    if (!s || s->writer != wv.first || s->value != wv.second) {
                        why += " committed slot mutated";
                        ok = false;
                        break;
                    }
                }
                if (!ok) break;
            }
        }

        // Concurrent makespan stays between max and sum.
        for (int i = 0; i < 1000; ++i) {
            double a = rng.next_uniform(0.0, 5.0), t = rng.next_uniform(0.0, 5.0);
            double eta = rng.next_unit();
            double m = concurrent_makespan(a, t, eta);
            if (m < std::max(a, t) - 1e-12 || m > a + t + 1e-12) {
                why += " makespan out of bounds";
                ok = false;
                break;
            }
        }

        // Serialization round-trips, byte stable.
        Graph g = build_pi0_graph(default_config());
        if (serialize_graph(parse_graph(serialize_graph(g))) != serialize_graph(g)) {
            why += " graph round-trip";
            ok = false;
        }
        HardwareSpec hw = rtx4090();
        if (serialize_hardware(parse_hardware(serialize_hardware(hw))) != serialize_hardware(hw)) {
            why += " hardware round-trip";
            ok = false;
        }
        CalibrationTable calib =
            load_calibration(std::string(RTVLA_DATA_DIR) + "/calib_rtx4090_2views.json");
        if (serialize_calibration(parse_calibration(serialize_calibration(calib))) !=
            serialize_calibration(calib)) {
            why += " calibration round-trip";
            ok = false;
        }
        SimConfig sc;
        if (serialize_sim_config(parse_sim_config(serialize_sim_config(sc))) !=
            serialize_sim_config(sc)) {
            why += " sim config round-trip";
            ok = false;
        }
        return ok;
    });

    if (failures == 0) {
        std::printf("all 10 acceptance criteria passed\n");
    } else {
        std::printf("%d acceptance criteria FAILED\n", failures);
    }
    return failures;
}

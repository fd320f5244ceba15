#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "rtvla/builder.hpp"
#include "rtvla/costmodel.hpp"
#include "rtvla/report.hpp"
#include "rtvla/serialize.hpp"
#include "rtvla/tensor.hpp"

#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

using namespace rtvla;

#ifndef RTVLA_DATA_DIR
#error "RTVLA_DATA_DIR must point at the repository data directory"
#endif

namespace {

std::string data_path(const char* name) {
    return std::string(RTVLA_DATA_DIR) + "/" + name;
}

Breakdown analyze_views(int views, const std::string& sync) {
    ModelConfig cfg = default_config();
    cfg.views = views;
    Graph g = build_pi0_graph(cfg);
    return analyze(g, rtx4090(), sync, nullptr);
}

}  // namespace

TEST_CASE("two-view roofline matches the frozen per-row values") {
    Breakdown b = analyze_views(2, "none");
    REQUIRE(b.rows.size() == 22);

    struct Expect {
        const char* id;
        double roofline_ms;
        const char* oprs;
    };
    // Row totals, milliseconds, computed independently from
    // max(bytes*K*M/BW, N*K*M/MAC) (attention: compute term only) times repeat.
    const Expect expect[22] = {
        {"ve.embed", 0.0037945, "img2col, bias"},
        {"ve.qkv", 0.6021620, "ln, bias"},
        {"ve.attn", 0.1784194, "softmax"},
        {"ve.proj", 0.2007200, "bias, res"},
        {"ve.fc1", 0.7499137, "ln, gelu"},
        {"ve.fc2", 0.7499137, "bias, res"},
        {"llm.proj_in", 0.0132159, "ln, bias"},
        {"llm.qkv", 0.5286451, "rms, rope"},
        {"llm.attn", 0.1997112, "softmax"},
        {"llm.proj", 0.3994217, "res"},
        {"llm.ffn", 6.3907584, "ln, gate"},
        {"llm.down", 3.1953792, "res"},
        {"ae.state_proj", 0.0000649, "bias"},
        {"ae.action_proj", 0.0006489, "bias, silu"},
        {"ae.action_out", 0.0207641, "bias"},
        {"ae.qkv", 0.9343754, "rms, rope"},
        {"ae.attn.score", 0.1486824, "softmax"},
        {"ae.attn.value", 0.1486824, ""},
        {"ae.proj", 0.7475010, "res"},
        {"ae.ffn", 2.9900040, "rms, gate"},
        {"ae.down", 1.4950020, "res"},
        {"ae.head", 0.0006489, "res"},
    };
    for (size_t i = 0; i < 22; ++i) {
        const CostRow& r = b.rows[i];
        CHECK_MESSAGE(r.node_id == expect[i].id, "row " << i);
        CHECK_MESSAGE(r.roofline_ms ==
                          doctest::Approx(expect[i].roofline_ms).epsilon(2e-4),
                      r.node_id);
        CHECK_MESSAGE(r.oprs == expect[i].oprs, r.node_id << " oprs");
    }

    CHECK(b.stages[0].roofline_ms == doctest::Approx(2.484924).epsilon(1e-4));
    CHECK(b.stages[1].roofline_ms == doctest::Approx(10.727130).epsilon(1e-4));
    CHECK(b.stages[2].roofline_ms == doctest::Approx(6.486366).epsilon(1e-4));
    CHECK(b.roofline_total_ms == doctest::Approx(19.698420).epsilon(1e-4));
    CHECK(b.kernel_count == 1378);

    // Fused and torch strategies are fixed labels; tiled strategies are
    // produced by the planner and non-empty.
    CHECK(b.rows[2].strategy == "torch");
    CHECK(b.rows[8].strategy == "torch");
    CHECK(b.rows[10].strategy == "fused gate");
    CHECK(b.rows[19].strategy == "fused gate");
    for (const CostRow& r : b.rows) CHECK(!r.strategy.empty());
}

TEST_CASE("view scaling totals") {
    CHECK(analyze_views(1, "none").roofline_total_ms ==
          doctest::Approx(12.865699).epsilon(2e-4));
    CHECK(analyze_views(3, "none").roofline_total_ms ==
          doctest::Approx(26.720165).epsilon(2e-4));
}

TEST_CASE("sync presets add per-kernel overhead over 1378 kernels") {
    CHECK(sync_per_kernel("none") == 0.0);
    CHECK_THROWS_AS(sync_per_kernel("hardware_barrier"), std::invalid_argument);
    REQUIRE(sync_presets().size() == 4);

    Breakdown none = analyze_views(2, "none");
    CHECK(none.roofline_with_sync_ms == doctest::Approx(none.roofline_total_ms));

    struct Case {
        const char* preset;
        double total_sync_ms;
    };
    for (Case c : {Case{"pytorch", 12.92}, Case{"cuda_graph", 1.72},
                   Case{"software_barrier", 0.86}}) {
        Breakdown b = analyze_views(2, c.preset);
        CHECK_MESSAGE(b.sync_total_ms == doctest::Approx(c.total_sync_ms).epsilon(1e-9),
                      c.preset);
        CHECK(b.roofline_with_sync_ms ==
              doctest::Approx(b.roofline_total_ms + c.total_sync_ms).epsilon(1e-12));
    }

    double expect[3] = {13.726, 20.558, 27.580};
    for (int views = 1; views <= 3; ++views) {
        Breakdown b = analyze_views(views, "software_barrier");
        CHECK_MESSAGE(b.roofline_with_sync_ms ==
                          doctest::Approx(expect[views - 1]).epsilon(3e-4),
                      views << " views");
    }
}

TEST_CASE("roofline is monotone and has the right asymptotes") {
    HardwareSpec hw = rtx4090();
    Rng rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        GemmShape s{int64_t(1 + rng.next_u64() % 2048), int64_t(1 + rng.next_u64() % 4096),
                    int64_t(1 + rng.next_u64() % 4096)};
        double t = roofline_gemm(s, hw);
        CHECK(t > 0.0);
        for (GemmShape bigger : {GemmShape{s.n + 64, s.k, s.m}, GemmShape{s.n, s.k + 64, s.m},
                                 GemmShape{s.n, s.k, s.m + 64}}) {
            CHECK(roofline_gemm(bigger, hw) >= t);
        }
        HardwareSpec faster = hw;
        faster.bandwidth_bytes_per_s *= 2;
        faster.mac_per_s *= 2;
        CHECK(roofline_gemm(s, faster) <= t);
    }

    // With unlimited compute only the weight traffic remains.
    HardwareSpec inf_mac = hw;
    inf_mac.mac_per_s = 1e30;
    GemmShape s{512, 2048, 2560};
    CHECK(roofline_gemm(s, inf_mac) ==
          doctest::Approx(double(hw.dtype_bytes) * 2048 * 2560 / hw.bandwidth_bytes_per_s)
              .epsilon(1e-12));
    // With unlimited bandwidth only the MAC term remains.
    HardwareSpec inf_bw = hw;
    inf_bw.bandwidth_bytes_per_s = 1e30;
    CHECK(roofline_gemm(s, inf_bw) ==
          doctest::Approx(512.0 * 2048 * 2560 / hw.mac_per_s).epsilon(1e-12));

    // Attention covers both matmuls, compute only.
    AttnDims a{8, 512, 512, 256, 1};
    CHECK(roofline_attention(a, hw) ==
          doctest::Approx(2.0 * 8 * 512 * 512 * 256 / hw.mac_per_s).epsilon(1e-12));
}

TEST_CASE("boundedness classification per row") {
    Breakdown b = analyze_views(2, "none");
    for (const CostRow& r : b.rows) {
        if (r.attention) continue;  // fused self-attention rows carry no flag
        bool cross_attn = r.node_id.find(".attn.") != std::string::npos;
        if (r.stage == Stage::AE && !cross_attn) {
            CHECK_MESSAGE(r.memory_bound, r.node_id << " should be weight-traffic bound");
        } else {
            CHECK_MESSAGE(!r.memory_bound, r.node_id << " should be compute bound");
        }
        CHECK(r.memory_bound == gemm_memory_bound(r.shape, rtx4090()));
    }
}

TEST_CASE("block counting and wave efficiency") {
    GemmShape s{512, 1152, 1152};
    TileConfig t{64, 64, 64, 1};
    CHECK(block_count(s, t) == 8 * 18);
    CHECK(wave_efficiency(144, 128) == doctest::Approx(144.0 / 256.0));
    CHECK(wave_efficiency(128, 128) == doctest::Approx(1.0));
    CHECK(wave_efficiency(256, 128) == doctest::Approx(1.0));
    CHECK(wave_efficiency(1, 128) == doctest::Approx(1.0 / 128.0));
    TileConfig split{64, 64, 64, 4};
    CHECK(block_count(s, split) == 8 * 18 * 4);
}

TEST_CASE("tiny gemm pays the full empty-device wave") {
    HardwareSpec hw = rtx4090();
    GemmShape s{16, 16, 16};
    KernelPlan p = plan_tiles(s, hw);
    CHECK(p.blocks == 1);
    CHECK(p.wave_eff == doctest::Approx(1.0 / 128.0));
    CHECK(p.modeled_s == doctest::Approx(roofline_gemm(s, hw) * 128.0).epsilon(1e-9));
    CHECK(!p.partial);
}

TEST_CASE("bandwidth-bound gemm reaches its roofline with a full-wave tiling") {
    HardwareSpec hw = rtx4090();
    GemmShape s{64, 1024, 8192};
    KernelPlan p = plan_tiles(s, hw);
    CHECK(p.tile.bm == 16);
    CHECK(p.tile.bn == 64);
    CHECK(p.tile.split_k == 1);
    CHECK(p.blocks == 512);
    CHECK(p.wave_eff == doctest::Approx(1.0));
    CHECK(p.modeled_s == doctest::Approx(roofline_gemm(s, hw)).epsilon(1e-12));
}

TEST_CASE("partial split fills the device twice for the attention projection") {
    HardwareSpec hw = rtx4090();
    GemmShape s{512, 1152, 1152};
    KernelPlan single = plan_tiles(s, hw);
    KernelPlan p = plan_partial_split(s, hw);
    REQUIRE(p.partial);
    CHECK(p.m1 == 1024);
    CHECK(p.m2 == 128);
    CHECK(p.tile.bm == 64);
    CHECK(p.tile.bn == 64);
    CHECK(p.tile.split_k == 1);
    CHECK(p.blocks == 128);
    CHECK(p.tile2.bm == 32);
    CHECK(p.tile2.bn == 32);
    CHECK(p.tile2.split_k == 2);
    CHECK(p.blocks2 == 128);
    CHECK(p.strategy() == "partial split-2");
    CHECK(p.modeled_s < single.modeled_s);

    // On a device whose SM count the natural grid already matches, no split.
    HardwareSpec hw144 = hw;
    hw144.sm_count = 144;
    CHECK(!plan_partial_split(s, hw144).partial);
}

TEST_CASE("planner invariants over random shapes") {
    HardwareSpec hw = rtx4090();
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        GemmShape s{int64_t(16 + rng.next_u64() % 1024), int64_t(16 + rng.next_u64() % 4096),
                    int64_t(16 + rng.next_u64() % 4096)};
        KernelPlan p = plan_tiles(s, hw);
        CHECK(p.modeled_s >= roofline_gemm(s, hw) - 1e-15);
        CHECK(p.blocks == block_count(s, p.tile));
        KernelPlan q = plan_partial_split(s, hw);
        if (q.partial) {
            CHECK(q.m1 + q.m2 == s.m);
            CHECK(q.m1 % 16 == 0);
            CHECK(q.blocks == hw.sm_count);
            CHECK(q.blocks2 == hw.sm_count);
            CHECK(q.modeled_s < p.modeled_s);
        } else {
            CHECK(q.modeled_s == doctest::Approx(p.modeled_s));
        }
    }
}

TEST_CASE("hardware specs serialize, parse, and resolve") {
    HardwareSpec hw = rtx4090();
    CHECK(hw.bandwidth_bytes_per_s == doctest::Approx(1.01e12));
    CHECK(hw.mac_per_s == doctest::Approx(9.14e13));
    CHECK(hw.sm_count == 128);
    CHECK(hw.dtype_bytes == 2);

    HardwareSpec back = parse_hardware(serialize_hardware(hw));
    CHECK(back.name == hw.name);
    CHECK(back.bandwidth_bytes_per_s == hw.bandwidth_bytes_per_s);
    CHECK(back.l2_bytes == hw.l2_bytes);

    CHECK_THROWS_AS(parse_hardware("{}"), ParseError);
    CHECK_THROWS_AS(parse_hardware("{ nope"), ParseError);

    HardwareSpec named = resolve_hardware("rtx4090");
    CHECK(named.mac_per_s == hw.mac_per_s);
    HardwareSpec empty_name = resolve_hardware("");
    CHECK(empty_name.mac_per_s == hw.mac_per_s);

    HardwareSpec from_file = resolve_hardware(data_path("rtx4090.json"));
    CHECK(from_file.bandwidth_bytes_per_s == hw.bandwidth_bytes_per_s);
    CHECK(from_file.mac_per_s == hw.mac_per_s);
    CHECK(from_file.sm_count == hw.sm_count);

    CHECK_THROWS_AS(resolve_hardware("no_such_gpu"), ParseError);

    // $RTVLA_HW_DIR/<name>.json lookup.
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "rtvla_hw_test";
    fs::create_directories(dir);
    HardwareSpec custom = hw;
    custom.name = "customgpu";
    custom.sm_count = 96;
    write_text_file((dir / "customgpu.json").string(), serialize_hardware(custom));
    setenv("RTVLA_HW_DIR", dir.c_str(), 1);
    HardwareSpec via_env = resolve_hardware("customgpu");
    CHECK(via_env.sm_count == 96);
    unsetenv("RTVLA_HW_DIR");
    fs::remove_all(dir);
}

TEST_CASE("calibration reconciles measured rows against the graph") {
    CalibrationTable calib = load_calibration(data_path("calib_rtx4090_2views.json"));
    REQUIRE(calib.rows.size() == 22);
    CHECK(calib.views == 2);
    CHECK(calib.has_reported_totals);

    Graph g = build_pi0_graph(default_config());
    Breakdown b = analyze(g, rtx4090(), "none", &calib);
    CHECK(b.has_calibration);

    double row_sum = 0;
    for (const auto& r : calib.rows) row_sum += r.actual_ms;
    CHECK(b.actual_row_sum_ms == doctest::Approx(row_sum).epsilon(1e-12));
    CHECK(row_sum == doctest::Approx(27.938).epsilon(1e-6));

    int with_actual = 0;
    for (const CostRow& r : b.rows) with_actual += r.has_actual ? 1 : 0;
    CHECK(with_actual == 22);

    CHECK(b.stages[0].actual_ms == doctest::Approx(4.129).epsilon(1e-9));
    CHECK(b.stages[1].actual_ms == doctest::Approx(12.848).epsilon(1e-9));
    CHECK(b.stages[2].actual_ms == doctest::Approx(10.961).epsilon(1e-9));

    CHECK(b.has_reported_totals);
    CHECK(b.reported_total_ms == doctest::Approx(27.299));
    CHECK(b.reported_stage_ms[0] == doctest::Approx(4.059));
    CHECK(b.reported_stage_ms[1] == doctest::Approx(12.503));
    CHECK(b.reported_stage_ms[2] == doctest::Approx(11.001));

    // The measurement source's own totals disagree with its row sums; the
    // analysis must surface that rather than silently adjust.
    bool discrepancy_note = false;
    for (const auto& n : b.notes)
        if (n.find("27.299") != std::string::npos) discrepancy_note = true;
    CHECK(discrepancy_note);

    CHECK(b.has_pruned_layer_cost);
    CHECK(b.pruned_layer_cost_ms == doctest::Approx(11.944 / 17.0).epsilon(1e-9));
}

TEST_CASE("calibration mismatches are reported, not ignored") {
    CalibrationTable calib = load_calibration(data_path("calib_rtx4090_2views.json"));
    Graph g = build_pi0_graph(default_config());

    CalibrationTable wrong = calib;
    wrong.rows[5].shape = "999x999x999";
    try {
        analyze(g, rtx4090(), "none", &wrong);
        CHECK(false);
    } catch (const CalibrationError& e) {
        REQUIRE(e.mismatches.size() == 1);
        CHECK(e.mismatches[0].find("999x999x999") != std::string::npos);
        CHECK(std::string(e.what()).find("999x999x999") != std::string::npos);
    }

    ModelConfig one = default_config();
    one.views = 1;
    Graph g1 = build_pi0_graph(one);
    try {
        analyze(g1, rtx4090(), "none", &calib);
        CHECK(false);
    } catch (const CalibrationError& e) {
        bool views_note = false;
        for (const auto& m : e.mismatches)
            if (m.find("views") != std::string::npos) views_note = true;
        CHECK(views_note);
    }

    CalibrationTable back = parse_calibration(serialize_calibration(calib));
    CHECK(back.rows.size() == calib.rows.size());
    CHECK(serialize_calibration(back) == serialize_calibration(calib));
}

TEST_CASE("reports agree across formats") {
    Breakdown b = analyze_views(2, "software_barrier");
    std::string md = render_report(b, "markdown");
    std::string csv = render_report(b, "csv");
    std::string js = render_report(b, "json");

    CHECK(md.find("19.698") != std::string::npos);
    CHECK(md.find("512x2048x32768") != std::string::npos);
    CHECK(md.find("attn 8x512^2x256") != std::string::npos);
    CHECK(csv.find("19.698") != std::string::npos);
    CHECK(csv.find("512x2048x32768") != std::string::npos);

    auto doc = nlohmann::json::parse(js);
    // The renderer rounds to three decimals in every format.
    CHECK(doc["totals"]["roofline_ms"].get<double>() ==
          doctest::Approx(b.roofline_total_ms).epsilon(1e-4));
    CHECK(doc["totals"]["roofline_with_sync_ms"].get<double>() ==
          doctest::Approx(20.558).epsilon(1e-6));
    CHECK(doc["rows"].size() == 22);

    CHECK_THROWS_AS(render_report(b, "yaml"), std::invalid_argument);

    Graph empty;
    empty.config = default_config();
    Breakdown eb = analyze(empty, rtx4090(), "none", nullptr);
    CHECK(eb.rows.empty());
    CHECK(eb.roofline_total_ms == 0.0);
    CHECK(render_report(eb, "markdown").find("0.000") != std::string::npos);
}

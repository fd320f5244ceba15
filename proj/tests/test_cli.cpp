#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "rtvla/builder.hpp"
#include "rtvla/costmodel.hpp"
#include "rtvla/passes.hpp"
#include "rtvla/report.hpp"
#include "rtvla/serialize.hpp"

#include "json.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <string>

using namespace rtvla;
namespace fs = std::filesystem;

#ifndef RTVLA_CLI_PATH
#error "RTVLA_CLI_PATH must point at the rtvla binary"
#endif
#ifndef RTVLA_DATA_DIR
#error "RTVLA_DATA_DIR must point at the repository data directory"
#endif

namespace {

struct RunResult {
    int code = -1;
    std::string output;  // stdout + stderr
};

const fs::path& work_dir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / ("rtvla_cli_" + std::to_string(getpid()));
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string wpath(const std::string& name) { return (work_dir() / name).string(); }

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    std::string capture = wpath("out_" + std::to_string(counter++) + ".log");
    std::string cmd =
        std::string("\"") + RTVLA_CLI_PATH + "\" " + args + " > " + capture + " 2>&1";
    int status = std::system(cmd.c_str());
    RunResult r;
    if (status != -1 && WIFEXITED(status)) r.code = WEXITSTATUS(status);
    r.output = read_text_file(capture);
    return r;
}

}  // namespace

TEST_CASE("build emits exactly the library graph document") {
    std::string out = wpath("built.json");
    RunResult r = run_cli("build --out " + out);
    CHECK(r.code == 0);
    CHECK(r.output.find("wrote") != std::string::npos);
    CHECK(r.output.find("1378 gemm instances") != std::string::npos);
    CHECK(read_text_file(out) == serialize_graph(build_pi0_graph(default_config())));

    std::string one = wpath("one_view.json");
    CHECK(run_cli("build --views 1 --out " + one).code == 0);
    Graph g1 = parse_graph(read_text_file(one));
    CHECK(g1.config.views == 1);
    CHECK(g1.find("ae.attn")->attn.kv_tokens == 320);

    std::string prompted = wpath("prompted.json");
    CHECK(run_cli("build --views 3 --prompt-tokens 7 --out " + prompted).code == 0);
    Graph g3 = parse_graph(read_text_file(prompted));
    CHECK(g3.config.prefix_tokens() == 3 * 256 + 7);

    std::string naive = wpath("built_naive.json");
    RunResult rn = run_cli("build --naive --out " + naive);
    CHECK(rn.code == 0);
    CHECK(rn.output.find("2041 gemm instances") != std::string::npos);
    CHECK(read_text_file(naive) ==
          serialize_graph(build_pi0_graph_naive(default_config())));
}

TEST_CASE("usage errors exit with code 2") {
    CHECK(run_cli("build --views 4 --out " + wpath("x.json")).code == 2);
    CHECK(run_cli("build").code == 2);                  // missing required --out
    CHECK(run_cli("").code == 2);                       // subcommand required
    CHECK(run_cli("frobnicate").code == 2);             // unknown subcommand
    CHECK(run_cli("build --bogus 1 --out x.json").code == 2);
    CHECK(run_cli("--help").code == 0);
}

TEST_CASE("optimize reproduces the in-process pipeline byte for byte") {
    std::string naive_path = wpath("naive.json");
    Graph naive = build_pi0_graph_naive(default_config());
    write_text_file(naive_path, serialize_graph(naive));

    std::string opt_path = wpath("optimized.json");
    RunResult r = run_cli("optimize --in " + naive_path + " --out " + opt_path +
                          " --verify --seeds 5");
    CHECK(r.code == 0);
    CHECK(r.output.find("max deviation") != std::string::npos);
    CHECK(r.output.find("prune_dead_nodes") != std::string::npos);

    PipelineResult expect = run_pipeline(naive, PipelineOptions{});
    CHECK(read_text_file(opt_path) == serialize_graph(expect.graph));

    // An empty pass list is the identity transform.
    std::string copy_path = wpath("copy.json");
    RunResult rc = run_cli("optimize --in " + naive_path + " --out " + copy_path +
                           " --passes \"\"");
    CHECK(rc.code == 0);
    CHECK(read_text_file(copy_path) == read_text_file(naive_path));

    CHECK(run_cli("optimize --in " + naive_path + " --out " + opt_path +
                  " --passes frobnicate")
              .code == 2);

    std::string corrupt = wpath("corrupt.json");
    write_text_file(corrupt, "{ this is not json");
    RunResult bad = run_cli("optimize --in " + corrupt + " --out " + opt_path);
    CHECK(bad.code == 2);
    CHECK(bad.output.find("corrupt.json") != std::string::npos);

    CHECK(run_cli("optimize --in " + wpath("no_such.json") + " --out " + opt_path).code != 0);
}

TEST_CASE("analyze prints totals and honors format and sync flags") {
    std::string graph_path = wpath("an_graph.json");
    write_text_file(graph_path, serialize_graph(build_pi0_graph(default_config())));

    RunResult r = run_cli("analyze --in " + graph_path);
    CHECK(r.code == 0);
    CHECK(r.output.find("total 19.698") != std::string::npos);
    CHECK(r.output.find("| 512x1152x3456 |") != std::string::npos);  // markdown to stdout

    RunResult sync = run_cli("analyze --in " + graph_path + " --sync software_barrier");
    CHECK(sync.code == 0);
    CHECK(sync.output.find("20.558") != std::string::npos);

    std::string report_path = wpath("report.json");
    RunResult js = run_cli("analyze --in " + graph_path + " --format json --out " + report_path);
    CHECK(js.code == 0);
    Breakdown b = analyze(build_pi0_graph(default_config()), rtx4090(), "none", nullptr);
    CHECK(read_text_file(report_path) == render_report(b, "json"));

    CHECK(run_cli("analyze --in " + graph_path + " --format yaml").code == 2);
    CHECK(run_cli("analyze --in " + graph_path + " --sync turbo").code == 2);
    CHECK(run_cli("analyze --in " + graph_path + " --hw no_such_gpu").code == 2);
}

TEST_CASE("analyze reconciles calibration and reports mismatches as exit 4") {
    std::string calib = std::string(RTVLA_DATA_DIR) + "/calib_rtx4090_2views.json";
    std::string graph_path = wpath("an2_graph.json");
    write_text_file(graph_path, serialize_graph(build_pi0_graph(default_config())));

    RunResult ok = run_cli("analyze --in " + graph_path + " --calib " + calib);
    CHECK(ok.code == 0);
    CHECK(ok.output.find("27.299") != std::string::npos);

    std::string one_view = wpath("an2_one_view.json");
    ModelConfig cfg = default_config();
    cfg.views = 1;
    write_text_file(one_view, serialize_graph(build_pi0_graph(cfg)));
    RunResult bad = run_cli("analyze --in " + one_view + " --calib " + calib);
    CHECK(bad.code == 4);
    CHECK(bad.output.find("calibration mismatch") != std::string::npos);
    CHECK(bad.output.find("views") != std::string::npos);
}

TEST_CASE("plan prints the partial split for the attention projection shape") {
    RunResult r = run_cli("plan --shape 512x1152x1152");
    CHECK(r.code == 0);
    CHECK(r.output.find("partial split-2") != std::string::npos);
    CHECK(r.output.find("m=1024") != std::string::npos);
    CHECK(r.output.find("m=128") != std::string::npos);
    CHECK(r.output.find("compute bound") != std::string::npos);

    RunResult mem = run_cli("plan --shape 64x1024x8192");
    CHECK(mem.code == 0);
    CHECK(mem.output.find("memory bound") != std::string::npos);

    CHECK(run_cli("plan --shape 12x34").code == 2);
    CHECK(run_cli("plan --shape 0x16x16").code == 2);
    CHECK(run_cli("plan --shape banana").code == 2);
}

TEST_CASE("simulate writes report and trace files") {
    std::string trace_path = wpath("trace.json");
    std::string report_path = wpath("loops.json");
    RunResult r = run_cli("simulate --trace " + trace_path + " --report " + report_path);
    CHECK(r.code == 0);
    CHECK(r.output.find("feasible: yes") != std::string::npos);
    CHECK(r.output.find("30.0 VLM/s") != std::string::npos);

    auto report = nlohmann::json::parse(read_text_file(report_path));
    CHECK(report["vlm_per_s"].get<double>() == doctest::Approx(30.0));
    CHECK(report["ae_per_s"].get<double>() >= 480.0);

    auto trace = nlohmann::json::parse(read_text_file(trace_path));
    CHECK(trace.is_array());
    CHECK(trace.size() > 500);

    // A custom config file is honored.
    std::string cfg_path = wpath("sim_config.json");
    write_text_file(cfg_path,
                    "{\n  \"schema_version\": 1,\n  \"vlm_time\": 0.030\n}\n");
    RunResult infeasible = run_cli("simulate --config " + cfg_path);
    CHECK(infeasible.code == 0);
    CHECK(infeasible.output.find("feasible: no") != std::string::npos);

    std::string bad_cfg = wpath("bad_config.json");
    write_text_file(bad_cfg, "{\n  \"wibble\": 1\n}\n");
    CHECK(run_cli("simulate --config " + bad_cfg).code == 2);
}

TEST_CASE("pen-check passes on the stock budget and fails on the slow stack") {
    RunResult ok = run_cli("pen-check");
    CHECK(ok.code == 0);
    CHECK(ok.output.find("PASS") != std::string::npos);
    CHECK(ok.output.find("187.3") != std::string::npos);

    RunResult fail = run_cli("pen-check --inference 0.0537");
    CHECK(fail.code == 5);
    CHECK(fail.output.find("FAIL") != std::string::npos);
    CHECK(fail.output.find("213.7") != std::string::npos);

    RunResult aligned = run_cli("pen-check --offset 0");
    CHECK(aligned.code == 0);
    CHECK(aligned.output.find("154.0") != std::string::npos);

    CHECK(run_cli("pen-check --offset 99").code == 2);
}

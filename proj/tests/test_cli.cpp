// End-to-end tests over the command-line binary (path injected at compile
// time). Each case shells out, captures stdout, and checks exit codes, golden
// output, and byte-level reproducibility of the artifacts.
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "testing.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = VIDATTN_CLI_PATH;
const std::string kPresets = VIDATTN_PRESETS_PATH;
const fs::path kDir = "/tmp/vidattn_cli_test";

struct CmdResult {
    int exit_code = -1;
    std::string out;
};

CmdResult run_cli(const std::string& args) {
    const std::string cmd = kCli + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    CmdResult r;
    if (pipe == nullptr) return r;
    char buf[4096];
    std::size_t n = 0;
    while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

std::vector<std::string> lines_of(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string line;
    while (std::getline(in, line)) out.push_back(line);
    return out;
}

fs::path config_path() {
    const fs::path p = kDir / "config.json";
    write_file(p, R"({
      "layers": 1, "heads": 1, "head_dim": 6, "ffn_mult": 2, "n_text": 2,
      "channels": 2, "grid": [2, 4, 4], "proxy_grid": [1, 2, 2],
      "cube": [1, 2, 2], "radius": 1, "batch_size": 2,
      "steps": 2, "seed": 3, "data_seed": 11, "dataset_count": 3
    })");
    return p;
}

void exit_codes() {
    CHECK(run_cli("--help").exit_code == 0);
    CHECK(run_cli("").exit_code == 2);                      // a subcommand is required
    CHECK(run_cli("bogus-subcommand").exit_code == 2);
    CHECK(run_cli("partition --cube 1,1,1").exit_code == 2);  // --grid missing
    CHECK(run_cli("partition --grid 0,2,2 --cube 1,1,1").exit_code == 2);
    CHECK(run_cli("partition --grid 2x2x2 --cube 1,1,1").exit_code == 2);
    CHECK(run_cli("flops").exit_code == 2);  // no mode selected
}

void partition_json() {
    const CmdResult r = run_cli("partition --grid 2,2,4 --cube 1,2,2");
    CHECK(r.exit_code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["grid"] == nlohmann::json({2, 2, 4}));
    const std::vector<std::int64_t> want_perm = {0, 1, 4, 5, 2,  3,  6,  7,
                                                 8, 9, 12, 13, 10, 11, 14, 15};
    CHECK(j["perm"].get<std::vector<std::int64_t>>() == want_perm);
    CHECK(j["cubes"].size() == 4);
    CHECK(j["cubes"][3]["range"] == nlohmann::json({12, 4}));
    CHECK(j["cubes"][3]["coord"] == nlohmann::json({1, 0, 1}));

    const fs::path out = kDir / "part.json";
    CHECK(run_cli("partition --grid 2,2,4 --cube 1,2,2 --out " + out.string()).exit_code == 0);
    CHECK(slurp(out) == r.out);  // file and stdout forms are identical
}

void mask_summary_and_pbm() {
    const fs::path pbm = kDir / "mask.pbm";
    const CmdResult r = run_cli("mask --grid 2,2,4 --cube 2,2,4 --n-global 1 "
                                "--detail-to-global full --pbm " + pbm.string());
    CHECK(r.exit_code == 0);
    const auto j = nlohmann::json::parse(r.out);
    // 16 detail tokens in one cube (dense) + 16 detail->global + 1 global self.
    CHECK(j["allowed_entries"] == 273);
    CHECK_NEAR(j["density"].get<double>(), 273.0 / 289.0, 1e-12);
    CHECK(j["global_to_detail_forbidden"] == true);

    const std::vector<std::string> ls = lines_of(slurp(pbm));
    CHECK(ls.size() >= 3 + 17);
    CHECK(ls[0] == "P1");
    CHECK(ls[2] == "17 17");
    // Global query row: forbidden from every detail key, allowed on itself.
    const std::string& grow = ls[3 + 16];
    CHECK(grow.find('1') == 2 * 16);  // sixteen "0 " pairs precede the single 1
}

void mask_materialization_cap() {
    CHECK(run_cli("mask --grid 1,65,65 --cube 1,8,8").exit_code == 2);
}

void mask_density_goldens() {
    // Three tokens on a line, one per cube, radius 1: each sees itself and
    // its neighbours, so 3 + 2 + 2 of the 9 entries are allowed.
    CmdResult r = run_cli("mask --grid 1,1,3 --cube 1,1,1 --radius 1");
    CHECK(r.exit_code == 0);
    auto j = nlohmann::json::parse(r.out);
    CHECK(j["allowed_entries"] == 7);
    CHECK_NEAR(j["density"].get<double>(), 7.0 / 9.0, 1e-12);

    // One cube covering the grid, no global span: fully dense.
    r = run_cli("mask --grid 2,2,4 --cube 2,2,4");
    CHECK(r.exit_code == 0);
    j = nlohmann::json::parse(r.out);
    CHECK(j["density"].get<double>() == 1.0);

    // Global rows stay walled off whatever the global span length.
    r = run_cli("mask --grid 1,1,3 --cube 1,1,1 --n-global 2");
    CHECK(r.exit_code == 0);
    j = nlohmann::json::parse(r.out);
    CHECK(j["global_to_detail_forbidden"] == true);
}

void flops_sweep_and_dense() {
    const CmdResult sweep = run_cli("flops --stage1-sweep 4");
    CHECK(sweep.exit_code == 0);
    CHECK(sweep.out == "r_t,ratio\n1,1.0000\n2,4.0000\n3,9.0000\n4,16.0000\n");

    const CmdResult dense = run_cli("flops --dense 16,2");
    CHECK(dense.exit_code == 0);
    CHECK(dense.out ==
          "name,N,n_global,dense_flops,local_flops,ratio\n"
          "dense,16,0,2048,2048,1.0000\n");
}

void flops_presets_ladder() {
    const CmdResult r = run_cli("flops --presets " + kPresets);
    CHECK(r.exit_code == 0);
    const std::vector<std::string> ls = lines_of(r.out);
    CHECK(ls.size() == 6);
    CHECK(ls[0] == "name,N,n_global,dense_flops,local_flops,ratio");
    double prev = 0.0;
    for (std::size_t i = 1; i < ls.size(); ++i) {
        const std::size_t comma = ls[i].rfind(',');
        const double ratio = std::stod(ls[i].substr(comma + 1));
        CHECK(ratio > prev);  // strictly increasing with resolution
        prev = ratio;
    }
    CHECK(prev >= 300.0);  // the largest preset
    CHECK(ls[5].rfind("8k,", 0) == 0);
}

void flops_adjacency_option() {
    // 2x2 single-token cubes: Chebyshev radius 1 is fully dense (16 pairs),
    // the 6-connected window drops the diagonals (12 pairs).
    const std::string base = "flops --grid 1,2,2 --cube 1,1,1 --head-dim 1 --heads 1";
    const CmdResult cheb = run_cli(base);
    CHECK(cheb.exit_code == 0);
    CHECK(cheb.out.find("custom,4,0,64,64,1.0000") != std::string::npos);
    const CmdResult faces = run_cli(base + " --adjacency faces");
    CHECK(faces.exit_code == 0);
    CHECK(faces.out.find("custom,4,0,64,48,1.3333") != std::string::npos);
    CHECK(run_cli(base + " --adjacency knight").exit_code == 2);
}

void flops_rejects_bad_presets() {
    const fs::path p = kDir / "empty.json";
    write_file(p, "[]");
    CHECK(run_cli("flops --presets " + p.string()).exit_code == 2);
    write_file(p, "[{\"name\": \"a\", \"grid\": [1,1,1], \"cube\": [1,1,1], \"oops\": 1}]");
    CHECK(run_cli("flops --presets " + p.string()).exit_code == 2);
}

void rope_check_report() {
    const CmdResult r = run_cli("rope-check");
    CHECK(r.exit_code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["max_alignment_error"].get<double>() == 0.0);
    CHECK(j["max_norm_error"].get<double>() <= 1e-12);
    CHECK(j["max_relative_error"].get<double>() <= 1e-9);
}

void train_writes_artifacts() {
    const fs::path cfg = config_path();
    const fs::path out = kDir / "s1";
    const CmdResult r =
        run_cli("train --stage 1 --config " + cfg.string() + " --out " + out.string());
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(out / "init_weights.bin"));
    CHECK(fs::exists(out / "weights.bin"));
    const std::vector<std::string> ls = lines_of(slurp(out / "loss.csv"));
    CHECK(ls.size() == 3);  // header + one row per step
    CHECK(ls[0] == "step,loss");
    CHECK(ls[1].rfind("1,", 0) == 0);

    // Zero steps: the trained weights are exactly the initialization.
    const fs::path out0 = kDir / "s1z";
    CHECK(run_cli("train --stage 1 --config " + cfg.string() + " --out " + out0.string() +
                  " --steps 0")
              .exit_code == 0);
    CHECK(slurp(out0 / "init_weights.bin") == slurp(out0 / "weights.bin"));
    CHECK(!slurp(out0 / "weights.bin").empty());
}

void train_is_reproducible() {
    const fs::path cfg = config_path();
    const fs::path a = kDir / "s2a";
    const fs::path b = kDir / "s2b";
    CHECK(run_cli("train --stage 2 --config " + cfg.string() + " --out " + a.string())
              .exit_code == 0);
    CHECK(run_cli("train --stage 2 --config " + cfg.string() + " --out " + b.string())
              .exit_code == 0);
    CHECK(slurp(a / "weights.bin") == slurp(b / "weights.bin"));
    CHECK(slurp(a / "loss.csv") == slurp(b / "loss.csv"));

    const fs::path c = kDir / "s2c";
    CHECK(run_cli("train --stage 2 --config " + cfg.string() + " --out " + c.string() +
                  " --seed 99")
              .exit_code == 0);
    CHECK(slurp(a / "weights.bin") != slurp(c / "weights.bin"));
}

void sample_pipeline() {
    const fs::path cfg = config_path();
    const std::string w1 = (kDir / "s1" / "weights.bin").string();
    const std::string w2 = (kDir / "s2a" / "weights.bin").string();

    // Stage 1 produces a proxy-shaped clip, reproducibly.
    const fs::path p1a = kDir / "samp1a";
    const fs::path p1b = kDir / "samp1b";
    const std::string base1 =
        "sample --stage 1 --weights " + w1 + " --config " + cfg.string() + " --steps 2 --seed 9";
    CHECK(run_cli(base1 + " --out " + p1a.string()).exit_code == 0);
    CHECK(run_cli(base1 + " --out " + p1b.string()).exit_code == 0);
    const std::string clip1 = slurp(p1a / "sample.avt");
    CHECK(!clip1.empty());
    CHECK(clip1 == slurp(p1b / "sample.avt"));
    CHECK(clip1.substr(0, 4) == "AVT1");

    // The stage-1 output is a valid conditioning tensor for stage 2.
    const std::string base2 = "sample --stage 2 --weights " + w2 + " --config " + cfg.string() +
                              " --steps 2 --seed 9 --proxy " + (p1a / "sample.avt").string();
    const fs::path p2 = kDir / "samp2";
    CHECK(run_cli(base2 + " --out " + p2.string()).exit_code == 0);
    CHECK(slurp(p2 / "sample.avt").substr(0, 4) == "AVT1");

    // Guidance plumbing: scale 1 is byte-identical to the no-guidance path,
    // a real scale changes the bytes.
    const fs::path g0 = kDir / "g0";
    const fs::path g1 = kDir / "g1";
    const fs::path g2 = kDir / "g2";
    CHECK(run_cli(base2 + " --no-cfg --out " + g0.string()).exit_code == 0);
    CHECK(run_cli(base2 + " --cfg-scale 1.0 --out " + g1.string()).exit_code == 0);
    CHECK(run_cli(base2 + " --cfg-scale 2.5 --out " + g2.string()).exit_code == 0);
    CHECK(slurp(g0 / "sample.avt") == slurp(g1 / "sample.avt"));
    CHECK(slurp(g0 / "sample.avt") != slurp(g2 / "sample.avt"));

    // Unconditional stage 2 is the explicit opt-out.
    const fs::path pu = kDir / "sampu";
    CHECK(run_cli("sample --stage 2 --weights " + w2 + " --config " + cfg.string() +
                  " --steps 2 --uncond --out " + pu.string())
              .exit_code == 0);

    // Conditioning flag misuse.
    CHECK(run_cli("sample --stage 2 --weights " + w2 + " --config " + cfg.string() +
                  " --steps 2 --out " + pu.string())
              .exit_code == 2);  // neither --proxy nor --uncond
    CHECK(run_cli(base2 + " --uncond --out " + pu.string()).exit_code == 2);  // both
    CHECK(run_cli("sample --stage 1 --weights " + w1 + " --config " + cfg.string() +
                  " --steps 2 --uncond --out " + pu.string())
              .exit_code == 2);  // stage 1 takes no conditioning flags
}

void rejects_bad_run_config() {
    const fs::path p = kDir / "bad_config.json";
    write_file(p, R"({"grid": [2, 4, 4], "unknown_knob": 1})");
    CHECK(run_cli("train --stage 1 --config " + p.string() + " --out " + (kDir / "x").string())
              .exit_code == 2);
    write_file(p, "{not json");
    CHECK(run_cli("train --stage 1 --config " + p.string() + " --out " + (kDir / "x").string())
              .exit_code == 2);
}

void check_command() {
    const CmdResult ok = run_cli("check");
    CHECK(ok.exit_code == 0);
    CHECK(ok.out.find("ALL CHECKS PASSED") != std::string::npos);
    // Every row carries a measured max-error column next to its tolerance.
    CHECK(ok.out.find("max_error=") != std::string::npos);
    CHECK(ok.out.find("tol=") != std::string::npos);

    const CmdResult fault = run_cli("check --inject-fault adjacency");
    CHECK(fault.exit_code == 1);
    CHECK(fault.out.find("CHECKS FAILED") != std::string::npos);

    CHECK(run_cli("check --inject-fault bogus").exit_code == 2);
}

}  // namespace

int main() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
    return tst::run({
        {"exit_codes", exit_codes},
        {"partition_json", partition_json},
        {"mask_summary_and_pbm", mask_summary_and_pbm},
        {"mask_materialization_cap", mask_materialization_cap},
        {"mask_density_goldens", mask_density_goldens},
        {"flops_sweep_and_dense", flops_sweep_and_dense},
        {"flops_presets_ladder", flops_presets_ladder},
        {"flops_adjacency_option", flops_adjacency_option},
        {"flops_rejects_bad_presets", flops_rejects_bad_presets},
        {"rope_check_report", rope_check_report},
        {"train_writes_artifacts", train_writes_artifacts},
        {"train_is_reproducible", train_is_reproducible},
        {"sample_pipeline", sample_pipeline},
        {"rejects_bad_run_config", rejects_bad_run_config},
        {"check_command", check_command},
    });
}

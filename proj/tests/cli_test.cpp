// Drives the installed-style binary end to end: subcommands, exit codes,
// output files, determinism.

#include "prism/chunked_tensor.hpp"
#include "prism/coo_tensor.hpp"

#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#ifndef PRISM_TOOL_PATH
#define PRISM_TOOL_PATH "prism"
#endif

namespace {

struct ToolResult {
    int exit_code = -1;
    std::string output;  // stdout only
};

ToolResult run_tool(const std::string& args) {
    const std::string command = std::string(PRISM_TOOL_PATH) + " " + args + " 2>/dev/null";
    ToolResult result;
    FILE* pipe = popen(command.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf;
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) result.output.append(buf.data(), n);
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& body) {
    std::ofstream out(path);
    out << body;
}

std::size_t count_lines(const std::string& s) {
    std::size_t lines = 0;
    for (char c : s) {
        if (c == '\n') ++lines;
    }
    return lines;
}

} // namespace

TEST_CASE("convert: snapshot round-trips against the parser") {
    write_file("cli_in.tns", "1 1 1 0.5\n2 3 1 -0.25\n4 2 5 1.5\n");
    const ToolResult conv = run_tool("convert --tensor cli_in.tns --out cli_out.bin --chunk 2,2,2");
    CHECK(conv.exit_code == 0);

    const prism::CooTensor direct = prism::parse_frostt_file("cli_in.tns");
    const prism::CooTensor via_snapshot = prism::flatten(prism::read_snapshot_file("cli_out.bin"));
    REQUIRE(via_snapshot.nnz() == direct.nnz());
    for (std::size_t i = 0; i < direct.nnz(); ++i) {
        CHECK(via_snapshot.nonzeros[i].coords == direct.nonzeros[i].coords);
        CHECK(via_snapshot.nonzeros[i].value == direct.nonzeros[i].value);
    }
    std::remove("cli_in.tns");
    std::remove("cli_out.bin");
}

TEST_CASE("convert: empty input fails with the parse exit code") {
    write_file("cli_empty.tns", "# nothing\n");
    const ToolResult res = run_tool("convert --tensor cli_empty.tns --out cli_empty.bin");
    CHECK(res.exit_code == 2);
    std::remove("cli_empty.tns");
}

TEST_CASE("plan: tiny tensor gets a single-DPU plan; unsatisfiable spec exits 3") {
    const ToolResult tiny =
        run_tool("plan --gen dims=4,4,4,nnz=10,seed=1 --mode 0 --rank 2 --out cli_plan.json");
    CHECK(tiny.exit_code == 0);
    const std::string doc = slurp("cli_plan.json");
    CHECK(doc.find("\"tensor_partitions\": 1") != std::string::npos);
    CHECK(doc.find("\"kernel_iterations\": 1") != std::string::npos);
    CHECK(doc.find("\"replication\"") != std::string::npos);
    std::remove("cli_plan.json");

    const ToolResult unsat = run_tool(
        "plan --gen dims=8,8,8,nnz=10,seed=1 --mode 0 --rank 1 --mram-mb 0.00002 --mram-reserve 0");
    CHECK(unsat.exit_code == 3);

    const ToolResult badcfg = run_tool("plan --gen dims=8,8,8,nnz=10,seed=1 --mode 9 --rank 1");
    CHECK(badcfg.exit_code == 4);
}

TEST_CASE("decompose: same seed, identical CSV; config errors exit 4") {
    const ToolResult a = run_tool(
        "decompose --gen dims=10,10,10,nnz=200,seed=4 --rank 3 --iters 3 --backend pim "
        "--format int7 --seed 11 --out cli_runA");
    CHECK(a.exit_code == 0);
    const ToolResult b = run_tool(
        "decompose --gen dims=10,10,10,nnz=200,seed=4 --rank 3 --iters 3 --backend pim "
        "--format int7 --seed 11 --out cli_runB");
    CHECK(b.exit_code == 0);
    CHECK(slurp("cli_runA.csv") == slurp("cli_runB.csv"));
    CHECK(a.output == b.output);

    // int7 run carries the format triple into the report
    const std::string report = slurp("cli_runA.json");
    CHECK(report.find("\"name\": \"int7\"") != std::string::npos);
    CHECK(report.find("\"frac_bits\": 7") != std::string::npos);
    CHECK(report.find("\"prec_shift\": 0") != std::string::npos);
    std::remove("cli_runA.csv");
    std::remove("cli_runA.json");
    std::remove("cli_runB.csv");
    std::remove("cli_runB.json");

    const ToolResult bad = run_tool("decompose --gen dims=4,4,nnz=4,seed=1 --backend nope");
    CHECK(bad.exit_code == 4);
    const ToolResult nosrc = run_tool("decompose --rank 2");
    CHECK(nosrc.exit_code == 4);
}

TEST_CASE("decompose: cpu and pim float backends agree on the fit") {
    const ToolResult cpu = run_tool(
        "decompose --gen dims=12,9,7,nnz=300,seed=6 --rank 4 --iters 4 --backend cpu --seed 3");
    const ToolResult pim = run_tool(
        "decompose --gen dims=12,9,7,nnz=300,seed=6 --rank 4 --iters 4 --backend pim "
        "--format float --seed 3");
    REQUIRE(cpu.exit_code == 0);
    REQUIRE(pim.exit_code == 0);

    auto last_fit = [](const std::string& csv) {
        std::istringstream in(csv);
        std::string line, last;
        while (std::getline(in, line)) {
            if (!line.empty() && line.find("iteration") == std::string::npos) last = line;
        }
        const auto c1 = last.find(',');
        const auto c2 = last.find(',', c1 + 1);
        return std::stod(last.substr(c1 + 1, c2 - c1 - 1));
    };
    CHECK(std::fabs(last_fit(cpu.output) - last_fit(pim.output)) <= 1e-6);
}

TEST_CASE("decompose --mode runs a single MTTKRP") {
    const ToolResult res = run_tool(
        "decompose --gen dims=8,8,8,nnz=100,seed=2 --rank 2 --backend pim --format int15-12 "
        "--mode 1 --seed 5 --out cli_mttkrp");
    CHECK(res.exit_code == 0);
    CHECK(res.output.find("mode 1 mttkrp") != std::string::npos);
    const std::string report = slurp("cli_mttkrp.json");
    CHECK(report.find("\"command\": \"mttkrp\"") != std::string::npos);
    CHECK(report.find("\"plan\"") != std::string::npos);
    std::remove("cli_mttkrp.json");
}

TEST_CASE("study: six rows per tensor with a float baseline and stable columns") {
    const ToolResult res = run_tool(
        "study --gen dims=10,10,10,nnz=300,seed=8 --rank 3 --iters 2 --seed 7 --out cli_study");
    CHECK(res.exit_code == 0);
    const std::string csv = slurp("cli_study.csv");
    CHECK(count_lines(csv) == 7);  // header + 3 formats x 2 lock settings
    CHECK(csv.find("tensor,format,locks,rank,iterations,final_fit,scope,multiplies,adds,shifts,"
                   "mram_reads_bytes,mram_writes_bytes,overflow_wraps,lost_updates,saturations") == 0);
    CHECK(csv.find(",float,1,") != std::string::npos);
    CHECK(csv.find(",float,0,") != std::string::npos);
    CHECK(csv.find(",int7,") != std::string::npos);
    CHECK(csv.find(",int15-12,") != std::string::npos);
    std::remove("cli_study.csv");
}

TEST_CASE("config file supplies defaults, flags win") {
    write_file("cli_config.toml", "[decompose]\nrank=2\niters=1\nseed=9\n");
    const ToolResult from_config = run_tool(
        "--config cli_config.toml decompose --gen dims=6,6,6,nnz=50,seed=3 --backend cpu "
        "--out cli_cfgA");
    CHECK(from_config.exit_code == 0);
    // 1 iteration from the config: header + init row + one sweep
    CHECK(count_lines(slurp("cli_cfgA.csv")) == 3);

    const ToolResult overridden = run_tool(
        "--config cli_config.toml decompose --gen dims=6,6,6,nnz=50,seed=3 --backend cpu "
        "--iters 3 --out cli_cfgB");
    CHECK(overridden.exit_code == 0);
    CHECK(count_lines(slurp("cli_cfgB.csv")) == 5);  // flag beats the config
    std::remove("cli_config.toml");
    std::remove("cli_cfgA.csv");
    std::remove("cli_cfgA.json");
    std::remove("cli_cfgB.csv");
    std::remove("cli_cfgB.json");
}

// prism: sparse CP-ALS decomposition engine with a simulated
// processing-in-memory MTTKRP backend.
//
// Subcommands: convert (FROSTT -> binary snapshot), plan (print the DPU
// partition plan), decompose (CP-ALS or a single-mode MTTKRP), study
// (format x locks sweep). Exit codes: 0 ok, 2 tensor parse error,
// 3 unsatisfiable plan, 4 configuration error.

#include "prism/chunked_tensor.hpp"
#include "prism/cpals.hpp"
#include "prism/error.hpp"
#include "prism/hetero.hpp"
#include "prism/host_runtime.hpp"
#include "prism/partition.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

using nlohmann::ordered_json;
using namespace prism;

constexpr int kExitParse = 2;
constexpr int kExitPlan = 3;
constexpr int kExitConfig = 4;

struct TensorSource {
    std::string path;
    std::string gen;  // dims=a,b,c nnz=N seed=S
    std::vector<std::uint32_t> declared_dims;

    bool configured() const { return !path.empty() || !gen.empty(); }
};

std::vector<std::uint32_t> parse_dims_list(const std::string& text) {
    std::vector<std::uint32_t> dims;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) dims.push_back(static_cast<std::uint32_t>(std::stoul(item)));
    return dims;
}

CooTensor load_tensor(const TensorSource& src) {
    if (!src.gen.empty()) {
        // dims=4,4,4,nnz=32,seed=7 or dims=4x4x4;nnz=32;seed=7: split on
        // ','/';'; bare numeric tokens continue the dims list
        std::vector<std::uint32_t> dims;
        std::uint64_t nnz = 0, seed = 0;
        std::string current_key;
        std::string token;
        std::string spec = src.gen;
        for (char& c : spec) {
            if (c == ';') c = ',';
        }
        std::stringstream ss(spec);
        while (std::getline(ss, token, ',')) {
            if (token.empty()) continue;
            std::string value = token;
            const auto eq = token.find('=');
            if (eq != std::string::npos) {
                current_key = token.substr(0, eq);
                value = token.substr(eq + 1);
            } else if (current_key != "dims") {
                throw ConfigError("--gen: expected key=value, got " + token);
            }
            if (current_key == "dims") {
                for (char& c : value) {
                    if (c == 'x' || c == 'X') c = ',';
                }
                for (std::uint32_t d : parse_dims_list(value)) dims.push_back(d);
            } else if (current_key == "nnz") {
                nnz = std::stoull(value);
            } else if (current_key == "seed") {
                seed = std::stoull(value);
            } else {
                throw ConfigError("--gen: unknown key " + current_key);
            }
        }
        if (dims.empty() || nnz == 0) throw ConfigError("--gen needs dims=... and nnz=...");
        return generate_synthetic(dims, nnz, seed);
    }

    std::ifstream probe(src.path, std::ios::binary);
    if (!probe) throw ParseError("cannot open tensor file: " + src.path);
    if (looks_like_snapshot(probe)) {
        probe.close();
        return flatten(read_snapshot_file(src.path));
    }
    probe.close();
    return parse_frostt_file(src.path, src.declared_dims);
}

struct FormatOption {
    std::string name = "float";
    int prec_shift = -1;  // -1: preset default

    NumberFormats resolve() const {
        NumberFormats f;
        if (name == "float") {
            f = NumberFormats::floating();
        } else if (name == "int7") {
            f = NumberFormats::int7();
        } else if (name == "int15-12") {
            f = NumberFormats::int15_12();
        } else if (name == "q5.3") {
            f = NumberFormats::q53();
        } else if (name.size() > 1 && (name[0] == 'q' || name[0] == 'Q')) {
            const auto dot = name.find('.');
            if (dot == std::string::npos) throw ConfigError("--format: expected qM.N");
            const int m = std::stoi(name.substr(1, dot - 1));
            const int n = std::stoi(name.substr(dot + 1));
            f = NumberFormats::custom(m + n, n, prec_shift < 0 ? 0 : prec_shift);
            return f;
        } else {
            throw ConfigError("--format: unknown preset " + name);
        }
        if (prec_shift >= 0 && !f.is_float) {
            f = NumberFormats::custom(f.matrix.total_bits, f.matrix.frac_bits, prec_shift);
        }
        return f;
    }
};

struct MachineOption {
    std::uint32_t dpus = 2560;
    double mram_mb = 64.0;
    std::uint32_t tasklets = 16;
    std::uint64_t reserve = 1024;

    DpuSpec resolve() const {
        DpuSpec spec;
        spec.dpu_count = dpus;
        spec.mram_bytes = static_cast<std::uint64_t>(mram_mb * 1024.0 * 1024.0);
        spec.tasklets = tasklets;
        spec.mram_reserve_bytes = reserve;
        return spec;
    }
};

std::string csv_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

ordered_json stats_json(const KernelStats& s) {
    return {{"multiplies", s.multiplies},
            {"adds", s.adds},
            {"shifts", s.shifts},
            {"mram_reads_bytes", s.mram_reads_bytes},
            {"mram_writes_bytes", s.mram_writes_bytes},
            {"overflow_wraps", s.overflow_wraps},
            {"lost_updates", s.lost_updates}};
}

ordered_json ledger_json(const TransferLedger& ledger) {
    ordered_json iterations = ordered_json::array();
    for (const IterationTransfer& it : ledger.iterations) {
        iterations.push_back({{"tensor_bytes_sent", it.tensor_bytes_sent},
                              {"factor_bytes_sent", it.factor_bytes_sent},
                              {"result_bytes_gathered", it.result_bytes_gathered},
                              {"reduce_add_count", it.reduce_add_count}});
    }
    return {{"tensor_reuse", ledger.tensor_reuse}, {"iterations", std::move(iterations)}};
}

ordered_json mode_info_json(const ModeRunInfo& info) {
    ordered_json j;
    j["mode"] = info.mode;
    j["backend"] = info.backend;
    j["stats"] = stats_json(info.stats);
    j["ledger"] = ledger_json(info.ledger);
    j["quantization"] = {{"saturations", info.quantization.saturations},
                         {"overflow_wraps", info.quantization.overflow_wraps}};
    j["pim_nnz"] = info.pim_nnz;
    j["cpu_nnz"] = info.cpu_nnz;
    j["achieved_pim_fraction"] = info.achieved_pim_fraction;
    return j;
}

void write_text_file(const std::string& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write output file: " + path);
    out << body;
}

struct RunOptions {
    TensorSource source;
    std::uint32_t rank = 10;
    std::uint32_t iterations = 5;
    std::string backend = "cpu";
    FormatOption format;
    bool locks = false;
    std::string exec_mode = "deterministic";
    double conflict_rate = 0.0;
    std::uint64_t conflict_seed = 0;
    double pim_fraction = 0.5;
    MachineOption machine;
    std::uint64_t seed = 0;
    std::uint32_t ranks_per_dpu = 1;
    std::string fit_scope = "auto";
    int single_mode = -1;
    std::string out_prefix;

    KernelConfig kernel() const {
        KernelConfig cfg;
        cfg.tasklet_count = machine.tasklets;
        cfg.locks = locks;
        cfg.execution_mode = exec_mode == "concurrent" ? KernelConfig::Mode::concurrent
                                                       : KernelConfig::Mode::deterministic;
        cfg.conflict_rate = conflict_rate;
        cfg.conflict_seed = conflict_seed;
        return cfg;
    }

    DecomposeOptions decompose_options() const {
        DecomposeOptions opt;
        opt.iterations = iterations;
        if (fit_scope == "all") {
            opt.scope = FitScope::all_elements;
            opt.auto_scope = false;
        } else if (fit_scope == "nnz") {
            opt.scope = FitScope::nonzeros_only;
            opt.auto_scope = false;
        }
        return opt;
    }

    ordered_json config_json() const {
        ordered_json j;
        j["tensor"] = source.path.empty() ? "generated:" + source.gen : source.path;
        j["rank"] = rank;
        j["iterations"] = iterations;
        j["backend"] = backend;
        j["format"] = format.name;
        j["locks"] = locks;
        j["execution_mode"] = exec_mode;
        j["conflict_rate"] = conflict_rate;
        j["conflict_seed"] = conflict_seed;
        j["pim_fraction"] = pim_fraction;
        j["dpus"] = machine.dpus;
        j["mram_mb"] = mram_mb_of(machine);
        j["tasklets"] = machine.tasklets;
        j["mram_reserve_bytes"] = machine.reserve;
        j["seed"] = seed;
        j["ranks_per_dpu"] = ranks_per_dpu;
        j["fit_scope"] = fit_scope;
        return j;
    }

    static double mram_mb_of(const MachineOption& m) { return m.mram_mb; }
};

std::unique_ptr<MttkrpBackend> make_backend(const RunOptions& opt, const CooTensor& t,
                                            const NumberFormats& formats) {
    if (opt.backend == "cpu") {
        return std::make_unique<CpuBackend>(t, opt.rank);
    }
    if (opt.backend == "pim") {
        return std::make_unique<PimBackend>(t, opt.rank, opt.machine.resolve(), formats,
                                            opt.kernel(), opt.ranks_per_dpu);
    }
    if (opt.backend == "hetero") {
        return std::make_unique<HeteroBackend>(t, opt.rank, opt.machine.resolve(), formats,
                                               opt.kernel(), HeteroConfig{opt.pim_fraction},
                                               opt.ranks_per_dpu);
    }
    throw ConfigError("--backend must be cpu, pim or hetero");
}

// ---------------------------------------------------------------------------

int cmd_convert(const TensorSource& source, const std::string& out_path,
                const std::vector<std::uint32_t>& chunk_shape) {
    const CooTensor t = load_tensor(source);
    const std::vector<std::uint32_t> shape = chunk_shape.empty() ? t.dims : chunk_shape;
    const ChunkedTensor ct = chunk_tensor(t, shape);
    write_snapshot_file(out_path, ct);
    std::cout << "wrote " << out_path << ": order " << t.order() << ", nnz " << t.nnz() << ", "
              << ct.chunks.size() << " occupied chunk(s)\n";
    return 0;
}

int cmd_plan(const RunOptions& opt, std::uint32_t mode) {
    const CooTensor t = load_tensor(opt.source);
    const NumberFormats formats = opt.format.resolve();
    const PartitionPlan plan =
        decide_partitioning(t, mode, opt.rank, opt.machine.resolve(), formats, opt.ranks_per_dpu);

    ordered_json document = ordered_json::parse(plan_to_json(plan));
    document["replication"] = ordered_json::parse(replication_to_json(replication_stats(plan)));

    std::cerr << plan_to_text(plan);
    const std::string body = document.dump(2) + "\n";
    if (!opt.out_prefix.empty()) {
        write_text_file(opt.out_prefix, body);
    } else {
        std::cout << body;
    }
    return 0;
}

int run_single_mode(const RunOptions& opt, const CooTensor& t, const NumberFormats& formats) {
    const auto mode = static_cast<std::uint32_t>(opt.single_mode);
    if (mode >= t.order()) throw ConfigError("--mode out of range for this tensor");

    const CpdModel model = init_factors(t.dims, opt.rank, opt.seed);
    ModeRunInfo info;
    std::unique_ptr<MttkrpBackend> backend = make_backend(opt, t, formats);
    const Matrix out = backend->mttkrp(model.factors, mode, info);

    double checksum = 0.0;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < out.cols(); ++c) checksum += std::fabs(out(r, c));
    }

    ordered_json report;
    report["command"] = "mttkrp";
    report["config"] = opt.config_json();
    report["mode"] = mode;
    report["output_rows"] = out.rows();
    report["output_abs_sum"] = checksum;
    report["run"] = mode_info_json(info);
    if (opt.backend == "pim" || opt.backend == "hetero") {
        auto* pim = dynamic_cast<PimBackend*>(backend.get());
        auto* het = dynamic_cast<HeteroBackend*>(backend.get());
        const PartitionPlan& plan = pim ? pim->plan_for(mode) : het->plan_for(mode);
        report["plan"] = ordered_json::parse(plan_to_json(plan));
    }

    const std::string body = report.dump(2) + "\n";
    if (!opt.out_prefix.empty()) {
        write_text_file(opt.out_prefix + ".json", body);
    }
    std::cout << "mode " << mode << " mttkrp: backend " << info.backend << ", output abs-sum "
              << csv_double(checksum) << "\n";
    return 0;
}

int cmd_decompose(const RunOptions& opt) {
    const CooTensor t = load_tensor(opt.source);
    const NumberFormats formats = opt.format.resolve();
    if (opt.single_mode >= 0) return run_single_mode(opt, t, formats);

    std::unique_ptr<MttkrpBackend> backend = make_backend(opt, t, formats);
    const auto [model, reports] = decompose(t, opt.rank, *backend, opt.seed, opt.decompose_options());

    std::ostringstream csv;
    csv << "iteration,fit,scope,zero_columns\n";
    for (const FitReport& rep : reports) {
        csv << rep.iteration << ',' << csv_double(rep.fit) << ','
            << (rep.scope == FitScope::all_elements ? "all_elements" : "nonzeros_only") << ','
            << rep.zero_columns << '\n';
    }
    std::cout << csv.str();

    ordered_json report;
    report["command"] = "decompose";
    report["config"] = opt.config_json();
    report["formats"] = {{"name", formats.name}, {"is_float", formats.is_float}};
    if (!formats.is_float) {
        report["formats"]["matrix"] = {{"total_bits", formats.matrix.total_bits},
                                       {"frac_bits", formats.matrix.frac_bits},
                                       {"prec_shift", formats.matrix.prec_shift}};
    }
    ordered_json iterations = ordered_json::array();
    for (const FitReport& rep : reports) {
        ordered_json r;
        r["iteration"] = rep.iteration;
        r["fit"] = rep.fit;
        r["scope"] = rep.scope == FitScope::all_elements ? "all_elements" : "nonzeros_only";
        r["zero_columns"] = rep.zero_columns;
        ordered_json modes = ordered_json::array();
        for (const ModeRunInfo& info : rep.modes) modes.push_back(mode_info_json(info));
        r["modes"] = std::move(modes);
        iterations.push_back(std::move(r));
    }
    report["iterations"] = std::move(iterations);

    if (opt.backend == "pim" || opt.backend == "hetero") {
        ordered_json plans;
        auto* raw = backend.get();
        for (std::uint32_t mode = 0; mode < t.order(); ++mode) {
            const PartitionPlan* plan = nullptr;
            if (auto* pim = dynamic_cast<PimBackend*>(raw)) plan = &pim->plan_for(mode);
            if (auto* het = dynamic_cast<HeteroBackend*>(raw)) plan = &het->plan_for(mode);
            if (plan) plans["mode_" + std::to_string(mode)] = ordered_json::parse(plan_to_json(*plan));
        }
        report["plans"] = std::move(plans);
        if (auto* het = dynamic_cast<HeteroBackend*>(raw)) {
            ordered_json splits;
            for (std::uint32_t mode = 0; mode < t.order(); ++mode) {
                const SplitDecision& s = het->split_for(mode);
                splits["mode_" + std::to_string(mode)] = {
                    {"pim_chunks", s.pim_chunks.size()},   {"cpu_chunks", s.cpu_chunks.size()},
                    {"phase1_chunks", s.phase1_chunks},    {"pim_nnz", s.pim_nnz},
                    {"cpu_nnz", s.cpu_nnz},                {"target_fraction", s.target_fraction},
                    {"achieved_fraction", s.achieved_fraction}};
            }
            report["splits"] = std::move(splits);
        }
    }

    if (!opt.out_prefix.empty()) {
        write_text_file(opt.out_prefix + ".csv", csv.str());
        write_text_file(opt.out_prefix + ".json", report.dump(2) + "\n");
    }
    return 0;
}

int cmd_study(const RunOptions& base) {
    const CooTensor t = load_tensor(base.source);

    std::ostringstream csv;
    csv << "tensor,format,locks,rank,iterations,final_fit,scope,multiplies,adds,shifts,"
           "mram_reads_bytes,mram_writes_bytes,overflow_wraps,lost_updates,saturations\n";

    const std::string tensor_name = t.name.empty() ? "generated" : t.name;
    // the float baseline row is always present
    for (const NumberFormats& formats :
         {NumberFormats::floating(), NumberFormats::int7(), NumberFormats::int15_12()}) {
        for (const bool locks : {true, false}) {
            RunOptions opt = base;
            opt.backend = "pim";
            opt.locks = locks;
            opt.exec_mode = "concurrent";

            PimBackend backend(t, opt.rank, opt.machine.resolve(), formats, opt.kernel(),
                               opt.ranks_per_dpu);
            const auto [model, reports] =
                decompose(t, opt.rank, backend, opt.seed, opt.decompose_options());

            KernelStats stats;
            ArithCounters quant;
            for (const FitReport& rep : reports) {
                for (const ModeRunInfo& info : rep.modes) {
                    stats += info.stats;
                    quant += info.quantization;
                }
            }
            const FitReport& last = reports.back();
            csv << tensor_name << ',' << formats.name << ',' << (locks ? 1 : 0) << ',' << opt.rank
                << ',' << opt.iterations << ',' << csv_double(last.fit) << ','
                << (last.scope == FitScope::all_elements ? "all_elements" : "nonzeros_only") << ','
                << stats.multiplies << ',' << stats.adds << ',' << stats.shifts << ','
                << stats.mram_reads_bytes << ',' << stats.mram_writes_bytes << ','
                << stats.overflow_wraps << ',' << stats.lost_updates << ',' << quant.saturations
                << '\n';
        }
    }

    std::cout << csv.str();
    if (!base.out_prefix.empty()) write_text_file(base.out_prefix + ".csv", csv.str());
    return 0;
}

void add_source_options(CLI::App* cmd, TensorSource& source) {
    auto* tensor = cmd->add_option("--tensor", source.path, "tensor file (.tns text or binary snapshot)");
    cmd->add_option("--gen", source.gen, "synthetic tensor, e.g. dims=64,64,64,nnz=10000,seed=1")
        ->excludes(tensor);
    cmd->add_option("--dims", source.declared_dims, "declared dims overriding the parser inference")
        ->delimiter(',');
}

void add_machine_options(CLI::App* cmd, MachineOption& machine) {
    cmd->add_option("--dpus", machine.dpus, "number of DPUs");
    cmd->add_option("--mram-mb", machine.mram_mb, "MRAM per DPU in MiB");
    cmd->add_option("--tasklets", machine.tasklets, "tasklets per DPU");
    cmd->add_option("--mram-reserve", machine.reserve, "MRAM bytes reserved for control data");
}

void add_run_options(CLI::App* cmd, RunOptions& opt) {
    add_source_options(cmd, opt.source);
    add_machine_options(cmd, opt.machine);
    cmd->add_option("--rank", opt.rank, "decomposition rank");
    cmd->add_option("--iters", opt.iterations, "CP-ALS iterations");
    cmd->add_option("--format", opt.format.name, "float | int7 | int15-12 | q5.3 | qM.N");
    cmd->add_option("--prec-shift", opt.format.prec_shift, "override accumulator prec_shift");
    cmd->add_option("--seed", opt.seed, "initialization seed");
    cmd->add_option("--ranks-per-dpu", opt.ranks_per_dpu, "rank slice width per DPU");
    cmd->add_option("--fit-scope", opt.fit_scope, "auto | all | nnz")
        ->check(CLI::IsMember({"auto", "all", "nnz"}));
    cmd->add_option("--conflict-rate", opt.conflict_rate, "injected write-conflict rate");
    cmd->add_option("--conflict-seed", opt.conflict_seed, "conflict injection seed");
    cmd->add_flag("--locks", opt.locks, "keep the tasklet locking mechanism");
    cmd->add_option("--exec", opt.exec_mode, "deterministic | concurrent")
        ->check(CLI::IsMember({"deterministic", "concurrent"}));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse CP-ALS engine with a simulated processing-in-memory MTTKRP backend"};
    app.require_subcommand(1);
    // declarative config: top-level keys plus one [section] per subcommand;
    // command-line flags win over config values
    app.set_config("--config", "", "read options from a config file (sections per subcommand)");
    app.allow_config_extras(CLI::config_extras_mode::ignore);

    // convert
    auto* convert = app.add_subcommand("convert", "parse a FROSTT tensor and write a binary snapshot");
    TensorSource convert_source;
    std::string convert_out;
    std::vector<std::uint32_t> convert_chunk;
    add_source_options(convert, convert_source);
    convert->add_option("--out", convert_out, "output snapshot path")->required();
    convert->add_option("--chunk", convert_chunk, "chunk shape (default: one chunk)")->delimiter(',');

    // plan
    auto* plan = app.add_subcommand("plan", "print the partition plan for one output mode");
    RunOptions plan_opt;
    std::uint32_t plan_mode = 0;
    add_run_options(plan, plan_opt);
    plan->add_option("--mode", plan_mode, "output mode")->required();
    plan->add_option("--out", plan_opt.out_prefix, "write the plan document to this path");

    // decompose
    auto* dec = app.add_subcommand("decompose", "run CP-ALS (or one MTTKRP with --mode)");
    RunOptions dec_opt;
    add_run_options(dec, dec_opt);
    dec->add_option("--backend", dec_opt.backend, "cpu | pim | hetero")
        ->check(CLI::IsMember({"cpu", "pim", "hetero"}));
    dec->add_option("--pim-fraction", dec_opt.pim_fraction, "nonzero fraction targeted at PIM");
    dec->add_option("--mode", dec_opt.single_mode, "run a single-mode MTTKRP instead of CP-ALS");
    dec->add_option("--out", dec_opt.out_prefix, "output prefix for <prefix>.csv and <prefix>.json");

    // study
    auto* study = app.add_subcommand("study", "sweep {float,int7,int15-12} x {locks,no locks}");
    RunOptions study_opt;
    study_opt.conflict_rate = 0.002;
    add_run_options(study, study_opt);
    study->add_option("--out", study_opt.out_prefix, "output prefix for <prefix>.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (convert->parsed()) {
            if (!convert_source.configured()) throw ConfigError("convert needs --tensor or --gen");
            return cmd_convert(convert_source, convert_out, convert_chunk);
        }
        if (plan->parsed()) {
            if (!plan_opt.source.configured()) throw ConfigError("plan needs --tensor or --gen");
            return cmd_plan(plan_opt, plan_mode);
        }
        if (dec->parsed()) {
            if (!dec_opt.source.configured()) throw ConfigError("decompose needs --tensor or --gen");
            return cmd_decompose(dec_opt);
        }
        if (study->parsed()) {
            if (!study_opt.source.configured()) throw ConfigError("study needs --tensor or --gen");
            return cmd_study(study_opt);
        }
    } catch (const ParseError& e) {
        std::cerr << "tensor error: " << e.what() << "\n";
        return kExitParse;
    } catch (const PlanError& e) {
        std::cerr << "plan error: " << e.what() << "\n";
        return kExitPlan;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

#pragma once

#include "prism/cpals.hpp"
#include "prism/host_runtime.hpp"

#include <cstdint>
#include <map>
#include <vector>

namespace prism {

struct HeteroConfig {
    double pim_fraction = 0.5;  // fraction of nonzeros targeted at PIM
};

/// Static device split over the occupied chunks. PIM receives whole chunks
/// only (ranks are never split across devices): phase 1 takes chunks that
/// fit a single DPU from most to least dense, phase 2 falls back to
/// capacity-exceeding chunks from least to most dense.
struct SplitDecision {
    std::vector<std::uint64_t> pim_chunks;  // in assignment order
    std::vector<std::uint64_t> cpu_chunks;  // ascending chunk index
    std::uint64_t phase1_chunks = 0;        // leading pim_chunks taken in phase 1
    std::uint64_t pim_nnz = 0;
    std::uint64_t cpu_nnz = 0;
    double target_fraction = 0.0;
    double achieved_fraction = 0.0;
};

SplitDecision split_chunks(const ChunkedTensor& ct, const PartitionPlan& plan, double pim_fraction);

struct HeteroResult {
    Matrix output;
    SplitDecision split;
    TransferLedger pim_ledger;
    KernelStats pim_stats;
    ArithCounters quantization;
    QFormat value_format;
};

/// Runs the PIM chunk set through the host runtime (on a plan restricted to
/// those chunks) and the CPU chunk set through the reference real-arithmetic
/// kernel, concurrently, then sums the outputs row-wise.
HeteroResult execute_hetero(const MttkrpRequest& req, const HeteroConfig& cfg);

/// Heterogeneous backend for the ALS driver.
class HeteroBackend : public MttkrpBackend {
public:
    HeteroBackend(const CooTensor& tensor, std::uint32_t rank, DpuSpec spec, NumberFormats formats,
                  KernelConfig kernel, HeteroConfig hetero, std::uint32_t ranks_per_dpu = 1);
    std::string name() const override { return "hetero"; }
    Matrix mttkrp(const std::vector<Matrix>& factors, std::uint32_t mode,
                  ModeRunInfo& info) override;

    const SplitDecision& split_for(std::uint32_t mode);
    const PartitionPlan& plan_for(std::uint32_t mode) { return pim_.plan_for(mode); }

private:
    PimBackend pim_;
    HeteroConfig hetero_;
    std::uint32_t rank_;
    KernelConfig kernel_;
    std::map<std::uint32_t, SplitDecision> splits_;
};

} // namespace prism

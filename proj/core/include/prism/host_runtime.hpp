#pragma once

#include "prism/chunked_tensor.hpp"
#include "prism/matrix.hpp"
#include "prism/partition.hpp"
#include "prism/pim_kernel.hpp"

#include <cstdint>
#include <vector>

namespace prism {

/// One full spMTTKRP on the simulated machine.
struct MttkrpRequest {
    const ChunkedTensor* tensor = nullptr;
    const std::vector<Matrix>* factors = nullptr;  // one I_n x R matrix per mode
    std::uint32_t mode = 0;
    std::uint32_t rank = 0;
    const PartitionPlan* plan = nullptr;
    KernelConfig kernel;
};

struct IterationTransfer {
    std::uint64_t tensor_bytes_sent = 0;
    std::uint64_t factor_bytes_sent = 0;
    std::uint64_t result_bytes_gathered = 0;
    std::uint64_t reduce_add_count = 0;
};

struct TransferLedger {
    std::vector<IterationTransfer> iterations;
    bool tensor_reuse = true;

    IterationTransfer totals() const;
};

struct MttkrpResult {
    Matrix output;  // I_mode x R, dequantized
    TransferLedger ledger;
    KernelStats stats;
    ArithCounters quantization;
    QFormat value_format;  // fixed-point runs only
};

/// Quantizes and scatters factor slices, loads tensor slices (tensor data
/// is re-sent per iteration only when the plan lost residency), runs the
/// per-assignment kernels, then sums partial outputs per reduction group —
/// raw 32-bit accumulators summed in 64-bit before a single dequantization —
/// and places rows at absolute output coordinates. Throws ConfigError on a
/// plan/tensor/factor mismatch.
MttkrpResult execute_mttkrp(const MttkrpRequest& req);

/// Builds the DPU-resident image for one assignment (exposed for kernel
/// tests). Counters accumulate quantization saturations.
DpuImage build_image(const PartitionPlan& plan, const Assignment& assignment,
                     const ChunkedTensor& tensor, const std::vector<Matrix>& factors,
                     QFormat value_format, ArithCounters* counters = nullptr);

/// Reference MTTKRP computed the textbook way: the mode-m matricized tensor
/// is materialized densely and multiplied by the explicitly formed
/// Khatri-Rao product of the input-mode factors. Deliberately a different
/// route from the element-wise kernels; only for tensors whose dense
/// matricization is small.
Matrix dense_mttkrp_oracle(const CooTensor& t, const std::vector<Matrix>& factors, std::uint32_t mode);

/// Worker-pool width for n independent tasks: PRISM_THREADS when set, else
/// hardware concurrency, never more than n.
unsigned worker_count(std::size_t n);

} // namespace prism

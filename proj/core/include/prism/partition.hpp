#pragma once

#include "prism/coo_tensor.hpp"
#include "prism/fixed_point.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace prism {

/// Resource model of one DPU and of the machine, as simulation parameters.
struct DpuSpec {
    std::uint64_t mram_bytes = 64ull << 20;  // 64 MB DRAM bank per DPU
    std::uint64_t wram_bytes = 64ull << 10;  // 64 KB scratchpad (transfer accounting only)
    std::uint32_t tasklets = 16;
    std::uint32_t dpu_count = 2560;
    std::uint64_t mram_reserve_bytes = 1024;  // control block set aside per DPU
};

/// MRAM usage of one assignment. Tensor records are packed
/// (coords + value) rounded up to 8-byte alignment; factor slices and the
/// output buffer scale with the rank slice width.
struct MemoryFootprint {
    std::uint64_t tensor_bytes = 0;
    std::uint64_t factor_bytes = 0;
    std::uint64_t output_bytes = 0;
    std::uint64_t control_bytes = 0;

    std::uint64_t total() const { return tensor_bytes + factor_bytes + output_bytes + control_bytes; }
};

/// Bytes of one packed nonzero record: 32-bit coordinates per mode plus the
/// value, aligned to 8 bytes.
inline std::uint64_t record_bytes(std::size_t order, std::uint32_t value_bytes) {
    const std::uint64_t raw = 4ull * order + value_bytes;
    return (raw + 7) / 8 * 8;
}

MemoryFootprint footprint(const std::vector<std::uint32_t>& chunk_shape, std::uint32_t ranks_per_dpu,
                          std::uint64_t nnz_in_dpu, const NumberFormats& formats, std::uint32_t mode,
                          std::uint64_t mram_reserve_bytes);

struct RankSlice {
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::uint32_t width() const { return end - begin; }
    bool operator==(const RankSlice&) const = default;
};

struct NnzRange {
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
    std::uint64_t length() const { return end - begin; }
    bool operator==(const NnzRange&) const = default;
};

/// One unit of kernel work: a rank slice of one chunk's nonzero range on
/// one DPU slot of one kernel iteration.
struct Assignment {
    std::uint32_t kernel_iteration = 0;
    std::uint32_t dpu_id = 0;
    std::uint32_t rank_partition = 0;
    RankSlice ranks;
    std::uint64_t chunk_index = 0;    // linear grid index
    std::uint64_t tensor_partition = 0;  // index of the (chunk, range) pair
    NnzRange nnz;
};

/// Complete mapping of (rank slice x chunk x nonzero slice) onto DPUs for
/// one output mode, with the kernel-iteration schedule.
struct PartitionPlan {
    std::vector<std::uint32_t> chunk_shape;
    std::vector<std::uint32_t> grid_dims;
    std::uint32_t mode = 0;
    std::uint32_t rank = 0;
    std::uint32_t ranks_per_dpu = 1;
    std::uint32_t rank_partitions = 1;
    std::uint64_t tensor_partitions = 0;
    std::uint32_t kernel_iterations = 1;
    bool tensor_reusable = true;
    std::uint64_t nnz_capacity_per_dpu = 0;
    std::uint64_t total_nnz = 0;
    std::uint64_t occupied_chunks = 0;
    std::uint64_t nonzero_partitioned_chunks = 0;
    DpuSpec spec;
    NumberFormats formats;
    std::vector<Assignment> assignments;

    std::size_t order() const { return chunk_shape.size(); }

    /// Grid coordinate of a chunk along one mode.
    std::uint32_t chunk_coord(std::uint64_t chunk_index, std::uint32_t m) const;

    MemoryFootprint assignment_footprint(const Assignment& a) const {
        return footprint(chunk_shape, a.ranks.width(), a.nnz.length(), formats, mode,
                         spec.mram_reserve_bytes);
    }
};

/// Runs the partitioning decider: rank partitioning first, then halves
/// input-mode chunk extents (largest first, ties to the lowest mode, output
/// mode only as a last resort) until the per-DPU nonzero capacity matches
/// the tensor density, then splits oversized chunks into contiguous
/// nonzero ranges and lays assignments out into kernel iterations.
/// Throws PlanError when even a single record with a minimal factor slice
/// cannot fit.
PartitionPlan decide_partitioning(const CooTensor& t, std::uint32_t mode, std::uint32_t rank,
                                  const DpuSpec& spec, const NumberFormats& formats,
                                  std::uint32_t ranks_per_dpu = 1);

/// Assignments whose partial outputs must be summed: all work for the same
/// rank slice and output-mode block, across kernel iterations.
struct ReductionGroup {
    std::uint32_t rank_partition = 0;
    std::uint32_t out_coord = 0;  // grid coordinate along the output mode
    std::vector<std::uint32_t> assignment_ids;
};

std::vector<ReductionGroup> reduction_groups(const PartitionPlan& plan);

struct ReplicationReport {
    struct ModeReplication {
        std::uint32_t mode = 0;
        std::uint64_t blocks = 0;        // occupied factor-row blocks
        std::uint64_t total_copies = 0;  // sum of per-block DPU multiplicities
        std::uint64_t max_copies = 1;
        double avg_copies = 1.0;
    };
    std::vector<ModeReplication> input_modes;
    std::uint64_t factor_scatter_bytes_per_rank_partition = 0;
    std::uint64_t partial_rows_gathered = 0;  // rows returned to the host per full pass
    std::uint64_t reduction_groups_count = 0;
    std::uint64_t max_reduction_group = 1;
};

ReplicationReport replication_stats(const PartitionPlan& plan);

/// Sub-plan covering only the given chunks (used by the heterogeneous
/// scheduler); assignments are re-packed into fresh iterations.
PartitionPlan restrict_plan(const PartitionPlan& plan, const std::vector<std::uint64_t>& chunk_indices);

/// Self-contained structured document (JSON) and a human-oriented summary.
std::string plan_to_json(const PartitionPlan& plan);
std::string plan_to_text(const PartitionPlan& plan);
std::string replication_to_json(const ReplicationReport& report);

} // namespace prism

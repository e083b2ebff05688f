#pragma once

#include "prism/fixed_point.hpp"
#include "prism/partition.hpp"

#include <cstdint>
#include <vector>

namespace prism {

/// Everything resident in one DPU's MRAM for one assignment: packed tensor
/// records, factor slices for the input modes, the 32-bit output buffer and
/// a control block. Factor slices span the nominal chunk extent (boundary
/// chunks are zero-padded) so the modeled byte size always equals the
/// planner's footprint.
struct DpuImage {
    Assignment assignment;
    std::uint32_t order = 0;
    std::uint32_t mode = 0;
    std::vector<std::uint32_t> chunk_shape;
    std::uint32_t rank_width = 0;
    NumberFormats formats;
    QFormat value_format;  // runtime-determined 16-bit tensor-value format
    std::uint64_t injection_salt = 0;

    std::vector<std::uint32_t> coords;  // nnz * order, chunk-relative
    std::vector<std::int16_t> values_q;
    std::vector<double> values_f;

    // per input mode (ascending mode order, output mode skipped):
    // chunk_shape[n] x rank_width, row-major
    std::vector<std::vector<std::int32_t>> factors_q;
    std::vector<std::vector<double>> factors_f;

    std::vector<std::int32_t> out_q;  // chunk_shape[mode] x rank_width
    std::vector<double> out_f;

    std::uint64_t nnz() const { return order ? coords.size() / order : 0; }

    /// Byte size as serialized to the DPU (planner accounting units).
    MemoryFootprint modeled_footprint(std::uint64_t mram_reserve_bytes) const {
        return footprint(chunk_shape, rank_width, nnz(), formats, mode, mram_reserve_bytes);
    }
};

struct KernelConfig {
    std::uint32_t tasklet_count = 16;
    bool locks = false;
    enum class Mode { deterministic, concurrent } execution_mode = Mode::deterministic;
    // Concurrent lock-free runs model write conflicts with seeded injection:
    // a conflicting update is one whose store gets clobbered, i.e. dropped.
    // The drop set is a pure function of (salt, record, rank), never of
    // thread timing, so every run with the same seed is reproducible.
    double conflict_rate = 0.0;
    std::uint64_t conflict_seed = 0;
};

/// Cost counters standing in for hardware timing. Transfer accounting
/// follows the sequential-reader rule: tensor records are streamed (counted
/// once, contiguously), factor elements are random accesses (counted per
/// use), each output accumulation is a 4-byte read plus a 4-byte write, and
/// clearing the output buffer at kernel start counts as writes.
struct KernelStats {
    std::uint64_t multiplies = 0;
    std::uint64_t adds = 0;
    std::uint64_t shifts = 0;
    std::uint64_t mram_reads_bytes = 0;
    std::uint64_t mram_writes_bytes = 0;
    std::uint64_t overflow_wraps = 0;
    std::uint64_t lost_updates = 0;

    KernelStats& operator+=(const KernelStats& o);
};

/// Tasklet block size: ceil(nnz / tasklets), computed with a shift when the
/// tasklet count is a power of two.
std::uint64_t tasklet_block_size(std::uint64_t nnz, std::uint32_t tasklets);

/// Executes the element-wise fixed-point kernel over the image's records:
/// per nonzero and rank, fold the input-mode factor values with rescaling
/// multiplies, transition through the value multiply into the 32-bit
/// accumulator, and add into the output buffer with wraparound. Deterministic
/// mode serializes tasklets (bit-exact for any tasklet count); concurrent
/// mode runs them as threads sharing the output buffer.
KernelStats run_kernel(DpuImage& img, const KernelConfig& cfg);

/// Same traversal in real arithmetic (the floating-point baseline path).
KernelStats run_kernel_float(DpuImage& img, const KernelConfig& cfg);

} // namespace prism

#include "prism/pim_kernel.hpp"
#include "prism/error.hpp"
#include "prism/rng.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <thread>

namespace prism {

KernelStats& KernelStats::operator+=(const KernelStats& o) {
    multiplies += o.multiplies;
    adds += o.adds;
    shifts += o.shifts;
    mram_reads_bytes += o.mram_reads_bytes;
    mram_writes_bytes += o.mram_writes_bytes;
    overflow_wraps += o.overflow_wraps;
    lost_updates += o.lost_updates;
    return *this;
}

std::uint64_t tasklet_block_size(std::uint64_t nnz, std::uint32_t tasklets) {
    if (std::has_single_bit(tasklets)) {
        const unsigned shift = static_cast<unsigned>(std::countr_zero(tasklets));
        return (nnz + tasklets - 1) >> shift;
    }
    return (nnz + tasklets - 1) / tasklets;
}

namespace {

struct TaskletRange {
    std::uint64_t begin, end;
};

std::vector<TaskletRange> tasklet_ranges(std::uint64_t nnz, std::uint32_t tasklets) {
    const std::uint64_t block = tasklet_block_size(nnz, tasklets);
    std::vector<TaskletRange> ranges;
    ranges.reserve(tasklets);
    for (std::uint32_t t = 0; t < tasklets; ++t) {
        const std::uint64_t begin = std::min<std::uint64_t>(nnz, t * block);
        const std::uint64_t end = std::min<std::uint64_t>(nnz, begin + block);
        ranges.push_back({begin, end});
    }
    return ranges;
}

bool inject_conflict(std::uint64_t salt, std::uint64_t record, std::uint32_t rank, double rate) {
    if (rate <= 0.0) return false;
    if (rate >= 1.0) return true;
    const std::uint64_t h = mix64(salt ^ mix64(record * 0x100000001b3ull + rank));
    return static_cast<double>(h) < rate * 0x1.0p64;
}

// One tasklet's walk over its contiguous record block. Accumulate is a
// callable so the deterministic and concurrent paths share the traversal.
template <typename Value, typename Factor, typename Partial, typename Fold, typename Accumulate>
void walk_block(const DpuImage& img, const TaskletRange& range, const Value* values,
                const std::vector<std::vector<Factor>>& factors, Fold&& fold, Accumulate&& accumulate,
                KernelStats& stats) {
    const std::uint32_t order = img.order;
    const std::uint32_t rank_width = img.rank_width;
    const std::uint32_t num_inputs = order - 1;

    std::vector<std::uint32_t> input_rows(num_inputs);
    for (std::uint64_t i = range.begin; i < range.end; ++i) {
        const std::uint32_t* c = img.coords.data() + i * order;
        std::uint32_t out_row = 0;
        for (std::uint32_t n = 0, k = 0; n < order; ++n) {
            if (n == img.mode) {
                out_row = c[n];
            } else {
                input_rows[k++] = c[n];
            }
        }
        const Value x = values[i];
        for (std::uint32_t r = 0; r < rank_width; ++r) {
            Partial partial = static_cast<Partial>(factors[0][input_rows[0] * rank_width + r]);
            for (std::uint32_t k = 1; k < num_inputs; ++k) {
                partial = fold(partial, factors[k][input_rows[k] * rank_width + r], stats);
            }
            accumulate(out_row * rank_width + r, partial, x, i, r, stats);
        }
        stats.mram_reads_bytes += num_inputs * rank_width * img.formats.matrix_bytes();
    }
}

template <typename Value, typename Factor, typename Partial, typename Out, typename Fold,
          typename Accumulate>
KernelStats run_typed(DpuImage& img, const KernelConfig& cfg, const Value* values,
                      const std::vector<std::vector<Factor>>& factors, std::vector<Out>& out,
                      Fold&& fold, Accumulate&& accumulate) {
    if (cfg.tasklet_count < 1) throw ConfigError("kernel: tasklet_count must be >= 1");
    if (img.order < 2) throw ConfigError("kernel: tensor order must be >= 2");
    if (out.size() != static_cast<std::size_t>(img.chunk_shape[img.mode]) * img.rank_width) {
        throw ConfigError("kernel: output buffer size mismatch");
    }

    KernelStats stats;
    std::fill(out.begin(), out.end(), Out{});
    stats.mram_writes_bytes += out.size() * 4;  // clean_output_buffer_data

    const auto ranges = tasklet_ranges(img.nnz(), cfg.tasklet_count);

    if (cfg.execution_mode == KernelConfig::Mode::deterministic) {
        for (const TaskletRange& range : ranges) {
            walk_block<Value, Factor, Partial>(img, range, values, factors, fold, accumulate, stats);
        }
    } else {
        std::vector<KernelStats> per_tasklet(ranges.size());
        std::vector<std::thread> workers;
        workers.reserve(ranges.size());
        for (std::size_t t = 0; t < ranges.size(); ++t) {
            workers.emplace_back([&, t] {
                walk_block<Value, Factor, Partial>(img, ranges[t], values, factors, fold, accumulate,
                                                   per_tasklet[t]);
            });
        }
        for (auto& w : workers) w.join();
        for (const KernelStats& s : per_tasklet) stats += s;
    }

    stats.mram_reads_bytes += img.nnz() * record_bytes(img.order, img.formats.value_bytes());
    return stats;
}

} // namespace

KernelStats run_kernel(DpuImage& img, const KernelConfig& cfg) {
    if (img.formats.is_float) throw ConfigError("run_kernel: image holds real-valued data");
    const int matrix_bits = img.formats.matrix.total_bits;
    const int matrix_frac = img.formats.matrix.frac_bits;
    const int acc_shift = img.value_format.frac_bits + img.formats.matrix.prec_shift;
    const bool concurrent = cfg.execution_mode == KernelConfig::Mode::concurrent;
    const bool drop_enabled = concurrent && !cfg.locks && cfg.conflict_rate > 0.0;

    auto fold = [&](std::int64_t partial, std::int32_t factor, KernelStats& stats) -> std::int64_t {
        const std::int64_t shifted = (partial * factor) >> matrix_frac;
        const std::int64_t wrapped = wrap_to_bits(shifted, matrix_bits);
        if (wrapped != shifted) ++stats.overflow_wraps;
        ++stats.multiplies;
        ++stats.shifts;
        return wrapped;
    };

    auto accumulate = [&](std::size_t slot, std::int64_t partial, std::int16_t value, std::uint64_t rec,
                          std::uint32_t rank, KernelStats& stats) {
        const std::int64_t shifted = (partial * value) >> acc_shift;
        const std::int64_t acc = wrap_to_bits(shifted, 32);
        if (acc != shifted) ++stats.overflow_wraps;
        ++stats.multiplies;
        ++stats.shifts;
        stats.mram_reads_bytes += 4;
        stats.mram_writes_bytes += 4;
        if (drop_enabled && inject_conflict(cfg.conflict_seed ^ img.injection_salt, rec, rank,
                                            cfg.conflict_rate)) {
            ++stats.lost_updates;
            return;
        }
        ++stats.adds;
        if (concurrent) {
            // wrapping two's-complement add; order-independent, so the
            // injected-conflict-free result is bit-exact
            std::atomic_ref<std::int32_t> ref(img.out_q[slot]);
            const std::int32_t before = ref.fetch_add(static_cast<std::int32_t>(acc),
                                                      std::memory_order_relaxed);
            const std::int32_t after = static_cast<std::int32_t>(
                static_cast<std::uint32_t>(before) + static_cast<std::uint32_t>(acc));
            if (((before ^ after) & (static_cast<std::int32_t>(acc) ^ after)) < 0) {
                ++stats.overflow_wraps;
            }
        } else {
            const std::int64_t wide = static_cast<std::int64_t>(img.out_q[slot]) + acc;
            const std::int64_t wrapped_sum = wrap_to_bits(wide, 32);
            if (wrapped_sum != wide) ++stats.overflow_wraps;
            img.out_q[slot] = static_cast<std::int32_t>(wrapped_sum);
        }
    };

    return run_typed<std::int16_t, std::int32_t, std::int64_t>(img, cfg, img.values_q.data(),
                                                               img.factors_q, img.out_q, fold,
                                                               accumulate);
}

KernelStats run_kernel_float(DpuImage& img, const KernelConfig& cfg) {
    if (!img.formats.is_float) throw ConfigError("run_kernel_float: image holds fixed-point data");
    const bool concurrent = cfg.execution_mode == KernelConfig::Mode::concurrent;
    const bool drop_enabled = concurrent && !cfg.locks && cfg.conflict_rate > 0.0;

    auto fold = [&](double partial, double factor, KernelStats& stats) -> double {
        ++stats.multiplies;
        return partial * factor;
    };

    auto accumulate = [&](std::size_t slot, double partial, double value, std::uint64_t rec,
                          std::uint32_t rank, KernelStats& stats) {
        const double acc = partial * value;
        ++stats.multiplies;
        stats.mram_reads_bytes += 4;
        stats.mram_writes_bytes += 4;
        if (drop_enabled && inject_conflict(cfg.conflict_seed ^ img.injection_salt, rec, rank,
                                            cfg.conflict_rate)) {
            ++stats.lost_updates;
            return;
        }
        ++stats.adds;
        if (concurrent) {
            std::atomic_ref<double> ref(img.out_f[slot]);
            ref.fetch_add(acc, std::memory_order_relaxed);
        } else {
            img.out_f[slot] += acc;
        }
    };

    return run_typed<double, double, double>(img, cfg, img.values_f.data(), img.factors_f, img.out_f,
                                             fold, accumulate);
}

} // namespace prism

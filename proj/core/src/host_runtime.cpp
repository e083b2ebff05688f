#include "prism/host_runtime.hpp"
#include "prism/error.hpp"
#include "prism/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <thread>

namespace prism {

IterationTransfer TransferLedger::totals() const {
    IterationTransfer t;
    for (const IterationTransfer& it : iterations) {
        t.tensor_bytes_sent += it.tensor_bytes_sent;
        t.factor_bytes_sent += it.factor_bytes_sent;
        t.result_bytes_gathered += it.result_bytes_gathered;
        t.reduce_add_count += it.reduce_add_count;
    }
    return t;
}

unsigned worker_count(std::size_t n) {
    unsigned limit = std::thread::hardware_concurrency();
    if (limit == 0) limit = 1;
    if (const char* env = std::getenv("PRISM_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) limit = static_cast<unsigned>(v);
    }
    return static_cast<unsigned>(std::min<std::size_t>(limit, std::max<std::size_t>(n, 1)));
}

namespace {

void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

const std::vector<Nonzero>& chunk_records(const ChunkedTensor& ct, std::uint64_t chunk_index) {
    const auto it = ct.chunks.find(chunk_index);
    if (it == ct.chunks.end()) throw ConfigError("plan references a chunk absent from the tensor");
    return it->second;
}

} // namespace

DpuImage build_image(const PartitionPlan& plan, const Assignment& a, const ChunkedTensor& tensor,
                     const std::vector<Matrix>& factors, QFormat value_format,
                     ArithCounters* counters) {
    DpuImage img;
    img.assignment = a;
    img.order = static_cast<std::uint32_t>(plan.order());
    img.mode = plan.mode;
    img.chunk_shape = plan.chunk_shape;
    img.rank_width = a.ranks.width();
    img.formats = plan.formats;
    img.value_format = value_format;
    img.injection_salt = mix64(a.chunk_index * 0x9e3779b97f4a7c15ull + a.nnz.begin * 31 +
                               a.rank_partition);

    const std::vector<Nonzero>& records = chunk_records(tensor, a.chunk_index);
    if (a.nnz.end > records.size()) throw ConfigError("plan nonzero range exceeds chunk size");

    const std::uint64_t count = a.nnz.length();
    img.coords.resize(count * img.order);
    if (plan.formats.is_float) {
        img.values_f.resize(count);
    } else {
        img.values_q.resize(count);
    }
    for (std::uint64_t i = 0; i < count; ++i) {
        const Nonzero& nz = records[a.nnz.begin + i];
        for (std::uint32_t n = 0; n < img.order; ++n) img.coords[i * img.order + n] = nz.coords[n];
        if (plan.formats.is_float) {
            img.values_f[i] = nz.value;
        } else {
            img.values_q[i] = static_cast<std::int16_t>(quantize(nz.value, value_format, counters).raw);
        }
    }

    // Factor slices span the nominal chunk extent; rows past the true
    // dimension are zero padding on boundary chunks.
    for (std::uint32_t n = 0; n < img.order; ++n) {
        if (n == img.mode) continue;
        const std::uint32_t block = plan.chunk_coord(a.chunk_index, n);
        const std::uint64_t row_base = static_cast<std::uint64_t>(block) * plan.chunk_shape[n];
        const std::uint32_t extent = plan.chunk_shape[n];
        const Matrix& f = factors[n];

        if (plan.formats.is_float) {
            std::vector<double> slice(static_cast<std::size_t>(extent) * img.rank_width, 0.0);
            for (std::uint32_t i = 0; i < extent; ++i) {
                if (row_base + i >= f.rows()) break;
                for (std::uint32_t r = 0; r < img.rank_width; ++r) {
                    slice[static_cast<std::size_t>(i) * img.rank_width + r] =
                        f(row_base + i, a.ranks.begin + r);
                }
            }
            img.factors_f.push_back(std::move(slice));
        } else {
            std::vector<std::int32_t> slice(static_cast<std::size_t>(extent) * img.rank_width, 0);
            for (std::uint32_t i = 0; i < extent; ++i) {
                if (row_base + i >= f.rows()) break;
                for (std::uint32_t r = 0; r < img.rank_width; ++r) {
                    slice[static_cast<std::size_t>(i) * img.rank_width + r] =
                        quantize(f(row_base + i, a.ranks.begin + r), plan.formats.matrix, counters).raw;
                }
            }
            img.factors_q.push_back(std::move(slice));
        }
    }

    const std::size_t out_size = static_cast<std::size_t>(plan.chunk_shape[img.mode]) * img.rank_width;
    if (plan.formats.is_float) {
        img.out_f.assign(out_size, 0.0);
    } else {
        img.out_q.assign(out_size, 0);
    }
    return img;
}

MttkrpResult execute_mttkrp(const MttkrpRequest& req) {
    if (!req.tensor || !req.factors || !req.plan) throw ConfigError("mttkrp request is incomplete");
    const ChunkedTensor& ct = *req.tensor;
    const PartitionPlan& plan = *req.plan;
    const std::vector<Matrix>& factors = *req.factors;

    if (plan.mode != req.mode || plan.rank != req.rank) {
        throw ConfigError("plan does not match the requested mode/rank");
    }
    if (plan.chunk_shape != ct.grid.chunk_shape || plan.grid_dims != ct.grid.grid_dims) {
        throw ConfigError("plan chunk grid does not match the tensor");
    }
    if (factors.size() != ct.order()) throw ConfigError("factor count does not match tensor order");
    for (std::uint32_t n = 0; n < ct.order(); ++n) {
        if (n == req.mode) continue;
        if (factors[n].rows() != ct.source_dims[n] || factors[n].cols() < req.rank) {
            throw ConfigError("factor matrix shape mismatch in mode " + std::to_string(n));
        }
    }

    // per-assignment validation happens before the parallel phase; worker
    // threads must not throw
    for (const Assignment& a : plan.assignments) {
        const auto& records = chunk_records(ct, a.chunk_index);
        if (a.nnz.end > records.size() || a.nnz.begin > a.nnz.end) {
            throw ConfigError("plan nonzero range exceeds chunk size");
        }
        if (a.ranks.end > plan.rank || a.ranks.begin >= a.ranks.end) {
            throw ConfigError("plan rank slice out of range");
        }
    }

    MttkrpResult result;
    result.value_format = plan.formats.is_float ? QFormat{16, 15, 0}
                                                : value_format_for(ct.max_abs_value());

    // Build and execute one image per assignment. Deterministic-mode kernels
    // are serial inside, so images run in parallel on the worker pool;
    // concurrent-mode kernels spawn their own tasklet threads and run one
    // at a time.
    const std::size_t count = plan.assignments.size();
    std::vector<DpuImage> images(count);
    std::vector<KernelStats> stats(count);
    std::vector<ArithCounters> quant(count);

    const bool concurrent = req.kernel.execution_mode == KernelConfig::Mode::concurrent;
    const unsigned workers = concurrent ? 1 : worker_count(count);
    parallel_for(count, workers, [&](std::size_t i) {
        images[i] = build_image(plan, plan.assignments[i], ct, factors, result.value_format, &quant[i]);
        stats[i] = plan.formats.is_float ? run_kernel_float(images[i], req.kernel)
                                         : run_kernel(images[i], req.kernel);
    });

    for (std::size_t i = 0; i < count; ++i) {
        result.stats += stats[i];
        result.quantization += quant[i];
    }

    // Transfer ledger: tensor slices are re-sent every iteration only when
    // the plan lost residency (tensor partitions > DPU count).
    result.ledger.tensor_reuse = plan.tensor_reusable;
    result.ledger.iterations.resize(plan.kernel_iterations);
    for (const Assignment& a : plan.assignments) {
        const MemoryFootprint fp = plan.assignment_footprint(a);
        IterationTransfer& it = result.ledger.iterations[a.kernel_iteration];
        if (!plan.tensor_reusable || a.kernel_iteration == 0) it.tensor_bytes_sent += fp.tensor_bytes;
        it.factor_bytes_sent += fp.factor_bytes;
        it.result_bytes_gathered += fp.output_bytes;
    }

    // Host-side sum reduction in fixed order, 64-bit integer space for the
    // fixed path, then one dequantization per output element.
    result.output = Matrix(ct.source_dims[req.mode], req.rank);
    const QFormat acc_format = plan.formats.matrix.accumulator();
    const double acc_scale = plan.formats.is_float ? 1.0 : acc_format.scale();
    const std::uint32_t out_extent = plan.chunk_shape[req.mode];

    for (const ReductionGroup& group : reduction_groups(plan)) {
        const RankSlice ranks = plan.assignments[group.assignment_ids.front()].ranks;
        const std::uint64_t row_base = static_cast<std::uint64_t>(group.out_coord) * out_extent;
        for (std::uint32_t i = 0; i < out_extent; ++i) {
            if (row_base + i >= result.output.rows()) break;
            for (std::uint32_t r = 0; r < ranks.width(); ++r) {
                const std::size_t slot = static_cast<std::size_t>(i) * ranks.width() + r;
                if (plan.formats.is_float) {
                    double sum = 0.0;
                    for (std::uint32_t id : group.assignment_ids) sum += images[id].out_f[slot];
                    result.output(row_base + i, ranks.begin + r) = sum;
                } else {
                    std::int64_t sum = 0;
                    for (std::uint32_t id : group.assignment_ids) sum += images[id].out_q[slot];
                    result.output(row_base + i, ranks.begin + r) = static_cast<double>(sum) / acc_scale;
                }
            }
        }
        // reduction cost: folding k partials needs k-1 row additions,
        // attributed to the iteration that produced the folded-in partial
        for (std::size_t k = 1; k < group.assignment_ids.size(); ++k) {
            const Assignment& a = plan.assignments[group.assignment_ids[k]];
            result.ledger.iterations[a.kernel_iteration].reduce_add_count +=
                static_cast<std::uint64_t>(out_extent) * ranks.width();
        }
    }

    return result;
}

Matrix dense_mttkrp_oracle(const CooTensor& t, const std::vector<Matrix>& factors, std::uint32_t mode) {
    t.validate();
    if (mode >= t.order()) throw ConfigError("oracle: mode out of range");
    if (factors.size() != t.order()) throw ConfigError("oracle: factor count mismatch");
    const std::size_t rank = factors[(mode + 1) % t.order()].cols();

    std::vector<std::uint32_t> input_modes;
    std::uint64_t cols = 1;
    for (std::uint32_t n = 0; n < t.order(); ++n) {
        if (n == mode) continue;
        input_modes.push_back(n);
        cols *= t.dims[n];
    }
    if (cols == 0 || cols > (1ull << 22)) {
        throw ConfigError("oracle: tensor too large for dense matricization");
    }

    // Mode-m matricization, input modes ascending, row-major linearization.
    Matrix unfolded(t.dims[mode], cols);
    for (const Nonzero& nz : t.nonzeros) {
        std::uint64_t col = 0;
        for (std::uint32_t n : input_modes) col = col * t.dims[n] + nz.coords[n];
        unfolded(nz.coords[mode], col) += nz.value;
    }

    // Khatri-Rao product of the input-mode factors, same linearization.
    Matrix kr(cols, rank);
    std::vector<std::uint32_t> idx(input_modes.size(), 0);
    for (std::uint64_t col = 0; col < cols; ++col) {
        for (std::size_t r = 0; r < rank; ++r) {
            double prod = 1.0;
            for (std::size_t k = 0; k < input_modes.size(); ++k) {
                prod *= factors[input_modes[k]](idx[k], r);
            }
            kr(col, r) = prod;
        }
        for (std::size_t k = input_modes.size(); k-- > 0;) {
            if (++idx[k] < t.dims[input_modes[k]]) break;
            idx[k] = 0;
        }
    }

    return unfolded.multiply(kr);
}

} // namespace prism

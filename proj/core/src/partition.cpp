#include "prism/partition.hpp"
#include "prism/chunked_tensor.hpp"
#include "prism/error.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include <json.hpp>

namespace prism {

MemoryFootprint footprint(const std::vector<std::uint32_t>& chunk_shape, std::uint32_t ranks_per_dpu,
                          std::uint64_t nnz_in_dpu, const NumberFormats& formats, std::uint32_t mode,
                          std::uint64_t mram_reserve_bytes) {
    MemoryFootprint fp;
    for (std::size_t n = 0; n < chunk_shape.size(); ++n) {
        if (n == mode) continue;
        fp.factor_bytes += static_cast<std::uint64_t>(chunk_shape[n]) * ranks_per_dpu * formats.matrix_bytes();
    }
    fp.output_bytes = static_cast<std::uint64_t>(chunk_shape[mode]) * ranks_per_dpu * 4;
    fp.tensor_bytes = nnz_in_dpu * record_bytes(chunk_shape.size(), formats.value_bytes());
    fp.control_bytes = mram_reserve_bytes;
    return fp;
}

std::uint32_t PartitionPlan::chunk_coord(std::uint64_t chunk_index, std::uint32_t m) const {
    for (std::size_t n = order(); n-- > 0;) {
        const std::uint32_t c = static_cast<std::uint32_t>(chunk_index % grid_dims[n]);
        chunk_index /= grid_dims[n];
        if (n == m) return c;
    }
    return 0;
}

namespace {

struct TensorPartition {
    std::uint64_t chunk_index;
    NnzRange nnz;
};

// Nonzero records a DPU can hold next to the factor slices and output
// buffer of the given chunk shape; zero when those alone do not fit.
std::uint64_t nnz_capacity(const std::vector<std::uint32_t>& chunk_shape, std::uint32_t ranks_per_dpu,
                           const NumberFormats& formats, std::uint32_t mode, const DpuSpec& spec) {
    const MemoryFootprint fp = footprint(chunk_shape, ranks_per_dpu, 0, formats, mode,
                                         spec.mram_reserve_bytes);
    const std::uint64_t fixed = fp.factor_bytes + fp.output_bytes + fp.control_bytes;
    if (fixed >= spec.mram_bytes) return 0;
    return (spec.mram_bytes - fixed) / record_bytes(chunk_shape.size(), formats.value_bytes());
}

// Packs (rank partition x tensor partition) pairs into kernel iterations.
// Rank partitions advance first so tensor data can stay resident; only
// when the tensor partitions alone exceed the DPU count are chunks split
// across iterations (and residency is lost).
void layout_assignments(PartitionPlan& plan, const std::vector<TensorPartition>& parts) {
    const std::uint64_t tp = parts.size();
    const std::uint32_t rp = plan.rank_partitions;
    const std::uint64_t dpus = plan.spec.dpu_count;

    plan.assignments.clear();
    plan.assignments.reserve(tp * rp);
    plan.tensor_partitions = tp;
    plan.tensor_reusable = tp <= dpus;

    auto rank_slice = [&](std::uint32_t rank_part) {
        const std::uint32_t begin = rank_part * plan.ranks_per_dpu;
        const std::uint32_t end = std::min(plan.rank, begin + plan.ranks_per_dpu);
        return RankSlice{begin, end};
    };

    std::uint32_t iterations = 0;
    if (tp <= dpus) {
        const std::uint32_t per_iter =
            static_cast<std::uint32_t>(std::min<std::uint64_t>(rp, dpus / std::max<std::uint64_t>(tp, 1)));
        for (std::uint32_t rank_part = 0; rank_part < rp; ++rank_part) {
            const std::uint32_t iter = rank_part / per_iter;
            const std::uint32_t local = rank_part % per_iter;
            for (std::uint64_t tidx = 0; tidx < tp; ++tidx) {
                Assignment a;
                a.kernel_iteration = iter;
                a.dpu_id = static_cast<std::uint32_t>(local * tp + tidx);
                a.rank_partition = rank_part;
                a.ranks = rank_slice(rank_part);
                a.chunk_index = parts[tidx].chunk_index;
                a.tensor_partition = tidx;
                a.nnz = parts[tidx].nnz;
                plan.assignments.push_back(a);
            }
            iterations = std::max(iterations, rank_part / per_iter + 1);
        }
    } else {
        const std::uint64_t batches = (tp + dpus - 1) / dpus;
        for (std::uint32_t rank_part = 0; rank_part < rp; ++rank_part) {
            for (std::uint64_t tidx = 0; tidx < tp; ++tidx) {
                const std::uint64_t batch = tidx / dpus;
                Assignment a;
                a.kernel_iteration = static_cast<std::uint32_t>(rank_part * batches + batch);
                a.dpu_id = static_cast<std::uint32_t>(tidx - batch * dpus);
                a.rank_partition = rank_part;
                a.ranks = rank_slice(rank_part);
                a.chunk_index = parts[tidx].chunk_index;
                a.tensor_partition = tidx;
                a.nnz = parts[tidx].nnz;
                plan.assignments.push_back(a);
            }
        }
        iterations = static_cast<std::uint32_t>(rp * batches);
    }
    plan.kernel_iterations = std::max(iterations, 1u);
}

} // namespace

PartitionPlan decide_partitioning(const CooTensor& t, std::uint32_t mode, std::uint32_t rank,
                                  const DpuSpec& spec, const NumberFormats& formats,
                                  std::uint32_t ranks_per_dpu) {
    t.validate();
    if (t.nnz() == 0) throw ConfigError("cannot plan an empty tensor");
    if (mode >= t.order()) throw ConfigError("output mode out of range");
    if (rank < 1) throw ConfigError("rank must be positive");
    if (spec.dpu_count < 1 || spec.tasklets < 1) throw ConfigError("DPU spec must have at least one unit");
    if (spec.mram_reserve_bytes >= spec.mram_bytes) throw ConfigError("MRAM reserve exceeds MRAM");

    PartitionPlan plan;
    plan.mode = mode;
    plan.rank = rank;
    plan.ranks_per_dpu = std::min(std::max(ranks_per_dpu, 1u), rank);
    plan.rank_partitions = (rank + plan.ranks_per_dpu - 1) / plan.ranks_per_dpu;
    plan.spec = spec;
    plan.formats = formats;
    plan.total_nnz = t.nnz();
    plan.chunk_shape = t.dims;

    const double tensor_density = density(t);

    // Density-matching loop: shrink chunks until a DPU holding one chunk's
    // factor slices can store nonzeros at the tensor's density. The volume
    // product is taken in floating point; at full dims it can exceed 64 bits.
    while (true) {
        const std::uint64_t cap = nnz_capacity(plan.chunk_shape, plan.ranks_per_dpu, formats, mode, spec);
        double volume = 1.0;
        for (std::uint32_t s : plan.chunk_shape) volume *= static_cast<double>(s);
        const double dpu_density = static_cast<double>(cap) / volume;
        if (dpu_density >= tensor_density) break;

        std::size_t pick = t.order();
        for (std::size_t n = 0; n < t.order(); ++n) {
            if (n == mode || plan.chunk_shape[n] <= 1) continue;
            if (pick == t.order() || plan.chunk_shape[n] > plan.chunk_shape[pick]) pick = n;
        }
        if (pick == t.order() && plan.chunk_shape[mode] > 1) pick = mode;
        if (pick == t.order()) break;  // nothing left to halve
        plan.chunk_shape[pick] = (plan.chunk_shape[pick] + 1) / 2;
    }

    plan.nnz_capacity_per_dpu = nnz_capacity(plan.chunk_shape, plan.ranks_per_dpu, formats, mode, spec);
    if (plan.nnz_capacity_per_dpu == 0) {
        throw PlanError("unsatisfiable plan: one nonzero record plus a minimal factor slice "
                        "exceeds MRAM (" + std::to_string(spec.mram_bytes) + " bytes)");
    }

    plan.grid_dims.resize(t.order());
    for (std::size_t n = 0; n < t.order(); ++n) {
        plan.grid_dims[n] = (t.dims[n] + plan.chunk_shape[n] - 1) / plan.chunk_shape[n];
    }

    // Occupied-chunk nonzero counts in canonical chunk order.
    std::map<std::uint64_t, std::uint64_t> occupancy;
    {
        ChunkGrid grid{plan.chunk_shape, plan.grid_dims};
        for (const Nonzero& nz : t.nonzeros) {
            Coords gc{};
            for (std::size_t n = 0; n < t.order(); ++n) gc[n] = nz.coords[n] / plan.chunk_shape[n];
            ++occupancy[grid.linear_index(gc)];
        }
    }
    plan.occupied_chunks = occupancy.size();

    // Oversized chunks get contiguous nonzero ranges of at most capacity.
    std::vector<TensorPartition> parts;
    for (const auto& [chunk_index, count] : occupancy) {
        if (count > plan.nnz_capacity_per_dpu) ++plan.nonzero_partitioned_chunks;
        for (std::uint64_t begin = 0; begin < count; begin += plan.nnz_capacity_per_dpu) {
            parts.push_back({chunk_index, {begin, std::min(count, begin + plan.nnz_capacity_per_dpu)}});
        }
    }

    layout_assignments(plan, parts);
    return plan;
}

std::vector<ReductionGroup> reduction_groups(const PartitionPlan& plan) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::uint32_t>> groups;
    for (std::uint32_t i = 0; i < plan.assignments.size(); ++i) {
        const Assignment& a = plan.assignments[i];
        const std::uint32_t out_coord = plan.chunk_coord(a.chunk_index, plan.mode);
        groups[{a.rank_partition, out_coord}].push_back(i);
    }
    std::vector<ReductionGroup> out;
    out.reserve(groups.size());
    for (auto& [key, ids] : groups) {
        // deterministic reduction order
        std::sort(ids.begin(), ids.end(), [&](std::uint32_t x, std::uint32_t y) {
            const Assignment& ax = plan.assignments[x];
            const Assignment& ay = plan.assignments[y];
            return std::tie(ax.kernel_iteration, ax.dpu_id) < std::tie(ay.kernel_iteration, ay.dpu_id);
        });
        out.push_back({key.first, key.second, std::move(ids)});
    }
    return out;
}

ReplicationReport replication_stats(const PartitionPlan& plan) {
    ReplicationReport report;

    // Tensor partitions are identical in every rank partition, so block
    // multiplicities are counted once over the tensor partitions.
    std::vector<const Assignment*> first_rank;
    for (const Assignment& a : plan.assignments) {
        if (a.rank_partition == 0) first_rank.push_back(&a);
    }

    for (std::uint32_t n = 0; n < plan.order(); ++n) {
        if (n == plan.mode) continue;
        std::map<std::uint32_t, std::uint64_t> copies;
        for (const Assignment* a : first_rank) ++copies[plan.chunk_coord(a->chunk_index, n)];
        ReplicationReport::ModeReplication m;
        m.mode = n;
        m.blocks = copies.size();
        for (const auto& [block, c] : copies) {
            m.total_copies += c;
            m.max_copies = std::max(m.max_copies, c);
        }
        m.avg_copies = m.blocks ? static_cast<double>(m.total_copies) / static_cast<double>(m.blocks) : 1.0;
        report.input_modes.push_back(m);

        report.factor_scatter_bytes_per_rank_partition +=
            m.total_copies * plan.chunk_shape[n] * plan.ranks_per_dpu * plan.formats.matrix_bytes();
    }

    const auto groups = reduction_groups(plan);
    report.reduction_groups_count = groups.size();
    for (const ReductionGroup& g : groups) {
        report.max_reduction_group = std::max<std::uint64_t>(report.max_reduction_group, g.assignment_ids.size());
        report.partial_rows_gathered += g.assignment_ids.size() * plan.chunk_shape[plan.mode];
    }
    return report;
}

PartitionPlan restrict_plan(const PartitionPlan& plan, const std::vector<std::uint64_t>& chunk_indices) {
    PartitionPlan sub = plan;

    std::vector<TensorPartition> parts;
    std::map<std::uint64_t, bool> keep;
    for (std::uint64_t c : chunk_indices) keep[c] = true;
    // preserve the original tensor-partition order, first rank partition only
    std::vector<const Assignment*> first_rank;
    for (const Assignment& a : plan.assignments) {
        if (a.rank_partition == 0 && keep.count(a.chunk_index)) first_rank.push_back(&a);
    }
    std::sort(first_rank.begin(), first_rank.end(),
              [](const Assignment* x, const Assignment* y) { return x->tensor_partition < y->tensor_partition; });
    std::uint64_t sub_nnz = 0;
    for (const Assignment* a : first_rank) {
        parts.push_back({a->chunk_index, a->nnz});
        sub_nnz += a->nnz.length();
    }
    sub.total_nnz = sub_nnz;
    sub.occupied_chunks = keep.size();
    layout_assignments(sub, parts);
    return sub;
}

namespace {

nlohmann::ordered_json formats_json(const NumberFormats& f) {
    nlohmann::ordered_json j;
    j["name"] = f.name;
    j["is_float"] = f.is_float;
    if (!f.is_float) {
        j["matrix"] = {{"total_bits", f.matrix.total_bits},
                       {"frac_bits", f.matrix.frac_bits},
                       {"prec_shift", f.matrix.prec_shift}};
    }
    return j;
}

} // namespace

std::string plan_to_json(const PartitionPlan& plan) {
    nlohmann::ordered_json j;
    j["mode"] = plan.mode;
    j["rank"] = plan.rank;
    j["ranks_per_dpu"] = plan.ranks_per_dpu;
    j["rank_partitions"] = plan.rank_partitions;
    j["chunk_shape"] = plan.chunk_shape;
    j["grid_dims"] = plan.grid_dims;
    j["occupied_chunks"] = plan.occupied_chunks;
    j["nonzero_partitioned_chunks"] = plan.nonzero_partitioned_chunks;
    j["tensor_partitions"] = plan.tensor_partitions;
    j["kernel_iterations"] = plan.kernel_iterations;
    j["tensor_reusable"] = plan.tensor_reusable;
    j["nnz_capacity_per_dpu"] = plan.nnz_capacity_per_dpu;
    j["total_nnz"] = plan.total_nnz;
    j["dpu_spec"] = {{"mram_bytes", plan.spec.mram_bytes},
                     {"wram_bytes", plan.spec.wram_bytes},
                     {"tasklets", plan.spec.tasklets},
                     {"dpu_count", plan.spec.dpu_count},
                     {"mram_reserve_bytes", plan.spec.mram_reserve_bytes}};
    j["formats"] = formats_json(plan.formats);

    nlohmann::ordered_json assignments = nlohmann::ordered_json::array();
    for (const Assignment& a : plan.assignments) {
        assignments.push_back({{"iteration", a.kernel_iteration},
                               {"dpu", a.dpu_id},
                               {"rank_begin", a.ranks.begin},
                               {"rank_end", a.ranks.end},
                               {"chunk", a.chunk_index},
                               {"nnz_begin", a.nnz.begin},
                               {"nnz_end", a.nnz.end}});
    }
    j["assignments"] = std::move(assignments);
    return j.dump(2);
}

std::string plan_to_text(const PartitionPlan& plan) {
    std::ostringstream out;
    out << "partition plan (mode " << plan.mode << ", rank " << plan.rank << ")\n";
    out << "  chunk shape:";
    for (std::uint32_t s : plan.chunk_shape) out << ' ' << s;
    out << "  (grid";
    for (std::uint32_t g : plan.grid_dims) out << ' ' << g;
    out << ")\n";
    out << "  occupied chunks: " << plan.occupied_chunks
        << ", nonzero-partitioned: " << plan.nonzero_partitioned_chunks
        << ", tensor partitions: " << plan.tensor_partitions << "\n";
    out << "  rank partitions: " << plan.rank_partitions
        << " x " << plan.ranks_per_dpu << " ranks\n";
    out << "  assignments: " << plan.assignments.size()
        << " over " << plan.kernel_iterations << " kernel iteration(s), tensor "
        << (plan.tensor_reusable ? "resident" : "re-scattered each iteration") << "\n";
    out << "  capacity: " << plan.nnz_capacity_per_dpu << " nonzeros/DPU ("
        << plan.formats.name << " formats)\n";
    return out.str();
}

std::string replication_to_json(const ReplicationReport& report) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json modes = nlohmann::ordered_json::array();
    for (const auto& m : report.input_modes) {
        modes.push_back({{"mode", m.mode},
                         {"blocks", m.blocks},
                         {"total_copies", m.total_copies},
                         {"max_copies", m.max_copies},
                         {"avg_copies", m.avg_copies}});
    }
    j["input_modes"] = std::move(modes);
    j["factor_scatter_bytes_per_rank_partition"] = report.factor_scatter_bytes_per_rank_partition;
    j["partial_rows_gathered"] = report.partial_rows_gathered;
    j["reduction_groups"] = report.reduction_groups_count;
    j["max_reduction_group"] = report.max_reduction_group;
    return j.dump(2);
}

} // namespace prism

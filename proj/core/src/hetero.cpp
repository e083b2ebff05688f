#include "prism/hetero.hpp"
#include "prism/error.hpp"

#include <algorithm>
#include <thread>

namespace prism {

SplitDecision split_chunks(const ChunkedTensor& ct, const PartitionPlan& plan, double pim_fraction) {
    if (pim_fraction < 0.0 || pim_fraction > 1.0) {
        throw ConfigError("pim_fraction must be in [0, 1]");
    }
    const std::uint64_t capacity = plan.nnz_capacity_per_dpu;

    struct Entry {
        std::uint64_t chunk;
        std::uint64_t nnz;
    };
    std::vector<Entry> fits, exceeds;
    std::uint64_t total = 0;
    for (const auto& [chunk, list] : ct.chunks) {
        total += list.size();
        (list.size() <= capacity ? fits : exceeds).push_back({chunk, list.size()});
    }

    // ties broken by ascending chunk index (stable over the map order)
    std::stable_sort(fits.begin(), fits.end(),
                     [](const Entry& a, const Entry& b) { return a.nnz > b.nnz; });
    std::stable_sort(exceeds.begin(), exceeds.end(),
                     [](const Entry& a, const Entry& b) { return a.nnz < b.nnz; });

    SplitDecision split;
    split.target_fraction = pim_fraction;
    const double target = pim_fraction * static_cast<double>(total);

    auto take = [&](const Entry& e) {
        split.pim_chunks.push_back(e.chunk);
        split.pim_nnz += e.nnz;
    };
    std::size_t i = 0;
    while (i < fits.size() && static_cast<double>(split.pim_nnz) < target) take(fits[i++]);
    split.phase1_chunks = split.pim_chunks.size();
    std::size_t j = 0;
    while (j < exceeds.size() && static_cast<double>(split.pim_nnz) < target) take(exceeds[j++]);

    for (std::size_t k = i; k < fits.size(); ++k) split.cpu_chunks.push_back(fits[k].chunk);
    for (std::size_t k = j; k < exceeds.size(); ++k) split.cpu_chunks.push_back(exceeds[k].chunk);
    std::sort(split.cpu_chunks.begin(), split.cpu_chunks.end());

    split.cpu_nnz = total - split.pim_nnz;
    split.achieved_fraction = total ? static_cast<double>(split.pim_nnz) / static_cast<double>(total)
                                    : 0.0;
    return split;
}

HeteroResult execute_hetero(const MttkrpRequest& req, const HeteroConfig& cfg) {
    if (!req.tensor || !req.factors || !req.plan) throw ConfigError("hetero request is incomplete");
    const ChunkedTensor& ct = *req.tensor;

    HeteroResult result;
    result.split = split_chunks(ct, *req.plan, cfg.pim_fraction);
    result.output = Matrix(ct.source_dims[req.mode], req.rank);

    // CPU partition: the chunks' nonzeros restored to absolute coordinates
    // and canonical order, so a fraction-0 split reproduces the plain CPU
    // backend bit-for-bit.
    Matrix cpu_out(ct.source_dims[req.mode], req.rank);
    std::vector<Nonzero> cpu_records;
    cpu_records.reserve(result.split.cpu_nnz);
    for (std::uint64_t chunk : result.split.cpu_chunks) {
        const Coords grid_coord = ct.grid.grid_coord(chunk);
        for (const Nonzero& nz : ct.chunks.at(chunk)) {
            Nonzero abs = nz;
            for (std::size_t n = 0; n < ct.order(); ++n) {
                abs.coords[n] = grid_coord[n] * ct.grid.chunk_shape[n] + nz.coords[n];
            }
            cpu_records.push_back(abs);
        }
    }
    const std::size_t order = ct.order();
    std::sort(cpu_records.begin(), cpu_records.end(), [order](const Nonzero& a, const Nonzero& b) {
        return coords_less(a.coords, b.coords, order);
    });

    std::thread cpu_worker([&] {
        reference_mttkrp(cpu_records, order, *req.factors, req.mode, req.rank, cpu_out);
    });

    if (!result.split.pim_chunks.empty()) {
        const PartitionPlan sub_plan = restrict_plan(*req.plan, result.split.pim_chunks);
        MttkrpRequest pim_req = req;
        pim_req.plan = &sub_plan;
        MttkrpResult pim = execute_mttkrp(pim_req);
        result.output = std::move(pim.output);
        result.pim_ledger = std::move(pim.ledger);
        result.pim_stats = pim.stats;
        result.quantization = pim.quantization;
        result.value_format = pim.value_format;
    }

    cpu_worker.join();
    for (std::size_t r = 0; r < result.output.rows(); ++r) {
        for (std::size_t c = 0; c < result.output.cols(); ++c) result.output(r, c) += cpu_out(r, c);
    }
    return result;
}

HeteroBackend::HeteroBackend(const CooTensor& tensor, std::uint32_t rank, DpuSpec spec,
                             NumberFormats formats, KernelConfig kernel, HeteroConfig hetero,
                             std::uint32_t ranks_per_dpu)
    : pim_(tensor, rank, spec, formats, kernel, ranks_per_dpu), hetero_(hetero), rank_(rank),
      kernel_(kernel) {}

const SplitDecision& HeteroBackend::split_for(std::uint32_t mode) {
    auto it = splits_.find(mode);
    if (it == splits_.end()) {
        it = splits_.emplace(mode, split_chunks(pim_.chunked_for(mode), pim_.plan_for(mode),
                                                hetero_.pim_fraction)).first;
    }
    return it->second;
}

Matrix HeteroBackend::mttkrp(const std::vector<Matrix>& factors, std::uint32_t mode,
                             ModeRunInfo& info) {
    MttkrpRequest req;
    req.tensor = &pim_.chunked_for(mode);
    req.factors = &factors;
    req.mode = mode;
    req.rank = rank_;
    req.plan = &pim_.plan_for(mode);
    req.kernel = kernel_;

    HeteroResult result = execute_hetero(req, hetero_);
    splits_[mode] = result.split;

    info.mode = mode;
    info.backend = name();
    info.ledger = std::move(result.pim_ledger);
    info.stats = result.pim_stats;
    info.quantization = result.quantization;
    info.pim_nnz = result.split.pim_nnz;
    info.cpu_nnz = result.split.cpu_nnz;
    info.achieved_pim_fraction = result.split.achieved_fraction;
    return std::move(result.output);
}

} // namespace prism

#include "prism/cpals.hpp"
#include "prism/error.hpp"
#include "prism/rng.hpp"

#include <algorithm>
#include <cmath>

namespace prism {

NormalizeResult normalize_linf(Matrix& m) {
    NormalizeResult res;
    res.scales.assign(m.cols(), 1.0);
    res.zero_columns.assign(m.cols(), 0);
    for (std::size_t c = 0; c < m.cols(); ++c) {
        double maxabs = 0.0;
        for (std::size_t r = 0; r < m.rows(); ++r) maxabs = std::max(maxabs, std::fabs(m(r, c)));
        if (maxabs == 0.0) {
            res.zero_columns[c] = 1;
            continue;
        }
        res.scales[c] = maxabs;
        for (std::size_t r = 0; r < m.rows(); ++r) m(r, c) /= maxabs;
    }
    return res;
}

CpdModel init_factors(const std::vector<std::uint32_t>& dims, std::uint32_t rank, std::uint64_t seed) {
    if (rank < 1) throw ConfigError("rank must be positive");
    std::mt19937_64 rng(seed);
    CpdModel model;
    model.rank = rank;
    model.norms.assign(rank, 1.0);
    model.zero_columns.assign(rank, 0);
    for (std::uint32_t dim : dims) {
        Matrix f(dim, rank);
        for (std::size_t r = 0; r < f.rows(); ++r) {
            for (std::size_t c = 0; c < f.cols(); ++c) f(r, c) = uniform_pm1(rng);
        }
        const NormalizeResult norm = normalize_linf(f);
        for (std::uint32_t r = 0; r < rank; ++r) model.norms[r] *= norm.scales[r];
        model.factors.push_back(std::move(f));
    }
    return model;
}

namespace {

// Reconstruction at one index tuple via rolling prefix products kept by
// the odometer walk (prefix[d] holds prod over modes 0..d of B[idx]).
struct ReconWalker {
    const CpdModel& model;
    std::vector<std::vector<double>> prefix;  // per depth, R products

    explicit ReconWalker(const CpdModel& m)
        : model(m), prefix(m.factors.size(), std::vector<double>(m.rank, 1.0)) {}

    void refresh(const std::vector<std::uint32_t>& idx, std::size_t from) {
        for (std::size_t d = from; d < model.factors.size(); ++d) {
            const double* row = model.factors[d].row(idx[d]);
            if (d == 0) {
                for (std::uint32_t r = 0; r < model.rank; ++r) prefix[0][r] = row[r];
            } else {
                const std::vector<double>& up = prefix[d - 1];
                for (std::uint32_t r = 0; r < model.rank; ++r) prefix[d][r] = up[r] * row[r];
            }
        }
    }

    double value() const {
        const std::vector<double>& last = prefix.back();
        double v = 0.0;
        for (std::uint32_t r = 0; r < model.rank; ++r) v += model.norms[r] * last[r];
        return v;
    }
};

} // namespace

double avg_abs_diff(const CooTensor& t, const CpdModel& model, FitScope scope, std::uint64_t cap) {
    if (model.factors.size() != t.order()) throw ConfigError("fit: model order mismatch");
    for (std::size_t n = 0; n < t.order(); ++n) {
        if (model.factors[n].rows() != t.dims[n]) throw ConfigError("fit: model shape mismatch");
    }

    if (scope == FitScope::nonzeros_only) {
        if (t.nnz() == 0) return 0.0;
        double total = 0.0;
        for (const Nonzero& nz : t.nonzeros) {
            double recon = 0.0;
            for (std::uint32_t r = 0; r < model.rank; ++r) {
                double prod = model.norms[r];
                for (std::size_t n = 0; n < t.order(); ++n) prod *= model.factors[n](nz.coords[n], r);
                recon += prod;
            }
            total += std::fabs(nz.value - recon);
        }
        return total / static_cast<double>(t.nnz());
    }

    double element_count = 1.0;
    for (std::uint32_t d : t.dims) element_count *= static_cast<double>(d);
    if (element_count > static_cast<double>(cap)) {
        throw ConfigError("fit: tensor has too many elements for the all-elements scope; "
                          "use nonzeros_only");
    }

    // Lex odometer over all index tuples, walked in lockstep with the
    // canonically sorted nonzero list.
    std::vector<std::uint32_t> idx(t.order(), 0);
    ReconWalker walker(model);
    walker.refresh(idx, 0);
    std::size_t next_nz = 0;
    double total = 0.0;
    while (true) {
        double x = 0.0;
        if (next_nz < t.nnz()) {
            const Nonzero& nz = t.nonzeros[next_nz];
            bool match = true;
            for (std::size_t n = 0; n < t.order(); ++n) {
                if (nz.coords[n] != idx[n]) {
                    match = false;
                    break;
                }
            }
            if (match) {
                x = nz.value;
                ++next_nz;
            }
        }
        total += std::fabs(x - walker.value());

        std::size_t d = t.order();
        while (d-- > 0) {
            if (++idx[d] < t.dims[d]) break;
            idx[d] = 0;
            if (d == 0) return total / element_count;
        }
        walker.refresh(idx, d);
    }
}

void reference_mttkrp(std::span<const Nonzero> records, std::size_t order,
                      const std::vector<Matrix>& factors, std::uint32_t mode, std::uint32_t rank,
                      Matrix& out) {
    std::vector<double> partial(rank);
    for (const Nonzero& nz : records) {
        std::fill(partial.begin(), partial.end(), nz.value);
        for (std::size_t n = 0; n < order; ++n) {
            if (n == mode) continue;
            const double* row = factors[n].row(nz.coords[n]);
            for (std::uint32_t r = 0; r < rank; ++r) partial[r] *= row[r];
        }
        double* orow = out.row(nz.coords[mode]);
        for (std::uint32_t r = 0; r < rank; ++r) orow[r] += partial[r];
    }
}

Matrix CpuBackend::mttkrp(const std::vector<Matrix>& factors, std::uint32_t mode,
                          ModeRunInfo& info) {
    Matrix out(tensor_.dims[mode], rank_);
    reference_mttkrp(tensor_.nonzeros, tensor_.order(), factors, mode, rank_, out);
    info.mode = mode;
    info.backend = name();
    info.cpu_nnz = tensor_.nnz();
    return out;
}

PimBackend::PimBackend(const CooTensor& tensor, std::uint32_t rank, DpuSpec spec,
                       NumberFormats formats, KernelConfig kernel, std::uint32_t ranks_per_dpu)
    : tensor_(tensor), rank_(rank), spec_(spec), formats_(formats), kernel_(kernel),
      ranks_per_dpu_(ranks_per_dpu) {}

PimBackend::ModeState& PimBackend::state_for(std::uint32_t mode) {
    auto it = modes_.find(mode);
    if (it == modes_.end()) {
        ModeState state;
        state.plan = decide_partitioning(tensor_, mode, rank_, spec_, formats_, ranks_per_dpu_);
        state.chunked = chunk_tensor(tensor_, state.plan.chunk_shape);
        it = modes_.emplace(mode, std::move(state)).first;
    }
    return it->second;
}

const PartitionPlan& PimBackend::plan_for(std::uint32_t mode) { return state_for(mode).plan; }
const ChunkedTensor& PimBackend::chunked_for(std::uint32_t mode) { return state_for(mode).chunked; }

Matrix PimBackend::mttkrp(const std::vector<Matrix>& factors, std::uint32_t mode,
                          ModeRunInfo& info) {
    ModeState& state = state_for(mode);
    MttkrpRequest req;
    req.tensor = &state.chunked;
    req.factors = &factors;
    req.mode = mode;
    req.rank = rank_;
    req.plan = &state.plan;
    req.kernel = kernel_;
    MttkrpResult result = execute_mttkrp(req);
    info.mode = mode;
    info.backend = name();
    info.ledger = std::move(result.ledger);
    info.stats = result.stats;
    info.quantization = result.quantization;
    info.pim_nnz = tensor_.nnz();
    info.achieved_pim_fraction = 1.0;
    return std::move(result.output);
}

void als_step(CpdModel& model, std::uint32_t mode, MttkrpBackend& backend, ModeRunInfo& info) {
    const Matrix m = backend.mttkrp(model.factors, mode, info);

    Matrix v;
    bool first = true;
    for (std::size_t n = 0; n < model.factors.size(); ++n) {
        if (n == mode) continue;
        if (first) {
            v = model.factors[n].gram();
            first = false;
        } else {
            v.hadamard_inplace(model.factors[n].gram());
        }
    }

    Matrix updated = m.multiply(pinv_symmetric(v));
    const NormalizeResult norm = normalize_linf(updated);
    model.factors[mode] = std::move(updated);
    model.norms = norm.scales;
    model.zero_columns = norm.zero_columns;
}

std::pair<CpdModel, std::vector<FitReport>> decompose(const CooTensor& t, std::uint32_t rank,
                                                      MttkrpBackend& backend, std::uint64_t seed,
                                                      const DecomposeOptions& options) {
    t.validate();
    if (t.nnz() == 0) throw ConfigError("cannot decompose an empty tensor");
    if (t.order() < 2) throw ConfigError("decomposition needs at least two modes");

    FitScope scope = options.scope;
    if (options.auto_scope) {
        double elements = 1.0;
        for (std::uint32_t d : t.dims) elements *= static_cast<double>(d);
        scope = elements <= static_cast<double>(options.all_elements_cap) ? FitScope::all_elements
                                                                          : FitScope::nonzeros_only;
    }

    CpdModel model = init_factors(t.dims, rank, seed);
    std::vector<FitReport> reports;

    const auto zero_count = [&model] {
        std::uint64_t z = 0;
        for (std::uint8_t f : model.zero_columns) z += f;
        return z;
    };

    FitReport initial;
    initial.iteration = 0;
    initial.scope = scope;
    initial.fit = avg_abs_diff(t, model, scope, options.all_elements_cap);
    initial.zero_columns = zero_count();
    reports.push_back(std::move(initial));

    for (std::uint32_t it = 1; it <= options.iterations; ++it) {
        FitReport report;
        report.iteration = it;
        report.scope = scope;
        for (std::uint32_t mode = 0; mode < t.order(); ++mode) {
            ModeRunInfo info;
            als_step(model, mode, backend, info);
            report.modes.push_back(std::move(info));
        }
        report.fit = avg_abs_diff(t, model, scope, options.all_elements_cap);
        report.zero_columns = zero_count();
        reports.push_back(std::move(report));
    }
    return {std::move(model), std::move(reports)};
}

} // namespace prism

#pragma once

#include "prism/coo_tensor.hpp"
#include "prism/host_runtime.hpp"
#include "prism/matrix.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace prism {

/// Factor matrices plus the per-rank scales extracted by normalization.
/// All factor entries stay in [-1, 1] with each column's max |entry| at 1;
/// the fixed-point formats depend on that range.
struct CpdModel {
    std::vector<Matrix> factors;  // I_n x R per mode
    std::vector<double> norms;    // R, from the most recent normalization
    std::vector<std::uint8_t> zero_columns;  // degenerate columns flagged, scale kept at 1
    std::uint32_t rank = 0;
};

struct NormalizeResult {
    std::vector<double> scales;
    std::vector<std::uint8_t> zero_columns;
};

/// Divides each column by its max |entry|; zero columns are left unchanged
/// with scale 1 and flagged.
NormalizeResult normalize_linf(Matrix& m);

/// Uniform [-1, 1] entries, then column-normalized; norms hold the product
/// of the per-mode scales so the model reconstructs the raw initialization.
CpdModel init_factors(const std::vector<std::uint32_t>& dims, std::uint32_t rank, std::uint64_t seed);

enum class FitScope { all_elements, nonzeros_only };

/// Mean |X[idx] - sum_r norms[r] * prod_n B^n[idx_n][r]| over all index
/// tuples or over the nonzeros only. The all-elements scope refuses
/// tensors whose element count exceeds `cap` (use nonzeros_only there).
double avg_abs_diff(const CooTensor& t, const CpdModel& model, FitScope scope,
                    std::uint64_t cap = 1ull << 24);

/// Execution record of one MTTKRP dispatch (ledger/stats filled by the
/// simulated backends, device split by the heterogeneous one).
struct ModeRunInfo {
    std::uint32_t mode = 0;
    std::string backend;
    TransferLedger ledger;
    KernelStats stats;
    ArithCounters quantization;
    std::uint64_t pim_nnz = 0;
    std::uint64_t cpu_nnz = 0;
    double achieved_pim_fraction = 0.0;
};

struct FitReport {
    std::uint32_t iteration = 0;  // 0 is the initialization
    double fit = 0.0;
    FitScope scope = FitScope::all_elements;
    std::uint64_t zero_columns = 0;
    std::vector<ModeRunInfo> modes;
};

/// MTTKRP provider for the ALS sweep; implementations bind the tensor (and
/// any plans) at construction and must outlive the driver loop.
class MttkrpBackend {
public:
    virtual ~MttkrpBackend() = default;
    virtual std::string name() const = 0;
    virtual Matrix mttkrp(const std::vector<Matrix>& factors, std::uint32_t mode,
                          ModeRunInfo& info) = 0;
};

/// Element-wise reference kernel in real arithmetic, iterating the records
/// in the order given. Rows index the output mode; out must be I_mode x R.
void reference_mttkrp(std::span<const Nonzero> records, std::size_t order,
                      const std::vector<Matrix>& factors, std::uint32_t mode, std::uint32_t rank,
                      Matrix& out);

/// Host-CPU reference backend.
class CpuBackend : public MttkrpBackend {
public:
    explicit CpuBackend(const CooTensor& tensor, std::uint32_t rank)
        : tensor_(tensor), rank_(rank) {}
    std::string name() const override { return "cpu"; }
    Matrix mttkrp(const std::vector<Matrix>& factors, std::uint32_t mode,
                  ModeRunInfo& info) override;

private:
    const CooTensor& tensor_;
    std::uint32_t rank_;
};

/// Simulated-PIM backend: plans each mode once (the tensor is static across
/// iterations), chunks it accordingly, and dispatches through the host
/// runtime.
class PimBackend : public MttkrpBackend {
public:
    PimBackend(const CooTensor& tensor, std::uint32_t rank, DpuSpec spec, NumberFormats formats,
               KernelConfig kernel, std::uint32_t ranks_per_dpu = 1);
    std::string name() const override { return "pim"; }
    Matrix mttkrp(const std::vector<Matrix>& factors, std::uint32_t mode,
                  ModeRunInfo& info) override;

    const PartitionPlan& plan_for(std::uint32_t mode);
    const ChunkedTensor& chunked_for(std::uint32_t mode);

private:
    struct ModeState {
        PartitionPlan plan;
        ChunkedTensor chunked;
    };
    ModeState& state_for(std::uint32_t mode);

    const CooTensor& tensor_;
    std::uint32_t rank_;
    DpuSpec spec_;
    NumberFormats formats_;
    KernelConfig kernel_;
    std::uint32_t ranks_per_dpu_;
    std::map<std::uint32_t, ModeState> modes_;
};

/// One ALS update of `mode`: MTTKRP through the backend, Hadamard product
/// of the other modes' Gram matrices, pseudo-inverse solve, then column
/// normalization with scales stored in the model's norms.
void als_step(CpdModel& model, std::uint32_t mode, MttkrpBackend& backend, ModeRunInfo& info);

struct DecomposeOptions {
    std::uint32_t iterations = 5;
    FitScope scope = FitScope::all_elements;
    bool auto_scope = true;  // fall back to nonzeros_only above the cap
    std::uint64_t all_elements_cap = 1ull << 24;
};

/// Fixed-iteration ALS sweeps over modes 0..N-1; convergence is reported,
/// never used as a stopping rule. Report 0 carries the initialization fit.
std::pair<CpdModel, std::vector<FitReport>> decompose(const CooTensor& t, std::uint32_t rank,
                                                      MttkrpBackend& backend, std::uint64_t seed,
                                                      const DecomposeOptions& options);

} // namespace prism

#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace prism {

inline constexpr std::size_t kMaxOrder = 8;

using Coords = std::array<std::uint32_t, kMaxOrder>;

struct Nonzero {
    Coords coords{};  // entries beyond the tensor order are zero
    double value = 0.0;
};

inline bool coords_less(const Coords& a, const Coords& b, std::size_t order) {
    for (std::size_t n = 0; n < order; ++n) {
        if (a[n] != b[n]) return a[n] < b[n];
    }
    return false;
}

/// Canonical sparse tensor: explicit coordinates, 0-based, no duplicates,
/// nonzeros sorted lexicographically by coordinates.
struct CooTensor {
    std::vector<std::uint32_t> dims;
    std::vector<Nonzero> nonzeros;
    std::string name;

    std::size_t order() const { return dims.size(); }
    std::size_t nnz() const { return nonzeros.size(); }

    /// Sorts nonzeros and merges duplicate coordinates by addition.
    void canonicalize();

    /// Checks coordinate bounds and sorted/no-duplicate layout.
    void validate() const;
};

/// Reads whitespace-separated "c_0 ... c_{N-1} value" lines with 1-based
/// coordinates; '#' starts a comment. Order is taken from the first data
/// line; dims are the per-mode maximum coordinates unless `declared_dims`
/// overrides them. Duplicates merge by addition. Throws ParseError with a
/// line number on malformed input or an empty stream.
CooTensor parse_frostt(std::istream& in, const std::vector<std::uint32_t>& declared_dims = {});
CooTensor parse_frostt_file(const std::string& path,
                            const std::vector<std::uint32_t>& declared_dims = {});

/// Writes the same format back (1-based coordinates, one nonzero per line).
void write_frostt(std::ostream& out, const CooTensor& t);

/// Exactly nnz distinct coordinates sampled uniformly, values uniform in
/// [-1, 1]; deterministic per (dims, nnz, seed). Throws ConfigError when
/// nnz is zero or exceeds the tensor capacity.
CooTensor generate_synthetic(const std::vector<std::uint32_t>& dims, std::uint64_t nnz,
                             std::uint64_t seed);

/// nnz / product(dims), computed without forming the integer product.
double density(const CooTensor& t);

} // namespace prism

#pragma once

#include "prism/coo_tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <vector>

namespace prism {

/// Uniform grid of fixed-size chunks laid over the tensor index space.
struct ChunkGrid {
    std::vector<std::uint32_t> chunk_shape;  // per-mode chunk extent
    std::vector<std::uint32_t> grid_dims;    // ceil(dims[n] / chunk_shape[n])

    std::size_t order() const { return chunk_shape.size(); }

    std::uint64_t chunk_count() const {
        std::uint64_t c = 1;
        for (std::uint32_t g : grid_dims) c *= g;
        return c;
    }

    std::uint64_t chunk_volume() const {
        std::uint64_t v = 1;
        for (std::uint32_t s : chunk_shape) v *= s;
        return v;
    }

    /// Row-major linear index of a chunk grid coordinate.
    std::uint64_t linear_index(const Coords& grid_coord) const {
        std::uint64_t idx = 0;
        for (std::size_t n = 0; n < order(); ++n) idx = idx * grid_dims[n] + grid_coord[n];
        return idx;
    }

    Coords grid_coord(std::uint64_t linear) const {
        Coords c{};
        for (std::size_t n = order(); n-- > 0;) {
            c[n] = static_cast<std::uint32_t>(linear % grid_dims[n]);
            linear /= grid_dims[n];
        }
        return c;
    }
};

/// The engine's working tensor format: nonzeros grouped into equal-size
/// chunks, coordinates relative to their chunk, so any chunk can be handed
/// to a processing unit as a small self-contained tensor. Within a chunk,
/// nonzeros are sorted lexicographically by relative coordinates; empty
/// chunks are absent from the map.
struct ChunkedTensor {
    ChunkGrid grid;
    std::map<std::uint64_t, std::vector<Nonzero>> chunks;  // linear index -> nonzeros
    std::vector<std::uint32_t> source_dims;
    std::string name;

    std::size_t order() const { return source_dims.size(); }

    std::uint64_t nnz() const {
        std::uint64_t n = 0;
        for (const auto& [idx, list] : chunks) n += list.size();
        return n;
    }

    double max_abs_value() const;
};

/// Places every nonzero in chunk floor(c_n / shape[n]) with relative
/// coordinates c_n mod shape[n]. Throws ConfigError when chunk_shape is
/// empty, has a zero extent, or exceeds a tensor dimension.
ChunkedTensor chunk_tensor(const CooTensor& t, const std::vector<std::uint32_t>& chunk_shape);

/// Inverse of chunk_tensor: absolute coordinates reconstructed, canonical
/// nonzero order restored.
CooTensor flatten(const ChunkedTensor& ct);

/// Little-endian binary snapshot. Layout: magic "PRCT", format version byte,
/// u8 order, u32 dims[order], u32 chunk_shape[order], u64 chunk count, then
/// per chunk: u64 linear index, u64 nnz, and nnz records of
/// (u32 rel coords[order], f64 value).
void write_snapshot(std::ostream& out, const ChunkedTensor& ct);
ChunkedTensor read_snapshot(std::istream& in);
void write_snapshot_file(const std::string& path, const ChunkedTensor& ct);
ChunkedTensor read_snapshot_file(const std::string& path);

/// True when the stream begins with the snapshot magic (stream position is
/// restored).
bool looks_like_snapshot(std::istream& in);

} // namespace prism

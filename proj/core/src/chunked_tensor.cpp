#include "prism/chunked_tensor.hpp"
#include "prism/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace prism {

double ChunkedTensor::max_abs_value() const {
    double m = 0.0;
    for (const auto& [idx, list] : chunks) {
        for (const Nonzero& nz : list) m = std::max(m, std::fabs(nz.value));
    }
    return m;
}

ChunkedTensor chunk_tensor(const CooTensor& t, const std::vector<std::uint32_t>& chunk_shape) {
    if (chunk_shape.size() != t.order()) {
        throw ConfigError("chunk_shape rank does not match tensor order");
    }
    for (std::size_t n = 0; n < t.order(); ++n) {
        if (chunk_shape[n] == 0 || chunk_shape[n] > t.dims[n]) {
            throw ConfigError("chunk_shape extent must be in [1, dim] for mode " + std::to_string(n));
        }
    }

    ChunkedTensor ct;
    ct.grid.chunk_shape = chunk_shape;
    ct.grid.grid_dims.resize(t.order());
    for (std::size_t n = 0; n < t.order(); ++n) {
        ct.grid.grid_dims[n] = (t.dims[n] + chunk_shape[n] - 1) / chunk_shape[n];
    }
    ct.source_dims = t.dims;
    ct.name = t.name;

    for (const Nonzero& nz : t.nonzeros) {
        Coords grid_coord{};
        Nonzero rel = nz;
        for (std::size_t n = 0; n < t.order(); ++n) {
            grid_coord[n] = nz.coords[n] / chunk_shape[n];
            rel.coords[n] = nz.coords[n] % chunk_shape[n];
        }
        ct.chunks[ct.grid.linear_index(grid_coord)].push_back(rel);
    }

    const std::size_t order = t.order();
    for (auto& [idx, list] : ct.chunks) {
        std::sort(list.begin(), list.end(), [order](const Nonzero& a, const Nonzero& b) {
            return coords_less(a.coords, b.coords, order);
        });
    }
    return ct;
}

CooTensor flatten(const ChunkedTensor& ct) {
    CooTensor t;
    t.dims = ct.source_dims;
    t.name = ct.name;
    t.nonzeros.reserve(ct.nnz());
    for (const auto& [linear, list] : ct.chunks) {
        const Coords grid_coord = ct.grid.grid_coord(linear);
        for (const Nonzero& nz : list) {
            Nonzero abs = nz;
            for (std::size_t n = 0; n < ct.order(); ++n) {
                abs.coords[n] = grid_coord[n] * ct.grid.chunk_shape[n] + nz.coords[n];
            }
            t.nonzeros.push_back(abs);
        }
    }
    t.canonicalize();
    return t;
}

namespace {

constexpr char kMagic[4] = {'P', 'R', 'C', 'T'};
constexpr std::uint8_t kVersion = 1;

void put_bytes(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put_le(std::ostream& out, T v) {
    unsigned char buf[sizeof(T)];
    std::uint64_t bits;
    if constexpr (sizeof(T) == 8 && std::is_floating_point_v<T>) {
        std::memcpy(&bits, &v, 8);
    } else {
        bits = static_cast<std::uint64_t>(v);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    put_bytes(out, buf, sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw ParseError("snapshot truncated");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    if constexpr (sizeof(T) == 8 && std::is_floating_point_v<T>) {
        T v;
        std::memcpy(&v, &bits, 8);
        return v;
    } else {
        return static_cast<T>(bits);
    }
}

} // namespace

void write_snapshot(std::ostream& out, const ChunkedTensor& ct) {
    put_bytes(out, kMagic, 4);
    put_le<std::uint8_t>(out, kVersion);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(ct.order()));
    for (std::uint32_t d : ct.source_dims) put_le<std::uint32_t>(out, d);
    for (std::uint32_t s : ct.grid.chunk_shape) put_le<std::uint32_t>(out, s);
    put_le<std::uint64_t>(out, ct.chunks.size());
    for (const auto& [linear, list] : ct.chunks) {
        put_le<std::uint64_t>(out, linear);
        put_le<std::uint64_t>(out, list.size());
        for (const Nonzero& nz : list) {
            for (std::size_t n = 0; n < ct.order(); ++n) put_le<std::uint32_t>(out, nz.coords[n]);
            put_le<double>(out, nz.value);
        }
    }
}

ChunkedTensor read_snapshot(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ParseError("not a tensor snapshot (bad magic)");
    const auto version = get_le<std::uint8_t>(in);
    if (version != kVersion) {
        throw ParseError("unsupported snapshot version " + std::to_string(version));
    }
    const auto order = get_le<std::uint8_t>(in);
    if (order == 0 || order > kMaxOrder) throw ParseError("snapshot order out of range");

    ChunkedTensor ct;
    ct.source_dims.resize(order);
    for (auto& d : ct.source_dims) d = get_le<std::uint32_t>(in);
    ct.grid.chunk_shape.resize(order);
    for (auto& s : ct.grid.chunk_shape) s = get_le<std::uint32_t>(in);
    ct.grid.grid_dims.resize(order);
    for (std::size_t n = 0; n < order; ++n) {
        if (ct.grid.chunk_shape[n] == 0 || ct.source_dims[n] == 0) {
            throw ParseError("snapshot has a zero dimension or chunk extent");
        }
        ct.grid.grid_dims[n] = (ct.source_dims[n] + ct.grid.chunk_shape[n] - 1) / ct.grid.chunk_shape[n];
    }

    const auto chunk_count = get_le<std::uint64_t>(in);
    for (std::uint64_t c = 0; c < chunk_count; ++c) {
        const auto linear = get_le<std::uint64_t>(in);
        if (linear >= ct.grid.chunk_count()) throw ParseError("snapshot chunk index out of range");
        const auto nnz = get_le<std::uint64_t>(in);
        auto& list = ct.chunks[linear];
        // a corrupt count fails at EOF rather than on a giant reserve
        list.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(nnz, 1u << 20)));
        for (std::uint64_t i = 0; i < nnz; ++i) {
            Nonzero nz;
            for (std::size_t n = 0; n < order; ++n) {
                nz.coords[n] = get_le<std::uint32_t>(in);
                if (nz.coords[n] >= ct.grid.chunk_shape[n]) {
                    throw ParseError("snapshot relative coordinate out of range");
                }
            }
            nz.value = get_le<double>(in);
            list.push_back(nz);
        }
    }
    return ct;
}

void write_snapshot_file(const std::string& path, const ChunkedTensor& ct) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open output file: " + path);
    write_snapshot(out, ct);
    if (!out) throw ParseError("failed writing snapshot: " + path);
}

ChunkedTensor read_snapshot_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open snapshot file: " + path);
    ChunkedTensor ct = read_snapshot(in);
    ct.name = path;
    return ct;
}

bool looks_like_snapshot(std::istream& in) {
    char magic[4] = {};
    const auto pos = in.tellg();
    in.read(magic, 4);
    const bool ok = in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0;
    in.clear();
    in.seekg(pos);
    return ok;
}

} // namespace prism

#include "prism/coo_tensor.hpp"
#include "prism/error.hpp"
#include "prism/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace prism {

void CooTensor::canonicalize() {
    const std::size_t n = order();
    std::sort(nonzeros.begin(), nonzeros.end(),
              [n](const Nonzero& a, const Nonzero& b) { return coords_less(a.coords, b.coords, n); });
    // merge duplicates by addition
    std::size_t out = 0;
    for (std::size_t i = 0; i < nonzeros.size(); ++i) {
        if (out > 0 && nonzeros[out - 1].coords == nonzeros[i].coords) {
            nonzeros[out - 1].value += nonzeros[i].value;
        } else {
            nonzeros[out++] = nonzeros[i];
        }
    }
    nonzeros.resize(out);
}

void CooTensor::validate() const {
    const std::size_t n = order();
    if (n == 0 || n > kMaxOrder) {
        throw ConfigError("tensor order must be in [1, " + std::to_string(kMaxOrder) + "]");
    }
    for (std::size_t m = 0; m < n; ++m) {
        if (dims[m] == 0) throw ConfigError("tensor dimension " + std::to_string(m) + " is zero");
    }
    for (std::size_t i = 0; i < nonzeros.size(); ++i) {
        for (std::size_t m = 0; m < n; ++m) {
            if (nonzeros[i].coords[m] >= dims[m]) {
                throw ConfigError("nonzero coordinate out of bounds in mode " + std::to_string(m));
            }
        }
        if (i > 0 && !coords_less(nonzeros[i - 1].coords, nonzeros[i].coords, n)) {
            throw ConfigError("nonzeros are not in canonical order");
        }
    }
}

namespace {

bool parse_u64(std::string_view tok, std::uint64_t& out) {
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

bool parse_f64(std::string_view tok, double& out) {
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> toks;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) toks.push_back(line.substr(i, j - i));
        i = j;
    }
    return toks;
}

} // namespace

CooTensor parse_frostt(std::istream& in, const std::vector<std::uint32_t>& declared_dims) {
    CooTensor t;
    std::size_t order = 0;
    std::vector<std::uint32_t> max_coord;
    std::string line;
    std::uint64_t lineno = 0;

    while (std::getline(in, line)) {
        ++lineno;
        std::string_view view(line);
        if (auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
        const auto toks = split_ws(view);
        if (toks.empty()) continue;

        if (order == 0) {
            if (toks.size() < 2) {
                throw ParseError("line " + std::to_string(lineno) + ": need at least one coordinate and a value");
            }
            order = toks.size() - 1;
            if (order > kMaxOrder) {
                throw ParseError("line " + std::to_string(lineno) + ": order " + std::to_string(order) +
                                 " exceeds the supported maximum " + std::to_string(kMaxOrder));
            }
            max_coord.assign(order, 0);
        } else if (toks.size() != order + 1) {
            throw ParseError("line " + std::to_string(lineno) + ": expected " + std::to_string(order + 1) +
                             " tokens, got " + std::to_string(toks.size()));
        }

        Nonzero nz;
        for (std::size_t m = 0; m < order; ++m) {
            std::uint64_t c = 0;
            if (!parse_u64(toks[m], c) || c == 0) {
                throw ParseError("line " + std::to_string(lineno) + ": bad coordinate '" +
                                 std::string(toks[m]) + "' (1-based integer expected)");
            }
            if (c > std::numeric_limits<std::uint32_t>::max()) {
                throw ParseError("line " + std::to_string(lineno) + ": coordinate exceeds 32-bit range");
            }
            nz.coords[m] = static_cast<std::uint32_t>(c - 1);  // FROSTT is 1-based
            max_coord[m] = std::max(max_coord[m], nz.coords[m]);
        }
        if (!parse_f64(toks[order], nz.value)) {
            throw ParseError("line " + std::to_string(lineno) + ": bad value '" + std::string(toks[order]) + "'");
        }
        t.nonzeros.push_back(nz);
    }

    if (order == 0) throw ParseError("empty tensor file");

    if (!declared_dims.empty()) {
        if (declared_dims.size() != order) {
            throw ParseError("declared dims rank does not match the file order");
        }
        t.dims = declared_dims;
        for (std::size_t m = 0; m < order; ++m) {
            if (max_coord[m] >= t.dims[m]) {
                throw ParseError("coordinate exceeds declared dimension in mode " + std::to_string(m));
            }
        }
    } else {
        t.dims.assign(order, 0);
        for (std::size_t m = 0; m < order; ++m) t.dims[m] = max_coord[m] + 1;
    }

    t.canonicalize();
    return t;
}

CooTensor parse_frostt_file(const std::string& path, const std::vector<std::uint32_t>& declared_dims) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open tensor file: " + path);
    CooTensor t = parse_frostt(in, declared_dims);
    t.name = path;
    return t;
}

void write_frostt(std::ostream& out, const CooTensor& t) {
    std::ostringstream buf;
    buf.precision(17);
    for (const Nonzero& nz : t.nonzeros) {
        for (std::size_t m = 0; m < t.order(); ++m) buf << (nz.coords[m] + 1) << ' ';
        buf << nz.value << '\n';
    }
    out << buf.str();
}

namespace {

struct CoordsHash {
    std::size_t operator()(const Coords& c) const {
        std::uint64_t h = 0x243f6a8885a308d3ull;
        for (std::uint32_t v : c) h = mix64(h ^ v);
        return static_cast<std::size_t>(h);
    }
};

// Capacity product saturating at 2^64-1; good enough for "nnz <= capacity".
std::uint64_t saturating_capacity(const std::vector<std::uint32_t>& dims) {
    std::uint64_t cap = 1;
    for (std::uint32_t d : dims) {
        if (d != 0 && cap > std::numeric_limits<std::uint64_t>::max() / d) {
            return std::numeric_limits<std::uint64_t>::max();
        }
        cap *= d;
    }
    return cap;
}

Coords unlinearize(std::uint64_t idx, const std::vector<std::uint32_t>& dims) {
    Coords c{};
    for (std::size_t m = dims.size(); m-- > 0;) {
        c[m] = static_cast<std::uint32_t>(idx % dims[m]);
        idx /= dims[m];
    }
    return c;
}

} // namespace

CooTensor generate_synthetic(const std::vector<std::uint32_t>& dims, std::uint64_t nnz,
                             std::uint64_t seed) {
    if (dims.empty() || dims.size() > kMaxOrder) {
        throw ConfigError("generator: order must be in [1, " + std::to_string(kMaxOrder) + "]");
    }
    for (std::uint32_t d : dims) {
        if (d == 0) throw ConfigError("generator: zero dimension");
    }
    if (nnz == 0) throw ConfigError("generator: nnz must be positive");

    const std::uint64_t capacity = saturating_capacity(dims);
    if (nnz > capacity) throw ConfigError("generator: nnz exceeds tensor capacity");

    std::mt19937_64 rng(seed);
    CooTensor t;
    t.dims = dims;
    t.nonzeros.reserve(nnz);

    if (capacity != std::numeric_limits<std::uint64_t>::max()) {
        // Floyd's sampling: exactly nnz distinct linear indices, no rejection
        // loop even when nnz approaches capacity.
        std::unordered_set<std::uint64_t> chosen;
        chosen.reserve(nnz * 2);
        for (std::uint64_t j = capacity - nnz; j < capacity; ++j) {
            const std::uint64_t candidate = uniform_below(rng, j + 1);
            const std::uint64_t pick = chosen.insert(candidate).second ? candidate : j;
            if (pick != candidate) chosen.insert(pick);
            t.nonzeros.push_back({unlinearize(pick, dims), 0.0});
        }
    } else {
        // Capacity beyond 64 bits: collisions are astronomically unlikely,
        // sample coordinates directly and reject duplicates.
        std::unordered_set<Coords, CoordsHash> chosen;
        chosen.reserve(nnz * 2);
        while (t.nonzeros.size() < nnz) {
            Coords c{};
            for (std::size_t m = 0; m < dims.size(); ++m) {
                c[m] = static_cast<std::uint32_t>(uniform_below(rng, dims[m]));
            }
            if (chosen.insert(c).second) t.nonzeros.push_back({c, 0.0});
        }
    }

    for (Nonzero& nz : t.nonzeros) nz.value = uniform_pm1(rng);
    t.canonicalize();
    t.name = "synthetic";
    return t;
}

double density(const CooTensor& t) {
    double d = static_cast<double>(t.nnz());
    for (std::uint32_t dim : t.dims) d /= static_cast<double>(dim);
    return d;
}

} // namespace prism

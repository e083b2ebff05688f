#include "prism/cpals.hpp"
#include "prism/error.hpp"

#include "support/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace prism;
using namespace prism::testing;

namespace {

// dense noiseless rank-1 tensor from vectors with unit max-norm
CooTensor rank1_tensor(const std::vector<std::vector<double>>& vectors, double weight) {
    CooTensor t;
    for (const auto& v : vectors) t.dims.push_back(static_cast<std::uint32_t>(v.size()));
    std::vector<std::uint32_t> idx(vectors.size(), 0);
    while (true) {
        Nonzero nz;
        double value = weight;
        for (std::size_t n = 0; n < vectors.size(); ++n) {
            nz.coords[n] = idx[n];
            value *= vectors[n][idx[n]];
        }
        nz.value = value;
        t.nonzeros.push_back(nz);
        std::size_t d = vectors.size();
        bool done = true;
        while (d-- > 0) {
            if (++idx[d] < vectors[d].size()) {
                done = false;
                break;
            }
            idx[d] = 0;
        }
        if (done) break;
    }
    t.canonicalize();
    return t;
}

std::vector<double> ramp(std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    return v;
}

} // namespace

TEST_CASE("normalize_linf: worked columns") {
    Matrix m(2, 3);
    m(0, 0) = 0.5; m(1, 0) = -1.0;  // already max-norm 1
    m(0, 1) = 2.0; m(1, 1) = 4.0;   // scale 4
    m(0, 2) = 0.0; m(1, 2) = 0.0;   // degenerate
    const NormalizeResult res = normalize_linf(m);

    CHECK(m(0, 0) == 0.5);
    CHECK(m(1, 0) == -1.0);
    CHECK(res.scales[0] == 1.0);

    CHECK(m(0, 1) == 0.5);
    CHECK(m(1, 1) == 1.0);
    CHECK(res.scales[1] == 4.0);

    CHECK(m(0, 2) == 0.0);
    CHECK(res.scales[2] == 1.0);
    CHECK(res.zero_columns[2] == 1);
    CHECK(res.zero_columns[0] == 0);
}

TEST_CASE("normalize_linf is idempotent") {
    std::mt19937_64 rng(1);
    Matrix m(7, 4);
    for (std::size_t r = 0; r < 7; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
            m(r, c) = (static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5) * 20.0;
        }
    }
    normalize_linf(m);
    const Matrix once = m;
    const NormalizeResult second = normalize_linf(m);
    CHECK(m == once);
    for (double s : second.scales) CHECK(s == 1.0);
}

TEST_CASE("pinv: identity and rank-deficient diagonal") {
    Matrix eye(3, 3);
    for (int i = 0; i < 3; ++i) eye(i, i) = 1.0;
    const Matrix inv = pinv_symmetric(eye);
    CHECK(max_abs_diff(inv, eye) <= 1e-14);

    Matrix diag(2, 2);
    diag(0, 0) = 2.0;
    const Matrix pd = pinv_symmetric(diag);
    CHECK(pd(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(pd(1, 1) == doctest::Approx(0.0));
    CHECK(pd(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("pinv satisfies the Penrose condition on random SPD matrices") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + trial % 7;
        Matrix b(n + 2, n);
        for (std::size_t r = 0; r < b.rows(); ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                b(r, c) = static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
            }
        }
        const Matrix v = b.gram();  // SPD with probability 1
        const Matrix pv = pinv_symmetric(v);
        const Matrix vpv = v.multiply(pv).multiply(v);
        CHECK(max_abs_diff(vpv, v) <= 1e-8 * std::max(v.max_abs(), 1.0));
    }
}

TEST_CASE("pinv rejects non-symmetric input") {
    Matrix m(2, 2);
    m(0, 1) = 1.0;
    m(1, 0) = 2.0;
    CHECK_THROWS_AS(pinv_symmetric(m), ConfigError);
}

TEST_CASE("init_factors: shape, range, determinism") {
    const CpdModel a = init_factors({2, 2, 2}, 1, 42);
    REQUIRE(a.factors.size() == 3);
    for (const Matrix& f : a.factors) {
        CHECK(f.rows() == 2);
        CHECK(f.cols() == 1);
    }

    const CpdModel big = init_factors({9, 5, 7}, 4, 43);
    for (const Matrix& f : big.factors) {
        for (std::size_t c = 0; c < f.cols(); ++c) {
            double colmax = 0.0;
            for (std::size_t r = 0; r < f.rows(); ++r) {
                CHECK(std::fabs(f(r, c)) <= 1.0);
                colmax = std::max(colmax, std::fabs(f(r, c)));
            }
            CHECK(colmax == doctest::Approx(1.0));
        }
    }

    const CpdModel b = init_factors({9, 5, 7}, 4, 43);
    for (std::size_t n = 0; n < 3; ++n) CHECK(big.factors[n] == b.factors[n]);
    CHECK(big.norms == b.norms);
}

TEST_CASE("avg_abs_diff: exact model, zero model, oracle cross-check") {
    const auto u = ramp(4, -1.0, 1.0);
    const auto v = ramp(3, 0.25, 1.0);
    const auto w = ramp(5, -1.0, -0.125);
    const CooTensor t = rank1_tensor({u, v, w}, 1.5);

    CpdModel exact;
    exact.rank = 1;
    exact.norms = {1.5};
    exact.zero_columns = {0};
    for (const auto& vec : {u, v, w}) {
        Matrix f(vec.size(), 1);
        for (std::size_t i = 0; i < vec.size(); ++i) f(i, 0) = vec[i];
        exact.factors.push_back(std::move(f));
    }
    CHECK(avg_abs_diff(t, exact, FitScope::all_elements) <= 1e-14);
    CHECK(avg_abs_diff(t, exact, FitScope::nonzeros_only) <= 1e-14);

    CpdModel zero = exact;
    for (Matrix& f : zero.factors) f = Matrix(f.rows(), 1);
    double mean_abs = 0.0;
    for (const Nonzero& nz : t.nonzeros) mean_abs += std::fabs(nz.value);
    mean_abs /= static_cast<double>(t.nnz());
    CHECK(avg_abs_diff(t, zero, FitScope::all_elements) == doctest::Approx(mean_abs).epsilon(1e-12));

    // independent dense-reconstruction oracle
    double total = 0.0;
    for (const Nonzero& nz : t.nonzeros) {
        const double recon = 1.5 * u[nz.coords[0]] * v[nz.coords[1]] * w[nz.coords[2]];
        total += std::fabs(nz.value - recon);
    }
    CHECK(avg_abs_diff(t, exact, FitScope::all_elements) ==
          doctest::Approx(total / static_cast<double>(t.nnz())).epsilon(1e-12));
}

TEST_CASE("avg_abs_diff: element-count cap directs to nonzeros_only") {
    CooTensor t;
    t.dims = {1 << 12, 1 << 12, 1 << 12};
    t.nonzeros.push_back({{0, 0, 0}, 1.0});
    CpdModel model;
    model.rank = 1;
    model.norms = {1.0};
    for (int n = 0; n < 3; ++n) model.factors.push_back(Matrix(1 << 12, 1));
    CHECK_THROWS_AS(avg_abs_diff(t, model, FitScope::all_elements), ConfigError);
    CHECK(avg_abs_diff(t, model, FitScope::nonzeros_only) == doctest::Approx(1.0));
}

TEST_CASE("als_step: orthonormal Gram case solves to the MTTKRP result") {
    // R = 1 with unit-norm columns in the untouched modes makes V = [1]
    const CooTensor t = make_tensor({3, 2, 2}, {{{0, 0, 0}, 0.5}, {{2, 1, 1}, -0.25}});
    CpdModel model;
    model.rank = 1;
    model.norms = {1.0};
    model.zero_columns = {0};
    model.factors.push_back(Matrix(3, 1));
    Matrix b(2, 1), c(2, 1);
    b(0, 0) = 1.0;  // unit L2 norm columns
    c(0, 0) = 1.0;
    model.factors.push_back(b);
    model.factors.push_back(c);

    CpuBackend backend(t, 1);
    ModeRunInfo info;
    Matrix expected = backend.mttkrp(model.factors, 0, info);
    als_step(model, 0, backend, info);

    const NormalizeResult norm = normalize_linf(expected);
    CHECK(max_abs_diff(model.factors[0], expected) <= 1e-14);
    CHECK(model.norms[0] == doctest::Approx(norm.scales[0]));
}

TEST_CASE("als_step: one float sweep recovers a noiseless rank-1 tensor") {
    const CooTensor t = rank1_tensor({ramp(6, -1.0, 1.0), ramp(5, 0.2, 1.0), ramp(4, -1.0, -0.2)}, 0.75);
    CpuBackend backend(t, 1);
    DecomposeOptions options;
    options.iterations = 1;
    auto [model, reports] = decompose(t, 1, backend, 11, options);
    REQUIRE(reports.size() == 2);
    CHECK(reports[1].fit < 1e-10);

    // range guarantee after the sweep
    for (const Matrix& f : model.factors) {
        for (std::size_t r = 0; r < f.rows(); ++r) {
            for (std::size_t c = 0; c < f.cols(); ++c) CHECK(std::fabs(f(r, c)) <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("fixed-point backend keeps the rank-1 fit near the quantization scale") {
    const CooTensor t = rank1_tensor({ramp(6, -1.0, 1.0), ramp(5, 0.2, 1.0), ramp(4, -1.0, -0.2)}, 0.75);
    PimBackend backend(t, 1, DpuSpec{}, NumberFormats::int7(), KernelConfig{});
    DecomposeOptions options;
    options.iterations = 3;
    auto [model, reports] = decompose(t, 1, backend, 11, options);
    CHECK(reports.back().fit <= std::ldexp(1.0, -5));
}

TEST_CASE("mode-4 tensor: int15-12 fit sits closer to float than int7") {
    const CooTensor t = generate_synthetic({8, 8, 8, 8}, 600, 10);
    const auto fit_with = [&](const NumberFormats& formats) {
        PimBackend backend(t, 4, DpuSpec{}, formats, KernelConfig{});
        DecomposeOptions options;
        options.iterations = 3;
        auto [model, reports] = decompose(t, 4, backend, 1, options);
        return reports.back().fit;
    };
    const double f_float = fit_with(NumberFormats::floating());
    const double f_int15 = fit_with(NumberFormats::int15_12());
    const double f_int7 = fit_with(NumberFormats::int7());
    CHECK(std::fabs(f_int15 - f_float) <= std::fabs(f_int7 - f_float));
}

TEST_CASE("decompose: zero iterations returns the initialization with its fit") {
    const CooTensor t = generate_synthetic({5, 5, 5}, 30, 21);
    CpuBackend backend(t, 2);
    DecomposeOptions options;
    options.iterations = 0;
    auto [model, reports] = decompose(t, 2, backend, 33, options);
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].iteration == 0);

    const CpdModel fresh = init_factors(t.dims, 2, 33);
    for (std::size_t n = 0; n < 3; ++n) CHECK(model.factors[n] == fresh.factors[n]);
    CHECK(reports[0].fit == doctest::Approx(avg_abs_diff(t, fresh, reports[0].scope)));
}

TEST_CASE("decompose: deterministic per seed, reports per iteration") {
    const CooTensor t = generate_synthetic({6, 4, 5}, 40, 55);
    CpuBackend backend(t, 3);
    DecomposeOptions options;
    options.iterations = 4;
    auto [m1, r1] = decompose(t, 3, backend, 5, options);
    auto [m2, r2] = decompose(t, 3, backend, 5, options);
    REQUIRE(r1.size() == 5);
    for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i].fit == r2[i].fit);
    for (std::size_t n = 0; n < 3; ++n) CHECK(m1.factors[n] == m2.factors[n]);
    for (const FitReport& rep : r1) {
        if (rep.iteration > 0) CHECK(rep.modes.size() == 3);
    }
}

TEST_CASE("reconstruction invariance under column rescaling") {
    const CooTensor t = generate_synthetic({5, 4, 3}, 25, 77);
    CpuBackend backend(t, 2);
    DecomposeOptions options;
    options.iterations = 2;
    auto [model, reports] = decompose(t, 2, backend, 9, options);
    const double fit = avg_abs_diff(t, model, FitScope::all_elements);

    CpdModel scaled = model;
    const double s = 3.5;
    for (std::size_t r = 0; r < scaled.factors[1].rows(); ++r) scaled.factors[1](r, 0) *= s;
    scaled.norms[0] /= s;
    CHECK(avg_abs_diff(t, scaled, FitScope::all_elements) == doctest::Approx(fit).epsilon(1e-9));
}

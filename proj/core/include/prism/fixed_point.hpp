#pragma once

#include <cstdint>
#include <string>

namespace prism {

/// Counters surfaced by the fixed-point primitives. Quantization saturates
/// (host-side ingestion), kernel arithmetic wraps (DPU integer semantics);
/// both events are counted so runs can report how hard the format was pushed.
struct ArithCounters {
    std::uint64_t saturations = 0;
    std::uint64_t overflow_wraps = 0;

    ArithCounters& operator+=(const ArithCounters& o) {
        saturations += o.saturations;
        overflow_wraps += o.overflow_wraps;
        return *this;
    }
};

/// Qm.n fixed-point descriptor: m = total_bits - frac_bits integer bits
/// (sign included), n = frac_bits. prec_shift is the extra right shift
/// applied when a partial result transitions into the 32-bit accumulator,
/// widening the range that repeated summation can cover.
struct QFormat {
    int total_bits = 16;  // 8, 16 or 32
    int frac_bits = 7;
    int prec_shift = 0;

    std::int64_t raw_min() const { return -(std::int64_t(1) << (total_bits - 1)); }
    std::int64_t raw_max() const { return (std::int64_t(1) << (total_bits - 1)) - 1; }
    double scale() const { return static_cast<double>(std::int64_t(1) << frac_bits); }
    double min_value() const { return static_cast<double>(raw_min()) / scale(); }
    double max_value() const { return static_cast<double>(raw_max()) / scale(); }

    /// 32-bit accumulator format reached after the value multiply:
    /// Q25.7 for Q9.7 with prec_shift 0, Q20.12 for Q17.15 with prec_shift 3.
    QFormat accumulator() const { return QFormat{32, frac_bits - prec_shift, prec_shift}; }

    bool operator==(const QFormat&) const = default;
};

/// A raw two's-complement integer tagged with its format. Arithmetic wraps
/// modulo 2^total_bits, mirroring DPU integer behavior.
struct FixedScalar {
    std::int32_t raw = 0;
    QFormat format;
};

/// Two's-complement wrap of v to the low `bits` bits, sign-extended.
inline std::int64_t wrap_to_bits(std::int64_t v, int bits) {
    const int off = 64 - bits;
    return static_cast<std::int64_t>(static_cast<std::uint64_t>(v) << off) >> off;
}

/// Round-to-nearest-even quantization with saturating clamp.
FixedScalar quantize(double x, QFormat f, ArithCounters* counters = nullptr);

/// Exact raw / 2^frac_bits.
inline double dequantize(FixedScalar s) {
    return static_cast<double>(s.raw) / s.format.scale();
}

/// Factor-matrix multiply step: full-width product, arithmetic right shift
/// by frac_bits (truncation toward -inf), wrap back to the input width.
FixedScalar qmul_rescale(FixedScalar a, FixedScalar b, ArithCounters* counters = nullptr);

/// Value multiply step: product of a matrix-format partial result and a
/// tensor value, shifted right by value frac_bits + prec_shift into the
/// 32-bit accumulator format f_out (must equal p.format.accumulator()).
FixedScalar to_accumulator(FixedScalar p, FixedScalar value, QFormat f_out,
                           ArithCounters* counters = nullptr);

/// Wrapping 32-bit accumulator addition.
inline std::int32_t acc_add(std::int32_t a, std::int32_t b, ArithCounters* counters = nullptr) {
    const std::int64_t wide = static_cast<std::int64_t>(a) + b;
    const std::int64_t wrapped = wrap_to_bits(wide, 32);
    if (counters && wrapped != wide) ++counters->overflow_wraps;
    return static_cast<std::int32_t>(wrapped);
}

/// Largest-precision 16-bit format that can hold max_abs_value:
/// the largest n <= 15 with max_abs_value <= (2^15 - 1) / 2^n.
/// max_abs_value of 0 yields n = 15; values beyond the 16-bit integer
/// range yield n = 0 and will saturate at quantization (counted).
/// Throws ConfigError for non-finite input.
QFormat value_format_for(double max_abs_value);

/// Number-format selection for a run: either the real-arithmetic reference
/// path or a fixed-point matrix format. Tensor values are 16-bit integers
/// with runtime-determined precision on the fixed-point path.
struct NumberFormats {
    bool is_float = true;
    QFormat matrix;
    std::string name = "float";

    static NumberFormats floating() { return {true, {}, "float"}; }
    static NumberFormats int7() { return {false, {16, 7, 0}, "int7"}; }
    static NumberFormats int15_12() { return {false, {32, 15, 3}, "int15-12"}; }
    // 8-bit Q5.3: implemented and testable, but excluded from presets
    // because it is too coarse for the decomposition to converge.
    static NumberFormats q53() { return {false, {8, 3, 0}, "q5.3"}; }
    static NumberFormats custom(int total_bits, int frac_bits, int prec_shift);

    std::uint32_t matrix_bytes() const {
        return is_float ? 4u : static_cast<std::uint32_t>(matrix.total_bits / 8);
    }
    std::uint32_t value_bytes() const { return is_float ? 4u : 2u; }

    bool operator==(const NumberFormats&) const = default;
};

} // namespace prism

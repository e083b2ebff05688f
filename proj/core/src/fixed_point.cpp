#include "prism/fixed_point.hpp"
#include "prism/error.hpp"

#include <cmath>

namespace prism {

FixedScalar quantize(double x, QFormat f, ArithCounters* counters) {
    if (std::isnan(x)) {
        if (counters) ++counters->saturations;
        return {0, f};
    }
    // nearbyint under the default rounding mode is round-to-nearest-even;
    // the library never changes the FP environment.
    const double scaled = x * f.scale();
    std::int64_t raw;
    if (scaled >= static_cast<double>(f.raw_max())) {
        raw = f.raw_max();
        if (scaled > static_cast<double>(f.raw_max())) {
            if (counters) ++counters->saturations;
        }
    } else if (scaled <= static_cast<double>(f.raw_min())) {
        raw = f.raw_min();
        if (scaled < static_cast<double>(f.raw_min())) {
            if (counters) ++counters->saturations;
        }
    } else {
        raw = static_cast<std::int64_t>(std::nearbyint(scaled));
    }
    return {static_cast<std::int32_t>(raw), f};
}

FixedScalar qmul_rescale(FixedScalar a, FixedScalar b, ArithCounters* counters) {
    if (a.format != b.format) throw ConfigError("qmul_rescale: operand formats differ");
    const QFormat f = a.format;
    const std::int64_t product = static_cast<std::int64_t>(a.raw) * b.raw;
    const std::int64_t shifted = product >> f.frac_bits;  // arithmetic, floors
    const std::int64_t wrapped = wrap_to_bits(shifted, f.total_bits);
    if (counters && wrapped != shifted) ++counters->overflow_wraps;
    return {static_cast<std::int32_t>(wrapped), f};
}

FixedScalar to_accumulator(FixedScalar p, FixedScalar value, QFormat f_out,
                           ArithCounters* counters) {
    if (f_out != p.format.accumulator()) {
        throw ConfigError("to_accumulator: output format does not match the matrix format");
    }
    const std::int64_t product = static_cast<std::int64_t>(p.raw) * value.raw;
    const std::int64_t shifted = product >> (value.format.frac_bits + p.format.prec_shift);
    const std::int64_t wrapped = wrap_to_bits(shifted, 32);
    if (counters && wrapped != shifted) ++counters->overflow_wraps;
    return {static_cast<std::int32_t>(wrapped), f_out};
}

QFormat value_format_for(double max_abs_value) {
    if (!std::isfinite(max_abs_value)) {
        throw ConfigError("value_format_for: tensor value range is not finite");
    }
    max_abs_value = std::fabs(max_abs_value);
    const double limit = 32767.0;  // 2^15 - 1
    for (int n = 15; n > 0; --n) {
        if (max_abs_value * static_cast<double>(std::int64_t(1) << n) <= limit) {
            return QFormat{16, n, 0};
        }
    }
    return QFormat{16, 0, 0};
}

NumberFormats NumberFormats::custom(int total_bits, int frac_bits, int prec_shift) {
    if (total_bits != 8 && total_bits != 16 && total_bits != 32) {
        throw ConfigError("custom format: total_bits must be 8, 16 or 32");
    }
    if (frac_bits < 0 || frac_bits >= total_bits) {
        throw ConfigError("custom format: frac_bits must be in [0, total_bits)");
    }
    if (prec_shift < 0 || prec_shift > frac_bits) {
        throw ConfigError("custom format: prec_shift must be in [0, frac_bits]");
    }
    NumberFormats f;
    f.is_float = false;
    f.matrix = QFormat{total_bits, frac_bits, prec_shift};
    f.name = "q" + std::to_string(total_bits - frac_bits) + "." + std::to_string(frac_bits) +
             (prec_shift ? "+s" + std::to_string(prec_shift) : "");
    return f;
}

} // namespace prism

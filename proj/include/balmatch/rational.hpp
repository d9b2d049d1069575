#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <string>

namespace balmatch {

using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

/// "p/q", or "p" when the denominator is 1.
inline std::string to_fraction_string(const Rational& r) {
    const BigInt num = boost::multiprecision::numerator(r);
    const BigInt den = boost::multiprecision::denominator(r);
    if (den == 1) return num.str();
    return num.str() + "/" + den.str();
}

/// Decimal rendering with `digits` places, rounded half away from zero.
inline std::string to_decimal_string(const Rational& r, int digits = 10) {
    BigInt num = boost::multiprecision::numerator(r);
    const BigInt den = boost::multiprecision::denominator(r);
    const bool negative = num < 0;
    if (negative) num = -num;
    BigInt scale = 1;
    for (int i = 0; i < digits; ++i) scale *= 10;
    BigInt scaled = (num * scale * 2 + den) / (den * 2);
    const BigInt whole = scaled / scale;
    std::string frac = BigInt(scaled % scale).str();
    if (static_cast<int>(frac.size()) < digits) frac.insert(0, digits - frac.size(), '0');
    std::string out = negative && scaled != 0 ? "-" : "";
    out += whole.str();
    if (digits > 0) out += "." + frac;
    return out;
}

inline double to_double(const Rational& r) { return r.convert_to<double>(); }

}  // namespace balmatch

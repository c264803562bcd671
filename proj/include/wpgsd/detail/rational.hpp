#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <charconv>
#include <cctype>
#include <stdexcept>
#include <string>
#include <system_error>

namespace wpgsd {

using Rational = boost::multiprecision::cpp_rational;

namespace detail {

inline boost::multiprecision::cpp_int pow10(int e) {
  boost::multiprecision::cpp_int r = 1;
  for (int i = 0; i < e; ++i) r *= 10;
  return r;
}

/// Parses "3/7", "0.3", "-2", "1e-3" into an exact rational.
inline Rational parse_rational(const std::string& text) {
  using boost::multiprecision::cpp_int;
  const auto slash = text.find('/');
  if (slash != std::string::npos) {
    const Rational num = parse_rational(text.substr(0, slash));
    const Rational den = parse_rational(text.substr(slash + 1));
    if (den == 0) throw std::invalid_argument("zero denominator in '" + text + "'");
    return num / den;
  }
  std::size_t pos = 0;
  bool negative = false;
  if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) negative = text[pos++] == '-';
  cpp_int digits = 0;
  int frac_digits = 0;
  bool seen_digit = false, seen_point = false;
  for (; pos < text.size(); ++pos) {
    const char c = text[pos];
    if (std::isdigit(static_cast<unsigned char>(c))) {
      digits = digits * 10 + (c - '0');
      seen_digit = true;
      if (seen_point) ++frac_digits;
    } else if (c == '.' && !seen_point) {
      seen_point = true;
    } else {
      break;
    }
  }
  if (!seen_digit) throw std::invalid_argument("not a number: '" + text + "'");
  int exponent = 0;
  if (pos < text.size() && (text[pos] == 'e' || text[pos] == 'E')) {
    ++pos;
    const char* first = text.data() + pos;
    if (pos < text.size() && text[pos] == '+') ++first;
    const auto res = std::from_chars(first, text.data() + text.size(), exponent);
    if (res.ec != std::errc{}) throw std::invalid_argument("bad exponent in '" + text + "'");
    pos = static_cast<std::size_t>(res.ptr - text.data());
  }
  if (pos != text.size()) throw std::invalid_argument("trailing characters in '" + text + "'");
  const int scale = exponent - frac_digits;
  Rational r = scale >= 0 ? Rational(digits * pow10(scale)) : Rational(digits, pow10(-scale));
  return negative ? Rational(-r) : r;
}

/// Exact rational for the shortest decimal that round-trips `x`, so a JSON
/// 0.3 becomes 3/10 rather than the binary neighbour of 0.3.
inline Rational rational_from_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  if (res.ec != std::errc{}) throw std::invalid_argument("cannot format number");
  return parse_rational(std::string(buf, res.ptr));
}

inline double to_double(const Rational& r) { return r.convert_to<double>(); }

}  // namespace detail
}  // namespace wpgsd

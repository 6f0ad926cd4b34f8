#pragma once

#include <compare>
#include <string>
#include <string_view>

namespace armington {

/// Calendar month. Ordered; `index()` gives a dense month counter.
struct YearMonth {
  int year = 0;
  int month = 1;  ///< 1..12

  constexpr int index() const { return year * 12 + (month - 1); }
  static constexpr YearMonth from_index(int idx) {
    return YearMonth{idx / 12, idx % 12 + 1};
  }

  /// Japanese fiscal year: April k .. March k+1 belongs to JFY k.
  constexpr int jfy() const { return month >= 4 ? year : year - 1; }

  constexpr YearMonth next() const { return from_index(index() + 1); }

  friend constexpr auto operator<=>(const YearMonth&, const YearMonth&) = default;

  /// Parses `YYYY-MM`. Throws std::invalid_argument.
  static YearMonth parse(std::string_view text);
  std::string str() const;
};

/// Months from `a` to `b` (b - a).
constexpr int months_between(YearMonth a, YearMonth b) { return b.index() - a.index(); }

/// First and last month of JFY `k`.
constexpr YearMonth jfy_begin(int k) { return YearMonth{k, 4}; }
constexpr YearMonth jfy_end(int k) { return YearMonth{k + 1, 3}; }

}  // namespace armington

#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace dbdl {

enum class RawType { Integer, Real, Text, Timestamp, Boolean };

std::string_view raw_type_name(RawType t);
std::optional<RawType> raw_type_from_name(std::string_view name);

/// Civil timestamp with second resolution. Field order makes the defaulted
/// comparison chronological.
struct DateTime {
  int year = 1970;
  int month = 1;  // 1..12
  int day = 1;    // 1..31
  int hour = 0;
  int minute = 0;
  int second = 0;

  auto operator<=>(const DateTime&) const = default;

  int weekday() const;  // 0 = Monday .. 6 = Sunday

  std::string to_iso() const;

  /// Accepts "YYYY-MM-DD" optionally followed by "THH:MM:SS" or " HH:MM:SS".
  /// Rejects out-of-range fields (including per-month day counts).
  static std::optional<DateTime> parse_iso(std::string_view s);
};

/// One table cell: a typed scalar or null.
class Value {
 public:
  Value() = default;  // null

  static Value null() { return Value(); }
  static Value integer(std::int64_t v) { return Value(Rep(v)); }
  static Value real(double v) { return Value(Rep(v)); }
  static Value text(std::string v) { return Value(Rep(std::move(v))); }
  static Value timestamp(DateTime v) { return Value(Rep(v)); }
  static Value boolean(bool v) { return Value(Rep(v)); }

  bool is_null() const { return v_.index() == 0; }
  bool matches(RawType t) const;

  std::int64_t as_integer() const;
  double as_real() const;
  const std::string& as_text() const;
  const DateTime& as_timestamp() const;
  bool as_boolean() const;

  /// Numeric view of integer/real/boolean cells.
  std::optional<double> numeric() const;

  std::string to_string() const;

  /// Parses the textual cell form used by the CSV layer. Empty text is null.
  static Value from_string(std::string_view s, RawType t);

  bool operator==(const Value& o) const { return v_ == o.v_; }
  /// Total order: null first, then by type tag, then by value.
  bool operator<(const Value& o) const;

 private:
  using Rep =
      std::variant<std::monostate, std::int64_t, double, std::string, DateTime, bool>;
  explicit Value(Rep r) : v_(std::move(r)) {}
  Rep v_;
};

}  // namespace dbdl

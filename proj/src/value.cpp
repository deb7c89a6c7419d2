#include "dbdl/value.hpp"

#include <array>
#include <charconv>
#include <cstdio>
#include <stdexcept>

namespace dbdl {

std::string_view raw_type_name(RawType t) {
  switch (t) {
    case RawType::Integer: return "integer";
    case RawType::Real: return "real";
    case RawType::Text: return "text";
    case RawType::Timestamp: return "timestamp";
    case RawType::Boolean: return "boolean";
  }
  return "?";
}

std::optional<RawType> raw_type_from_name(std::string_view name) {
  if (name == "integer") return RawType::Integer;
  if (name == "real") return RawType::Real;
  if (name == "text") return RawType::Text;
  if (name == "timestamp") return RawType::Timestamp;
  if (name == "boolean") return RawType::Boolean;
  return std::nullopt;
}

namespace {

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
  static constexpr std::array<int, 12> days = {31, 28, 31, 30, 31, 30,
                                               31, 31, 30, 31, 30, 31};
  if (m == 2 && is_leap(y)) return 29;
  return days[m - 1];
}

bool parse_fixed_int(std::string_view s, size_t pos, size_t len, int& out) {
  if (pos + len > s.size()) return false;
  int v = 0;
  for (size_t i = 0; i < len; ++i) {
    char c = s[pos + i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

}  // namespace

int DateTime::weekday() const {
  // Sakamoto's algorithm, shifted so 0 = Monday.
  static constexpr std::array<int, 12> t = {0, 3, 2, 5, 0, 3, 5, 1, 4, 6, 2, 4};
  int y = year - (month < 3 ? 1 : 0);
  int dow_sun0 = (y + y / 4 - y / 100 + y / 400 + t[month - 1] + day) % 7;
  return (dow_sun0 + 6) % 7;
}

std::string DateTime::to_iso() const {
  char buf[32];
  if (hour == 0 && minute == 0 && second == 0) {
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year, month, day);
  } else {
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d", year, month,
                  day, hour, minute, second);
  }
  return buf;
}

std::optional<DateTime> DateTime::parse_iso(std::string_view s) {
  DateTime dt;
  if (!parse_fixed_int(s, 0, 4, dt.year)) return std::nullopt;
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  if (!parse_fixed_int(s, 5, 2, dt.month)) return std::nullopt;
  if (!parse_fixed_int(s, 8, 2, dt.day)) return std::nullopt;
  if (dt.month < 1 || dt.month > 12) return std::nullopt;
  if (dt.day < 1 || dt.day > days_in_month(dt.year, dt.month)) return std::nullopt;
  if (s.size() == 10) return dt;
  if (s.size() != 19 || (s[10] != 'T' && s[10] != ' ')) return std::nullopt;
  if (s[13] != ':' || s[16] != ':') return std::nullopt;
  if (!parse_fixed_int(s, 11, 2, dt.hour)) return std::nullopt;
  if (!parse_fixed_int(s, 14, 2, dt.minute)) return std::nullopt;
  if (!parse_fixed_int(s, 17, 2, dt.second)) return std::nullopt;
  if (dt.hour > 23 || dt.minute > 59 || dt.second > 59) return std::nullopt;
  return dt;
}

bool Value::matches(RawType t) const {
  if (is_null()) return true;
  switch (t) {
    case RawType::Integer: return std::holds_alternative<std::int64_t>(v_);
    case RawType::Real: return std::holds_alternative<double>(v_);
    case RawType::Text: return std::holds_alternative<std::string>(v_);
    case RawType::Timestamp: return std::holds_alternative<DateTime>(v_);
    case RawType::Boolean: return std::holds_alternative<bool>(v_);
  }
  return false;
}

std::int64_t Value::as_integer() const {
  if (auto* p = std::get_if<std::int64_t>(&v_)) return *p;
  throw std::logic_error("value is not an integer");
}

double Value::as_real() const {
  if (auto* p = std::get_if<double>(&v_)) return *p;
  throw std::logic_error("value is not a real");
}

const std::string& Value::as_text() const {
  if (auto* p = std::get_if<std::string>(&v_)) return *p;
  throw std::logic_error("value is not text");
}

const DateTime& Value::as_timestamp() const {
  if (auto* p = std::get_if<DateTime>(&v_)) return *p;
  throw std::logic_error("value is not a timestamp");
}

bool Value::as_boolean() const {
  if (auto* p = std::get_if<bool>(&v_)) return *p;
  throw std::logic_error("value is not a boolean");
}

std::optional<double> Value::numeric() const {
  switch (v_.index()) {
    case 1: return static_cast<double>(std::get<std::int64_t>(v_));
    case 2: return std::get<double>(v_);
    case 5: return std::get<bool>(v_) ? 1.0 : 0.0;
    default: return std::nullopt;
  }
}

std::string Value::to_string() const {
  switch (v_.index()) {
    case 0: return "";
    case 1: return std::to_string(std::get<std::int64_t>(v_));
    case 2: {
      char buf[32];
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, std::get<double>(v_));
      (void)ec;
      return std::string(buf, end);
    }
    case 3: return std::get<std::string>(v_);
    case 4: return std::get<DateTime>(v_).to_iso();
    case 5: return std::get<bool>(v_) ? "true" : "false";
  }
  return "";
}

Value Value::from_string(std::string_view s, RawType t) {
  if (s.empty()) return null();
  switch (t) {
    case RawType::Integer: {
      std::int64_t v = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size())
        throw std::invalid_argument("not an integer: '" + std::string(s) + "'");
      return integer(v);
    }
    case RawType::Real: {
      double v = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size())
        throw std::invalid_argument("not a real: '" + std::string(s) + "'");
      return real(v);
    }
    case RawType::Text: return text(std::string(s));
    case RawType::Timestamp: {
      auto dt = DateTime::parse_iso(s);
      if (!dt) throw std::invalid_argument("not a timestamp: '" + std::string(s) + "'");
      return timestamp(*dt);
    }
    case RawType::Boolean: {
      if (s == "true" || s == "1") return boolean(true);
      if (s == "false" || s == "0") return boolean(false);
      throw std::invalid_argument("not a boolean: '" + std::string(s) + "'");
    }
  }
  return null();
}

bool Value::operator<(const Value& o) const {
  if (v_.index() != o.v_.index()) return v_.index() < o.v_.index();
  switch (v_.index()) {
    case 0: return false;
    case 1: return std::get<std::int64_t>(v_) < std::get<std::int64_t>(o.v_);
    case 2: return std::get<double>(v_) < std::get<double>(o.v_);
    case 3: return std::get<std::string>(v_) < std::get<std::string>(o.v_);
    case 4: return std::get<DateTime>(v_) < std::get<DateTime>(o.v_);
    case 5: return std::get<bool>(v_) < std::get<bool>(o.v_);
  }
  return false;
}

}  // namespace dbdl

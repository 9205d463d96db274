#ifndef KBM_CSV_HPP
#define KBM_CSV_HPP

// Delimited text output: ',' separator, '.' decimal point, LF endings and
// 17 significant digits so every double round-trips exactly.

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace kbm::csv {

inline std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Writes `# line` comment rows, used to echo the experiment configuration.
inline void write_preamble(std::ostream& os, const std::vector<std::string>& lines) {
  for (const auto& l : lines) os << "# " << l << '\n';
}

class Row {
 public:
  explicit Row(std::ostream& os) : os_(os) {}
  ~Row() { os_ << '\n'; }
  Row(const Row&) = delete;
  Row& operator=(const Row&) = delete;

  Row& operator<<(double x) { return put(num(x)); }
  Row& operator<<(int x) { return put(std::to_string(x)); }
  Row& operator<<(long x) { return put(std::to_string(x)); }
  Row& operator<<(std::size_t x) { return put(std::to_string(x)); }
  Row& operator<<(const std::string& s) { return put(s); }
  Row& operator<<(const char* s) { return put(s); }

 private:
  Row& put(const std::string& s) {
    if (!first_) os_ << ',';
    os_ << s;
    first_ = false;
    return *this;
  }

  std::ostream& os_;
  bool first_ = true;
};

}  // namespace kbm::csv

#endif

#include "fedsim/format.hpp"

#include <charconv>
#include <cmath>

namespace fedsim {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value,
                                 std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

}  // namespace fedsim

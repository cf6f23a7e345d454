#pragma once

#include <string>

namespace fedsim {

/// Locale-independent, round-trippable text form: 17 significant digits,
/// '.' decimal separator. NaN is written as "nan".
std::string format_double(double value);

}  // namespace fedsim

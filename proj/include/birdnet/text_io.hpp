#pragma once

#include <string>

namespace birdnet {

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

// Fixed-point text with `digits` decimals.
std::string format_fixed(double value, int digits);

}  // namespace birdnet

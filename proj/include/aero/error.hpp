#pragma once

#include <stdexcept>
#include <string>

namespace aero {

// Shape or length disagreement between operands.
class ShapeError : public std::invalid_argument {
public:
	using std::invalid_argument::invalid_argument;
};

// A NaN/Inf appeared, or a numerical procedure could not produce a defined result.
class NumericalError : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

// Bad run configuration or malformed input file.
class ConfigError : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

} // namespace aero

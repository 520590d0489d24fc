#ifndef PYRABOX_ERRORS_HPP_
#define PYRABOX_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace pyrabox {

// Bad shapes, violated preconditions, mismatched grids. Maps to exit code 2
// when raised by file parsing and 1 when raised by flag validation.
class contract_error : public std::runtime_error {
public:
  explicit contract_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input data (annotations, PPM, model files, JSON config).
class parse_error : public std::runtime_error {
public:
  explicit parse_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration values.
class config_error : public std::runtime_error {
public:
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf losses, failed gradient checks. Maps to exit code 3.
class numeric_error : public std::runtime_error {
public:
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pyrabox

#endif  // PYRABOX_ERRORS_HPP_

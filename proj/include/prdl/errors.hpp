#ifndef PRDL_ERRORS_HPP
#define PRDL_ERRORS_HPP

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace prdl {

// Shape mismatch between two operands; the message names both shapes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}

  static ShapeError mismatch(const std::string& op,
                             const std::vector<std::size_t>& a,
                             const std::vector<std::size_t>& b) {
    std::ostringstream os;
    os << op << ": shape mismatch " << format(a) << " vs " << format(b);
    return ShapeError(os.str());
  }

  static std::string format(const std::vector<std::size_t>& dims) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (i) os << "x";
      os << dims[i];
    }
    os << "]";
    return os.str();
  }
};

// Math domain violation (log/sqrt of non-positive input, bad temperature, ...).
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// File I/O and binary format failures; carries path and cause.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}

  static IoError at(const std::string& path, const std::string& cause) {
    return IoError(path + ": " + cause);
  }
};

// Configuration validation failure; carries the offending key path.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}

  static ConfigError key(const std::string& key_path, const std::string& cause) {
    return ConfigError("config key '" + key_path + "': " + cause);
  }
};

}  // namespace prdl

#endif  // PRDL_ERRORS_HPP

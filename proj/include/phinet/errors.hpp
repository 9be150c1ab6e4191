#pragma once

#include <stdexcept>
#include <string>

namespace phinet {

// Bad shapes, bad hyperparameters, infeasible sampling ranges.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values. `where` names the sub-operation that produced them.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(where) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

// Evaluation protocol violations (empty propagation context, too few samples).
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace phinet

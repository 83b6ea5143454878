#pragma once

#include <stdexcept>

namespace diffda {

// Error families used by the command-line driver to pick exit codes; the
// library throws them where the failure class is unambiguous.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace diffda

#pragma once

#include <stdexcept>
#include <string>

namespace folo {

/// Bad inputs: malformed files, dimension mismatches, violated preconditions.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Runtime numerical failure, e.g. a diverging simulation.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace folo

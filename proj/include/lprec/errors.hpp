// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

namespace lprec {

// bad configuration: unknown format string, hyperparameter that does not
// survive quantization, malformed experiment file, ...  CLI exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// numerical failure: overflow under stochastic rounding, non-finite
// accumulator, ...  CLI exit code 2.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace lprec

#pragma once

#include <stdexcept>
#include <string>

namespace bsde {

// Thrown when an iterative scheme fails to converge or an evaluation
// produces non-finite values. Parameter errors use std::invalid_argument.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bsde

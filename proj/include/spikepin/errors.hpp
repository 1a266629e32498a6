#pragma once

#include <stdexcept>
#include <string>

namespace spikepin {

// Bad shapes, values out of domain, malformed configs.
class InvalidInput : public std::invalid_argument {
public:
    explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

class BoundsError : public std::out_of_range {
public:
    explicit BoundsError(const std::string& what) : std::out_of_range(what) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when membrane state or gradients go non-finite during training.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace spikepin

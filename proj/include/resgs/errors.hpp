#pragma once

#include <stdexcept>
#include <string>

namespace resgs {

// Covariance too ill-conditioned to invert meaningfully.
struct DegenerateCovariance : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A render auxiliary was produced from a cloud that has since mutated.
struct StaleRenderOutput : std::logic_error {
    using std::logic_error::logic_error;
};

// Referenced Gaussian id does not exist.
struct IdNotFound : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Image dimension mismatch or image smaller than a required window.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Non-finite loss encountered during training.
struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dataset / checkpoint / config parsing failures.
struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace resgs

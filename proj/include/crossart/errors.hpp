#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace crossart {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A tensor has an empty or otherwise illegal extent.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// An argument lies outside its legal numeric domain.
class DomainError : public Error {
public:
    using Error::Error;
};

class NonFiniteError : public Error {
public:
    using Error::Error;
};

/// A reverse diffusion step was requested from t = 0.
class StepUnderflowError : public Error {
public:
    using Error::Error;
};

/// Stochastic step (sigma > 0) without a noise tensor.
class MissingNoiseError : public Error {
public:
    using Error::Error;
};

/// Configuration is inconsistent or incomplete.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Cross-attention context does not match the denoiser it is applied to.
class ContextError : public Error {
public:
    using Error::Error;
};

class VersionError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(std::size_t step, const std::string& what)
        : Error(what), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

}  // namespace crossart

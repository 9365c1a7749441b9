#pragma once

#include <stdexcept>
#include <string>

namespace linkadjust {

//! Base class for all library errors.
class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

//! Bad arguments: dimension mismatches, non-finite inputs, invalid config.
class invalid_input : public error {
public:
    explicit invalid_input(const std::string& msg) : error(msg) {}
};

//! Data that cannot support the requested estimate (e.g. zero-variance y for KDE).
class degenerate_data : public error {
public:
    explicit degenerate_data(const std::string& msg) : error(msg) {}
};

//! Both mixture components vanished at some observation.
class degenerate_density : public error {
public:
    degenerate_density(const std::string& msg, long index)
        : error(msg + " (observation " + std::to_string(index) + ")"), index_(index) {}
    long index() const { return index_; }

private:
    long index_;
};

//! Rank-deficient design in a least-squares step.
class singular_design : public error {
public:
    explicit singular_design(const std::string& msg) : error(msg) {}
};

//! All correct-match probabilities at 1: the mismatch component carries no mass.
class no_mismatch_mass : public error {
public:
    explicit no_mismatch_mass(const std::string& msg) : error(msg) {}
};

//! Hessian estimate singular or too ill-conditioned for sandwich inversion.
class singular_information : public error {
public:
    singular_information(const std::string& msg, double condition)
        : error(msg + " (condition number " + std::to_string(condition) + ")"),
          condition_(condition) {}
    double condition() const { return condition_; }

private:
    double condition_;
};

//! File and parsing failures in the CLI layer.
class io_error : public error {
public:
    explicit io_error(const std::string& msg) : error(msg) {}
};

} // namespace linkadjust

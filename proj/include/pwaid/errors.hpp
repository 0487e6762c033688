#pragma once

#include <stdexcept>
#include <string>

namespace pwaid {

// Caller broke a documented precondition such as matching dimensions.
class ContractViolation : public std::logic_error {
public:
    explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

// Input data is malformed, empty or not finite.
class InvalidInput : public std::invalid_argument {
public:
    explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

// A simulated point fell outside every mode region.
class OutOfDomain : public std::runtime_error {
public:
    OutOfDomain(const std::string& what, long t) : std::runtime_error(what), t_(t) {}
    long t() const { return t_; }

private:
    long t_;
};

// Configuration rejected during validation; `field` names the offending key.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(const std::string& field, const std::string& what)
        : std::invalid_argument(field + ": " + what), field_(field) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

// Parameters or prototypes became non-finite during identification.
class NumericalDivergence : public std::runtime_error {
public:
    explicit NumericalDivergence(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pwaid

#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace tagdiff {

/// Caller violated a precondition (bad dimension, bad parameter, bad schedule).
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Evaluation requested at the singular core of a pair potential.
class SingularityError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Configuration file failed validation. `field` names the offending entry.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, const std::string& what)
        : std::runtime_error(field + ": " + what), field_(std::move(field))
    {
    }

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

} // namespace tagdiff

#pragma once

#include <stdexcept>
#include <string>

namespace vars {

// Root of every error the library throws on bad input or broken contracts.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid configuration values (flags, config files, op parameters).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Mathematically undefined request: empty reductions, empty splits, ...
class DomainError : public Error {
public:
    using Error::Error;
};

// Class label outside the valid range.
class LabelError : public Error {
public:
    using Error::Error;
};

// Caller violated an API precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

// Malformed binary payload or checkpoint.
class FormatError : public Error {
public:
    using Error::Error;
};

// Malformed structured text. `line` is 1-based, 0 when unknown.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0, std::string field = {})
        : Error(what), line_(line), field_(std::move(field)) {}

    std::size_t line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    std::size_t line_;
    std::string field_;
};

// A record broke a dataset invariant. Carries the offending action and the rule.
class ValidationError : public Error {
public:
    ValidationError(std::string action_id, std::string field, std::string rule)
        : Error(format(action_id, field, rule)),
          action_id_(std::move(action_id)),
          field_(std::move(field)),
          rule_(std::move(rule)) {}

    const std::string& action_id() const { return action_id_; }
    const std::string& field() const { return field_; }
    const std::string& rule() const { return rule_; }

private:
    static std::string format(const std::string& id, const std::string& field,
                              const std::string& rule) {
        std::string s = "action '" + id + "'";
        if (!field.empty()) s += " field '" + field + "'";
        return s + ": " + rule;
    }

    std::string action_id_;
    std::string field_;
    std::string rule_;
};

}  // namespace vars

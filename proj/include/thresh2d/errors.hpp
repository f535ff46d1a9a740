#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace thresh2d {

/// Argument outside the mathematical domain of an operation (z <= 0, beta <= 0, ...).
class domain_error : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A kernel or integrand produced a non-finite value.
class evaluation_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Adaptive quadrature exhausted its subdivision budget.
class quadrature_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The singular-value gap around the rank threshold is too small to trust the rank.
class classification_uncertain : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A term or check was requested for a threshold kind it does not apply to.
class precondition_error : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A numerical check produced a result outside its claimed envelope.
class consistency_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad run configuration. line is 0 when the problem is not tied to one line.
class config_error : public std::runtime_error {
public:
    config_error(int line, std::string field, const std::string& what)
        : std::runtime_error(what), line_(line), field_(std::move(field)) {}
    int line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    int line_;
    std::string field_;
};

}  // namespace thresh2d

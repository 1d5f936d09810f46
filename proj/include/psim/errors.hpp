#ifndef PSIM_ERRORS_HPP
#define PSIM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace psim {

// Bad or inconsistent input (config files, parameter invariants).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A numerical procedure failed (singular solve, non-convergent fit, ...).
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Adaptive integration failed; carries the time at which the step size underflowed.
class IntegrationError : public NumericalError {
public:
    IntegrationError(const std::string& msg, double t_ns_)
        : NumericalError(msg + " (t = " + std::to_string(t_ns_) + " ns)"), t_ns(t_ns_) {}
    double t_ns;
};

// The impurity xi is divergent (beta_E * beta_C == 0). Distinct type so map-style
// operations can turn it into an explicit sentinel instead of a raw infinity.
class DivergentImpurity : public NumericalError {
public:
    DivergentImpurity() : NumericalError("impurity diverges: beta_E * beta_C = 0") {}
};

} // namespace psim

#endif

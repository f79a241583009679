#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace gridsnoop {

// Input/config problems. CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class ParseError : public ValidationError {
public:
    ParseError(const std::string& msg, int line)
        : ValidationError("line " + std::to_string(line) + ": " + msg), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

// Numerical failures (divergence, singularity, rank loss). CLI maps these to exit code 3.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConvergenceError : public NumericalError {
public:
    ConvergenceError(const std::string& msg, std::vector<double> history = {})
        : NumericalError(msg), history_(std::move(history)) {}
    const std::vector<double>& history() const { return history_; }

private:
    std::vector<double> history_;
};

class SingularityError : public NumericalError {
public:
    explicit SingularityError(const std::string& msg) : NumericalError(msg) {}
};

class ObservabilityError : public NumericalError {
public:
    ObservabilityError(const std::string& msg, std::vector<std::string> states = {})
        : NumericalError(msg), states_(std::move(states)) {}
    const std::vector<std::string>& unobservable_states() const { return states_; }

private:
    std::vector<std::string> states_;
};

class ConnectivityError : public NumericalError {
public:
    explicit ConnectivityError(const std::string& msg) : NumericalError(msg) {}
};

}  // namespace gridsnoop

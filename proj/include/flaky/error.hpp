#pragma once

#include <stdexcept>
#include <string>

namespace flaky {

// Base for every domain error raised by the library. The CLI maps these to
// exit code 1; anything else escaping is a bug.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Violated precondition on a public entry point (wrong dimensions, values out
// of range).
class ContractError : public Error {
public:
    using Error::Error;
};

// Input data whose structure breaks a documented invariant (attempt gaps,
// duplicate attempts, unparseable timestamps).
class StructuralInputError : public Error {
public:
    using Error::Error;
};

class StatisticsUndefined : public Error {
public:
    using Error::Error;
};

class BalanceImpossible : public Error {
public:
    using Error::Error;
};

class PlanInfeasible : public Error {
public:
    PlanInfeasible(const std::string& what, std::size_t minimum_rows)
        : Error(what), minimum_rows_(minimum_rows) {}

    [[nodiscard]] std::size_t minimum_rows() const noexcept { return minimum_rows_; }

private:
    std::size_t minimum_rows_;
};

// The repository (or its Actions history) cannot be collected: HTTP 404/410.
class RepoUnavailable : public Error {
public:
    RepoUnavailable(const std::string& repo, int http_status)
        : Error("repository unavailable: " + repo + " (HTTP " + std::to_string(http_status) + ")"),
          http_status_(http_status) {}

    [[nodiscard]] int http_status() const noexcept { return http_status_; }

private:
    int http_status_;
};

class TransportError : public Error {
public:
    using Error::Error;
};

}  // namespace flaky

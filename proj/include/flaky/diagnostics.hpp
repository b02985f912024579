#pragma once

#include <string>
#include <vector>

namespace flaky {

// A non-fatal problem attached to a result: skipped records, clamped values,
// substituted defaults.
struct Diagnostic {
    std::string subject;  // build path, job ref, ...
    std::string message;

    friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};

using Diagnostics = std::vector<Diagnostic>;

}  // namespace flaky

#pragma once

#include <string>
#include <vector>

namespace stwave {

// One gradient-check case: analytic tape gradients vs central finite
// differences in f64.
struct CheckCase {
    std::string name;
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool passed = false;
    std::string detail; // worst coordinate, attempts, coords checked
};

// level: "ops" (every primitive), "layers" (composite blocks), "model"
// (the full network end to end). Throws ConfigError on an unknown level.
std::vector<CheckCase> gradcheck_suite(const std::string& level);

bool all_passed(const std::vector<CheckCase>& cases);

} // namespace stwave

#pragma once

// Named finite-difference checks over every op and composite block, shared by
// the command line tool and the acceptance run.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace flowsel::nn {

struct GradCaseResult {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t params = 0;   ///< parameters probed
    std::size_t checked = 0;  ///< coordinates probed over all of them
    bool pass = false;
};

constexpr double kGradTolerance = 1e-4;

/// Names run by "all", ops first, then composite blocks.
std::vector<std::string> grad_case_names();

/// Runs the named cases in the given order. Besides the listed names,
/// "broken" is a fixture op with a deliberately wrong backward. Throws
/// ConfigError for unknown names.
std::vector<GradCaseResult> run_grad_cases(const std::vector<std::string>& names, std::uint64_t seed,
                                           double tolerance = kGradTolerance);

}  // namespace flowsel::nn

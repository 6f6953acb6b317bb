#pragma once

#include <ostream>

// Fast invariant suite behind the `selftest` subcommand: spline round trips,
// log-det and gradient spot checks, normalization, sampling, checkpoint and
// determinism smoke tests. Prints one line per check.

namespace splineflow::selfcheck {

// Returns the number of failed checks (0 = all good).
int run(std::ostream& out);

}  // namespace splineflow::selfcheck

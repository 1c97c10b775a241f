#pragma once

// Finite-difference checks of every differentiable graph op and of the
// composed encoder + contrastive objective.

#include <cstdint>
#include <string>
#include <vector>

namespace fgraph::diag {

struct CheckResult {
    std::string name;
    double max_error = 0;  // max over points of grad_check's relative error
};

// Each op checked at `points` random inputs. The straight-through sign is
// checked against its definition (gradient copied unchanged), not against
// finite differences, and reported as "sign_st (definitional)".
std::vector<CheckResult> op_suite(std::uint64_t seed, int points, double eps = 1e-5);

// Small encoder on two random scenes with the contrastive loss on the
// continuous embedding plus alpha * L_B with u frozen; analytic parameter
// gradients compared with central differences on sampled coordinates of every
// parameter tensor, at `points` random initializations.
CheckResult composed_check(std::uint64_t seed, int points, double eps = 1e-5);

}  // namespace fgraph::diag

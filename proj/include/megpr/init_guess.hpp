#pragma once

// Data-driven starting point for parameter estimation.  The latent
// trajectory is smoothed by a one-dimensional GP and differentiated; the
// returned guess minimizes the squared constraint residual of that curve
// plus the mismatch between the operator-transformed curve and the
// observations, via multi-start Nelder-Mead over the model's
// initialization box (clamped to the feasibility box).  This is a cheap
// gradient-matching estimate: it never touches the joint Gram matrix, so
// it costs a fraction of a single optimizer iteration while reliably
// landing in the basin of the maximum-likelihood optimum even when the
// trajectory spends most of its time near an equilibrium where several
// parameter combinations are locally indistinguishable.

#include <megpr/gpr.hpp>
#include <megpr/system.hpp>

#include <cstdint>
#include <optional>

namespace megpr {

struct InitGuess {
  Eigen::VectorXd theta;   // inside the model's feasibility box
  double objective = 0.0;  // mean-square residual score at `theta`
};

// Returns nothing when no usable latent series exists: the latent
// component is unobserved and no anchor table is supplied, or the series
// is too short to differentiate.
std::optional<InitGuess> constraint_match_init(const SystemModel& model,
                                               const Dataset& data,
                                               const FixedPointTable* anchors,
                                               std::uint64_t seed,
                                               const GprConfig& gpr = {});

}  // namespace megpr

#pragma once

// ℓ∞ perturbation primitives shared by adversarial training and the attacks.
// Budgets are per trial: radius_i = ε · s_i with s_i the trial's signal std.

#include <safe/ndarray.hpp>

#include <span>
#include <vector>

namespace safe {

/// Population standard deviation of all entries (two-pass, in double).
template <typename Scalar>
double trial_std(std::span<const Scalar> x);

enum class StdMode { per_trial, global };

/// ε · s_i for each trial of a [B, 1, c, t] batch. In global mode every trial
/// uses `global_std`.
template <typename Scalar>
std::vector<double> linf_radii(const NdArray<Scalar>& batch, double epsilon, StdMode mode = StdMode::per_trial, double global_std = 0);

/// Clamps `adv` into the box |adv - x| <= radius_i coordinate-wise. The bound
/// holds exactly when evaluated in double, not just up to rounding.
template <typename Scalar>
void project_linf(const NdArray<Scalar>& x, NdArray<Scalar>& adv, std::span<const double> radii);

/// x + step_i · sign(g), then projected onto the radius_i box. sign(0) = 0.
template <typename Scalar>
NdArray<Scalar> sign_step(const NdArray<Scalar>& x, const NdArray<Scalar>& start, const NdArray<Scalar>& grad,
                          std::span<const double> steps, std::span<const double> radii);

/// Per-trial max of |adv - x|, computed in double.
template <typename Scalar>
std::vector<double> linf_distance(const NdArray<Scalar>& x, const NdArray<Scalar>& adv);

}  // namespace safe

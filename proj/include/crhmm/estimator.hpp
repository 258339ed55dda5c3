#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "crhmm/likelihood.hpp"
#include "crhmm/model.hpp"

namespace crhmm {

/// Raised when optimization cannot proceed (non-finite objective at the
/// starting point, degenerate curvature). Mapped to exit code 4 by the CLI.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FitOptions {
    int max_iterations = 500;
    double gradient_tolerance = 1e-5;   // max-norm of the gradient
    double relative_f_tolerance = 1e-9; // relative log-likelihood change
    int lbfgs_memory = 10;
    int multi_start = 0;    // 0: 1 start for G=1, 3 for mixtures
    int pilot_iterations = 25; // per extra start before continuing the best
    double jitter_sd = 0.5; // spread of the start perturbations
    std::uint64_t seed = 1; // drives start jitter only
    int workers = 0;
    bool compute_standard_errors = true;
    bool warm_start = false; // init is already near an optimum: single start, no separation
};

struct FitResult {
    std::vector<double> estimate;
    std::vector<std::string> parameter_names;
    double loglik = 0.0;
    bool converged = false;
    int iterations = 0;
    double gradient_norm = 0.0; // max-norm at the estimate
    std::vector<double> standard_errors; // NaN where unavailable
    std::vector<double> mixing_proportions;
    std::vector<double> mixing_proportion_ses; // delta method, NaN if unavailable
    int evaluations = 0;
};

/// Starting values from the data: life-event intercepts at the logit of
/// crude recorded-event rates per person-year (clamped to [0.02, 0.98], so
/// templates without event records start at modest defaults), emission and
/// interaction coefficients at zero, false positive rate at 0.1, mixing
/// uniform.
Parameters default_initialization(const ModelSpec& model, const PreparedData& prep);

/// Central-difference gradient with per-coordinate step h * max(1, |x_j|).
/// Throws numeric_error naming the coordinate if f is non-finite nearby.
std::vector<double> numerical_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       const std::vector<double>& x, double h = 1e-6);

/// Maximizes the weighted total log-likelihood over the model's free
/// parameters by limited-memory quasi-Newton ascent with a backtracking
/// line search; accepted iterates never decrease the objective. For
/// mixtures, identical group blocks are separated deterministically and
/// extra jittered starts guard against the symmetric saddle.
FitResult fit_mle(const PreparedData& prep, std::span<const double> weights,
                  const ModelSpec& model, const Parameters& init, const FitOptions& options);

/// Standard errors from the inverse negative Hessian of f at x_hat, built by
/// central differences of `grad` (column-wise, then symmetrized). Entries
/// whose variance comes out non-positive, or everything when the solve
/// fails, are NaN.
std::vector<double> hessian_standard_errors(
    const std::function<std::vector<double>(const std::vector<double>&)>& grad,
    const std::vector<double>& x_hat, double h = 1e-4);

/// Reorders mixture groups so group 1 has the highest marginal observation
/// probability on the first group-specific register at the baseline
/// profile; returns true if a permutation was applied.
bool canonicalize_group_order(const ModelSpec& model, Parameters& params);

} // namespace crhmm

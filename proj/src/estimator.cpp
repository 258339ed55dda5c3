#include "crhmm/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>

#include <Eigen/Dense>

#include "crhmm/rng.hpp"

namespace crhmm {

Parameters default_initialization(const ModelSpec& model, const PreparedData& prep) {
    std::size_t deaths = 0, emigrations = 0, returns = 0;
    for (std::uint32_t code : prep.code) {
        switch (decode_category(code, prep.K).flag) {
            case EventFlag::death: ++deaths; break;
            case EventFlag::emigration: ++emigrations; break;
            case EventFlag::reimmigration: ++returns; break;
            case EventFlag::none: break;
        }
    }
    const double py = static_cast<double>(std::max<std::size_t>(prep.person_years(), 1));
    auto crude = [&](std::size_t count) {
        return std::clamp(static_cast<double>(count) / py, 0.02, 0.98);
    };

    Parameters p = Parameters::zeros(model);
    p.life.survival.intercept = logit(1.0 - crude(deaths));
    p.life.emigration.intercept = logit(crude(emigrations));
    p.life.return_home.intercept = logit(crude(returns));
    if (model.fp.enabled) p.fp_q.intercept = logit(0.1);
    return p;
}

std::vector<double> numerical_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       const std::vector<double>& x, double h) {
    if (!(h > 0.0)) throw numeric_error("numerical gradient needs a positive step");
    std::vector<double> g(x.size());
    std::vector<double> xp = x;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double hj = h * std::max(1.0, std::abs(x[j]));
        xp[j] = x[j] + hj;
        const double fp = f(xp);
        xp[j] = x[j] - hj;
        const double fm = f(xp);
        xp[j] = x[j];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw numeric_error("objective non-finite near coordinate " + std::to_string(j));
        g[j] = (fp - fm) / (2.0 * hj);
    }
    return g;
}

namespace {

double max_norm(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

struct LbfgsOutcome {
    std::vector<double> x;
    double f = 0.0;
    std::vector<double> grad;
    bool converged = false;
    int iterations = 0;
    int evaluations = 0;
};

// Maximizes f via limited-memory BFGS with backtracking Armijo line search.
// value_grad evaluates f and its gradient; value evaluates f alone (cheaper,
// used inside the line search). Non-finite trial values are treated as
// rejected steps. Accepted iterates are monotone non-decreasing in f.
LbfgsOutcome lbfgs_maximize(
    const std::function<double(const std::vector<double>&, std::vector<double>&)>& value_grad,
    const std::function<double(const std::vector<double>&)>& value,
    std::vector<double> x, int max_iterations, double gradient_tolerance,
    double relative_f_tolerance, int memory) {
    const std::size_t nd = x.size();
    LbfgsOutcome out;
    std::vector<double> g(nd);
    double f = value_grad(x, g);
    ++out.evaluations;
    if (!std::isfinite(f)) throw numeric_error("objective is not finite at the starting point");

    std::deque<std::vector<double>> s_hist, y_hist;
    std::deque<double> rho_hist;
    std::vector<double> d(nd), xn(nd), gn(nd), alpha_buf;

    out.converged = max_norm(g) < gradient_tolerance;
    int it = 0;
    while (!out.converged && it < max_iterations) {
        // Two-loop recursion on the minimization form; d ends up an ascent
        // direction for f.
        for (std::size_t j = 0; j < nd; ++j) d[j] = -g[j];
        const int m = static_cast<int>(s_hist.size());
        alpha_buf.assign(m, 0.0);
        for (int k = m - 1; k >= 0; --k) {
            double sd = 0.0;
            for (std::size_t j = 0; j < nd; ++j) sd += s_hist[k][j] * d[j];
            const double a = rho_hist[k] * sd;
            alpha_buf[k] = a;
            for (std::size_t j = 0; j < nd; ++j) d[j] -= a * y_hist[k][j];
        }
        if (m > 0) {
            double sy = 0.0, yy = 0.0;
            for (std::size_t j = 0; j < nd; ++j) {
                sy += s_hist[m - 1][j] * y_hist[m - 1][j];
                yy += y_hist[m - 1][j] * y_hist[m - 1][j];
            }
            const double scale = sy / yy;
            for (std::size_t j = 0; j < nd; ++j) d[j] *= scale;
        }
        for (int k = 0; k < m; ++k) {
            double yd = 0.0;
            for (std::size_t j = 0; j < nd; ++j) yd += y_hist[k][j] * d[j];
            const double b = rho_hist[k] * yd;
            for (std::size_t j = 0; j < nd; ++j) d[j] += (alpha_buf[k] - b) * s_hist[k][j];
        }
        for (std::size_t j = 0; j < nd; ++j) d[j] = -d[j];

        double gd = 0.0;
        for (std::size_t j = 0; j < nd; ++j) gd += g[j] * d[j];
        if (!(gd > 0.0)) {
            // Not an ascent direction (stale curvature): fall back to the
            // gradient and drop history.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            gd = 0.0;
            for (std::size_t j = 0; j < nd; ++j) {
                d[j] = g[j];
                gd += g[j] * g[j];
            }
            if (!(gd > 0.0)) break;
        }

        constexpr double c1 = 1e-4;
        double step = 1.0;
        double fn = -std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            for (std::size_t j = 0; j < nd; ++j) xn[j] = x[j] + step * d[j];
            fn = value(xn);
            ++out.evaluations;
            if (std::isfinite(fn) && fn >= f + c1 * step * gd) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            // No improving step at machine resolution. If the attainable
            // gain along the search direction is already below the relative
            // tolerance, this is convergence, not failure.
            if (gd <= relative_f_tolerance * (std::abs(f) + 1.0)) out.converged = true;
            break;
        }

        const double fprev = f;
        f = value_grad(xn, gn);
        ++out.evaluations;
        if (!std::isfinite(f)) break;

        std::vector<double> s(nd), yv(nd);
        double sy = 0.0, snorm = 0.0, ynorm = 0.0;
        for (std::size_t j = 0; j < nd; ++j) {
            s[j] = xn[j] - x[j];
            yv[j] = -(gn[j] - g[j]); // minimization-form y
            sy += s[j] * yv[j];
            snorm += s[j] * s[j];
            ynorm += yv[j] * yv[j];
        }
        if (sy > 1e-10 * std::sqrt(snorm) * std::sqrt(ynorm)) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(yv));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        x = xn;
        g = gn;
        ++it;
        if (max_norm(g) < gradient_tolerance ||
            std::abs(f - fprev) <= relative_f_tolerance * (std::abs(f) + 1.0))
            out.converged = true;
    }
    out.x = std::move(x);
    out.f = f;
    out.grad = std::move(g);
    out.iterations = it;
    return out;
}

} // namespace

bool canonicalize_group_order(const ModelSpec& model, Parameters& params) {
    const int G = model.groups();
    if (G < 2) return false;
    int anchor = -1;
    for (std::size_t k = 0; k < model.design.group_specific.size(); ++k)
        if (model.design.group_specific[k]) {
            anchor = static_cast<int>(k);
            break;
        }
    if (anchor < 0) return false;

    const int p0 = model.scheme.baseline_profile();
    std::vector<double> buf;
    std::vector<std::pair<double, int>> order(G);
    for (int g = 0; g < G; ++g) {
        pattern_probabilities(model.design, params.emission, model.scheme, g, p0, buf);
        order[g] = {marginal_register_probability(buf, anchor), g};
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    bool identity = true;
    for (int g = 0; g < G; ++g)
        if (order[g].second != g) identity = false;
    if (identity) return false;

    const auto pi_old = params.mixing_proportions();
    auto main_old = params.emission.main;
    std::vector<double> pi_new(G);
    for (int g = 0; g < G; ++g) {
        params.emission.main[g] = main_old[order[g].second];
        pi_new[g] = pi_old[order[g].second];
    }
    for (int g = 0; g + 1 < G; ++g)
        params.mixing_logits[g] = std::log(pi_new[g] / pi_new[G - 1]);
    return true;
}

FitResult fit_mle(const PreparedData& prep, std::span<const double> weights,
                  const ModelSpec& model, const Parameters& init, const FitOptions& options) {
    const ParameterSchema schema(model);
    const int G = model.groups();

    std::vector<double> x0 = schema.pack(init);
    for (double v : x0)
        if (!std::isfinite(v)) throw numeric_error("initial parameters contain non-finite values");

    auto value = [&](const std::vector<double>& x) {
        const Parameters p = schema.unpack(x);
        const ParamTables tables = build_tables(model, p, prep);
        return total_loglik(prep, tables, weights, options.workers);
    };
    auto value_grad = [&](const std::vector<double>& x, std::vector<double>& g) {
        const Parameters p = schema.unpack(x);
        const ParamTables tables = build_tables(model, p, prep);
        return total_loglik_gradient(model, p, schema, prep, tables, weights, options.workers, g);
    };

    // Mixture starts: break the group-symmetric saddle deterministically,
    // then add jittered starts and keep the best after a pilot run.
    std::vector<std::vector<double>> starts;
    if (G > 1 && !options.warm_start) {
        Parameters p0 = schema.unpack(x0);
        bool symmetric = true;
        for (std::size_t k = 0; k < model.design.group_specific.size(); ++k) {
            if (!model.design.group_specific[k]) continue;
            for (int g = 1; g < G; ++g)
                if (p0.emission.main[g][k] != p0.emission.main[0][k]) symmetric = false;
        }
        if (symmetric) {
            for (std::size_t k = 0; k < model.design.group_specific.size(); ++k) {
                if (!model.design.group_specific[k]) continue;
                for (int g = 0; g < G; ++g)
                    p0.emission.main[g][k] += 0.5 - (G > 1 ? static_cast<double>(g) / (G - 1) : 0.0);
            }
        }
        starts.push_back(schema.pack(p0));
        const int nstarts = options.multi_start > 0 ? options.multi_start : 3;
        for (int sdx = 1; sdx < nstarts; ++sdx) {
            std::mt19937_64 eng(derive_seed(options.seed, 0x57a7, sdx));
            std::normal_distribution<double> noise(0.0, options.jitter_sd);
            Parameters pj = schema.unpack(starts[0]);
            for (std::size_t k = 0; k < model.design.group_specific.size(); ++k) {
                if (!model.design.group_specific[k]) continue;
                for (int g = 0; g < G; ++g) pj.emission.main[g][k] += noise(eng);
            }
            for (auto& l : pj.mixing_logits) l += noise(eng);
            starts.push_back(schema.pack(pj));
        }
    } else {
        starts.push_back(x0);
    }

    int total_evals = 0;
    std::vector<double> xbest;
    if (starts.size() == 1) {
        xbest = starts[0];
    } else {
        double fbest = -std::numeric_limits<double>::infinity();
        for (const auto& xs : starts) {
            LbfgsOutcome pilot = lbfgs_maximize(value_grad, value, xs, options.pilot_iterations,
                                                options.gradient_tolerance,
                                                options.relative_f_tolerance,
                                                options.lbfgs_memory);
            total_evals += pilot.evaluations;
            if (pilot.f > fbest) {
                fbest = pilot.f;
                xbest = pilot.x;
            }
        }
    }

    LbfgsOutcome run = lbfgs_maximize(value_grad, value, xbest, options.max_iterations,
                                      options.gradient_tolerance, options.relative_f_tolerance,
                                      options.lbfgs_memory);
    total_evals += run.evaluations;

    Parameters fitted = schema.unpack(run.x);
    if (canonicalize_group_order(model, fitted)) {
        run.x = schema.pack(fitted);
        // The likelihood is invariant under the relabeling; refresh the
        // gradient so reported diagnostics match the reported estimate.
        run.f = value_grad(run.x, run.grad);
        ++total_evals;
    }

    FitResult result;
    result.estimate = run.x;
    result.parameter_names = schema.names();
    result.loglik = run.f;
    result.converged = run.converged;
    result.iterations = run.iterations;
    result.gradient_norm = max_norm(run.grad);
    result.evaluations = total_evals;
    result.mixing_proportions = fitted.mixing_proportions();

    if (options.compute_standard_errors) {
        auto grad_fn = [&](const std::vector<double>& x) {
            std::vector<double> g;
            const Parameters p = schema.unpack(x);
            const ParamTables tables = build_tables(model, p, prep);
            total_loglik_gradient(model, p, schema, prep, tables, weights, options.workers, g);
            return g;
        };
        result.standard_errors = hessian_standard_errors(grad_fn, run.x);
        result.mixing_proportion_ses.assign(result.mixing_proportions.size(),
                                            std::numeric_limits<double>::quiet_NaN());
        if (G == 2) {
            const int idx = schema.index_of("mixture.logit.g1");
            if (idx >= 0 && std::isfinite(result.standard_errors[idx])) {
                const double pi1 = result.mixing_proportions[0];
                const double se = pi1 * (1.0 - pi1) * result.standard_errors[idx];
                result.mixing_proportion_ses[0] = se;
                result.mixing_proportion_ses[1] = se;
            }
        }
    }
    return result;
}

std::vector<double> hessian_standard_errors(
    const std::function<std::vector<double>(const std::vector<double>&)>& grad,
    const std::vector<double>& x_hat, double h) {
    const int n = static_cast<int>(x_hat.size());
    Eigen::MatrixXd H(n, n);
    std::vector<double> xp = x_hat;
    for (int j = 0; j < n; ++j) {
        const double hj = h * std::max(1.0, std::abs(x_hat[j]));
        xp[j] = x_hat[j] + hj;
        const std::vector<double> gp = grad(xp);
        xp[j] = x_hat[j] - hj;
        const std::vector<double> gm = grad(xp);
        xp[j] = x_hat[j];
        for (int i = 0; i < n; ++i) H(i, j) = (gp[i] - gm[i]) / (2.0 * hj);
    }
    // Symmetrize and invert the negative Hessian (information matrix).
    Eigen::MatrixXd info = -0.5 * (H + H.transpose());
    std::vector<double> se(n, std::numeric_limits<double>::quiet_NaN());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) return se;
    Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(n, n));
    for (int j = 0; j < n; ++j) {
        const double v = cov(j, j);
        if (v > 0.0 && std::isfinite(v)) se[j] = std::sqrt(v);
    }
    return se;
}

} // namespace crhmm

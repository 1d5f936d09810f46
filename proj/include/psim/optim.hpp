#ifndef PSIM_OPTIM_HPP
#define PSIM_OPTIM_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "psim/errors.hpp"

namespace psim::optim {

struct NmResult {
    std::vector<double> x;
    double fval = 0.0;
    bool converged = false;
    int evals = 0;
};

// Bounded Nelder-Mead. Parameters are clamped to [lo, hi] before each
// objective evaluation, which is enough for the smooth least-squares
// objectives used here.
inline NmResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                            std::vector<double> x0, std::vector<double> step,
                            const std::vector<double>& lo, const std::vector<double>& hi,
                            double ftol = 1e-10, int max_iter = 600) {
    const std::size_t n = x0.size();
    auto clamp = [&](std::vector<double> x) {
        for (std::size_t i = 0; i < n; ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
        return x;
    };
    int evals = 0;
    auto eval = [&](const std::vector<double>& x) {
        ++evals;
        return f(clamp(x));
    };

    std::vector<std::vector<double>> simplex(n + 1, x0);
    std::vector<double> fv(n + 1);
    for (std::size_t i = 0; i < n; ++i) simplex[i + 1][i] += step[i];
    for (std::size_t i = 0; i <= n; ++i) fv[i] = eval(simplex[i]);

    auto order = [&]() {
        std::vector<std::size_t> idx(n + 1);
        for (std::size_t i = 0; i <= n; ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
        std::vector<std::vector<double>> s2;
        std::vector<double> f2;
        for (auto i : idx) {
            s2.push_back(simplex[i]);
            f2.push_back(fv[i]);
        }
        simplex = std::move(s2);
        fv = std::move(f2);
    };

    NmResult res;
    for (int iter = 0; iter < max_iter; ++iter) {
        order();
        if (std::abs(fv[n] - fv[0]) <= ftol * (std::abs(fv[0]) + ftol)) {
            res.converged = true;
            break;
        }
        std::vector<double> centroid(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) centroid[j] += simplex[i][j] / double(n);

        auto blend = [&](double coef) {
            std::vector<double> x(n);
            for (std::size_t j = 0; j < n; ++j) x[j] = centroid[j] + coef * (simplex[n][j] - centroid[j]);
            return x;
        };

        auto xr = blend(-1.0);
        double fr = eval(xr);
        if (fr < fv[0]) {
            auto xe = blend(-2.0);
            double fe = eval(xe);
            if (fe < fr) {
                simplex[n] = xe;
                fv[n] = fe;
            } else {
                simplex[n] = xr;
                fv[n] = fr;
            }
        } else if (fr < fv[n - 1]) {
            simplex[n] = xr;
            fv[n] = fr;
        } else {
            auto xc = blend(fr < fv[n] ? -0.5 : 0.5);
            double fc = eval(xc);
            if (fc < std::min(fr, fv[n])) {
                simplex[n] = xc;
                fv[n] = fc;
            } else { // shrink
                for (std::size_t i = 1; i <= n; ++i) {
                    for (std::size_t j = 0; j < n; ++j)
                        simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
                    fv[i] = eval(simplex[i]);
                }
            }
        }
    }
    order();
    res.x = clamp(simplex[0]);
    res.fval = fv[0];
    res.evals = evals;
    return res;
}

struct LineFit {
    double intercept = 0.0, slope = 0.0;
    double intercept_sigma = 0.0, slope_sigma = 0.0;
};

// Ordinary least squares y = a + b x with covariance-based uncertainties.
inline LineFit ols_line(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) throw NumericalError("ols_line: need at least two points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    double det = double(n) * sxx - sx * sx;
    if (std::abs(det) < 1e-300 || det <= 0.0)
        throw NumericalError("ols_line: rank-deficient input (all x identical)");
    LineFit fit;
    fit.slope = (double(n) * sxy - sx * sy) / det;
    fit.intercept = (sy * sxx - sx * sxy) / det;
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double r = y[i] - fit.intercept - fit.slope * x[i];
        rss += r * r;
    }
    double s2 = (n > 2) ? rss / double(n - 2) : 0.0;
    fit.intercept_sigma = std::sqrt(s2 * sxx / det);
    fit.slope_sigma = std::sqrt(s2 * double(n) / det);
    return fit;
}

} // namespace psim::optim

#endif

#ifndef PSIM_ODE_HPP
#define PSIM_ODE_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>

#include <Eigen/Dense>

#include "psim/errors.hpp"

namespace psim::ode {

template <int N>
using CVec = Eigen::Matrix<std::complex<double>, N, 1>;

// Dense-output interpolation state for one accepted Dormand-Prince step.
template <int N>
struct DenseSegment {
    double t0 = 0.0, h = 0.0;
    CVec<N> r1, r2, r3, r4, r5;

    CVec<N> eval(double t) const {
        double th = (t - t0) / h;
        double th1 = 1.0 - th;
        return r1 + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)));
    }
};

// Adaptive embedded Runge-Kutta (Dormand-Prince 5(4), FSAL) with the standard
// quartic dense-output interpolant. F has signature void(double t, const CVec<N>&, CVec<N>&).
template <int N, typename F>
class Dopri5 {
public:
    Dopri5(F f, double rel_tol, double abs_tol) : f_(std::move(f)), rtol_(rel_tol), atol_(abs_tol) {}

    void init(double t, const CVec<N>& y) {
        t_ = t;
        y_ = y;
        f_(t_, y_, k1_);
        h_ = initial_step();
    }

    double t() const { return t_; }
    const CVec<N>& y() const { return y_; }

    // Advance one accepted step, not beyond t_limit. Fills the dense segment
    // covering [t_before, t_after]. Returns the new time.
    double step(double t_limit, DenseSegment<N>& seg) {
        constexpr double SAFETY = 0.9, MIN_SCALE = 0.2, MAX_SCALE = 5.0;
        for (int attempt = 0; attempt < 1000; ++attempt) {
            // Snap onto the limit instead of leaving a sliver-sized final step.
            double h_rem = t_limit - t_;
            double h = h_;
            bool hits_limit = false;
            if (h >= 0.95 * h_rem) {
                h = h_rem;
                hits_limit = true;
            }
            // A snapped-to-limit sliver is legitimate; underflow means the
            // controller itself cannot advance.
            if (!hits_limit && h <= std::abs(t_) * 1e3 * std::numeric_limits<double>::epsilon() &&
                h <= 1e-14) {
                throw IntegrationError("step size underflow in adaptive integration", t_);
            }

            CVec<N> k2, k3, k4, k5, k6, k7, ytmp, y5;
            ytmp = y_ + h * (a21 * k1_);
            f_(t_ + c2 * h, ytmp, k2);
            ytmp = y_ + h * (a31 * k1_ + a32 * k2);
            f_(t_ + c3 * h, ytmp, k3);
            ytmp = y_ + h * (a41 * k1_ + a42 * k2 + a43 * k3);
            f_(t_ + c4 * h, ytmp, k4);
            ytmp = y_ + h * (a51 * k1_ + a52 * k2 + a53 * k3 + a54 * k4);
            f_(t_ + c5 * h, ytmp, k5);
            ytmp = y_ + h * (a61 * k1_ + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
            f_(t_ + h, ytmp, k6);
            y5 = y_ + h * (a71 * k1_ + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
            f_(t_ + h, y5, k7);

            CVec<N> err = h * (e1 * k1_ + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
            double norm = 0.0;
            for (int i = 0; i < N; ++i) {
                double sc = atol_ + rtol_ * std::max(std::abs(y_[i]), std::abs(y5[i]));
                double r = std::abs(err[i]) / sc;
                norm += r * r;
            }
            norm = std::sqrt(norm / N);

            if (norm <= 1.0) {
                seg.t0 = t_;
                seg.h = h;
                seg.r1 = y_;
                seg.r2 = y5 - y_;
                seg.r3 = h * k1_ - seg.r2;
                seg.r4 = seg.r2 - h * k7 - seg.r3;
                seg.r5 = h * (d1 * k1_ + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);

                t_ = hits_limit ? t_limit : t_ + h;
                y_ = y5;
                k1_ = k7; // FSAL
                double scale = (norm == 0.0)
                                   ? MAX_SCALE
                                   : std::clamp(SAFETY * std::pow(norm, -0.2), MIN_SCALE, MAX_SCALE);
                h_ = std::max(h_, h) * scale;
                return t_;
            }
            h_ = h * std::clamp(SAFETY * std::pow(norm, -0.2), MIN_SCALE, 1.0);
        }
        throw IntegrationError("too many rejected steps", t_);
    }

private:
    double initial_step() const {
        double d0 = y_.norm(), d1n = k1_.norm();
        double h0 = (d0 > 1e-10 && d1n > 1e-10) ? 0.01 * d0 / d1n : 1e-6;
        return std::max(h0, 1e-12);
    }

    F f_;
    double rtol_, atol_;
    double t_ = 0.0, h_ = 0.0;
    CVec<N> y_, k1_;

    // Dormand-Prince tableau.
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                            a75 = -2187.0 / 6784, a76 = 11.0 / 84;
    // y5 - y4 error weights.
    static constexpr double e1 = 35.0 / 384 - 5179.0 / 57600, e3 = 500.0 / 1113 - 7571.0 / 16695,
                            e4 = 125.0 / 192 - 393.0 / 640, e5 = -2187.0 / 6784 + 92097.0 / 339200,
                            e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;
    // Dense-output weights.
    static constexpr double d1 = -12715105075.0 / 11282082432.0,
                            d3 = 87487479700.0 / 32700410799.0,
                            d4 = -10690763975.0 / 1880347072.0,
                            d5 = 701980252875.0 / 199316789632.0,
                            d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
};

} // namespace psim::ode

#endif

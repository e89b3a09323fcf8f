#pragma once

// Projected gradient ascent with central-difference gradients and an
// adaptive backtracking step. Shared by the D* inner optimizer, the planner
// and the simulated corrector.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace seqcorr {

struct AscentOptions {
    int max_iterations = 300;
    double step_size = 0.05;
    double fd_step = 1e-4;
    double min_step = 1e-10;
    double tolerance = 1e-12;
    int max_stalls = 5;
    bool record_trace = false;
};

struct AscentResult {
    Eigen::VectorXd x;
    double value = 0.0;
    int iterations = 0;
    std::vector<double> trace;  // objective at every accepted iterate
};

/// Central-difference gradient: (f(x + h e_i) - f(x - h e_i)) / 2h.
template <class F>
Eigen::VectorXd numerical_gradient(F&& f, const Eigen::VectorXd& x, double h) {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double up = f(probe);
        probe[i] = x[i] - h;
        const double down = f(probe);
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// Projects each consecutive 2-vector block onto the ball of radius `bound`.
inline void project_blocks(Eigen::VectorXd& x, double bound) {
    for (Eigen::Index i = 0; i + 1 < x.size(); i += 2) {
        const double n = std::hypot(x[i], x[i + 1]);
        if (n > bound) {
            x[i] *= bound / n;
            x[i + 1] *= bound / n;
        }
    }
}

template <class F, class Project>
AscentResult projected_ascent(F&& f, Eigen::VectorXd x, Project&& project, const AscentOptions& opt) {
    project(x);
    AscentResult r;
    double fx = f(x);
    if (opt.record_trace) r.trace.push_back(fx);
    double step = opt.step_size;
    int stalls = 0;
    int it = 0;
    for (; it < opt.max_iterations; ++it) {
        const Eigen::VectorXd g = numerical_gradient(f, x, opt.fd_step);
        if (!g.allFinite() || g.squaredNorm() == 0.0) break;
        bool accepted = false;
        while (step >= opt.min_step) {
            Eigen::VectorXd candidate = x + step * g;
            project(candidate);
            const double fc = f(candidate);
            if (fc >= fx) {
                const double gain = fc - fx;
                const bool moved = candidate != x;
                x = std::move(candidate);
                fx = fc;
                if (opt.record_trace) r.trace.push_back(fx);
                accepted = moved;
                stalls = gain <= opt.tolerance ? stalls + 1 : 0;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if (!accepted || stalls >= opt.max_stalls) break;
    }
    r.x = std::move(x);
    r.value = fx;
    r.iterations = it;
    return r;
}

}  // namespace seqcorr

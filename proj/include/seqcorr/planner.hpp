#pragma once

// Waypoint trajectory optimization maximizing R(xi; theta). Waypoints up to
// the current clock are history and stay fixed; the terminal waypoint is free.

#include <algorithm>
#include <limits>
#include <optional>

#include <Eigen/Dense>

#include "seqcorr/ascent.hpp"
#include "seqcorr/evidence.hpp"
#include "seqcorr/rewards.hpp"
#include "seqcorr/scenario.hpp"
#include "seqcorr/trajectory.hpp"

namespace seqcorr {

struct PlannerOptions {
    int max_iterations = 150;
    double step_size = 0.5;
    bool plan_with_expected_theta = false;
};

struct PlanResult {
    Trajectory trajectory;
    double reward = 0.0;
    bool warning = false;  // optimizer stopped without a finite objective
};

namespace detail {

inline Trajectory straight_to_goal(const Trajectory& history, int clock, const Vec2& goal, const Scenario& s) {
    Eigen::MatrixXd w = history.matrix();
    const int T = s.horizon;
    Vec2 centroid = Vec2::Zero();
    for (int a = 0; a < s.num_agents; ++a) centroid += history.position(clock, a);
    centroid /= s.num_agents;
    for (int a = 0; a < s.num_agents; ++a) {
        const Vec2 from = history.position(clock, a);
        const Vec2 to = goal + (from - centroid);
        for (int t = clock + 1; t <= T; ++t) {
            const double frac = static_cast<double>(t - clock) / (T - clock);
            w.block<1, 2>(t, 2 * a) = ((1.0 - frac) * from + frac * to).transpose();
        }
    }
    return {std::move(w), s.dt};
}

}  // namespace detail

/// Trajectory in which every agent waits at its start.
inline Trajectory stationary_trajectory(const Scenario& s) {
    Eigen::MatrixXd w(s.waypoint_count(), 2 * s.num_agents);
    for (int t = 0; t < s.waypoint_count(); ++t)
        for (int a = 0; a < s.num_agents; ++a) w.block<1, 2>(t, 2 * a) = s.starts[static_cast<std::size_t>(a)].transpose();
    return {std::move(w), s.dt};
}

/// Plans from waypoint `clock` of `history` (waypoints 0..clock are kept).
inline PlanResult plan(const RewardParams& theta, const Scenario& s, const Trajectory& history, int clock,
                       const PlannerOptions& opt = {}) {
    check_consistent(history, s);
    if (history.waypoint_count() != s.waypoint_count()) throw Error(ErrorKind::Shape, "history length differs from horizon");
    if (clock < 0 || clock > s.horizon) throw Error(ErrorKind::Shape, "clock out of range");
    if (clock == s.horizon) return {history, reward(history, theta, s), false};

    Trajectory best_init = history;
    double best_reward = -std::numeric_limits<double>::infinity();
    for (const auto& g : s.goal_regions) {
        Trajectory cand = detail::straight_to_goal(history, clock, g.center, s);
        const double r = reward(cand, theta, s);
        if (r > best_reward) {
            best_reward = r;
            best_init = std::move(cand);
        }
    }
    if (s.goal_regions.empty()) {
        // hold position
        best_init = detail::straight_to_goal(history, clock, history.position(clock, 0), s);
        for (int t = clock + 1; t <= s.horizon; ++t)
            for (int a = 0; a < s.num_agents; ++a) best_init.set_position(t, a, history.position(clock, a));
    }

    const Eigen::Index first = clock + 1;
    const Eigen::Index rows = s.horizon - clock;
    const Eigen::Index cols = 2 * s.num_agents;
    Trajectory work = best_init;
    auto unpack = [&](const Eigen::VectorXd& x) {
        work.matrix().bottomRows(rows) = Eigen::Map<const Eigen::MatrixXd>(x.data(), rows, cols);
    };
    auto objective = [&](const Eigen::VectorXd& x) {
        unpack(x);
        return reward(work, theta, s);
    };
    auto project = [&](Eigen::VectorXd& x) {
        Eigen::Map<Eigen::MatrixXd> m(x.data(), rows, cols);
        for (Eigen::Index c = 0; c < cols; ++c) {
            const double lo = c % 2 == 0 ? s.workspace_min.x() : s.workspace_min.y();
            const double hi = c % 2 == 0 ? s.workspace_max.x() : s.workspace_max.y();
            m.col(c) = m.col(c).cwiseMax(lo).cwiseMin(hi);
        }
    };
    const Eigen::MatrixXd init = best_init.matrix().middleRows(first, rows);
    Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(init.data(), init.size());

    AscentOptions ao;
    ao.max_iterations = opt.max_iterations;
    ao.step_size = opt.step_size;
    ao.tolerance = 1e-10;
    auto res = projected_ascent(objective, std::move(x0), project, ao);
    unpack(res.x);
    const bool ok = std::isfinite(res.value);
    return {work, ok ? res.value : best_reward, !ok};
}

/// Initial plan from the scenario start under `theta`.
inline PlanResult plan_from_start(const RewardParams& theta, const Scenario& s, const PlannerOptions& opt = {}) {
    return plan(theta, s, stationary_trajectory(s), 0, opt);
}

/// Theta the robot plans with: belief argmax, or the belief-weighted mean.
inline RewardParams planning_theta(const Belief& belief, const Scenario& s, bool expected) {
    if (!expected) return s.candidate_thetas[static_cast<std::size_t>(belief.argmax())].weights;
    const Eigen::VectorXd p = belief.probabilities();
    RewardParams theta = RewardParams::Zero(static_cast<Eigen::Index>(s.num_features()));
    for (std::size_t i = 0; i < s.num_candidates(); ++i) theta += p[static_cast<Eigen::Index>(i)] * s.candidate_thetas[i].weights;
    return theta;
}

/// xi_R^0: the plan for the prior's most probable candidate.
inline Trajectory initial_plan(const Scenario& s, const PlannerOptions& opt = {}) {
    const Belief prior(prior_log_weights(s));
    return plan_from_start(planning_theta(prior, s, opt.plan_with_expected_theta), s, opt).trajectory;
}

}  // namespace seqcorr

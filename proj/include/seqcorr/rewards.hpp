#pragma once

// Linear trajectory reward R(xi; theta) = theta . Phi(xi) over the navigation
// features. Every feature is normalized to [0, 1], higher is better.

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "seqcorr/error.hpp"
#include "seqcorr/scenario.hpp"
#include "seqcorr/trajectory.hpp"

namespace seqcorr {

using FeatureVector = Eigen::VectorXd;
using RewardParams = Eigen::VectorXd;

namespace feature {

/// Terminal-weighted approach to a goal: sum_t w_t (1 - d_t / scale), with
/// w_t proportional to discount^(T - t), averaged over agents. A trajectory
/// parked on the goal center scores 1.
inline double goal_proximity(const Trajectory& traj, const GoalRegion& goal, double scale, double discount) {
    const int T = traj.horizon();
    double total = 0.0;
    for (int a = 0; a < traj.num_agents(); ++a) {
        double weighted = 0.0, weights = 0.0, w = 1.0;
        for (int t = T; t >= 0; --t, w *= discount) {
            weighted += w * std::clamp(1.0 - (traj.position(t, a) - goal.center).norm() / scale, 0.0, 1.0);
            weights += w;
        }
        total += weighted / weights;
    }
    return total / traj.num_agents();
}

/// s^2 / (s^2 + v), v the per-pair variance over time of inter-agent
/// distance, averaged over pairs. Single agent: 1.
inline double formation(const Trajectory& traj, double scale) {
    const int agents = traj.num_agents();
    if (agents < 2) return 1.0;
    const int n = traj.waypoint_count();
    double variance = 0.0;
    int pairs = 0;
    for (int a = 0; a < agents; ++a) {
        for (int b = a + 1; b < agents; ++b) {
            double sum = 0.0, sum_sq = 0.0;
            for (int t = 0; t < n; ++t) {
                const double d = (traj.position(t, a) - traj.position(t, b)).norm();
                sum += d;
                sum_sq += d * d;
            }
            const double mean = sum / n;
            variance += std::max(0.0, sum_sq / n - mean * mean);
            ++pairs;
        }
    }
    variance /= pairs;
    const double s2 = scale * scale;
    return s2 / (s2 + variance);
}

/// Squared relative penetration depth into the deepest zone at one point.
inline double penetration(const Vec2& p, const std::vector<DangerZone>& zones) {
    double worst = 0.0;
    for (const auto& z : zones) {
        const double depth = std::max(0.0, z.radius - (p - z.center).norm()) / z.radius;
        worst = std::max(worst, depth * depth);
    }
    return worst;
}

/// s / (s + P), P the time-averaged (trapezoidal) squared penetration,
/// averaged over agents. No contact: 1.
inline double danger(const Trajectory& traj, const std::vector<DangerZone>& zones, double scale) {
    if (zones.empty()) return 1.0;
    const int T = traj.horizon();
    double total = 0.0;
    for (int a = 0; a < traj.num_agents(); ++a) {
        double integral = 0.0;
        for (int t = 0; t <= T; ++t) {
            const double w = (t == 0 || t == T) ? 0.5 : 1.0;
            integral += w * penetration(traj.position(t, a), zones);
        }
        total += integral / T;
    }
    return scale / (scale + total / traj.num_agents());
}

/// s / (s + L), L the mean per-agent path length.
inline double efficiency(const Trajectory& traj, double scale) {
    double length = 0.0;
    for (int a = 0; a < traj.num_agents(); ++a)
        for (int t = 1; t < traj.waypoint_count(); ++t) length += (traj.position(t, a) - traj.position(t - 1, a)).norm();
    length /= traj.num_agents();
    return scale / (scale + length);
}

}  // namespace feature

inline void check_consistent(const Trajectory& traj, const Scenario& scenario) {
    if (traj.num_agents() != scenario.num_agents)
        throw Error(ErrorKind::Shape, "trajectory has " + std::to_string(traj.num_agents()) + " agents, scenario expects " +
                                          std::to_string(scenario.num_agents));
}

inline FeatureVector features(const Trajectory& traj, const Scenario& scenario) {
    check_consistent(traj, scenario);
    FeatureVector phi(static_cast<Eigen::Index>(scenario.num_features()));
    for (std::size_t i = 0; i < scenario.feature_set.size(); ++i) {
        const auto& id = scenario.feature_set[i];
        double v = 0.0;
        switch (id.kind) {
            case FeatureKind::Goal:
                v = feature::goal_proximity(traj, scenario.goal_regions[static_cast<std::size_t>(id.goal_index)], scenario.goal_scale(),
                                           scenario.scales.goal_discount);
                break;
            case FeatureKind::Formation: v = feature::formation(traj, scenario.scales.formation); break;
            case FeatureKind::Danger: v = feature::danger(traj, scenario.danger_zones, scenario.scales.danger); break;
            case FeatureKind::Efficiency: v = feature::efficiency(traj, scenario.scales.efficiency); break;
        }
        phi[static_cast<Eigen::Index>(i)] = v;
    }
    return phi;
}

inline double reward(const FeatureVector& phi, const RewardParams& theta) {
    if (phi.size() != theta.size()) throw Error(ErrorKind::Shape, "theta and feature dimensions differ");
    return theta.dot(phi);
}

inline double reward(const Trajectory& traj, const RewardParams& theta, const Scenario& scenario) {
    if (theta.size() != static_cast<Eigen::Index>(scenario.num_features()))
        throw Error(ErrorKind::Shape, "theta dimension differs from the scenario feature set");
    return reward(features(traj, scenario), theta);
}

}  // namespace seqcorr

#pragma once

// Joint multi-agent trajectories and the correction-driven deformation
// operator: xi' = xi + mu * A^{-1} * a, with A the squared finite-difference
// operator over interior waypoints (endpoints clamped).

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "seqcorr/error.hpp"

namespace seqcorr {

using Vec2 = Eigen::Vector2d;

/// Ordered waypoints of the joint state. Row t holds waypoint t; columns are
/// (x0, y0, x1, y1, ...) for each agent.
class Trajectory {
public:
    Trajectory() = default;

    Trajectory(Eigen::MatrixXd waypoints, double dt) : waypoints_(std::move(waypoints)), dt_(dt) {
        validate();
    }

    /// Straight-line trajectory between per-agent start and end points.
    static Trajectory straight(std::span<const Vec2> from, std::span<const Vec2> to, int steps, double dt) {
        if (from.size() != to.size() || from.empty())
            throw Error(ErrorKind::Shape, "straight: start/end agent counts differ");
        if (steps < 1) throw Error(ErrorKind::InvalidScenario, "straight: need at least one step");
        Eigen::MatrixXd w(steps + 1, 2 * static_cast<Eigen::Index>(from.size()));
        for (int t = 0; t <= steps; ++t) {
            const double s = static_cast<double>(t) / steps;
            for (std::size_t a = 0; a < from.size(); ++a)
                w.block<1, 2>(t, 2 * static_cast<Eigen::Index>(a)) = ((1.0 - s) * from[a] + s * to[a]).transpose();
        }
        return {std::move(w), dt};
    }

    [[nodiscard]] int waypoint_count() const noexcept { return static_cast<int>(waypoints_.rows()); }
    /// Horizon T (number of steps); waypoint_count() == T + 1.
    [[nodiscard]] int horizon() const noexcept { return waypoint_count() - 1; }
    [[nodiscard]] int dimension() const noexcept { return static_cast<int>(waypoints_.cols()); }
    [[nodiscard]] int num_agents() const noexcept { return dimension() / 2; }
    [[nodiscard]] double dt() const noexcept { return dt_; }

    [[nodiscard]] const Eigen::MatrixXd& matrix() const noexcept { return waypoints_; }
    [[nodiscard]] Eigen::MatrixXd& matrix() noexcept { return waypoints_; }

    [[nodiscard]] Vec2 position(int t, int agent) const {
        return waypoints_.block<1, 2>(t, 2 * agent).transpose();
    }
    void set_position(int t, int agent, const Vec2& p) { waypoints_.block<1, 2>(t, 2 * agent) = p.transpose(); }

    [[nodiscard]] bool same_shape(const Trajectory& other) const noexcept {
        return waypoints_.rows() == other.waypoints_.rows() && waypoints_.cols() == other.waypoints_.cols();
    }

    friend bool operator==(const Trajectory& a, const Trajectory& b) {
        return a.dt_ == b.dt_ && a.same_shape(b) && a.waypoints_ == b.waypoints_;
    }

private:
    void validate() const {
        if (waypoints_.rows() < 2) throw Error(ErrorKind::Shape, "trajectory needs at least two waypoints");
        if (waypoints_.cols() < 2 || waypoints_.cols() % 2 != 0)
            throw Error(ErrorKind::Shape, "waypoint dimension must be 2 x num_agents");
        if (!waypoints_.allFinite()) throw Error(ErrorKind::Shape, "trajectory has non-finite coordinates");
        if (!(dt_ > 0.0) || !std::isfinite(dt_)) throw Error(ErrorKind::Shape, "dt must be positive");
    }

    Eigen::MatrixXd waypoints_;
    double dt_ = 1.0;
};

/// Sum of squared coordinate differences over every waypoint.
inline double squared_distance(const Trajectory& a, const Trajectory& b) {
    if (!a.same_shape(b)) throw Error(ErrorKind::Shape, "trajectory shapes differ");
    return (a.matrix() - b.matrix()).squaredNorm();
}

/// A single human push: one agent, one interior timestep.
struct Correction {
    int timestep = 1;
    int agent = 0;
    Vec2 force = Vec2::Zero();

    friend bool operator==(const Correction& a, const Correction& b) {
        return a.timestep == b.timestep && a.agent == b.agent && a.force == b.force;
    }
};

using CorrectionSequence = std::vector<Correction>;

/// mu * A^{-1} restricted to interior waypoints. profile(t) is the column for
/// an impulse at waypoint t, padded with zeros at both endpoints.
class DeformationKernel {
public:
    DeformationKernel(int waypoint_count, double mu, int order) : waypoint_count_(waypoint_count), mu_(mu), order_(order) {
        if (waypoint_count < 3) throw Error(ErrorKind::InvalidScenario, "deformation needs at least 3 waypoints");
        if (!(mu > 0.0) || !std::isfinite(mu)) throw Error(ErrorKind::InvalidHyperparameter, "mu must be positive");
        if (order != 1 && order != 2) throw Error(ErrorKind::InvalidHyperparameter, "smoothness order must be 1 or 2");

        const int n = waypoint_count;
        const int interior = n - 2;
        const int rows = n - order;
        // Finite-difference stencil over all waypoints, then drop the clamped
        // endpoint columns.
        Eigen::MatrixXd diff = Eigen::MatrixXd::Zero(rows, n);
        for (int r = 0; r < rows; ++r) {
            if (order == 1) {
                diff(r, r) = -1.0;
                diff(r, r + 1) = 1.0;
            } else {
                diff(r, r) = 1.0;
                diff(r, r + 1) = -2.0;
                diff(r, r + 2) = 1.0;
            }
        }
        const Eigen::MatrixXd inner = diff.middleCols(1, interior);
        const Eigen::MatrixXd a = inner.transpose() * inner;
        const Eigen::MatrixXd a_inv = a.ldlt().solve(Eigen::MatrixXd::Identity(interior, interior));

        profiles_ = Eigen::MatrixXd::Zero(n, n);
        profiles_.block(1, 1, interior, interior) = mu * a_inv;
    }

    [[nodiscard]] int waypoint_count() const noexcept { return waypoint_count_; }
    [[nodiscard]] double mu() const noexcept { return mu_; }
    [[nodiscard]] int order() const noexcept { return order_; }

    /// Displacement weights over all waypoints for a unit push at `timestep`.
    [[nodiscard]] Eigen::VectorXd profile(int timestep) const {
        if (timestep < 0 || timestep >= waypoint_count_) throw Error(ErrorKind::Shape, "profile timestep out of range");
        return profiles_.col(timestep);
    }

    [[nodiscard]] double weight(int waypoint, int timestep) const { return profiles_(waypoint, timestep); }

private:
    int waypoint_count_;
    double mu_;
    int order_;
    Eigen::MatrixXd profiles_;
};

inline DeformationKernel make_kernel(int waypoint_count, double mu, int order) {
    return {waypoint_count, mu, order};
}

inline void check_correction(const Trajectory& traj, const Correction& c) {
    if (c.timestep < 1 || c.timestep > traj.horizon() - 1)
        throw Error(ErrorKind::Shape, "correction timestep " + std::to_string(c.timestep) + " is not interior");
    if (c.agent < 0 || c.agent >= traj.num_agents())
        throw Error(ErrorKind::Shape, "correction agent " + std::to_string(c.agent) + " out of range");
    if (!c.force.allFinite()) throw Error(ErrorKind::Shape, "correction force is not finite");
}

/// Adds the kernel profile for `c` to the corrected agent's coordinates only.
inline Trajectory deform(const Trajectory& traj, const Correction& c, const DeformationKernel& kernel) {
    if (kernel.waypoint_count() != traj.waypoint_count())
        throw Error(ErrorKind::Shape, "kernel horizon does not match trajectory length");
    check_correction(traj, c);
    Trajectory out = traj;
    if (c.force.x() == 0.0 && c.force.y() == 0.0) return out;
    auto& w = out.matrix();
    for (int t = 1; t < traj.horizon(); ++t) {
        const double k = kernel.weight(t, c.timestep);
        w(t, 2 * c.agent) += k * c.force.x();
        w(t, 2 * c.agent + 1) += k * c.force.y();
    }
    return out;
}

/// Chains deformations: the i-th output is deform(previous output, c_i).
inline std::vector<Trajectory> propagate_sequence(const Trajectory& initial, std::span<const Correction> corrections,
                                                  const DeformationKernel& kernel) {
    std::vector<Trajectory> out;
    out.reserve(corrections.size());
    const Trajectory* prev = &initial;
    for (const auto& c : corrections) {
        out.push_back(deform(*prev, c, kernel));
        prev = &out.back();
    }
    return out;
}

// ---- JSON ------------------------------------------------------------------

inline nlohmann::json vec2_json(const Vec2& v) { return nlohmann::json::array({v.x(), v.y()}); }

inline Vec2 vec2_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) throw Error(ErrorKind::BadRequest, "expected [x, y]");
    return {j.at(0).get<double>(), j.at(1).get<double>()};
}

inline nlohmann::json to_json(const Trajectory& traj) {
    nlohmann::json steps = nlohmann::json::array();
    for (int t = 0; t < traj.waypoint_count(); ++t) {
        nlohmann::json agents = nlohmann::json::array();
        for (int a = 0; a < traj.num_agents(); ++a) agents.push_back(vec2_json(traj.position(t, a)));
        steps.push_back(std::move(agents));
    }
    return {{"dt", traj.dt()}, {"waypoints", std::move(steps)}};
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
    const auto& steps = j.at("waypoints");
    if (!steps.is_array() || steps.empty()) throw Error(ErrorKind::Shape, "waypoints must be a non-empty array");
    const auto agents = static_cast<Eigen::Index>(steps.at(0).size());
    Eigen::MatrixXd w(static_cast<Eigen::Index>(steps.size()), 2 * agents);
    for (std::size_t t = 0; t < steps.size(); ++t) {
        if (static_cast<Eigen::Index>(steps[t].size()) != agents) throw Error(ErrorKind::Shape, "ragged waypoints");
        for (Eigen::Index a = 0; a < agents; ++a)
            w.block<1, 2>(static_cast<Eigen::Index>(t), 2 * a) = vec2_from_json(steps[t][static_cast<std::size_t>(a)]).transpose();
    }
    return {std::move(w), j.at("dt").get<double>()};
}

inline nlohmann::json to_json(const Correction& c) {
    return {{"timestep", c.timestep}, {"agent", c.agent}, {"force", vec2_json(c.force)}};
}

inline Correction correction_from_json(const nlohmann::json& j) {
    return {j.at("timestep").get<int>(), j.at("agent").get<int>(), vec2_from_json(j.at("force"))};
}

}  // namespace seqcorr

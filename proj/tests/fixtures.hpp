#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "seqcorr/scenario.hpp"
#include "seqcorr/trajectory.hpp"

namespace seqcorr::fixtures {

inline std::string scenario_path(const std::string& name) { return std::string(SEQCORR_SCENARIO_DIR) + "/" + name + ".json"; }

inline Scenario load(const std::string& name) { return load_scenario(scenario_path(name)); }

/// Waypoints drawn uniformly inside [lo, hi]^2.
inline Trajectory random_trajectory(std::mt19937_64& rng, int waypoints, int agents, double lo = 0.0, double hi = 10.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Eigen::MatrixXd w(waypoints, 2 * agents);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    return {std::move(w), 0.5};
}

inline Vec2 random_force(std::mt19937_64& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    return {u(rng), u(rng)};
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() /
               ("seqcorr_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace seqcorr::fixtures

#pragma once

// Exhaustive D search over interior timesteps, agents and a square force grid
// clipped to the force ball. Only feasible on tiny instances.

#include <cmath>
#include <limits>
#include <vector>

#include "seqcorr/dstar.hpp"
#include "seqcorr/evidence.hpp"
#include "seqcorr/rewards.hpp"
#include "seqcorr/scenario.hpp"
#include "seqcorr/trajectory.hpp"

namespace seqcorr {

/// Points of the (2n+1)^2 grid over [-bound, bound]^2 that lie in the ball.
inline std::vector<Vec2> force_grid(double bound, int n) {
    std::vector<Vec2> out;
    const double step = bound / n;
    for (int i = -n; i <= n; ++i)
        for (int j = -n; j <= n; ++j)
            if (i * i + j * j <= n * n) out.emplace_back(i * step, j * step);
    return out;
}

struct GridSearchResult {
    double max = -std::numeric_limits<double>::infinity();
    double min = std::numeric_limits<double>::infinity();
    CorrectionSequence argmax;
    long long sequences = 0;

    [[nodiscard]] double range() const { return max - min; }
};

namespace detail {

inline void grid_search_rec(const Trajectory& current, int first_time, int remaining, const RewardParams& theta,
                            const EvidenceConfig& cfg, const Scenario& s, const DeformationKernel& kernel,
                            const std::vector<Vec2>& grid, std::vector<double>& rewards, CorrectionSequence& seq,
                            double effort, GridSearchResult& out) {
    for (int t = first_time; t <= s.horizon - remaining; ++t) {
        for (int a = 0; a < s.num_agents; ++a) {
            for (const Vec2& f : grid) {
                const Correction c{t, a, f};
                const Trajectory next = deform(current, c, kernel);
                rewards.push_back(reward(next, theta, s));
                seq.push_back(c);
                const double e = effort + f.squaredNorm();
                if (remaining == 1) {
                    const double d = accumulated_evidence_from_rewards(rewards, e, cfg);
                    ++out.sequences;
                    if (d > out.max) {
                        out.max = d;
                        out.argmax = seq;
                    }
                    out.min = std::min(out.min, d);
                } else {
                    grid_search_rec(next, t + 1, remaining - 1, theta, cfg, s, kernel, grid, rewards, seq, e, out);
                }
                rewards.pop_back();
                seq.pop_back();
            }
        }
    }
}

}  // namespace detail

/// Max and min of D over every K-correction sequence with strictly increasing
/// interior times and grid forces.
inline GridSearchResult exhaustive_grid_dstar(const Trajectory& initial, const RewardParams& theta, int k,
                                              const EvidenceConfig& cfg, const Scenario& s, int grid_half = 10) {
    if (k < 1) throw Error(ErrorKind::EmptySequence, "K must be >= 1");
    if (k > s.horizon - 1) throw Error(ErrorKind::InfeasibleK, "K exceeds the interior timesteps");
    const auto grid = force_grid(s.hyper.force_bound, grid_half);
    GridSearchResult out;
    std::vector<double> rewards;
    CorrectionSequence seq;
    detail::grid_search_rec(initial, 1, k, theta, cfg, s, s.kernel(), grid, rewards, seq, 0.0, out);
    return out;
}

}  // namespace seqcorr

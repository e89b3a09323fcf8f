#pragma once

// Accumulated evidence over a correction sequence, the sequence likelihood
// normalized by the maximum achievable evidence, the per-correction and
// final-trajectory baselines, and log-space Bayesian updates over a finite
// candidate set.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "seqcorr/error.hpp"
#include "seqcorr/rewards.hpp"
#include "seqcorr/scenario.hpp"
#include "seqcorr/trajectory.hpp"

namespace seqcorr {

struct EvidenceConfig {
    double alpha = 0.9;
    double gamma = 0.1;
    double lambda = 1.0;
    bool include_final_reward = false;

    static EvidenceConfig from(const Hyperparameters& h) {
        return {h.alpha, h.gamma, h.lambda, h.include_final_reward};
    }

    void validate() const {
        if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorKind::InvalidHyperparameter, "alpha must be in (0, 1]");
        if (!(gamma >= 0.0)) throw Error(ErrorKind::InvalidHyperparameter, "gamma must be >= 0");
        if (!(lambda >= 0.0)) throw Error(ErrorKind::InvalidHyperparameter, "lambda must be >= 0");
    }
};

/// Total correction effort: sum of squared force norms.
inline double correction_effort(std::span<const Correction> corrections) {
    double e = 0.0;
    for (const auto& c : corrections) e += c.force.squaredNorm();
    return e;
}

/// D from precomputed per-trajectory rewards r_1..r_K and total effort.
inline double accumulated_evidence_from_rewards(std::span<const double> rewards, double effort, const EvidenceConfig& cfg) {
    if (rewards.empty()) throw Error(ErrorKind::EmptySequence, "accumulated evidence needs at least one correction");
    const auto k = rewards.size();
    double decayed = 0.0;
    double weight = 1.0;
    for (std::size_t i = k; i-- > 0;) {
        decayed += weight * rewards[i];
        weight *= cfg.alpha;
    }
    double d = cfg.lambda * decayed - cfg.gamma * effort;
    if (cfg.include_final_reward) d += rewards.back();
    return d;
}

inline double accumulated_evidence(std::span<const Trajectory> trajs, std::span<const Correction> corrections,
                                   const RewardParams& theta, const EvidenceConfig& cfg, const Scenario& scenario) {
    if (trajs.empty() || corrections.empty())
        throw Error(ErrorKind::EmptySequence, "accumulated evidence needs at least one correction");
    if (trajs.size() != corrections.size())
        throw Error(ErrorKind::Shape, "trajectory and correction counts differ");
    std::vector<double> rewards;
    rewards.reserve(trajs.size());
    for (const auto& t : trajs) rewards.push_back(reward(t, theta, scenario));
    return accumulated_evidence_from_rewards(rewards, correction_effort(corrections), cfg);
}

/// Pre-cancellation energy: D (with the final-reward term) minus the reward of
/// an intended trajectory. Differs from D by a theta-dependent constant only.
inline double energy_E(std::span<const Trajectory> trajs, std::span<const Correction> corrections, const Trajectory& intended,
                       const RewardParams& theta, EvidenceConfig cfg, const Scenario& scenario) {
    cfg.include_final_reward = true;
    return accumulated_evidence(trajs, corrections, theta, cfg, scenario) - reward(intended, theta, scenario);
}

/// log of exp(D_observed) / exp(D*_K): zero when the observation attains the
/// stored maximum.
inline double log_likelihood_sequence(std::span<const Correction> corrections, const Trajectory& initial,
                                      const RewardParams& theta, double dstar, const EvidenceConfig& cfg,
                                      const Scenario& scenario) {
    if (!std::isfinite(dstar)) throw Error(ErrorKind::LibraryMiss, "no finite D* value for this candidate");
    const auto trajs = propagate_sequence(initial, corrections, scenario.kernel());
    return accumulated_evidence(trajs, corrections, theta, cfg, scenario) - dstar;
}

/// R(deformed) - gamma * ||deformed - previous||^2, unnormalized.
inline double log_likelihood_independent(const Trajectory& deformed, const Trajectory& previous, const RewardParams& theta,
                                         double gamma, const Scenario& scenario) {
    return reward(deformed, theta, scenario) - gamma * squared_distance(deformed, previous);
}

inline double log_likelihood_final(const Trajectory& final_traj, const Trajectory& initial, const RewardParams& theta,
                                   double gamma, const Scenario& scenario) {
    return log_likelihood_independent(final_traj, initial, theta, gamma, scenario);
}

/// One correction's normalized log-likelihood: the raw term minus its Laplace
/// normalizer at the uncorrected plan, i.e. R(deformed) - R(previous) -
/// gamma * ||deformed - previous||^2. Zero for a zero push.
inline double log_likelihood_independent_step(const Trajectory& deformed, const Trajectory& previous, const RewardParams& theta,
                                              double gamma, const Scenario& scenario) {
    return log_likelihood_independent(deformed, previous, theta, gamma, scenario) - reward(previous, theta, scenario);
}

/// Independent-model log-likelihood of a whole episode: the sum of the
/// per-correction terms, each conditioned on the previous deformed plan.
inline double log_likelihood_independent_episode(const Trajectory& initial, std::span<const Trajectory> chain,
                                                 const RewardParams& theta, double gamma, const Scenario& scenario) {
    double total = 0.0;
    const Trajectory* prev = &initial;
    for (const auto& t : chain) {
        total += log_likelihood_independent_step(t, *prev, theta, gamma, scenario);
        prev = &t;
    }
    return total;
}

inline constexpr double kLogFloor = -700.0;

/// Normalized distribution over candidates, stored as log-probabilities.
class Belief {
public:
    Belief() = default;
    explicit Belief(Eigen::VectorXd log_weights) : log_weights_(std::move(log_weights)) {}

    static Belief uniform(Eigen::Index n) { return Belief(Eigen::VectorXd::Constant(n, -std::log(static_cast<double>(n)))); }

    [[nodiscard]] const Eigen::VectorXd& log_weights() const noexcept { return log_weights_; }
    [[nodiscard]] Eigen::Index size() const noexcept { return log_weights_.size(); }

    [[nodiscard]] Eigen::VectorXd probabilities() const { return log_weights_.array().exp().matrix(); }

    /// Most probable candidate; ties go to the lowest index.
    [[nodiscard]] int argmax() const {
        int best = 0;
        for (Eigen::Index i = 1; i < log_weights_.size(); ++i)
            if (log_weights_[i] > log_weights_[best]) best = static_cast<int>(i);
        return best;
    }

    friend bool operator==(const Belief& a, const Belief& b) {
        return a.log_weights_.size() == b.log_weights_.size() && a.log_weights_ == b.log_weights_;
    }

private:
    Eigen::VectorXd log_weights_;
};

/// log-normalize(prior + loglik) with max-subtraction; entries below the
/// floor relative to the maximum are clamped so no candidate becomes
/// unrecoverable.
inline Belief posterior_update(const Belief& prior, const Eigen::VectorXd& log_likelihoods) {
    if (prior.size() != log_likelihoods.size()) throw Error(ErrorKind::Shape, "belief and likelihood lengths differ");
    Eigen::VectorXd v = prior.log_weights() + log_likelihoods;
    double max = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::isnan(v[i])) throw Error(ErrorKind::DegenerateBelief, "NaN log-likelihood");
        max = std::max(max, v[i]);
    }
    if (!std::isfinite(max)) throw Error(ErrorKind::DegenerateBelief, "every candidate has zero probability");
    v.array() -= max;
    v = v.cwiseMax(kLogFloor);
    const double log_z = std::log(v.array().exp().sum());
    v.array() -= log_z;
    return Belief(std::move(v));
}

inline nlohmann::json to_json(const Belief& b) {
    nlohmann::json arr = nlohmann::json::array();
    const Eigen::VectorXd p = b.probabilities();
    for (Eigen::Index i = 0; i < p.size(); ++i) arr.push_back({{"theta_index", i}, {"probability", p[i]}});
    return arr;
}

}  // namespace seqcorr

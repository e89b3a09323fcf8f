#pragma once

// Maximum accumulated evidence D*_K(theta) by Monte-Carlo mixed-integer
// search: sample discrete (time, agent) assignments without replacement, run
// a continuous projected-gradient ascent over the forces for each, keep the
// best. Results are stored in an offline library keyed by
// "scenario_id/theta_index/K".

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <cstdint>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "seqcorr/ascent.hpp"
#include "seqcorr/error.hpp"
#include "seqcorr/evidence.hpp"
#include "seqcorr/planner.hpp"
#include "seqcorr/scenario.hpp"
#include "seqcorr/trajectory.hpp"

namespace seqcorr {

struct OptimizerConfig {
    int t_max = 200;
    int inner_iterations = 300;
    double step_size = 0.05;
    double force_bound = 1.0;
    double fd_step = 1e-4;
    std::uint64_t seed = 0;

    void validate() const {
        if (t_max < 1) throw Error(ErrorKind::InvalidHyperparameter, "t_max must be >= 1");
        if (!(force_bound > 0.0)) throw Error(ErrorKind::InvalidHyperparameter, "force_bound must be positive");
        if (inner_iterations < 0) throw Error(ErrorKind::InvalidHyperparameter, "inner_iterations must be >= 0");
    }
};

inline nlohmann::json to_json(const OptimizerConfig& c) {
    return {{"t_max", c.t_max}, {"inner_iterations", c.inner_iterations}, {"step_size", c.step_size},
            {"force_bound", c.force_bound}, {"fd_step", c.fd_step}, {"seed", c.seed}};
}

inline nlohmann::json to_json(const EvidenceConfig& c) {
    return {{"alpha", c.alpha}, {"gamma", c.gamma}, {"lambda", c.lambda}, {"include_final_reward", c.include_final_reward}};
}

/// A discrete choice of when and on which agent each correction happens.
struct Assignment {
    std::vector<int> times;
    std::vector<int> agents;

    friend auto operator<=>(const Assignment&, const Assignment&) = default;
};

inline CorrectionSequence make_corrections(const Assignment& a, const Eigen::VectorXd& forces) {
    CorrectionSequence out(a.times.size());
    for (std::size_t i = 0; i < a.times.size(); ++i) {
        out[i].timestep = a.times[i];
        out[i].agent = a.agents[i];
        out[i].force = forces.segment<2>(2 * static_cast<Eigen::Index>(i));
    }
    return out;
}

/// D as a function of the stacked force vector for a fixed assignment.
class EvidenceObjective {
public:
    EvidenceObjective(const Assignment& assignment, const Trajectory& initial, const RewardParams& theta,
                      const EvidenceConfig& cfg, const Scenario& scenario)
        : assignment_(assignment), initial_(initial), theta_(theta), cfg_(cfg), scenario_(scenario), kernel_(scenario.kernel()) {}

    double operator()(const Eigen::VectorXd& forces) const {
        const auto corrections = make_corrections(assignment_, forces);
        const auto trajs = propagate_sequence(initial_, corrections, kernel_);
        return accumulated_evidence(trajs, corrections, theta_, cfg_, scenario_);
    }

private:
    const Assignment& assignment_;
    const Trajectory& initial_;
    const RewardParams& theta_;
    const EvidenceConfig& cfg_;
    const Scenario& scenario_;
    DeformationKernel kernel_;
};

struct InnerResult {
    double dstar = 0.0;
    Eigen::VectorXd forces;
    std::vector<double> trace;
};

/// Locally maximal D over forces for a fixed assignment, starting from zero.
inline InnerResult inner_optimize(const Assignment& assignment, const Trajectory& initial, const RewardParams& theta,
                                  const OptimizerConfig& opt, const EvidenceConfig& cfg, const Scenario& scenario,
                                  bool record_trace = false) {
    if (assignment.times.size() != assignment.agents.size() || assignment.times.empty())
        throw Error(ErrorKind::Shape, "assignment needs matching, non-empty times and agents");
    for (std::size_t i = 1; i < assignment.times.size(); ++i)
        if (assignment.times[i] <= assignment.times[i - 1]) throw Error(ErrorKind::Shape, "assignment times must increase");
    const EvidenceObjective objective(assignment, initial, theta, cfg, scenario);
    AscentOptions ao;
    ao.max_iterations = opt.inner_iterations;
    ao.step_size = opt.step_size;
    ao.fd_step = opt.fd_step;
    ao.record_trace = record_trace;
    auto project = [&](Eigen::VectorXd& x) { project_blocks(x, opt.force_bound); };
    auto res = projected_ascent(objective, Eigen::VectorXd::Zero(2 * static_cast<Eigen::Index>(assignment.times.size())),
                                project, ao);
    // Recompute at the returned forces so the value matches exactly.
    return {objective(res.x), std::move(res.x), std::move(res.trace)};
}

/// Relative disagreement between the step-h and step-h/2 central-difference
/// gradients of D at `forces`.
inline double gradient_self_check(const Assignment& assignment, const Trajectory& initial, const RewardParams& theta,
                                  const Eigen::VectorXd& forces, const OptimizerConfig& opt, const EvidenceConfig& cfg,
                                  const Scenario& scenario) {
    const EvidenceObjective objective(assignment, initial, theta, cfg, scenario);
    const Eigen::VectorXd g1 = numerical_gradient(objective, forces, opt.fd_step);
    const Eigen::VectorXd g2 = numerical_gradient(objective, forces, opt.fd_step / 2.0);
    const double scale = std::max({g1.norm(), g2.norm(), 1e-8});
    return (g1 - g2).norm() / scale;
}

struct DStarResult {
    double dstar = -std::numeric_limits<double>::infinity();
    Assignment assignment;
    Eigen::VectorXd forces;
    int assignments_tried = 0;
};

inline double binomial(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

/// Number of distinct assignments: C(T-1, K) * agents^K.
inline double assignment_count(const Scenario& s, int k) {
    return binomial(s.horizon - 1, k) * std::pow(static_cast<double>(s.num_agents), k);
}

/// Every assignment in lexicographic order (used when t_max covers them all).
inline std::vector<Assignment> enumerate_assignments(const Scenario& s, int k) {
    std::vector<Assignment> out;
    std::vector<int> times(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) times[static_cast<std::size_t>(i)] = i + 1;
    const int last = s.horizon - 1;
    while (true) {
        std::vector<int> agents(static_cast<std::size_t>(k), 0);
        while (true) {
            out.push_back({times, agents});
            int i = k - 1;
            while (i >= 0 && agents[static_cast<std::size_t>(i)] == s.num_agents - 1) agents[static_cast<std::size_t>(i--)] = 0;
            if (i < 0) break;
            ++agents[static_cast<std::size_t>(i)];
        }
        int i = k - 1;
        while (i >= 0 && times[static_cast<std::size_t>(i)] == last - (k - 1 - i)) --i;
        if (i < 0) break;
        ++times[static_cast<std::size_t>(i)];
        for (int j = i + 1; j < k; ++j) times[static_cast<std::size_t>(j)] = times[static_cast<std::size_t>(j - 1)] + 1;
    }
    return out;
}

/// Uniformly random assignment: a sorted K-subset of interior times plus an
/// agent per correction.
inline Assignment sample_assignment(const Scenario& s, int k, std::mt19937_64& rng) {
    std::vector<int> pool(static_cast<std::size_t>(s.horizon - 1));
    for (int i = 0; i < s.horizon - 1; ++i) pool[static_cast<std::size_t>(i)] = i + 1;
    // partial Fisher-Yates
    for (int i = 0; i < k; ++i) {
        std::uniform_int_distribution<int> pick(i, static_cast<int>(pool.size()) - 1);
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
    }
    Assignment a;
    a.times.assign(pool.begin(), pool.begin() + k);
    std::sort(a.times.begin(), a.times.end());
    std::uniform_int_distribution<int> agent(0, s.num_agents - 1);
    for (int i = 0; i < k; ++i) a.agents.push_back(agent(rng));
    return a;
}

/// The discrete assignments solve_dstar visits, in visiting order.
inline std::vector<Assignment> candidate_assignments(const Scenario& s, int k, const OptimizerConfig& opt) {
    const double total = assignment_count(s, k);
    if (total <= opt.t_max) return enumerate_assignments(s, k);
    std::mt19937_64 rng(opt.seed);
    std::set<Assignment> seen;
    std::vector<Assignment> out;
    while (static_cast<int>(out.size()) < opt.t_max) {
        Assignment a = sample_assignment(s, k, rng);
        if (seen.insert(a).second) out.push_back(std::move(a));
    }
    return out;
}

inline DStarResult solve_dstar(const Trajectory& initial, const RewardParams& theta, int k, const OptimizerConfig& opt,
                               const EvidenceConfig& cfg, const Scenario& scenario) {
    opt.validate();
    cfg.validate();
    if (k < 1) throw Error(ErrorKind::EmptySequence, "K must be >= 1");
    if (k > scenario.horizon - 1)
        throw Error(ErrorKind::InfeasibleK, "K=" + std::to_string(k) + " exceeds the " + std::to_string(scenario.horizon - 1) +
                                                " interior timesteps");
    DStarResult best;
    for (const auto& a : candidate_assignments(scenario, k, opt)) {
        auto inner = inner_optimize(a, initial, theta, opt, cfg, scenario);
        ++best.assignments_tried;
        if (inner.dstar > best.dstar) {
            best.dstar = inner.dstar;
            best.assignment = a;
            best.forces = std::move(inner.forces);
        }
    }
    return best;
}

// ---- library ----------------------------------------------------------------

struct DStarEntry {
    double dstar = 0.0;
    std::vector<int> times;
    std::vector<int> agents;
    std::vector<Vec2> forces;
    std::string config_hash;

    [[nodiscard]] CorrectionSequence corrections() const {
        CorrectionSequence out;
        for (std::size_t i = 0; i < times.size(); ++i) out.push_back({times[i], agents[i], forces[i]});
        return out;
    }
};

/// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = digits[h & 0xF];
    return out;
}

inline std::string config_hash(const OptimizerConfig& opt, const EvidenceConfig& cfg, const Scenario& scenario) {
    const nlohmann::json j = {{"optimizer", to_json(opt)}, {"evidence", to_json(cfg)}, {"scenario", to_json(scenario)}};
    return fnv1a_hex(j.dump());
}

inline std::string library_key(const std::string& scenario_id, int theta_index, int k) {
    return scenario_id + "/" + std::to_string(theta_index) + "/" + std::to_string(k);
}

class DStarLibrary {
public:
    [[nodiscard]] const std::map<std::string, DStarEntry>& entries() const noexcept { return entries_; }
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

    void insert(const std::string& scenario_id, int theta_index, int k, DStarEntry e) {
        entries_[library_key(scenario_id, theta_index, k)] = std::move(e);
    }

    [[nodiscard]] const DStarEntry* find(const std::string& scenario_id, int theta_index, int k) const {
        auto it = entries_.find(library_key(scenario_id, theta_index, k));
        return it == entries_.end() ? nullptr : &it->second;
    }

    /// Largest K' <= k with an entry for every candidate, if any.
    [[nodiscard]] std::optional<int> resolve_k(const std::string& scenario_id, int num_candidates, int k) const {
        for (int kk = k; kk >= 1; --kk) {
            bool all = true;
            for (int i = 0; i < num_candidates && all; ++i) all = find(scenario_id, i, kk) != nullptr;
            if (all) return kk;
        }
        return std::nullopt;
    }

    /// D*_K for every candidate at exactly K.
    [[nodiscard]] Eigen::VectorXd dstar_vector(const std::string& scenario_id, int num_candidates, int k) const {
        Eigen::VectorXd v(num_candidates);
        for (int i = 0; i < num_candidates; ++i) {
            const auto* e = find(scenario_id, i, k);
            if (!e) throw Error(ErrorKind::LibraryMiss, "no D* entry for " + library_key(scenario_id, i, k));
            v[i] = e->dstar;
        }
        return v;
    }

    [[nodiscard]] int max_k(const std::string& scenario_id, int num_candidates) const {
        int k = 0;
        while (resolve_k(scenario_id, num_candidates, k + 1) == k + 1) ++k;
        return k;
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [key, e] : entries_) {
            nlohmann::json forces = nlohmann::json::array();
            for (const auto& f : e.forces) forces.push_back(vec2_json(f));
            j[key] = {{"dstar", e.dstar}, {"times", e.times}, {"agents", e.agents}, {"forces", std::move(forces)},
                      {"config_hash", e.config_hash}};
        }
        return j;
    }

    static DStarLibrary from_json(const nlohmann::json& j) {
        DStarLibrary lib;
        for (const auto& [key, v] : j.items()) {
            DStarEntry e;
            e.dstar = v.at("dstar").get<double>();
            e.times = v.at("times").get<std::vector<int>>();
            e.agents = v.at("agents").get<std::vector<int>>();
            for (const auto& f : v.at("forces")) e.forces.push_back(vec2_from_json(f));
            e.config_hash = v.at("config_hash").get<std::string>();
            if (e.times.size() != e.agents.size() || e.times.size() != e.forces.size())
                throw Error(ErrorKind::LibraryMiss, "malformed library entry " + key);
            lib.entries_[key] = std::move(e);
        }
        return lib;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::LibraryWrite, "cannot open " + path + " for writing");
        out << to_json().dump(2) << '\n';
        if (!out) throw Error(ErrorKind::LibraryWrite, "failed writing " + path);
    }

    static DStarLibrary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorKind::LibraryMiss, "cannot open D* library " + path);
        try {
            nlohmann::json j;
            in >> j;
            return from_json(j);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::LibraryMiss, path + ": " + e.what());
        }
    }

private:
    std::map<std::string, DStarEntry> entries_;
};

/// Re-evaluates D on the entry's stored corrections.
inline double entry_evidence(const DStarEntry& e, const Trajectory& initial, const RewardParams& theta,
                             const EvidenceConfig& cfg, const Scenario& scenario) {
    const auto corrections = e.corrections();
    const auto trajs = propagate_sequence(initial, corrections, scenario.kernel());
    return accumulated_evidence(trajs, corrections, theta, cfg, scenario);
}

/// Optimizer settings a scenario implies (force bound from its hyperparameters).
inline OptimizerConfig optimizer_config_for(const Scenario& s, OptimizerConfig base = {}) {
    base.force_bound = s.hyper.force_bound;
    return base;
}

struct BuildOptions {
    unsigned workers = 0;  // 0 = hardware concurrency
    const DStarLibrary* resume_from = nullptr;
    std::function<void(const std::string& key, const DStarEntry&)> on_entry;
};

/// Fills entries for every (candidate, K <= k_max). Entries already present in
/// `resume_from` with a matching config hash are reused.
inline DStarLibrary build_library(const Scenario& scenario, int k_max, const OptimizerConfig& opt,
                                  const BuildOptions& build = {}) {
    opt.validate();
    const EvidenceConfig cfg = EvidenceConfig::from(scenario.hyper);
    cfg.validate();
    if (k_max > scenario.horizon - 1) throw Error(ErrorKind::InfeasibleK, "k_max exceeds interior timesteps");
    const std::string hash = config_hash(opt, cfg, scenario);
    const Trajectory initial = initial_plan(scenario);

    struct Job {
        int theta;
        int k;
    };
    std::vector<Job> jobs;
    DStarLibrary lib;
    for (int i = 0; i < static_cast<int>(scenario.num_candidates()); ++i) {
        for (int k = 1; k <= k_max; ++k) {
            if (build.resume_from) {
                if (const auto* e = build.resume_from->find(scenario.id, i, k); e && e->config_hash == hash) {
                    lib.insert(scenario.id, i, k, *e);
                    continue;
                }
            }
            jobs.push_back({i, k});
        }
    }

    std::vector<std::optional<DStarEntry>> results(jobs.size());
    std::mutex report_mutex;
    auto run = [&](std::size_t j) {
        const auto& job = jobs[j];
        OptimizerConfig local = opt;
        // independent, reproducible stream per entry
        local.seed = opt.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(job.theta * 1000 + job.k + 1));
        const auto& theta = scenario.candidate_thetas[static_cast<std::size_t>(job.theta)].weights;
        auto r = solve_dstar(initial, theta, job.k, local, cfg, scenario);
        DStarEntry e;
        e.dstar = r.dstar;
        e.times = r.assignment.times;
        e.agents = r.assignment.agents;
        for (int c = 0; c < job.k; ++c) e.forces.push_back(r.forces.segment<2>(2 * c));
        e.config_hash = hash;
        if (build.on_entry) {
            std::lock_guard lock(report_mutex);
            build.on_entry(library_key(scenario.id, job.theta, job.k), e);
        }
        results[j] = std::move(e);
    };

    unsigned workers = build.workers ? build.workers : std::max(1U, std::thread::hardware_concurrency());
    workers = std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(jobs.size(), 1)));
    if (workers <= 1) {
        for (std::size_t j = 0; j < jobs.size(); ++j) run(j);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t j = next++; j < jobs.size(); j = next++) run(j);
            });
    }
    for (std::size_t j = 0; j < jobs.size(); ++j) lib.insert(scenario.id, jobs[j].theta, jobs[j].k, std::move(*results[j]));
    return lib;
}

}  // namespace seqcorr

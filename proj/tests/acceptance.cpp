// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "seqcorr/benchmark.hpp"
#include "seqcorr/dstar.hpp"
#include "seqcorr/evidence.hpp"
#include "seqcorr/oracle.hpp"
#include "seqcorr/planner.hpp"
#include "seqcorr/sim.hpp"

namespace fs = std::filesystem;
using namespace seqcorr;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

int failures = 0;

void criterion(const std::string& name, double limit_s, const std::function<Outcome()>& body) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (limit_s > 0.0 && secs > limit_s) {
        o.pass = false;
        o.detail += " (over the " + std::to_string(static_cast<int>(limit_s)) + " s budget)";
    }
    if (!o.pass) ++failures;
    std::printf("%s %-28s %8.2f s  %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, o.detail.c_str());
    std::fflush(stdout);
}

std::string num(double v) {
    std::ostringstream o;
    o.precision(4);
    o << v;
    return o.str();
}

Eigen::VectorXd softmax(const Eigen::VectorXd& v) {
    const Eigen::VectorXd e = (v.array() - v.maxCoeff()).exp().matrix();
    return e / e.sum();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(SEQCORR_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome deformation_suite() {
    std::mt19937_64 rng(1001);
    std::uniform_int_distribution<int> waypoints(3, 30), agents(1, 3);
    std::uniform_real_distribution<double> mu(0.05, 2.0), scalar(-3.0, 3.0);
    double worst_linear = 0.0, worst_commute = 0.0;
    int bad = 0;
    for (int i = 0; i < 1000; ++i) {
        const int n = waypoints(rng);
        const int m = agents(rng);
        const auto kernel = make_kernel(n, mu(rng), 1 + i % 2);
        const auto traj = fixtures::random_trajectory(rng, n, m);
        std::uniform_int_distribution<int> time(1, n - 2), agent(0, m - 1);
        const Correction c{time(rng), agent(rng), fixtures::random_force(rng, 2.0)};

        if (!(deform(traj, {c.timestep, c.agent, Vec2::Zero()}, kernel) == traj)) ++bad;

        const auto out = deform(traj, c, kernel);
        for (int a = 0; a < m; ++a) {
            if (out.position(0, a) != traj.position(0, a) || out.position(n - 1, a) != traj.position(n - 1, a)) ++bad;
            if (a == c.agent) continue;
            for (int t = 0; t < n; ++t)
                if (out.position(t, a) != traj.position(t, a)) ++bad;
        }

        const double s = scalar(rng);
        const Eigen::MatrixXd d1 = out.matrix() - traj.matrix();
        const Eigen::MatrixXd ds = deform(traj, {c.timestep, c.agent, s * c.force}, kernel).matrix() - traj.matrix();
        const double scale = std::max(1.0, (s * d1).cwiseAbs().maxCoeff());
        worst_linear = std::max(worst_linear, (ds - s * d1).cwiseAbs().maxCoeff() / scale);

        const Correction other{time(rng), c.agent, fixtures::random_force(rng, 2.0)};
        const auto ab = deform(deform(traj, c, kernel), other, kernel);
        const auto ba = deform(deform(traj, other, kernel), c, kernel);
        const double mag = std::max(1.0, ab.matrix().cwiseAbs().maxCoeff());
        worst_commute = std::max(worst_commute, (ab.matrix() - ba.matrix()).cwiseAbs().maxCoeff() / mag);
    }
    const bool pass = bad == 0 && worst_linear <= 1e-12 && worst_commute <= 1e-12;
    return {pass, "1000 cases, violations " + std::to_string(bad) + ", linearity " + num(worst_linear) + ", commutation " +
                      num(worst_commute)};
}

Outcome cancellation_oracle() {
    const Scenario s = fixtures::load("two_agent");
    const auto initial = initial_plan(s);
    const auto kernel = s.kernel();
    EvidenceConfig on = EvidenceConfig::from(s.hyper);
    on.include_final_reward = true;
    std::mt19937_64 rng(2002);
    std::uniform_int_distribution<int> time(1, s.horizon - 1), agent(0, s.num_agents - 1), count(1, 4);
    std::normal_distribution<double> w(0.0, 4.0);
    double worst = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
        RewardParams theta(s.candidate_thetas[0].weights.size());
        for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = w(rng);
        const auto intended = fixtures::random_trajectory(rng, s.waypoint_count(), s.num_agents);
        Eigen::VectorXd d(2), e(2);
        for (int k = 0; k < 2; ++k) {
            const int n = count(rng);
            CorrectionSequence seq;
            for (int j = 0; j < n; ++j) seq.push_back({time(rng), agent(rng), fixtures::random_force(rng)});
            std::sort(seq.begin(), seq.end(), [](const Correction& a, const Correction& b) { return a.timestep < b.timestep; });
            const auto trajs = propagate_sequence(initial, seq, kernel);
            d[k] = accumulated_evidence(trajs, seq, theta, on, s);
            e[k] = energy_E(trajs, seq, intended, theta, on, s);
        }
        worst = std::max(worst, (softmax(d) - softmax(e)).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-9, "100 draws, max posterior difference " + num(worst)};
}

Outcome laplace_oracle() {
    const Scenario s = fixtures::load("micro");
    const auto initial = initial_plan(s);
    const EvidenceConfig cfg = EvidenceConfig::from(s.hyper);
    const OptimizerConfig opt = optimizer_config_for(s);
    double worst_gap = 0.0, worst_ll = -std::numeric_limits<double>::infinity();
    long long sequences = 0;
    for (int k = 1; k <= 2; ++k) {
        for (const auto& c : s.candidate_thetas) {
            const auto grid = exhaustive_grid_dstar(initial, c.weights, k, cfg, s, 10);
            const auto mc = solve_dstar(initial, c.weights, k, opt, cfg, s);
            worst_gap = std::max(worst_gap, std::abs(mc.dstar - grid.max) / grid.range());
            // the largest grid log-likelihood bounds every grid-contained sequence
            worst_ll = std::max(worst_ll, log_likelihood_sequence(grid.argmax, initial, c.weights, mc.dstar, cfg, s));
            sequences += grid.sequences;
        }
    }
    const bool pass = worst_gap <= 0.02 && worst_ll <= 0.0;
    return {pass, std::to_string(sequences) + " grid sequences, worst gap " + num(100.0 * worst_gap) +
                      "% of D range, max grid log-likelihood " + num(worst_ll)};
}

Outcome independent_factorization() {
    const Scenario s = fixtures::load("two_agent");
    const EpisodeContext ctx{s, nullptr};
    const double gamma = s.hyper.gamma;
    std::mt19937_64 rng(4004);
    std::uniform_int_distribution<int> count(1, 5), agent(0, s.num_agents - 1);
    double worst = 0.0;
    int corrections = 0;
    for (int ep = 0; ep < 100; ++ep) {
        EpisodeState st = start_episode(ctx, Model::Independent, static_cast<std::uint64_t>(ep));
        const int n = count(rng);
        for (int j = 0; j < n; ++j) {
            std::uniform_int_distribution<int> gap(0, 2);
            for (int g = gap(rng); g > 0 && st.clock < s.horizon - 1; --g) st = tick(std::move(st));
            st = apply_correction(std::move(st), ctx, {std::max(1, st.clock), agent(rng), fixtures::random_force(rng)});
            ++corrections;
        }
        const Eigen::VectorXd ll = episode_log_likelihoods(st, ctx, Model::Independent);
        Eigen::VectorXd oracle = Eigen::VectorXd::Zero(ll.size());
        for (std::size_t i = 0; i < s.num_candidates(); ++i) {
            const auto& theta = s.candidate_thetas[i].weights;
            const Trajectory* prev = &st.initial;
            for (const auto& cur : st.deformed_history) {
                const Eigen::MatrixXd diff = cur.matrix() - prev->matrix();
                oracle[static_cast<Eigen::Index>(i)] +=
                    theta.dot(features(cur, s)) - theta.dot(features(*prev, s)) - gamma * diff.squaredNorm();
                prev = &cur;
            }
        }
        worst = std::max(worst, (ll - oracle).cwiseAbs().maxCoeff());
        const Belief expected = posterior_update(st.prior, s.hyper.beta * oracle);
        worst = std::max(worst, (st.belief.probabilities() - expected.probabilities()).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-9, "100 episodes, " + std::to_string(corrections) + " corrections, max difference " + num(worst)};
}

struct Prepared {
    Scenario scenario;
    DStarLibrary library;
    fs::path library_path;
};

std::vector<Prepared>& prepared() {
    static std::vector<Prepared> p;
    return p;
}

fs::path work_dir() {
    static const fs::path dir = fixtures::temp_dir("acceptance");
    return dir;
}

Outcome direction_benchmark() {
    std::ostringstream detail;
    bool pass = true;
    for (const char* name : {"single_agent", "two_agent"}) {
        Prepared p{fixtures::load(name), {}, work_dir() / (std::string(name) + ".lib.json")};
        p.library = build_library(p.scenario, 7, optimizer_config_for(p.scenario));
        p.library.save(p.library_path);
        for (double sigma : {0.0, 0.1, 0.3}) {
            BenchmarkOptions opt;
            opt.episodes = 50;
            opt.sigma = sigma;
            opt.seed = 7;
            const auto r = run_benchmark(p.scenario, &p.library, opt);
            const double seq = r.summaries[0].accuracy, ind = r.summaries[1].accuracy, fin = r.summaries[2].accuracy;
            const bool ok = std::string(name) == "two_agent" ? (seq > ind && seq > fin) : std::abs(seq - fin) <= 0.10;
            pass = pass && ok;
            detail << (ok ? "" : "!") << name << "@" << sigma << " seq " << 100 * seq << " ind " << 100 * ind << " fin "
                   << 100 * fin << "; ";
        }
        prepared().push_back(std::move(p));
    }
    return {pass, detail.str()};
}

Outcome determinism() {
    if (prepared().empty()) return {false, "libraries were not built"};
    bool pass = true;
    int logs = 0;
    std::ostringstream detail;
    for (const auto& p : prepared()) {
        const std::string base = "benchmark --scenario " + fixtures::scenario_path(p.scenario.id) + " --library " +
                                 p.library_path.string() + " --episodes 10 --sigma 0 --sigma 0.3 --seed 11 --out ";
        const fs::path a = work_dir() / (p.scenario.id + "_a");
        const fs::path b = work_dir() / (p.scenario.id + "_b");
        if (run_cli(base + a.string()) != 0 || run_cli(base + b.string() + " --no-logs") != 0) return {false, "benchmark failed"};
        bool same = slurp(a / "summary.json") == slurp(b / "summary.json");
        for (const char* sigma : {"sigma_0", "sigma_0.3"}) same = same && slurp(a / sigma / "summary.json") == slurp(b / sigma / "summary.json");
        if (!same) detail << p.scenario.id << " summaries differ; ";
        std::string files;
        for (const char* sigma : {"sigma_0", "sigma_0.3"})
            for (const auto& e : fs::directory_iterator(a / sigma / "logs")) {
                files += " " + e.path().string();
                ++logs;
            }
        const bool replayed = run_cli("replay --log" + files) == 0;
        if (!replayed) detail << p.scenario.id << " replay failed; ";
        pass = pass && same && replayed;
    }
    detail << logs << " logs replayed";
    return {pass, detail.str()};
}

Outcome gradient_sanity() {
    double worst = 0.0;
    int probes = 0;
    for (const char* name : {"micro", "single_agent", "two_agent"}) {
        const Scenario s = fixtures::load(name);
        const auto initial = initial_plan(s);
        const EvidenceConfig cfg = EvidenceConfig::from(s.hyper);
        const OptimizerConfig opt = optimizer_config_for(s);
        std::mt19937_64 rng(7007);
        std::uniform_int_distribution<int> kdist(1, std::min(7, s.horizon - 1));
        std::uniform_int_distribution<std::size_t> pick(0, s.num_candidates() - 1);
        for (int i = 0; i < 50; ++i) {
            const Assignment a = sample_assignment(s, kdist(rng), rng);
            Eigen::VectorXd forces(2 * static_cast<Eigen::Index>(a.times.size()));
            std::uniform_real_distribution<double> u(-opt.force_bound, opt.force_bound);
            for (Eigen::Index j = 0; j < forces.size(); ++j) forces[j] = u(rng);
            project_blocks(forces, opt.force_bound);
            worst = std::max(worst, gradient_self_check(a, initial, s.candidate_thetas[pick(rng)].weights, forces, opt, cfg, s));
            ++probes;
        }
    }
    return {worst <= 1e-3, std::to_string(probes) + " probes, worst relative disagreement " + num(worst)};
}

}  // namespace

int main() {
    criterion("deformation-invariants", 10.0, deformation_suite);
    criterion("cancellation-oracle", 30.0, cancellation_oracle);
    criterion("laplace-optimizer-oracle", 300.0, laplace_oracle);
    criterion("independent-factorization", 0.0, independent_factorization);
    criterion("direction-benchmark", 1200.0, direction_benchmark);
    criterion("determinism-and-replay", 0.0, determinism);
    criterion("gradient-self-check", 0.0, gradient_sanity);
    fs::remove_all(work_dir());
    std::printf("%s: %d criterion(s) failed\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
    return failures == 0 ? 0 : 1;
}

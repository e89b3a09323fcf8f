// seqcorr: precompute D* libraries, run benchmarks, replay logs, serve sessions.

#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "seqcorr/benchmark.hpp"
#include "seqcorr/dstar.hpp"
#include "seqcorr/oracle.hpp"
#include "seqcorr/planner.hpp"
#include "seqcorr/scenario.hpp"
#include "seqcorr/server.hpp"
#include "seqcorr/session.hpp"
#include "seqcorr/sim.hpp"

namespace fs = std::filesystem;
using namespace seqcorr;

namespace {

constexpr int kExitPrecondition = 2;
constexpr int kExitMismatch = 3;

// Largest sequence count the --oracle grid search will attempt.
constexpr double kOracleBudget = 5e7;

std::vector<Model> models_from_flag(const std::string& flag) {
    if (flag == "all") return {Model::Sequence, Model::Independent, Model::Final};
    return {parse_model(flag)};
}

std::string fmt(double v, int precision = 6) {
    std::ostringstream o;
    o << std::setprecision(precision) << v;
    return o.str();
}

struct PrecomputeArgs {
    std::string scenario;
    std::string out;
    std::string resume;
    int kmax = 7;
    int tmax = 200;
    int inner_iterations = 300;
    double step_size = 0.05;
    std::uint64_t seed = 0;
    unsigned workers = 0;
    bool oracle = false;
};

int cmd_precompute(const PrecomputeArgs& a) {
    const Scenario s = load_scenario(a.scenario);
    OptimizerConfig opt;
    opt.t_max = a.tmax;
    opt.inner_iterations = a.inner_iterations;
    opt.step_size = a.step_size;
    opt.seed = a.seed;
    opt = optimizer_config_for(s, opt);

    std::optional<DStarLibrary> previous;
    BuildOptions build;
    build.workers = a.workers;
    if (!a.resume.empty()) {
        previous = DStarLibrary::load(a.resume);
        build.resume_from = &*previous;
    }
    const DStarLibrary lib = build_library(s, a.kmax, opt, build);
    lib.save(a.out);

    std::cout << std::left << std::setw(40) << "entry" << std::setw(14) << "D*" << "times/agents\n";
    for (const auto& [key, e] : lib.entries()) {
        std::string where;
        for (std::size_t i = 0; i < e.times.size(); ++i) where += std::to_string(e.times[i]) + "/" + std::to_string(e.agents[i]) + " ";
        std::cout << std::setw(40) << key << std::setw(14) << fmt(e.dstar) << where << '\n';
    }
    std::cout << lib.size() << " entries written to " << a.out << '\n';

    if (!a.oracle) return 0;
    const Trajectory initial = initial_plan(s);
    const EvidenceConfig cfg = EvidenceConfig::from(s.hyper);
    const double grid = static_cast<double>(force_grid(s.hyper.force_bound, 10).size());
    double worst = 0.0;
    int checked = 0;
    for (int k = 1; k <= a.kmax; ++k) {
        if (assignment_count(s, k) * std::pow(grid, k) > kOracleBudget) {
            std::cout << "oracle: K=" << k << " skipped (instance too large for exhaustive search)\n";
            continue;
        }
        for (std::size_t i = 0; i < s.num_candidates(); ++i) {
            const auto g = exhaustive_grid_dstar(initial, s.candidate_thetas[i].weights, k, cfg, s);
            const double mc = lib.find(s.id, static_cast<int>(i), k)->dstar;
            const double gap = g.range() > 0.0 ? std::abs(mc - g.max) / g.range() : std::abs(mc - g.max);
            worst = std::max(worst, gap);
            ++checked;
            std::cout << "oracle: theta " << i << " K=" << k << " grid " << fmt(g.max, 8) << " optimizer " << fmt(mc, 8)
                      << " gap " << fmt(100.0 * gap, 3) << "% of D range\n";
        }
    }
    if (checked == 0) {
        std::cerr << "oracle: no entry small enough to enumerate\n";
        return kExitPrecondition;
    }
    std::cout << "oracle: worst gap " << fmt(100.0 * worst, 3) << "% (limit 2%)\n";
    return worst <= 0.02 ? 0 : kExitMismatch;
}

struct BenchmarkArgs {
    std::string scenario;
    std::string library;
    std::string model = "all";
    std::string out;
    int episodes = 50;
    std::vector<double> sigmas{0.0};
    std::optional<std::uint64_t> seed;
    unsigned workers = 0;
    bool write_logs = true;
};

int cmd_benchmark(const BenchmarkArgs& a) {
    if (!a.seed) {
        std::cerr << "benchmark: --seed is required\n";
        return kExitPrecondition;
    }
    const Scenario s = load_scenario(a.scenario);
    std::optional<DStarLibrary> lib;
    if (!a.library.empty()) lib = DStarLibrary::load(a.library);
    BenchmarkOptions opt;
    opt.models = models_from_flag(a.model);
    opt.episodes = a.episodes;
    opt.seed = *a.seed;
    opt.workers = a.workers;

    nlohmann::json all = nlohmann::json::array();
    for (double sigma : a.sigmas) {
        opt.sigma = sigma;
        const BenchmarkReport r = run_benchmark(s, lib ? &*lib : nullptr, opt);
        std::cout << "scenario " << s.id << "  sigma " << sigma << "  episodes " << r.episodes << '\n';
        for (const auto& m : r.summaries)
            std::cout << "  " << std::left << std::setw(12) << to_string(m.model) << " accuracy " << fmt(100.0 * m.accuracy, 4)
                      << "% +/- " << fmt(100.0 * m.accuracy_std, 4) << "%  (" << m.correct << "/" << m.episodes
                      << ", mean corrections " << fmt(m.mean_corrections, 3) << ")\n";
        const nlohmann::json summary = summary_json(r);
        all.push_back(summary);
        if (!a.out.empty()) {
            const fs::path dir = fs::path(a.out) / ("sigma_" + fmt(sigma));
            fs::create_directories(dir);
            std::ofstream(dir / "summary.json", std::ios::binary | std::ios::trunc) << summary.dump(2) << '\n';
            std::ofstream csv(dir / "traces.csv", std::ios::binary | std::ios::trunc);
            write_trace_csv(csv, r, s);
            if (a.write_logs) write_episode_logs(dir / "logs", r);
        }
    }
    if (!a.out.empty()) std::ofstream(fs::path(a.out) / "summary.json", std::ios::binary | std::ios::trunc) << all.dump(2) << '\n';
    return 0;
}

struct ReplayArgs {
    std::vector<std::string> logs;
    std::string model;
    double tolerance = 0.0;
};

int cmd_replay(const ReplayArgs& a) {
    std::optional<Model> expected;
    if (!a.model.empty()) expected = parse_model(a.model);
    int failures = 0;
    for (const auto& path : a.logs) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorKind::NotFound, "cannot open log " + path);
        const ParsedLog parsed = parse_log(in);
        if (const auto problem = validate_log_schema(parsed); !problem.empty()) {
            std::cout << path << ": FAIL schema: " << problem << '\n';
            ++failures;
            continue;
        }
        const ReplayReport rep = replay_log(parsed, expected, a.tolerance);
        std::cout << path << ": " << (rep.ok ? "PASS " : "FAIL first divergence at ") << rep.message << '\n';
        if (!rep.ok) ++failures;
    }
    return failures == 0 ? 0 : kExitMismatch;
}

struct ServeArgs {
    std::vector<std::string> scenarios;
    std::vector<std::string> libraries;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string log_dir;
    double tick_rate = 5.0;
};

SessionServer* g_server = nullptr;

int cmd_serve(const ServeArgs& a) {
    SessionManagerConfig cfg;
    cfg.default_tick_rate = a.tick_rate;
    if (!a.log_dir.empty()) cfg.log_dir = a.log_dir;
    SessionManager sessions(cfg);

    std::vector<DStarLibrary> libs;
    for (const auto& p : a.libraries) libs.push_back(DStarLibrary::load(p));
    std::vector<fs::path> files;
    for (const auto& p : a.scenarios) {
        if (fs::is_directory(p)) {
            for (const auto& entry : fs::directory_iterator(p))
                if (entry.path().extension() == ".json") files.push_back(entry.path());
        } else {
            files.emplace_back(p);
        }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        Scenario s = load_scenario(f.string());
        std::optional<DStarLibrary> match;
        for (const auto& lib : libs)
            if (lib.max_k(s.id, static_cast<int>(s.num_candidates())) > 0) match = lib;
        std::cout << "scenario " << s.id << (match ? " (D* library loaded)" : " (no D* library)") << '\n';
        sessions.add_scenario(std::move(s), std::move(match));
    }

    SessionServer server(sessions);
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
    });
    std::cout << "listening on http://" << a.host << ":" << a.port << std::endl;
    if (!server.listen(a.host, a.port)) {
        std::cerr << "serve: cannot listen on " << a.host << ":" << a.port << '\n';
        return kExitPrecondition;
    }
    g_server = nullptr;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reward learning from sequences of physical corrections"};
    app.require_subcommand(1);

    PrecomputeArgs pre;
    auto* precompute = app.add_subcommand("precompute", "Build the offline D* library for a scenario");
    precompute->add_option("--scenario", pre.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
    precompute->add_option("--out", pre.out, "Library output path")->required();
    precompute->add_option("--kmax", pre.kmax, "Largest correction count")->check(CLI::PositiveNumber);
    precompute->add_option("--tmax", pre.tmax, "Assignments tried per entry")->check(CLI::PositiveNumber);
    precompute->add_option("--inner-iterations", pre.inner_iterations, "Force ascent iterations")->check(CLI::PositiveNumber);
    precompute->add_option("--step-size", pre.step_size, "Initial ascent step")->check(CLI::PositiveNumber);
    precompute->add_option("--seed", pre.seed, "Sampling seed");
    precompute->add_option("--workers", pre.workers, "Worker threads (0 = all cores)");
    precompute->add_option("--resume", pre.resume, "Reuse matching entries from this library")->check(CLI::ExistingFile);
    precompute->add_flag("--oracle", pre.oracle, "Compare against exhaustive grid search (small instances)");

    BenchmarkArgs bench;
    std::uint64_t seed_value = 0;
    auto* benchmark = app.add_subcommand("benchmark", "Run simulated-corrector episodes and report accuracy");
    benchmark->add_option("--scenario", bench.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
    benchmark->add_option("--library", bench.library, "D* library (needed by the sequence model)")->check(CLI::ExistingFile);
    benchmark->add_option("--model", bench.model, "Model to evaluate")
        ->check(CLI::IsMember({"sequence", "independent", "final", "all"}));
    benchmark->add_option("--episodes", bench.episodes, "Episodes per model")->check(CLI::NonNegativeNumber);
    benchmark->add_option("--sigma", bench.sigmas, "Corrector force noise; repeat for a sweep")->expected(1, -1);
    auto* seed_opt = benchmark->add_option("--seed", seed_value, "Base seed");
    benchmark->add_option("--out", bench.out, "Output directory for summary, traces and logs");
    benchmark->add_option("--workers", bench.workers, "Worker threads (0 = all cores)");
    benchmark->add_flag("!--no-logs", bench.write_logs, "Skip per-episode logs");

    ReplayArgs rep;
    auto* replay = app.add_subcommand("replay", "Re-execute episode logs and verify every belief");
    replay->add_option("--log,logs", rep.logs, "Episode log files")->required()->check(CLI::ExistingFile);
    replay->add_option("--model", rep.model, "Refuse logs recorded under another model")
        ->check(CLI::IsMember({"sequence", "independent", "final"}));
    replay->add_option("--tolerance", rep.tolerance, "Allowed belief difference")->check(CLI::NonNegativeNumber);

    ServeArgs srv;
    auto* serve = app.add_subcommand("serve", "Serve live sessions over HTTP");
    serve->add_option("--scenario", srv.scenarios, "Scenario file or directory; repeatable")->required();
    serve->add_option("--library", srv.libraries, "D* library file; repeatable")->check(CLI::ExistingFile);
    serve->add_option("--host", srv.host, "Bind address");
    serve->add_option("--port", srv.port, "Port")->check(CLI::Range(1, 65535));
    serve->add_option("--log-dir", srv.log_dir, "Directory for finished episode logs");
    serve->add_option("--tick-rate", srv.tick_rate, "Auto-mode steps per second")->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*precompute) return cmd_precompute(pre);
        if (*benchmark) {
            if (*seed_opt) bench.seed = seed_value;
            return cmd_benchmark(bench);
        }
        if (*replay) return cmd_replay(rep);
        if (*serve) return cmd_serve(srv);
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
        return kExitPrecondition;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

#pragma once

// Headless accuracy benchmark: simulated-corrector episodes per model, an
// accuracy summary, and per-event belief traces.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "seqcorr/dstar.hpp"
#include "seqcorr/error.hpp"
#include "seqcorr/planner.hpp"
#include "seqcorr/scenario.hpp"
#include "seqcorr/sim.hpp"

namespace seqcorr {

struct BenchmarkOptions {
    std::vector<Model> models{Model::Sequence, Model::Independent, Model::Final};
    int episodes = 50;
    double sigma = 0.0;
    std::uint64_t seed = 0;
    unsigned workers = 0;  // 0 = hardware concurrency
};

struct ModelSummary {
    Model model = Model::Sequence;
    int episodes = 0;
    int correct = 0;
    double accuracy = 0.0;
    double accuracy_std = 0.0;
    double mean_corrections = 0.0;
};

struct BenchmarkReport {
    std::string scenario_id;
    double sigma = 0.0;
    std::uint64_t seed = 0;
    int episodes = 0;
    std::vector<ModelSummary> summaries;
    std::vector<std::vector<EpisodeLog>> logs;  // [model][episode]
};

/// Seed of episode `index`; shared by every model so noise streams line up.
inline std::uint64_t episode_seed(std::uint64_t base, int index) {
    return mix_seed(base ^ mix_seed(static_cast<std::uint64_t>(index)));
}

inline ModelSummary summarize(Model model, const std::vector<EpisodeLog>& logs) {
    ModelSummary m;
    m.model = model;
    m.episodes = static_cast<int>(logs.size());
    if (logs.empty()) return m;
    double corrections = 0.0;
    for (const auto& l : logs) {
        m.correct += l.correct() ? 1 : 0;
        corrections += static_cast<double>(l.events.size());
    }
    const double n = static_cast<double>(logs.size());
    m.accuracy = m.correct / n;
    // sample standard deviation of the per-episode 0/1 outcome
    m.accuracy_std = logs.size() > 1 ? std::sqrt(m.accuracy * (1.0 - m.accuracy) * n / (n - 1.0)) : 0.0;
    m.mean_corrections = corrections / n;
    return m;
}

inline BenchmarkReport run_benchmark(const Scenario& s, const DStarLibrary* library, const BenchmarkOptions& opt) {
    if (opt.episodes < 0) throw Error(ErrorKind::BadRequest, "episodes must be >= 0");
    if (!(opt.sigma >= 0.0)) throw Error(ErrorKind::InvalidHyperparameter, "sigma must be >= 0");
    if (!s.true_theta_index) throw Error(ErrorKind::PreconditionFailed, "scenario declares no true_theta_index");
    const bool needs_library = std::find(opt.models.begin(), opt.models.end(), Model::Sequence) != opt.models.end();
    if (needs_library && opt.episodes > 0 &&
        (!library || library->max_k(s.id, static_cast<int>(s.num_candidates())) < 1))
        throw Error(ErrorKind::PreconditionFailed, "the sequence model needs a D* library for '" + s.id +
                                                       "'; build one with `seqcorr precompute --scenario <file> --out <library>` "
                                                       "and pass it with --library");

    BenchmarkReport report;
    report.scenario_id = s.id;
    report.sigma = opt.sigma;
    report.seed = opt.seed;
    report.episodes = opt.episodes;
    if (opt.episodes == 0) {
        for (Model m : opt.models) {
            report.summaries.push_back(summarize(m, {}));
            report.logs.emplace_back();
        }
        return report;
    }

    const Trajectory initial = initial_plan(s);
    const EpisodeContext ctx{s, library};
    struct Job {
        std::size_t model;
        int episode;
    };
    std::vector<Job> jobs;
    report.logs.resize(opt.models.size());
    for (std::size_t m = 0; m < opt.models.size(); ++m) {
        report.logs[m].resize(static_cast<std::size_t>(opt.episodes));
        for (int e = 0; e < opt.episodes; ++e) jobs.push_back({m, e});
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            const auto& job = jobs[j];
            report.logs[job.model][static_cast<std::size_t>(job.episode)] =
                run_episode(ctx, opt.models[job.model], episode_seed(opt.seed, job.episode), opt.sigma, &initial);
        }
    };
    unsigned workers = opt.workers ? opt.workers : std::max(1U, std::thread::hardware_concurrency());
    workers = std::min<unsigned>(workers, static_cast<unsigned>(jobs.size()));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    }

    for (std::size_t m = 0; m < opt.models.size(); ++m) report.summaries.push_back(summarize(opt.models[m], report.logs[m]));
    return report;
}

/// Machine-readable summary; contains no timing or host data so identical
/// runs serialize identically.
inline nlohmann::json summary_json(const BenchmarkReport& r) {
    nlohmann::json models = nlohmann::json::array();
    for (std::size_t m = 0; m < r.summaries.size(); ++m) {
        const auto& s = r.summaries[m];
        nlohmann::json predictions = nlohmann::json::array();
        for (const auto& l : r.logs[m]) predictions.push_back(l.predicted_theta_index);
        models.push_back({{"model", to_string(s.model)},
                          {"episodes", s.episodes},
                          {"correct", s.correct},
                          {"accuracy", s.accuracy},
                          {"accuracy_std", s.accuracy_std},
                          {"mean_corrections", s.mean_corrections},
                          {"predictions", std::move(predictions)}});
    }
    return {{"scenario_id", r.scenario_id}, {"sigma", r.sigma}, {"seed", r.seed}, {"episodes", r.episodes},
            {"models", std::move(models)}};
}

/// One row per (model, episode, correction event, candidate), plus a final
/// row set per episode.
inline void write_trace_csv(std::ostream& out, const BenchmarkReport& r, const Scenario& s) {
    out << "model,episode,event,kind,clock,timestep,agent,theta_index,theta_label,log_likelihood,probability\n";
    out.precision(17);
    for (std::size_t m = 0; m < r.logs.size(); ++m) {
        const std::string model = to_string(r.summaries[m].model);
        for (std::size_t e = 0; e < r.logs[m].size(); ++e) {
            const auto& log = r.logs[m][e];
            for (const auto& ev : log.events) {
                const Eigen::VectorXd p = ev.belief.probabilities();
                for (std::size_t i = 0; i < s.num_candidates(); ++i) {
                    const auto ii = static_cast<Eigen::Index>(i);
                    out << model << ',' << e << ',' << ev.index << ",correction," << ev.clock << ','
                        << ev.correction.timestep << ',' << ev.correction.agent << ',' << i << ",\""
                        << s.candidate_thetas[i].label << "\"," << ev.log_likelihoods[ii] << ',' << p[ii] << '\n';
                }
            }
            const Eigen::VectorXd p = log.final_belief.probabilities();
            const Eigen::VectorXd lw = log.final_belief.log_weights() - log.prior.log_weights();
            for (std::size_t i = 0; i < s.num_candidates(); ++i) {
                const auto ii = static_cast<Eigen::Index>(i);
                out << model << ',' << e << ',' << log.events.size() << ",final," << log.final_clock << ",,," << i << ",\""
                    << s.candidate_thetas[i].label << "\"," << lw[ii] << ',' << p[ii] << '\n';
            }
        }
    }
}

/// Writes <dir>/<model>_<episode>.jsonl for every episode; returns the paths.
inline std::vector<std::filesystem::path> write_episode_logs(const std::filesystem::path& dir, const BenchmarkReport& r) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> paths;
    for (std::size_t m = 0; m < r.logs.size(); ++m) {
        for (std::size_t e = 0; e < r.logs[m].size(); ++e) {
            auto path = dir / (to_string(r.summaries[m].model) + "_" + std::to_string(e) + ".jsonl");
            std::ofstream out(path, std::ios::binary | std::ios::trunc);
            if (!out) throw Error(ErrorKind::LibraryWrite, "cannot write " + path.string());
            out << serialize_log(r.logs[m][e]);
            paths.push_back(std::move(path));
        }
    }
    return paths;
}

}  // namespace seqcorr

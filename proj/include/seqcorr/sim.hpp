#pragma once

// Navigation episodes: the robot plans under its current belief, a corrector
// (simulated or live) pushes one agent at a time, and the belief is updated
// by one of three inference models.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "seqcorr/ascent.hpp"
#include "seqcorr/dstar.hpp"
#include "seqcorr/evidence.hpp"
#include "seqcorr/planner.hpp"
#include "seqcorr/rewards.hpp"
#include "seqcorr/scenario.hpp"
#include "seqcorr/trajectory.hpp"

namespace seqcorr {

enum class Model { Sequence, Independent, Final };

inline std::string to_string(Model m) {
    switch (m) {
        case Model::Sequence: return "sequence";
        case Model::Independent: return "independent";
        case Model::Final: return "final";
    }
    return "unknown";
}

inline Model parse_model(const std::string& s) {
    if (s == "sequence") return Model::Sequence;
    if (s == "independent") return Model::Independent;
    if (s == "final") return Model::Final;
    throw Error(ErrorKind::BadRequest, "unknown model '" + s + "' (expected sequence, independent or final)");
}

/// splitmix64 finalizer, used to derive per-episode seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

struct HumanConfig {
    double sigma = 0.0;
    int lookahead = 2;
    int cooldown = 3;
    double deadband = 0.01;

    static HumanConfig from(const Scenario& s, double sigma) {
        return {sigma, s.human.lookahead, s.human.cooldown, s.human.deadband};
    }
};

/// Everything an episode reads but never mutates.
struct EpisodeContext {
    const Scenario& scenario;
    const DStarLibrary* library = nullptr;
    PlannerOptions planner{};
};

struct EpisodeEvent {
    int index = 0;
    int clock = 0;
    Correction correction;
    bool clamped = false;
    int k_used = 0;  // library K actually used (sequence model)
    Eigen::VectorXd log_likelihoods;
    Belief belief;
    Trajectory deformed;
    Trajectory plan;
};

struct EpisodeState {
    int clock = 0;
    Trajectory initial;  // xi_R^0
    Trajectory plan;     // rows 0..clock are the executed path
    Belief prior;
    Belief belief;
    CorrectionSequence corrections;
    std::vector<Trajectory> deformed_history;
    Model model = Model::Sequence;
    std::uint64_t rng_seed = 0;
    std::mt19937_64 rng;
    int last_correction_clock = std::numeric_limits<int>::min() / 2;
    std::vector<EpisodeEvent> events;
    std::vector<std::string> warnings;
    bool finished = false;

    [[nodiscard]] const Trajectory& latest_deformed() const {
        return deformed_history.empty() ? initial : deformed_history.back();
    }
};

inline EpisodeState start_episode(const EpisodeContext& ctx, Model model, std::uint64_t seed,
                                  const Trajectory* initial = nullptr) {
    const auto& s = ctx.scenario;
    EpisodeState st;
    st.model = model;
    st.rng_seed = seed;
    st.rng.seed(seed);
    st.prior = Belief(prior_log_weights(s));
    st.belief = st.prior;
    st.initial = initial ? *initial : initial_plan(s, ctx.planner);
    st.plan = st.initial;
    return st;
}

/// Per-candidate log-likelihoods (before the rationality coefficient) of the
/// current correction sequence under `model`.
inline Eigen::VectorXd episode_log_likelihoods(const EpisodeState& st, const EpisodeContext& ctx, Model model,
                                               int* k_used = nullptr) {
    const auto& s = ctx.scenario;
    const auto n = static_cast<int>(s.num_candidates());
    const EvidenceConfig cfg = EvidenceConfig::from(s.hyper);
    Eigen::VectorXd ll(n);
    switch (model) {
        case Model::Sequence: {
            const int k = static_cast<int>(st.corrections.size());
            if (k == 0) return Eigen::VectorXd::Zero(n);
            if (!ctx.library) throw Error(ErrorKind::LibraryMiss, "sequence model needs a D* library");
            const auto resolved = ctx.library->resolve_k(s.id, n, k);
            if (!resolved) throw Error(ErrorKind::LibraryMiss, "no D* entries for scenario '" + s.id + "'");
            if (k_used) *k_used = *resolved;
            const Eigen::VectorXd dstar = ctx.library->dstar_vector(s.id, n, *resolved);
            for (int i = 0; i < n; ++i) {
                const auto& theta = s.candidate_thetas[static_cast<std::size_t>(i)].weights;
                ll[i] = accumulated_evidence(st.deformed_history, st.corrections, theta, cfg, s) - dstar[i];
            }
            return ll;
        }
        case Model::Independent:
            for (int i = 0; i < n; ++i)
                ll[i] = log_likelihood_independent_episode(st.initial, st.deformed_history,
                                                           s.candidate_thetas[static_cast<std::size_t>(i)].weights, cfg.gamma, s);
            return ll;
        case Model::Final:
            for (int i = 0; i < n; ++i)
                ll[i] = log_likelihood_final(st.latest_deformed(), st.initial,
                                             s.candidate_thetas[static_cast<std::size_t>(i)].weights, cfg.gamma, s);
            return ll;
    }
    return ll;
}

inline Trajectory replan(const EpisodeState& st, const EpisodeContext& ctx) {
    const auto theta = planning_theta(st.belief, ctx.scenario, ctx.planner.plan_with_expected_theta);
    return plan(theta, ctx.scenario, st.plan, st.clock, ctx.planner).trajectory;
}

/// Clamps the force to the scenario bound; returns true when it was clamped.
inline bool clamp_force(Vec2& force, double bound) {
    const double n = force.norm();
    if (n <= bound) return false;
    force *= bound / n;
    return true;
}

/// Applies one correction: extends the deformation chain, updates the belief
/// (online models), and replans from the current clock.
inline EpisodeState apply_correction(EpisodeState st, const EpisodeContext& ctx, Correction c) {
    const auto& s = ctx.scenario;
    const bool clamped = clamp_force(c.force, s.hyper.force_bound);
    const auto kernel = s.kernel();
    st.deformed_history.push_back(deform(st.latest_deformed(), c, kernel));
    st.corrections.push_back(c);
    st.last_correction_clock = st.clock;

    EpisodeEvent ev;
    ev.index = static_cast<int>(st.corrections.size()) - 1;
    ev.clock = st.clock;
    ev.correction = c;
    ev.clamped = clamped;
    if (st.model == Model::Final) {
        ev.log_likelihoods = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.num_candidates()));
        // No online learning: the robot is displaced and keeps its plan.
        Trajectory pushed = deform(st.plan, c, kernel);
        pushed.matrix().topRows(st.clock + 1) = st.plan.matrix().topRows(st.clock + 1);
        st.plan = std::move(pushed);
    } else {
        int k_used = static_cast<int>(st.corrections.size());
        const Eigen::VectorXd ll = episode_log_likelihoods(st, ctx, st.model, &k_used);
        if (k_used != static_cast<int>(st.corrections.size()))
            st.warnings.push_back("D* library has no K=" + std::to_string(st.corrections.size()) + "; using K=" +
                                  std::to_string(k_used));
        ev.k_used = k_used;
        ev.log_likelihoods = ll;
        st.belief = posterior_update(st.prior, s.hyper.beta * ll);
        st.plan = replan(st, ctx);
    }
    ev.belief = st.belief;
    ev.deformed = st.deformed_history.back();
    ev.plan = st.plan;
    st.events.push_back(std::move(ev));
    return st;
}

/// Advances the clock by one step along the current plan.
inline EpisodeState tick(EpisodeState st) {
    if (st.clock < st.plan.horizon()) ++st.clock;
    return st;
}

/// Next correction of a noisily rational corrector: the push within the next
/// `lookahead` steps that most increases D under `true_theta` relative to
/// pushing with zero force, plus Gaussian force noise. None when no push
/// beats the deadband.
inline std::optional<Correction> simulated_human(const RewardParams& true_theta, const EpisodeState& st,
                                                 const Scenario& s, const HumanConfig& cfg, std::mt19937_64& rng) {
    if (st.finished) return std::nullopt;
    if (st.clock - st.last_correction_clock < cfg.cooldown) return std::nullopt;
    const int first = std::max(st.clock + 1, st.corrections.empty() ? 1 : st.corrections.back().timestep + 1);
    const int last = std::min(st.clock + cfg.lookahead, s.horizon - 1);
    if (first > last) return std::nullopt;

    const EvidenceConfig ecfg = EvidenceConfig::from(s.hyper);
    const double reward_weight = ecfg.lambda + (ecfg.include_final_reward ? 1.0 : 0.0);
    const Trajectory& base = st.latest_deformed();
    const double base_reward = reward(base, true_theta, s);
    const auto kernel = s.kernel();
    const double bound = s.hyper.force_bound;

    double best_gain = -std::numeric_limits<double>::infinity();
    Correction best;
    for (int t = first; t <= last; ++t) {
        for (int a = 0; a < s.num_agents; ++a) {
            auto gain = [&](const Eigen::VectorXd& f) {
                const Correction c{t, a, Vec2(f[0], f[1])};
                return reward_weight * (reward(deform(base, c, kernel), true_theta, s) - base_reward) - ecfg.gamma * f.squaredNorm();
            };
            Eigen::VectorXd start = Eigen::VectorXd::Zero(2);
            double start_gain = gain(start);
            for (int d = 0; d < 8; ++d) {
                const double ang = d * std::numbers::pi / 4.0;
                for (double r : {0.5 * bound, bound}) {
                    Eigen::VectorXd f(2);
                    f << r * std::cos(ang), r * std::sin(ang);
                    if (const double g = gain(f); g > start_gain) {
                        start_gain = g;
                        start = f;
                    }
                }
            }
            AscentOptions ao;
            ao.max_iterations = 60;
            ao.step_size = 0.1;
            auto res = projected_ascent(gain, start, [&](Eigen::VectorXd& x) { project_blocks(x, bound); }, ao);
            if (res.value > best_gain) {
                best_gain = res.value;
                best = Correction{t, a, Vec2(res.x[0], res.x[1])};
            }
        }
    }
    if (!(best_gain > cfg.deadband)) return std::nullopt;
    if (cfg.sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, cfg.sigma);
        const double nx = noise(rng);
        const double ny = noise(rng);
        best.force += Vec2(nx, ny);
        clamp_force(best.force, bound);
    }
    return best;
}

/// One clock step. A correction (external, or from the simulated corrector
/// when `human` is set) is applied first; then the clock advances.
inline EpisodeState step_episode(EpisodeState st, const EpisodeContext& ctx, std::optional<Correction> external = std::nullopt,
                                 const RewardParams* true_theta = nullptr, const HumanConfig* human = nullptr) {
    if (st.clock >= ctx.scenario.horizon) throw Error(ErrorKind::PreconditionFailed, "episode clock already at horizon");
    std::optional<Correction> c = std::move(external);
    if (!c && true_theta && human) c = simulated_human(*true_theta, st, ctx.scenario, *human, st.rng);
    if (c) st = apply_correction(std::move(st), ctx, *c);
    return tick(std::move(st));
}

struct EpisodeLog {
    std::string scenario_id;
    Model model = Model::Sequence;
    std::uint64_t seed = 0;
    double sigma = 0.0;
    nlohmann::json scenario;            // full scenario document (for replay)
    nlohmann::json dstar_table;         // {"K": [D* per candidate]} used by the sequence model
    Trajectory initial;
    std::vector<EpisodeEvent> events;
    Belief prior;
    Belief final_belief;
    int final_clock = 0;
    std::optional<int> true_theta_index;
    int predicted_theta_index = 0;

    [[nodiscard]] bool correct() const { return true_theta_index && *true_theta_index == predicted_theta_index; }
};

/// Completes the episode: the Final model performs its one-shot inference now.
inline EpisodeLog finalize_episode(EpisodeState st, const EpisodeContext& ctx, double sigma = 0.0) {
    const auto& s = ctx.scenario;
    if (st.model == Model::Final) {
        const Eigen::VectorXd ll = episode_log_likelihoods(st, ctx, Model::Final);
        st.belief = posterior_update(st.prior, s.hyper.beta * ll);
    }
    st.finished = true;
    EpisodeLog log;
    log.scenario_id = s.id;
    log.model = st.model;
    log.seed = st.rng_seed;
    log.sigma = sigma;
    log.scenario = to_json(s);
    if (st.model == Model::Sequence && ctx.library) {
        const int n = static_cast<int>(s.num_candidates());
        const int kmax = ctx.library->max_k(s.id, n);
        log.dstar_table = nlohmann::json::object();
        for (int k = 1; k <= kmax; ++k) {
            const Eigen::VectorXd v = ctx.library->dstar_vector(s.id, n, k);
            log.dstar_table[std::to_string(k)] = std::vector<double>(v.data(), v.data() + v.size());
        }
    }
    log.initial = st.initial;
    log.events = std::move(st.events);
    log.prior = st.prior;
    log.final_belief = st.belief;
    log.final_clock = st.clock;
    log.true_theta_index = s.true_theta_index;
    log.predicted_theta_index = st.belief.argmax();
    return log;
}

/// Runs a full simulated-corrector episode.
inline EpisodeLog run_episode(const EpisodeContext& ctx, Model model, std::uint64_t seed, double sigma,
                              const Trajectory* initial = nullptr) {
    const auto& s = ctx.scenario;
    if (!s.true_theta_index) throw Error(ErrorKind::PreconditionFailed, "scenario declares no true_theta_index");
    const RewardParams& truth = s.candidate_thetas[static_cast<std::size_t>(*s.true_theta_index)].weights;
    const HumanConfig human = HumanConfig::from(s, sigma);
    EpisodeState st = start_episode(ctx, model, seed, initial);
    while (st.clock < s.horizon) st = step_episode(std::move(st), ctx, std::nullopt, &truth, &human);
    return finalize_episode(std::move(st), ctx, sigma);
}

// ---- log I/O ------------------------------------------------------------------

inline nlohmann::json belief_record(const Belief& b) {
    const Eigen::VectorXd& lw = b.log_weights();
    const Eigen::VectorXd p = b.probabilities();
    return {{"log_weights", std::vector<double>(lw.data(), lw.data() + lw.size())},
            {"probabilities", std::vector<double>(p.data(), p.data() + p.size())}};
}

inline Belief belief_from_record(const nlohmann::json& j) {
    const auto v = j.at("log_weights").get<std::vector<double>>();
    return Belief(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
}

inline std::string serialize_log(const EpisodeLog& log) {
    std::ostringstream out;
    nlohmann::json header = {{"type", "header"},
                             {"scenario_id", log.scenario_id},
                             {"model", to_string(log.model)},
                             {"seed", log.seed},
                             {"sigma", log.sigma},
                             {"true_theta_index", log.true_theta_index ? nlohmann::json(*log.true_theta_index) : nlohmann::json(nullptr)},
                             {"prior", belief_record(log.prior)},
                             {"initial_plan", to_json(log.initial)},
                             {"dstar", log.dstar_table.is_null() ? nlohmann::json::object() : log.dstar_table},
                             {"scenario", log.scenario}};
    out << header.dump() << '\n';
    for (const auto& e : log.events) {
        const Eigen::VectorXd& ll = e.log_likelihoods;
        nlohmann::json j = {{"type", "correction"},
                            {"index", e.index},
                            {"clock", e.clock},
                            {"correction", to_json(e.correction)},
                            {"clamped", e.clamped},
                            {"k_used", e.k_used},
                            {"log_likelihoods", std::vector<double>(ll.data(), ll.data() + ll.size())},
                            {"belief", belief_record(e.belief)},
                            {"deformed", to_json(e.deformed)},
                            {"plan", to_json(e.plan)}};
        out << j.dump() << '\n';
    }
    nlohmann::json fin = {{"type", "final"},
                          {"clock", log.final_clock},
                          {"belief", belief_record(log.final_belief)},
                          {"predicted_theta_index", log.predicted_theta_index},
                          {"true_theta_index", log.true_theta_index ? nlohmann::json(*log.true_theta_index) : nlohmann::json(nullptr)},
                          {"correct", log.correct()}};
    out << fin.dump() << '\n';
    return out.str();
}

/// Parsed form of a JSON-lines episode log.
struct ParsedLog {
    nlohmann::json header;
    std::vector<nlohmann::json> events;
    nlohmann::json final_record;
};

inline ParsedLog parse_log(std::istream& in) {
    ParsedLog p;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::BadRequest, std::string("malformed log line: ") + e.what());
        }
        const auto type = j.value("type", "");
        if (type == "header") p.header = std::move(j);
        else if (type == "correction") p.events.push_back(std::move(j));
        else if (type == "final") p.final_record = std::move(j);
        else throw Error(ErrorKind::BadRequest, "unknown log record type '" + type + "'");
    }
    if (p.header.is_null()) throw Error(ErrorKind::BadRequest, "log has no header record");
    if (p.final_record.is_null()) throw Error(ErrorKind::BadRequest, "log has no final record");
    return p;
}

/// Checks a parsed log against the documented EpisodeLog schema; returns the
/// first problem found, empty when valid.
inline std::string validate_log_schema(const ParsedLog& p) {
    const auto& h = p.header;
    for (const char* key : {"scenario_id", "model", "seed", "prior", "initial_plan", "scenario", "dstar"})
        if (!h.contains(key)) return std::string("header missing '") + key + "'";
    int prev_clock = -1;
    for (std::size_t i = 0; i < p.events.size(); ++i) {
        const auto& e = p.events[i];
        for (const char* key : {"index", "clock", "correction", "belief", "plan", "deformed", "log_likelihoods"})
            if (!e.contains(key)) return "event " + std::to_string(i) + " missing '" + key + "'";
        if (e["index"].get<int>() != static_cast<int>(i)) return "event index out of order at " + std::to_string(i);
        const int clock = e["clock"].get<int>();
        if (clock < prev_clock) return "events not clock-ordered at " + std::to_string(i);
        prev_clock = clock;
    }
    for (const char* key : {"belief", "predicted_theta_index", "clock"})
        if (!p.final_record.contains(key)) return std::string("final record missing '") + key + "'";
    const Belief fb = belief_from_record(p.final_record["belief"]);
    if (fb.argmax() != p.final_record["predicted_theta_index"].get<int>()) return "predicted index is not the belief argmax";
    return {};
}

struct ReplayReport {
    bool ok = true;
    std::string message;
};

/// Re-executes the logged correction stream and compares every belief.
inline ReplayReport replay_log(const ParsedLog& p, std::optional<Model> expected_model = std::nullopt,
                               double tolerance = 0.0) {
    const Model model = parse_model(p.header.at("model").get<std::string>());
    if (expected_model && *expected_model != model)
        throw Error(ErrorKind::PreconditionFailed,
                    "log was recorded with model '" + to_string(model) + "', refusing to replay as '" + to_string(*expected_model) + "'");
    const Scenario s = scenario_from_json(p.header.at("scenario"));
    DStarLibrary lib;
    for (const auto& [k, values] : p.header.at("dstar").items()) {
        const auto v = values.get<std::vector<double>>();
        for (std::size_t i = 0; i < v.size(); ++i) {
            DStarEntry e;
            e.dstar = v[i];
            lib.insert(s.id, static_cast<int>(i), std::stoi(k), e);
        }
    }
    const EpisodeContext ctx{s, model == Model::Sequence ? &lib : nullptr};
    const Trajectory initial = trajectory_from_json(p.header.at("initial_plan"));
    EpisodeState st = start_episode(ctx, model, p.header.at("seed").get<std::uint64_t>(), &initial);

    auto compare = [&](const Belief& got, const nlohmann::json& rec, const std::string& where) -> std::optional<ReplayReport> {
        const Belief want = belief_from_record(rec);
        if (want.size() != got.size()) return ReplayReport{false, where + ": belief length differs"};
        const Eigen::VectorXd gp = got.probabilities();
        const auto wp = rec.at("probabilities").get<std::vector<double>>();
        for (Eigen::Index i = 0; i < got.size(); ++i) {
            const double d = std::max(std::abs(got.log_weights()[i] - want.log_weights()[i]),
                                      std::abs(gp[i] - wp[static_cast<std::size_t>(i)]));
            if (d > tolerance) {
                std::ostringstream m;
                m.precision(17);
                m << where << ": theta " << i << " replayed p=" << gp[i] << " logged p=" << wp[static_cast<std::size_t>(i)];
                return ReplayReport{false, m.str()};
            }
        }
        return std::nullopt;
    };

    for (std::size_t i = 0; i < p.events.size(); ++i) {
        const auto& e = p.events[i];
        const int clock = e.at("clock").get<int>();
        while (st.clock < clock) st = tick(std::move(st));
        st = apply_correction(std::move(st), ctx, correction_from_json(e.at("correction")));
        if (auto bad = compare(st.belief, e.at("belief"), "event " + std::to_string(i))) return *bad;
    }
    const int final_clock = p.final_record.at("clock").get<int>();
    while (st.clock < final_clock) st = tick(std::move(st));
    const EpisodeLog log = finalize_episode(std::move(st), ctx);
    if (auto bad = compare(log.final_belief, p.final_record.at("belief"), "final belief")) return *bad;
    return {true, "replay matched " + std::to_string(p.events.size()) + " belief updates and the final belief"};
}

}  // namespace seqcorr

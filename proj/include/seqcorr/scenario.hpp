#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqcorr/error.hpp"
#include "seqcorr/trajectory.hpp"

namespace seqcorr {

inline constexpr int kScenarioSchemaVersion = 1;

struct GoalRegion {
    Vec2 center = Vec2::Zero();
    double radius = 1.0;
    std::string label;
};

struct DangerZone {
    Vec2 center = Vec2::Zero();
    double radius = 1.0;
};

enum class FeatureKind { Goal, Formation, Danger, Efficiency };

struct FeatureId {
    FeatureKind kind = FeatureKind::Goal;
    int goal_index = -1;  // only for FeatureKind::Goal
    std::string name;
};

struct CandidateTheta {
    std::string label;
    Eigen::VectorXd weights;
};

struct Hyperparameters {
    double mu = 0.2;
    int kernel_order = 1;
    double alpha = 0.9;
    double gamma = 0.1;
    double lambda = 1.0;
    bool include_final_reward = false;
    double beta = 1.0;
    double force_bound = 1.0;
};

/// Normalization constants for the bounded features.
struct FeatureScales {
    double goal = 0.0;        // distance at which goal proximity reaches 0; 0 = workspace diagonal
    double goal_discount = 0.8;  // per-step weight decay away from the terminal waypoint; 0 = terminal only
    double formation = 0.5;   // variance scale (m^2)
    double danger = 0.05;     // scale of the time-mean squared relative penetration
    double efficiency = 10.0; // path-length scale (m)
};

struct HumanPolicy {
    int lookahead = 2;
    int cooldown = 3;
    double deadband = 0.01;
};

struct Scenario {
    std::string id;
    int num_agents = 1;
    int horizon = 20;
    double dt = 0.5;
    Vec2 workspace_min = Vec2::Zero();
    Vec2 workspace_max = Vec2(10.0, 10.0);
    std::vector<Vec2> starts;
    std::vector<GoalRegion> goal_regions;
    std::vector<DangerZone> danger_zones;
    std::vector<FeatureId> feature_set;
    std::vector<CandidateTheta> candidate_thetas;
    std::vector<double> prior;  // probabilities; empty = uniform
    std::optional<int> true_theta_index;
    Hyperparameters hyper;
    FeatureScales scales;
    HumanPolicy human;

    [[nodiscard]] int waypoint_count() const noexcept { return horizon + 1; }
    [[nodiscard]] std::size_t num_features() const noexcept { return feature_set.size(); }
    [[nodiscard]] std::size_t num_candidates() const noexcept { return candidate_thetas.size(); }
    [[nodiscard]] double goal_scale() const {
        return scales.goal > 0.0 ? scales.goal : (workspace_max - workspace_min).norm();
    }
    [[nodiscard]] DeformationKernel kernel() const {
        return make_kernel(waypoint_count(), hyper.mu, hyper.kernel_order);
    }
};

inline FeatureId parse_feature_id(const std::string& name, const std::vector<GoalRegion>& goals) {
    if (name == "formation") return {FeatureKind::Formation, -1, name};
    if (name == "danger") return {FeatureKind::Danger, -1, name};
    if (name == "efficiency") return {FeatureKind::Efficiency, -1, name};
    if (name.rfind("goal:", 0) == 0) {
        const std::string label = name.substr(5);
        for (std::size_t g = 0; g < goals.size(); ++g)
            if (goals[g].label == label) return {FeatureKind::Goal, static_cast<int>(g), name};
        throw Error(ErrorKind::InvalidScenario, "feature references unknown goal region '" + label + "'");
    }
    throw Error(ErrorKind::InvalidScenario, "unknown feature '" + name + "'");
}

inline void validate(const Scenario& s) {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidScenario, m); };
    if (s.id.empty()) fail("scenario id is empty");
    if (s.num_agents < 1) fail("num_agents must be >= 1");
    if (s.horizon < 2) fail("horizon must be >= 2 steps");
    if (!(s.dt > 0.0)) fail("dt must be positive");
    if (static_cast<int>(s.starts.size()) != s.num_agents) fail("one start per agent required");
    for (const auto& g : s.goal_regions)
        if (!(g.radius > 0.0)) fail("goal region radius must be positive");
    for (const auto& d : s.danger_zones)
        if (!(d.radius > 0.0)) fail("danger zone radius must be positive");
    if (s.feature_set.empty()) fail("feature_set is empty");
    if (s.candidate_thetas.empty()) fail("candidate_thetas is empty");
    for (const auto& c : s.candidate_thetas) {
        if (c.weights.size() != static_cast<Eigen::Index>(s.feature_set.size()))
            fail("candidate theta '" + c.label + "' has wrong dimension");
        if (!c.weights.allFinite()) fail("candidate theta has non-finite weights");
    }
    if (!s.prior.empty()) {
        if (s.prior.size() != s.candidate_thetas.size()) fail("prior length differs from candidate count");
        for (double p : s.prior)
            if (!(p > 0.0)) fail("prior probabilities must be positive");
    }
    if (s.true_theta_index && (*s.true_theta_index < 0 || *s.true_theta_index >= static_cast<int>(s.num_candidates())))
        fail("true_theta_index out of range");
    const auto& h = s.hyper;
    if (!(s.scales.goal_discount >= 0.0 && s.scales.goal_discount <= 1.0)) fail("goal_discount must be in [0, 1]");
    if (!(s.scales.formation > 0.0) || !(s.scales.danger > 0.0) || !(s.scales.efficiency > 0.0)) fail("feature scales must be positive");
    if (!(h.mu > 0.0)) throw Error(ErrorKind::InvalidHyperparameter, "mu must be positive");
    if (!(h.alpha > 0.0 && h.alpha <= 1.0)) throw Error(ErrorKind::InvalidHyperparameter, "alpha must be in (0, 1]");
    if (h.gamma < 0.0 || h.lambda < 0.0) throw Error(ErrorKind::InvalidHyperparameter, "gamma and lambda must be >= 0");
    if (!(h.force_bound > 0.0)) throw Error(ErrorKind::InvalidHyperparameter, "force_bound must be positive");
    if (h.kernel_order != 1 && h.kernel_order != 2)
        throw Error(ErrorKind::InvalidHyperparameter, "kernel_order must be 1 or 2");
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
    try {
        const int version = j.at("schema_version").get<int>();
        if (version != kScenarioSchemaVersion)
            throw Error(ErrorKind::InvalidScenario, "unsupported schema_version " + std::to_string(version));
        Scenario s;
        s.id = j.at("id").get<std::string>();
        s.num_agents = j.at("num_agents").get<int>();
        s.horizon = j.at("horizon").get<int>();
        s.dt = j.at("dt").get<double>();
        if (j.contains("workspace")) {
            s.workspace_min = vec2_from_json(j["workspace"].at("min"));
            s.workspace_max = vec2_from_json(j["workspace"].at("max"));
        }
        for (const auto& p : j.at("starts")) s.starts.push_back(vec2_from_json(p));
        for (const auto& g : j.value("goal_regions", nlohmann::json::array()))
            s.goal_regions.push_back({vec2_from_json(g.at("center")), g.at("radius").get<double>(), g.at("label").get<std::string>()});
        for (const auto& d : j.value("danger_zones", nlohmann::json::array()))
            s.danger_zones.push_back({vec2_from_json(d.at("center")), d.at("radius").get<double>()});
        for (const auto& f : j.at("feature_set")) s.feature_set.push_back(parse_feature_id(f.get<std::string>(), s.goal_regions));
        for (const auto& c : j.at("candidate_thetas")) {
            CandidateTheta ct;
            const auto& w = c.is_object() ? c.at("weights") : c;
            if (c.is_object()) ct.label = c.value("label", "");
            ct.weights.resize(static_cast<Eigen::Index>(w.size()));
            for (std::size_t i = 0; i < w.size(); ++i) ct.weights[static_cast<Eigen::Index>(i)] = w[i].get<double>();
            if (ct.label.empty()) ct.label = "theta_" + std::to_string(s.candidate_thetas.size());
            s.candidate_thetas.push_back(std::move(ct));
        }
        if (j.contains("prior")) s.prior = j["prior"].get<std::vector<double>>();
        if (j.contains("true_theta_index") && !j["true_theta_index"].is_null())
            s.true_theta_index = j["true_theta_index"].get<int>();
        if (j.contains("hyperparameters")) {
            const auto& h = j["hyperparameters"];
            s.hyper.mu = h.value("mu", s.hyper.mu);
            s.hyper.kernel_order = h.value("kernel_order", s.hyper.kernel_order);
            s.hyper.alpha = h.value("alpha", s.hyper.alpha);
            s.hyper.gamma = h.value("gamma", s.hyper.gamma);
            s.hyper.lambda = h.value("lambda", s.hyper.lambda);
            s.hyper.include_final_reward = h.value("include_final_reward", s.hyper.include_final_reward);
            s.hyper.beta = h.value("beta_noise", s.hyper.beta);
            s.hyper.force_bound = h.value("force_bound", s.hyper.force_bound);
        }
        if (j.contains("feature_scales")) {
            const auto& f = j["feature_scales"];
            s.scales.goal = f.value("goal", s.scales.goal);
            s.scales.goal_discount = f.value("goal_discount", s.scales.goal_discount);
            s.scales.formation = f.value("formation", s.scales.formation);
            s.scales.danger = f.value("danger", s.scales.danger);
            s.scales.efficiency = f.value("efficiency", s.scales.efficiency);
        }
        if (j.contains("human")) {
            const auto& h = j["human"];
            s.human.lookahead = h.value("lookahead", s.human.lookahead);
            s.human.cooldown = h.value("cooldown", s.human.cooldown);
            s.human.deadband = h.value("deadband", s.human.deadband);
        }
        validate(s);
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidScenario, e.what());
    }
}

inline nlohmann::json to_json(const Scenario& s) {
    nlohmann::json j;
    j["schema_version"] = kScenarioSchemaVersion;
    j["id"] = s.id;
    j["num_agents"] = s.num_agents;
    j["horizon"] = s.horizon;
    j["dt"] = s.dt;
    j["workspace"] = {{"min", vec2_json(s.workspace_min)}, {"max", vec2_json(s.workspace_max)}};
    j["starts"] = nlohmann::json::array();
    for (const auto& p : s.starts) j["starts"].push_back(vec2_json(p));
    j["goal_regions"] = nlohmann::json::array();
    for (const auto& g : s.goal_regions)
        j["goal_regions"].push_back({{"center", vec2_json(g.center)}, {"radius", g.radius}, {"label", g.label}});
    j["danger_zones"] = nlohmann::json::array();
    for (const auto& d : s.danger_zones) j["danger_zones"].push_back({{"center", vec2_json(d.center)}, {"radius", d.radius}});
    j["feature_set"] = nlohmann::json::array();
    for (const auto& f : s.feature_set) j["feature_set"].push_back(f.name);
    j["candidate_thetas"] = nlohmann::json::array();
    for (const auto& c : s.candidate_thetas)
        j["candidate_thetas"].push_back({{"label", c.label}, {"weights", std::vector<double>(c.weights.data(), c.weights.data() + c.weights.size())}});
    if (!s.prior.empty()) j["prior"] = s.prior;
    j["true_theta_index"] = s.true_theta_index ? nlohmann::json(*s.true_theta_index) : nlohmann::json(nullptr);
    j["hyperparameters"] = {{"mu", s.hyper.mu},
                            {"kernel_order", s.hyper.kernel_order},
                            {"alpha", s.hyper.alpha},
                            {"gamma", s.hyper.gamma},
                            {"lambda", s.hyper.lambda},
                            {"include_final_reward", s.hyper.include_final_reward},
                            {"beta_noise", s.hyper.beta},
                            {"force_bound", s.hyper.force_bound}};
    j["feature_scales"] = {{"goal", s.scales.goal}, {"goal_discount", s.scales.goal_discount}, {"formation", s.scales.formation}, {"danger", s.scales.danger}, {"efficiency", s.scales.efficiency}};
    j["human"] = {{"lookahead", s.human.lookahead}, {"cooldown", s.human.cooldown}, {"deadband", s.human.deadband}};
    return j;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::NotFound, "cannot open scenario file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidScenario, path + ": " + e.what());
    }
    return scenario_from_json(j);
}

/// Prior as log-probabilities (uniform when the scenario declares none).
inline Eigen::VectorXd prior_log_weights(const Scenario& s) {
    const auto n = static_cast<Eigen::Index>(s.num_candidates());
    Eigen::VectorXd lw(n);
    if (s.prior.empty()) {
        lw.setConstant(-std::log(static_cast<double>(n)));
        return lw;
    }
    double total = 0.0;
    for (double p : s.prior) total += p;
    for (Eigen::Index i = 0; i < n; ++i) lw[i] = std::log(s.prior[static_cast<std::size_t>(i)] / total);
    return lw;
}

}  // namespace seqcorr

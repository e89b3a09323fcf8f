#pragma once

// Live episodes keyed by session id. Mutations on one session run one at a
// time in arrival order; readers get immutable snapshots and an ordered,
// gap-free event stream.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "seqcorr/dstar.hpp"
#include "seqcorr/error.hpp"
#include "seqcorr/scenario.hpp"
#include "seqcorr/sim.hpp"

namespace seqcorr {

enum class SessionMode { Auto, Stepped };

inline SessionMode parse_mode(const std::string& s) {
    if (s == "auto") return SessionMode::Auto;
    if (s == "stepped") return SessionMode::Stepped;
    throw Error(ErrorKind::BadRequest, "mode must be 'auto' or 'stepped'");
}

inline std::string to_string(SessionMode m) { return m == SessionMode::Auto ? "auto" : "stepped"; }

/// Ticket lock: waiters acquire in the order they arrived.
class FifoMutex {
public:
    void lock() {
        std::unique_lock l(m_);
        const std::uint64_t ticket = next_++;
        cv_.wait(l, [&] { return serving_ == ticket; });
    }
    void unlock() {
        {
            std::lock_guard l(m_);
            ++serving_;
        }
        cv_.notify_all();
    }

private:
    std::mutex m_;
    std::condition_variable cv_;
    std::uint64_t next_ = 0;
    std::uint64_t serving_ = 0;
};

struct StreamEvent {
    std::uint64_t seq = 0;
    std::string kind;  // created | tick | belief_update | end
    nlohmann::json data;
};

struct CorrectionReply {
    nlohmann::json snapshot;
    bool clamped = false;
    bool restamped = false;
};

class Session {
public:
    Session(std::string id, std::shared_ptr<const Scenario> scenario, std::shared_ptr<const DStarLibrary> library,
            Model model, std::uint64_t seed, SessionMode mode, double tick_rate)
        : id_(std::move(id)),
          scenario_(std::move(scenario)),
          library_(std::move(library)),
          ctx_{*scenario_, library_.get()},
          mode_(mode),
          tick_rate_(tick_rate),
          created_at_(std::chrono::system_clock::now()) {
        state_ = start_episode(ctx_, model, seed);
        push_event("created");
    }

    ~Session() { stop_ticker(); }

    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;

    [[nodiscard]] const std::string& id() const noexcept { return id_; }
    [[nodiscard]] SessionMode mode() const noexcept { return mode_; }
    [[nodiscard]] const Scenario& scenario() const noexcept { return *scenario_; }

    void start_ticker() {
        if (mode_ != SessionMode::Auto) return;
        const auto period = std::chrono::duration<double>(1.0 / tick_rate_);
        ticker_ = std::jthread([this, period](std::stop_token stop) {
            std::mutex m;
            std::condition_variable_any cv;
            auto next = std::chrono::steady_clock::now();
            while (!stop.stop_requested()) {
                next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(period);
                {
                    std::unique_lock l(m);
                    if (cv.wait_until(l, stop, next, [] { return false; })) break;
                }
                if (stop.stop_requested()) break;
                try {
                    if (!advance(1)) break;
                } catch (const Error&) {
                    break;
                }
            }
        });
    }

    void stop_ticker() {
        if (ticker_.joinable()) {
            ticker_.request_stop();
            if (ticker_.get_id() != std::this_thread::get_id()) ticker_.join();
        }
    }

    /// Applies a correction at the current clock or later; earlier timesteps
    /// are moved up to the clock.
    CorrectionReply submit_correction(Correction c) {
        std::lock_guard exec(exec_);
        ensure_open();
        const Scenario& s = *scenario_;
        if (state_.clock >= s.horizon) throw Error(ErrorKind::PreconditionFailed, "episode already reached the horizon");
        if (c.agent < 0 || c.agent >= s.num_agents) throw Error(ErrorKind::BadRequest, "agent out of range");
        if (!c.force.allFinite()) throw Error(ErrorKind::BadRequest, "force must be finite");
        if (c.timestep > s.horizon - 1) throw Error(ErrorKind::BadRequest, "timestep beyond the last interior waypoint");
        CorrectionReply reply;
        const int earliest = std::max(1, state_.clock);
        if (c.timestep < earliest) {
            c.timestep = earliest;
            reply.restamped = true;
        }
        EpisodeState next = apply_correction(state_, ctx_, c);
        reply.clamped = next.events.back().clamped;
        {
            std::lock_guard l(data_);
            state_ = std::move(next);
            push_event_locked("belief_update");
        }
        cv_.notify_all();
        reply.snapshot = snapshot();
        return reply;
    }

    /// Advances the clock; returns false when the horizon was already reached.
    bool advance(int steps) {
        std::lock_guard exec(exec_);
        ensure_open();
        bool moved = false;
        for (int i = 0; i < steps && state_.clock < scenario_->horizon; ++i) {
            EpisodeState next = tick(state_);
            {
                std::lock_guard l(data_);
                state_ = std::move(next);
                push_event_locked("tick");
            }
            cv_.notify_all();
            moved = true;
        }
        return moved;
    }

    /// Finalizes the episode and closes the stream.
    EpisodeLog end() {
        stop_ticker();
        std::lock_guard exec(exec_);
        ensure_open();
        EpisodeLog log = finalize_episode(state_, ctx_);
        {
            std::lock_guard l(data_);
            state_.belief = log.final_belief;
            state_.finished = true;
            ended_ = true;
            push_event_locked("end");
        }
        cv_.notify_all();
        return log;
    }

    [[nodiscard]] nlohmann::json snapshot() const {
        std::lock_guard l(data_);
        return snapshot_locked();
    }

    /// Events with seq >= from; blocks up to `wait` for at least one when none
    /// are available. `closed` is set once the end event has been delivered.
    std::vector<StreamEvent> events_since(std::uint64_t from, std::chrono::milliseconds wait, bool& closed) const {
        std::unique_lock l(data_);
        cv_.wait_for(l, wait, [&] { return events_.size() > from || ended_; });
        std::vector<StreamEvent> out;
        for (std::size_t i = from; i < events_.size(); ++i) out.push_back(events_[i]);
        closed = ended_ && from + out.size() >= events_.size();
        return out;
    }

    [[nodiscard]] std::uint64_t latest_seq() const {
        std::lock_guard l(data_);
        return events_.empty() ? 0 : events_.back().seq;
    }

    [[nodiscard]] bool ended() const {
        std::lock_guard l(data_);
        return ended_;
    }

private:
    void ensure_open() const {
        std::lock_guard l(data_);
        if (ended_) throw Error(ErrorKind::Gone, "session " + id_ + " has ended");
    }

    void push_event(const std::string& kind) {
        std::lock_guard l(data_);
        push_event_locked(kind);
    }

    void push_event_locked(const std::string& kind) {
        StreamEvent e;
        e.seq = events_.size();
        e.kind = kind;
        e.data = stream_payload_locked(kind);
        e.data["seq"] = e.seq;
        events_.push_back(std::move(e));
    }

    [[nodiscard]] nlohmann::json stream_payload_locked(const std::string& kind) const {
        nlohmann::json positions = nlohmann::json::array();
        for (int a = 0; a < scenario_->num_agents; ++a) positions.push_back(vec2_json(state_.plan.position(state_.clock, a)));
        nlohmann::json j = {{"clock", state_.clock},
                            {"agent_positions", std::move(positions)},
                            {"plan", to_json(state_.plan)},
                            {"belief", belief_record(state_.belief)},
                            {"last_event_kind", kind}};
        if (kind == "belief_update" && !state_.events.empty()) {
            const auto& ev = state_.events.back();
            j["correction"] = to_json(ev.correction);
            j["clamped"] = ev.clamped;
            j["deformed"] = to_json(ev.deformed);
        }
        return j;
    }

    [[nodiscard]] nlohmann::json snapshot_locked() const {
        nlohmann::json positions = nlohmann::json::array();
        for (int a = 0; a < scenario_->num_agents; ++a) positions.push_back(vec2_json(state_.plan.position(state_.clock, a)));
        const auto created = std::chrono::duration_cast<std::chrono::milliseconds>(created_at_.time_since_epoch()).count();
        return {{"session_id", id_},
                {"scenario_id", scenario_->id},
                {"model", to_string(state_.model)},
                {"mode", to_string(mode_)},
                {"tick_rate", tick_rate_},
                {"created_at_ms", created},
                {"clock", state_.clock},
                {"horizon", scenario_->horizon},
                {"agent_positions", std::move(positions)},
                {"initial_plan", to_json(state_.initial)},
                {"plan", to_json(state_.plan)},
                {"deformed", to_json(state_.latest_deformed())},
                {"belief", belief_record(state_.belief)},
                {"corrections", state_.corrections.size()},
                {"warnings", state_.warnings},
                {"finished", state_.finished}};
    }

    std::string id_;
    std::shared_ptr<const Scenario> scenario_;
    std::shared_ptr<const DStarLibrary> library_;
    EpisodeContext ctx_;
    SessionMode mode_;
    double tick_rate_;
    std::chrono::system_clock::time_point created_at_;

    FifoMutex exec_;
    mutable std::mutex data_;
    mutable std::condition_variable cv_;
    EpisodeState state_;
    std::vector<StreamEvent> events_;
    bool ended_ = false;
    std::jthread ticker_;
};

struct SessionManagerConfig {
    std::optional<std::filesystem::path> log_dir;
    double default_tick_rate = 5.0;
};

class SessionManager {
public:
    explicit SessionManager(SessionManagerConfig cfg = {}) : cfg_(std::move(cfg)) {}

    ~SessionManager() {
        std::lock_guard l(m_);
        for (auto& [id, s] : sessions_) s->stop_ticker();
    }

    void add_scenario(Scenario s, std::optional<DStarLibrary> library = std::nullopt) {
        validate(s);
        std::lock_guard l(m_);
        const std::string id = s.id;
        scenarios_[id] = std::make_shared<const Scenario>(std::move(s));
        if (library) libraries_[id] = std::make_shared<const DStarLibrary>(std::move(*library));
        else libraries_.erase(id);
    }

    [[nodiscard]] nlohmann::json list_scenarios() const {
        std::lock_guard l(m_);
        nlohmann::json out = nlohmann::json::array();
        for (const auto& [id, s] : scenarios_) {
            nlohmann::json labels = nlohmann::json::array();
            for (const auto& c : s->candidate_thetas) labels.push_back(c.label);
            const auto lib = libraries_.find(id);
            const int kmax = lib == libraries_.end() ? 0 : lib->second->max_k(id, static_cast<int>(s->num_candidates()));
            out.push_back({{"id", id},
                           {"num_agents", s->num_agents},
                           {"horizon", s->horizon},
                           {"candidates", std::move(labels)},
                           {"library_max_k", kmax},
                           {"scenario", to_json(*s)}});
        }
        return out;
    }

    std::shared_ptr<Session> create(const std::string& scenario_id, Model model, std::uint64_t seed, SessionMode mode,
                                    std::optional<double> tick_rate = std::nullopt) {
        std::shared_ptr<const Scenario> scenario;
        std::shared_ptr<const DStarLibrary> library;
        {
            std::lock_guard l(m_);
            const auto it = scenarios_.find(scenario_id);
            if (it == scenarios_.end()) throw Error(ErrorKind::NotFound, "unknown scenario '" + scenario_id + "'");
            scenario = it->second;
            if (const auto lib = libraries_.find(scenario_id); lib != libraries_.end()) library = lib->second;
        }
        if (model == Model::Sequence &&
            (!library || library->max_k(scenario_id, static_cast<int>(scenario->num_candidates())) < 1))
            throw Error(ErrorKind::PreconditionFailed, "no D* library loaded for scenario '" + scenario_id +
                                                           "'; run `seqcorr precompute --scenario <file> --out <library>` and "
                                                           "restart the server with --library");
        const double rate = tick_rate.value_or(cfg_.default_tick_rate);
        if (!(rate > 0.0)) throw Error(ErrorKind::BadRequest, "tick_rate must be positive");
        auto session = std::make_shared<Session>(new_id(), std::move(scenario), std::move(library), model, seed, mode, rate);
        {
            std::lock_guard l(m_);
            sessions_[session->id()] = session;
        }
        session->start_ticker();
        return session;
    }

    /// Live session; ended ids raise Gone, unknown ids NotFound.
    [[nodiscard]] std::shared_ptr<Session> get(const std::string& id) const {
        std::lock_guard l(m_);
        if (const auto it = sessions_.find(id); it != sessions_.end()) return it->second;
        if (ended_.contains(id)) throw Error(ErrorKind::Gone, "session " + id + " has ended");
        throw Error(ErrorKind::NotFound, "unknown session " + id);
    }

    /// Finalizes, persists (when a log directory is configured) and removes.
    EpisodeLog end(const std::string& id) {
        std::shared_ptr<Session> session;
        {
            std::lock_guard l(m_);
            const auto it = sessions_.find(id);
            if (it == sessions_.end()) throw Error(ErrorKind::NotFound, "unknown session " + id);
            session = it->second;
            sessions_.erase(it);
            ended_.insert(id);
        }
        EpisodeLog log = session->end();
        if (cfg_.log_dir) {
            std::filesystem::create_directories(*cfg_.log_dir);
            std::ofstream out(*cfg_.log_dir / (id + ".jsonl"), std::ios::binary | std::ios::trunc);
            out << serialize_log(log);
        }
        std::lock_guard l(m_);
        ended_sessions_[id] = session;
        return log;
    }

    /// An ended session's stream stays readable until the manager goes away.
    [[nodiscard]] std::shared_ptr<Session> find_any(const std::string& id) const {
        std::lock_guard l(m_);
        if (const auto it = sessions_.find(id); it != sessions_.end()) return it->second;
        if (const auto it = ended_sessions_.find(id); it != ended_sessions_.end()) return it->second;
        throw Error(ErrorKind::NotFound, "unknown session " + id);
    }

    [[nodiscard]] std::size_t size() const {
        std::lock_guard l(m_);
        return sessions_.size();
    }

private:
    std::string new_id() {
        std::lock_guard l(m_);
        char buf[17];
        for (;;) {
            std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng_()));
            if (!sessions_.contains(buf) && !ended_.contains(buf)) return buf;
        }
    }

    SessionManagerConfig cfg_;
    mutable std::mutex m_;
    std::map<std::string, std::shared_ptr<const Scenario>> scenarios_;
    std::map<std::string, std::shared_ptr<const DStarLibrary>> libraries_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::map<std::string, std::shared_ptr<Session>> ended_sessions_;
    std::set<std::string> ended_;
    std::mt19937_64 rng_{std::random_device{}()};
};

}  // namespace seqcorr

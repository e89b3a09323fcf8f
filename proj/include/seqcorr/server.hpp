#pragma once

// HTTP front end for SessionManager. Mutations are JSON request/response;
// GET /sessions/{id}/events is a text/event-stream.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>

#include <json.hpp>

#include "seqcorr/error.hpp"
#include "seqcorr/session.hpp"

// after Eigen: <resolv.h> defines a `_res` macro
#include <httplib.h>

namespace seqcorr {

inline int http_status(ErrorKind k) {
    switch (k) {
        case ErrorKind::NotFound: return 404;
        case ErrorKind::Gone: return 410;
        case ErrorKind::PreconditionFailed:
        case ErrorKind::LibraryMiss: return 412;
        default: return 400;
    }
}

inline std::string sse_frame(const StreamEvent& e) {
    return "id: " + std::to_string(e.seq) + "\nevent: " + e.kind + "\ndata: " + e.data.dump() + "\n\n";
}

class SessionServer {
public:
    explicit SessionServer(SessionManager& sessions) : sessions_(sessions) { routes(); }

    SessionServer(const SessionServer&) = delete;
    SessionServer& operator=(const SessionServer&) = delete;

    httplib::Server& http() noexcept { return srv_; }

    bool listen(const std::string& host, int port) { return srv_.listen(host, port); }
    int bind_any(const std::string& host) { return srv_.bind_to_any_port(host); }
    bool listen_after_bind() { return srv_.listen_after_bind(); }
    void stop() { srv_.stop(); }
    void wait_until_ready() const { srv_.wait_until_ready(); }

private:
    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

    static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static Handler guarded(Handler h) {
        return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
            try {
                h(req, res);
            } catch (const Error& e) {
                send_json(res, http_status(e.kind()), {{"error", std::string(to_string(e.kind()))}, {"message", e.what()}});
            } catch (const nlohmann::json::exception& e) {
                send_json(res, 400, {{"error", "bad-request"}, {"message", e.what()}});
            }
        };
    }

    static nlohmann::json body_json(const httplib::Request& req) {
        if (req.body.empty()) return nlohmann::json::object();
        auto j = nlohmann::json::parse(req.body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::BadRequest, "request body must be a JSON object");
        return j;
    }

    void routes() {
        srv_.Get("/scenarios", guarded([this](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, sessions_.list_scenarios());
        }));

        srv_.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto body = body_json(req);
            if (!body.contains("scenario_id") || !body["scenario_id"].is_string())
                throw Error(ErrorKind::BadRequest, "scenario_id is required");
            const Model model = parse_model(body.value("model", std::string("sequence")));
            const auto seed = body.value("seed", std::uint64_t{0});
            const SessionMode mode = parse_mode(body.value("mode", std::string("stepped")));
            std::optional<double> rate;
            if (body.contains("tick_rate")) rate = body["tick_rate"].get<double>();
            auto session = sessions_.create(body["scenario_id"].get<std::string>(), model, seed, mode, rate);
            send_json(res, 201, session->snapshot());
        }));

        srv_.Get(R"(/sessions/([0-9a-f]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, sessions_.get(req.matches[1])->snapshot());
        }));

        srv_.Post(R"(/sessions/([0-9a-f]+)/corrections)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto session = sessions_.get(req.matches[1]);
            const auto body = body_json(req);
            for (const char* key : {"timestep", "agent", "force"})
                if (!body.contains(key)) throw Error(ErrorKind::BadRequest, std::string("missing '") + key + "'");
            const auto& f = body["force"];
            if (!f.is_array() || f.size() != 2 || !f[0].is_number() || !f[1].is_number())
                throw Error(ErrorKind::BadRequest, "force must be [x, y]");
            if (!body["timestep"].is_number_integer() || !body["agent"].is_number_integer())
                throw Error(ErrorKind::BadRequest, "timestep and agent must be integers");
            const Correction c{body["timestep"].get<int>(), body["agent"].get<int>(), Vec2(f[0].get<double>(), f[1].get<double>())};
            const auto reply = session->submit_correction(c);
            nlohmann::json out = reply.snapshot;
            out["clamped"] = reply.clamped;
            out["restamped"] = reply.restamped;
            send_json(res, 200, out);
        }));

        srv_.Post(R"(/sessions/([0-9a-f]+)/step)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto session = sessions_.get(req.matches[1]);
            if (session->mode() != SessionMode::Stepped)
                throw Error(ErrorKind::PreconditionFailed, "session advances on its own (auto mode)");
            const int steps = body_json(req).value("steps", 1);
            if (steps < 1) throw Error(ErrorKind::BadRequest, "steps must be >= 1");
            session->advance(steps);
            send_json(res, 200, session->snapshot());
        }));

        srv_.Get(R"(/sessions/([0-9a-f]+)/events)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto session = sessions_.find_any(req.matches[1]);
            std::uint64_t from = session->latest_seq();
            if (req.has_param("from")) {
                try {
                    from = std::stoull(req.get_param_value("from"));
                } catch (const std::exception&) {
                    throw Error(ErrorKind::BadRequest, "from must be a non-negative integer");
                }
            }
            auto cursor = std::make_shared<std::uint64_t>(from);
            res.set_header("Cache-Control", "no-cache");
            res.set_chunked_content_provider("text/event-stream", [session, cursor](std::size_t, httplib::DataSink& sink) {
                bool closed = false;
                const auto events = session->events_since(*cursor, std::chrono::milliseconds(500), closed);
                for (const auto& e : events) {
                    const std::string frame = sse_frame(e);
                    if (!sink.write(frame.data(), frame.size())) return false;
                    *cursor = e.seq + 1;
                }
                if (closed) {
                    sink.done();
                    return true;
                }
                if (events.empty()) {
                    static constexpr char keepalive[] = ": keepalive\n\n";
                    if (!sink.write(keepalive, sizeof keepalive - 1)) return false;
                }
                return true;
            });
        }));

        srv_.Delete(R"(/sessions/([0-9a-f]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const EpisodeLog log = sessions_.end(req.matches[1]);
            res.status = 200;
            res.set_content(serialize_log(log), "application/x-ndjson");
        }));
    }

    SessionManager& sessions_;
    httplib::Server srv_;
};

}  // namespace seqcorr

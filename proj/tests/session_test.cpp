#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "fixtures.hpp"
#include "seqcorr/server.hpp"

using namespace seqcorr;
using namespace std::chrono_literals;

namespace {

const DStarLibrary& micro_library() {
    static const DStarLibrary lib = [] {
        const Scenario s = fixtures::load("micro");
        return build_library(s, 5, optimizer_config_for(s));
    }();
    return lib;
}

std::unique_ptr<SessionManager> make_manager(SessionManagerConfig cfg = {}) {
    auto m = std::make_unique<SessionManager>(std::move(cfg));
    m->add_scenario(fixtures::load("micro"), micro_library());
    m->add_scenario(fixtures::load("two_agent"));
    return m;
}

nlohmann::json stable(nlohmann::json snap) {
    snap.erase("session_id");
    snap.erase("created_at_ms");
    return snap;
}

std::vector<StreamEvent> drain(const Session& s) {
    bool closed = false;
    return s.events_since(0, 0ms, closed);
}

struct SseFrame {
    std::uint64_t id = 0;
    std::string event;
    nlohmann::json data;
};

std::vector<SseFrame> parse_sse(const std::string& text) {
    std::vector<SseFrame> out;
    std::istringstream in(text);
    SseFrame cur;
    bool have = false;
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) {
            if (have) out.push_back(cur);
            cur = {};
            have = false;
        } else if (line.rfind("id: ", 0) == 0) {
            cur.id = std::stoull(line.substr(4));
            have = true;
        } else if (line.rfind("event: ", 0) == 0) {
            cur.event = line.substr(7);
        } else if (line.rfind("data: ", 0) == 0) {
            cur.data = nlohmann::json::parse(line.substr(6));
        }
    }
    return out;
}

class ServerTest : public ::testing::Test {
protected:
    void SetUp() override {
        log_dir_ = fixtures::temp_dir("server");
        manager_ = make_manager({log_dir_, 5.0});
        server_ = std::make_unique<SessionServer>(*manager_);
        port_ = server_->bind_any("127.0.0.1");
        ASSERT_GT(port_, 0);
        thread_ = std::thread([this] { server_->listen_after_bind(); });
        server_->wait_until_ready();
    }

    void TearDown() override {
        server_->stop();
        thread_.join();
        server_.reset();
        manager_.reset();
        std::filesystem::remove_all(log_dir_);
    }

    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(10, 0);
        return c;
    }

    std::string create(const nlohmann::json& body) {
        auto res = client().Post("/sessions", body.dump(), "application/json");
        EXPECT_TRUE(res);
        EXPECT_EQ(res->status, 201) << res->body;
        return nlohmann::json::parse(res->body)["session_id"].get<std::string>();
    }

    std::filesystem::path log_dir_;
    std::unique_ptr<SessionManager> manager_;
    std::unique_ptr<SessionServer> server_;
    std::thread thread_;
    int port_ = 0;
};

}  // namespace

TEST(Sessions, CreateErrors) {
    auto m = make_manager();
    try {
        m->create("nope", Model::Independent, 1, SessionMode::Stepped);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NotFound);
    }
    try {
        m->create("two_agent", Model::Sequence, 1, SessionMode::Stepped);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::PreconditionFailed);
        EXPECT_NE(std::string(e.what()).find("precompute"), std::string::npos);
    }
    EXPECT_THROW(m->create("micro", Model::Independent, 1, SessionMode::Auto, 0.0), Error);
    EXPECT_EQ(m->size(), 0U);
}

TEST(Sessions, InitialSnapshotIsTheStartPlan) {
    auto m = make_manager();
    const auto a = m->create("two_agent", Model::Independent, 7, SessionMode::Stepped);
    const auto b = m->create("two_agent", Model::Independent, 7, SessionMode::Stepped);
    EXPECT_NE(a->id(), b->id());
    const auto snap = a->snapshot();
    EXPECT_EQ(trajectory_from_json(snap["plan"]), initial_plan(fixtures::load("two_agent")));
    EXPECT_EQ(snap["clock"], 0);
    EXPECT_EQ(snap["mode"], "stepped");
    EXPECT_EQ(stable(snap), stable(b->snapshot()));
}

TEST(Sessions, ZeroForceAndClamping) {
    auto m = make_manager();
    const auto s = m->create("two_agent", Model::Independent, 1, SessionMode::Stepped);
    const auto prior = belief_from_record(s->snapshot()["belief"]);
    auto reply = s->submit_correction({3, 0, Vec2::Zero()});
    EXPECT_LE((belief_from_record(reply.snapshot["belief"]).probabilities() - prior.probabilities()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_FALSE(reply.clamped);
    reply = s->submit_correction({5, 1, Vec2(30, 40)});
    EXPECT_TRUE(reply.clamped);
    EXPECT_EQ(reply.snapshot["corrections"], 2);
}

TEST(Sessions, PastTimestepsAreRestamped) {
    auto m = make_manager();
    const auto s = m->create("two_agent", Model::Independent, 1, SessionMode::Stepped);
    s->advance(5);
    const auto reply = s->submit_correction({2, 0, Vec2(0.5, 0)});
    EXPECT_TRUE(reply.restamped);
    const auto events = drain(*s);
    EXPECT_EQ(events.back().data["correction"]["timestep"], 5);
    EXPECT_FALSE(s->submit_correction({8, 0, Vec2(0.5, 0)}).restamped);
    try {
        s->submit_correction({0, 2, Vec2(0.5, 0)});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::BadRequest);
    }
    EXPECT_THROW(s->submit_correction({20, 0, Vec2(0.5, 0)}), Error);
    EXPECT_THROW(s->submit_correction({6, 0, Vec2(NAN, 0)}), Error);
    s->advance(100);
    try {
        s->submit_correction({6, 0, Vec2(0.5, 0)});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::PreconditionFailed);
    }
}

TEST(Sessions, SteppedStreamSerializesEvents) {
    auto m = make_manager();
    const auto s = m->create("micro", Model::Sequence, 1, SessionMode::Stepped);
    s->advance(2);
    auto events = drain(*s);
    ASSERT_EQ(events.size(), 3U);
    EXPECT_EQ(events[0].kind, "created");
    EXPECT_EQ(events[1].kind, "tick");
    EXPECT_EQ(events[2].kind, "tick");

    s->submit_correction({3, 0, Vec2(-0.5, 0.3)});
    s->advance(1);
    events = drain(*s);
    ASSERT_EQ(events.size(), 5U);
    EXPECT_EQ(events[3].kind, "belief_update");
    EXPECT_EQ(events[4].kind, "tick");
    for (std::size_t i = 0; i < events.size(); ++i) EXPECT_EQ(events[i].seq, i);
}

TEST(Sessions, StreamReconstructsTheLog) {
    const auto dir = fixtures::temp_dir("logs");
    auto m = make_manager({dir, 5.0});
    const auto s = m->create("micro", Model::Sequence, 3, SessionMode::Stepped);
    const std::string id = s->id();
    const std::vector<Correction> script{{1, 0, Vec2(-0.6, 0.2)}, {3, 0, Vec2(-0.4, 0.5)}, {4, 0, Vec2(0.1, 0.3)}};
    for (const auto& c : script) {
        while (s->snapshot()["clock"].get<int>() < c.timestep) s->advance(1);
        s->submit_correction(c);
    }
    const EpisodeLog log = m->end(id);
    const auto events = drain(*s);
    std::vector<nlohmann::json> updates;
    for (const auto& e : events)
        if (e.kind == "belief_update") updates.push_back(e.data);
    ASSERT_EQ(updates.size(), log.events.size());
    for (std::size_t i = 0; i < updates.size(); ++i) {
        EXPECT_EQ(belief_from_record(updates[i]["belief"]), log.events[i].belief);
        EXPECT_EQ(correction_from_json(updates[i]["correction"]), log.events[i].correction);
        EXPECT_EQ(trajectory_from_json(updates[i]["deformed"]), log.events[i].deformed);
        EXPECT_EQ(trajectory_from_json(updates[i]["plan"]), log.events[i].plan);
    }
    EXPECT_EQ(events.back().kind, "end");
    EXPECT_EQ(belief_from_record(events.back().data["belief"]), log.final_belief);

    std::ifstream in(dir / (id + ".jsonl"));
    const ParsedLog parsed = parse_log(in);
    EXPECT_EQ(validate_log_schema(parsed), "");
    const auto replay = replay_log(parsed);
    EXPECT_TRUE(replay.ok) << replay.message;
    std::filesystem::remove_all(dir);
}

TEST(Sessions, EndSemantics) {
    auto m = make_manager();
    const auto s = m->create("micro", Model::Final, 1, SessionMode::Stepped);
    const auto log = m->end(s->id());
    EXPECT_TRUE(log.events.empty());
    EXPECT_TRUE(s->ended());
    try {
        m->end(s->id());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NotFound);
    }
    try {
        (void)m->get(s->id());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Gone);
    }
    try {
        s->submit_correction({1, 0, Vec2(0.1, 0)});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Gone);
    }
    EXPECT_THROW((void)m->get("0123456789abcdef"), Error);
}

TEST(Sessions, Isolation) {
    auto m = make_manager();
    const auto a = m->create("two_agent", Model::Independent, 1, SessionMode::Stepped);
    const auto b = m->create("two_agent", Model::Independent, 1, SessionMode::Stepped);
    const auto solo = m->create("two_agent", Model::Independent, 1, SessionMode::Stepped);
    for (int i = 0; i < 4; ++i) {
        a->submit_correction({2 + 3 * i, i % 2, Vec2(-0.8, 0.1 * i)});
        b->advance(2);
        solo->advance(2);
        a->advance(3);
        if (i == 1) {
            b->submit_correction({5, 1, Vec2(0.2, 0.2)});
            solo->submit_correction({5, 1, Vec2(0.2, 0.2)});
        }
    }
    EXPECT_EQ(stable(b->snapshot()), stable(solo->snapshot()));
    EXPECT_NE(stable(a->snapshot())["belief"], stable(b->snapshot())["belief"]);
}

TEST(Sessions, AutoModeTicksOnItsOwn) {
    auto m = make_manager();
    const auto s = m->create("micro", Model::Independent, 1, SessionMode::Auto, 200.0);
    const auto deadline = std::chrono::steady_clock::now() + 5s;
    while (s->snapshot()["clock"].get<int>() < 6 && std::chrono::steady_clock::now() < deadline) std::this_thread::sleep_for(5ms);
    EXPECT_EQ(s->snapshot()["clock"], 6);
    const auto log = m->end(s->id());
    EXPECT_EQ(log.final_clock, 6);
}

TEST(Sessions, FifoMutexServesInArrivalOrder) {
    FifoMutex mu;
    std::vector<int> order;
    mu.lock();
    std::vector<std::thread> threads;
    for (int i = 0; i < 4; ++i) {
        threads.emplace_back([&, i] {
            std::lock_guard l(mu);
            order.push_back(i);
        });
        std::this_thread::sleep_for(20ms);
    }
    mu.unlock();
    for (auto& t : threads) t.join();
    EXPECT_EQ(order, (std::vector<int>{0, 1, 2, 3}));
}

TEST(Http, StatusMapping) {
    EXPECT_EQ(http_status(ErrorKind::NotFound), 404);
    EXPECT_EQ(http_status(ErrorKind::Gone), 410);
    EXPECT_EQ(http_status(ErrorKind::PreconditionFailed), 412);
    EXPECT_EQ(http_status(ErrorKind::LibraryMiss), 412);
    EXPECT_EQ(http_status(ErrorKind::BadRequest), 400);
    EXPECT_EQ(sse_frame({3, "tick", {{"clock", 1}}}), "id: 3\nevent: tick\ndata: {\"clock\":1}\n\n");
}

TEST_F(ServerTest, ScenarioListing) {
    auto res = client().Get("/scenarios");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    const auto list = nlohmann::json::parse(res->body);
    ASSERT_EQ(list.size(), 2U);
    EXPECT_EQ(list[0]["id"], "micro");
    EXPECT_EQ(list[0]["library_max_k"], 5);
    EXPECT_EQ(list[1]["library_max_k"], 0);
}

TEST_F(ServerTest, ErrorStatuses) {
    auto c = client();
    EXPECT_EQ(c.Post("/sessions", "{", "application/json")->status, 400);
    EXPECT_EQ(c.Post("/sessions", "{}", "application/json")->status, 400);
    EXPECT_EQ(c.Post("/sessions", R"({"scenario_id":"nope","model":"final"})", "application/json")->status, 404);
    EXPECT_EQ(c.Post("/sessions", R"({"scenario_id":"two_agent","model":"sequence"})", "application/json")->status, 412);
    EXPECT_EQ(c.Post("/sessions", R"({"scenario_id":"micro","model":"psychic"})", "application/json")->status, 400);
    EXPECT_EQ(c.Post("/sessions", R"({"scenario_id":"micro","mode":"sometimes"})", "application/json")->status, 400);
    EXPECT_EQ(c.Get("/sessions/0123456789abcdef")->status, 404);
    EXPECT_EQ(c.Delete("/sessions/0123456789abcdef")->status, 404);

    const std::string id = create({{"scenario_id", "micro"}, {"model", "independent"}});
    const std::string base = "/sessions/" + id;
    EXPECT_EQ(c.Post(base + "/corrections", R"({"timestep":1,"agent":0})", "application/json")->status, 400);
    EXPECT_EQ(c.Post(base + "/corrections", R"({"timestep":1,"agent":0,"force":[1]})", "application/json")->status, 400);
    EXPECT_EQ(c.Post(base + "/corrections", R"({"timestep":1,"agent":3,"force":[1,0]})", "application/json")->status, 400);
    EXPECT_EQ(c.Post(base + "/corrections", R"({"timestep":"x","agent":0,"force":[1,0]})", "application/json")->status, 400);
    EXPECT_EQ(c.Post(base + "/step", R"({"steps":0})", "application/json")->status, 400);
    const auto err = nlohmann::json::parse(c.Post(base + "/corrections", "[]", "application/json")->body);
    EXPECT_EQ(err["error"], "bad-request");

    const std::string live = create({{"scenario_id", "micro"}, {"model", "final"}, {"mode", "auto"}, {"tick_rate", 1.0}});
    EXPECT_EQ(c.Post("/sessions/" + live + "/step", "{}", "application/json")->status, 412);
}

TEST_F(ServerTest, EpisodeLifecycle) {
    auto c = client();
    const std::string id = create({{"scenario_id", "micro"}, {"model", "sequence"}, {"seed", 11}});
    const std::string base = "/sessions/" + id;

    auto res = c.Post(base + "/step", R"({"steps":2})", "application/json");
    ASSERT_EQ(res->status, 200);
    EXPECT_EQ(nlohmann::json::parse(res->body)["clock"], 2);

    res = c.Post(base + "/corrections", R"({"timestep":1,"agent":0,"force":[-3,4]})", "application/json");
    ASSERT_EQ(res->status, 200) << res->body;
    auto body = nlohmann::json::parse(res->body);
    EXPECT_TRUE(body["clamped"].get<bool>());
    EXPECT_TRUE(body["restamped"].get<bool>());
    EXPECT_EQ(body["corrections"], 1);

    res = c.Get(base);
    ASSERT_EQ(res->status, 200);
    EXPECT_EQ(nlohmann::json::parse(res->body)["corrections"], 1);

    std::string streamed;
    std::thread reader([&] {
        auto sc = client();
        sc.Get(base + "/events?from=0", [&](const char* data, std::size_t n) {
            streamed.append(data, n);
            return true;
        });
    });
    std::this_thread::sleep_for(100ms);
    c.Post(base + "/step", "{}", "application/json");

    res = c.Delete(base);
    ASSERT_EQ(res->status, 200);
    EXPECT_EQ(res->get_header_value("Content-Type"), "application/x-ndjson");
    reader.join();

    std::istringstream in(res->body);
    const ParsedLog parsed = parse_log(in);
    EXPECT_EQ(validate_log_schema(parsed), "");
    EXPECT_TRUE(replay_log(parsed).ok);
    EXPECT_TRUE(std::filesystem::exists(log_dir_ / (id + ".jsonl")));

    const auto frames = parse_sse(streamed);
    std::vector<std::string> kinds;
    for (const auto& f : frames) kinds.push_back(f.event);
    EXPECT_EQ(kinds, (std::vector<std::string>{"created", "tick", "tick", "belief_update", "tick", "end"}));
    for (std::size_t i = 0; i < frames.size(); ++i) EXPECT_EQ(frames[i].id, i);
    EXPECT_EQ(belief_from_record(frames[3].data["belief"]), belief_from_record(parsed.events[0]["belief"]));
    EXPECT_EQ(belief_from_record(frames.back().data["belief"]), belief_from_record(parsed.final_record["belief"]));

    const auto replayed = c.Get(base + "/events?from=0");
    ASSERT_EQ(replayed->status, 200);
    EXPECT_EQ(parse_sse(replayed->body).size(), frames.size());

    EXPECT_EQ(c.Get(base)->status, 410);
    EXPECT_EQ(c.Post(base + "/step", "{}", "application/json")->status, 410);
    EXPECT_EQ(c.Delete(base)->status, 404);
}

TEST_F(ServerTest, ReconnectDoesNotChangeState) {
    auto c = client();
    const std::string id = create({{"scenario_id", "micro"}, {"model", "independent"}});
    const std::string base = "/sessions/" + id;
    c.Post(base + "/step", R"({"steps":1})", "application/json");
    const auto before = stable(nlohmann::json::parse(c.Get(base)->body));
    for (int i = 0; i < 2; ++i) {
        auto sc = client();
        sc.set_read_timeout(1, 0);
        std::string got;
        sc.Get(base + "/events?from=0", [&](const char* data, std::size_t n) {
            got.append(data, n);
            return got.find("event: tick") == std::string::npos;
        });
        EXPECT_NE(got.find("event: created"), std::string::npos);
    }
    EXPECT_EQ(stable(nlohmann::json::parse(c.Get(base)->body)), before);
    EXPECT_EQ(c.Get(base + "/events?from=abc")->status, 400);
}

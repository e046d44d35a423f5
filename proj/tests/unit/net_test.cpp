#include "twincore/net/gateway.hpp"
#include "twincore/net/remote_backend.hpp"
#include "twincore/net/robot_client.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <gtest/gtest.h>

#include <chrono>
#include <condition_variable>
#include <thread>

namespace twincore::net {
namespace {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using namespace std::chrono_literals;

template <class Pred>
bool eventually(Pred pred, std::chrono::milliseconds limit = 5000ms)
{
    const auto end = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < end) {
        if (pred()) {
            return true;
        }
        std::this_thread::sleep_for(2ms);
    }
    return pred();
}

// Minimal threaded WebSocket client for tests.
class WsClient {
public:
    WsClient(std::uint16_t port, const std::string& target)
    {
        tcp::resolver resolver(io_);
        beast::get_lowest_layer(ws_).connect(resolver.resolve("127.0.0.1", std::to_string(port)));
        ws_.text(true);
        ws_.handshake("127.0.0.1", target);
        read();
        thread_ = std::thread([this] { io_.run(); });
    }

    ~WsClient()
    {
        asio::post(io_, [this] {
            beast::error_code ignored;
            beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ignored);
            beast::get_lowest_layer(ws_).socket().close(ignored);
        });
        thread_.join();
    }

    void send(std::string text)
    {
        asio::post(io_, [this, text = std::move(text)] {
            beast::error_code ignored;
            ws_.write(asio::buffer(text), ignored);
        });
    }

    std::vector<wire::Frame> frames() const
    {
        std::lock_guard lock(mutex_);
        return frames_;
    }

    bool open() const
    {
        std::lock_guard lock(mutex_);
        return open_;
    }

    std::string close_reason() const
    {
        std::lock_guard lock(mutex_);
        return reason_;
    }

private:
    void read()
    {
        ws_.async_read(buffer_, [this](beast::error_code ec, std::size_t) {
            std::lock_guard lock(mutex_);
            if (ec) {
                open_ = false;
                reason_ = std::string(ws_.reason().reason.data(), ws_.reason().reason.size());
                return;
            }
            frames_.push_back(wire::parse_frame(beast::buffers_to_string(buffer_.data())));
            buffer_.consume(buffer_.size());
            asio::post(io_, [this] { read(); });
        });
    }

    asio::io_context io_;
    websocket::stream<beast::tcp_stream> ws_{io_};
    beast::flat_buffer buffer_;
    std::thread thread_;
    mutable std::mutex mutex_;
    std::vector<wire::Frame> frames_;
    bool open_ = true;
    std::string reason_;
};

template <class T>
std::vector<T> of_type(const std::vector<wire::Frame>& frames)
{
    std::vector<T> out;
    for (const auto& f : frames) {
        if (const auto* t = std::get_if<T>(&f)) {
            out.push_back(*t);
        }
    }
    return out;
}

class FixedBackend final : public PolicyBackend {
public:
    FixedBackend(const Clock& clock, std::vector<std::string> fragments, std::int64_t cadence)
        : clock_(&clock), fragments_(std::move(fragments)), cadence_(cadence)
    {
    }
    std::unique_ptr<GenerationHandle> generate(const PolicyRequest&) override
    {
        return std::make_unique<TimedGeneration>(*clock_, fragments_, cadence_);
    }

private:
    const Clock* clock_;
    std::vector<std::string> fragments_;
    std::int64_t cadence_;
};

PolicyServer::Factory fixed(std::vector<std::string> fragments, std::int64_t cadence = 1)
{
    return [=](const Clock& clock) { return std::make_unique<FixedBackend>(clock, fragments, cadence); };
}

BackendFactory scripted_factory()
{
    return [](const Clock& clock) -> std::unique_ptr<PolicyBackend> {
        ScriptedConfig config;
        config.rules = builtin_rules();
        return std::make_unique<ScriptedBackend>(clock, std::move(config));
    };
}

PolicyRequest request(std::string utterance)
{
    PolicyRequest r;
    r.utterance = std::move(utterance);
    r.observation.scene = builtin_fixture().initial_scene;
    return r;
}

std::string drain(GenerationHandle& gen)
{
    std::string text;
    eventually([&] {
        for (auto& f : gen.poll()) {
            text += f;
        }
        return gen.status() != GenerationStatus::live;
    });
    return text;
}

TEST(Endpoint, Parse)
{
    EXPECT_EQ(parse_endpoint("localhost:9000").host, "localhost");
    EXPECT_EQ(parse_endpoint(":9000").port, 9000);
    EXPECT_THROW(parse_endpoint("nohost"), std::invalid_argument);
    EXPECT_THROW(parse_endpoint("h:0"), std::invalid_argument);
    EXPECT_THROW(parse_endpoint("h:x"), std::invalid_argument);
}

TEST(PolicyRequestJson, RoundTrip)
{
    auto r = request("Put the toy in the box.");
    r.robot_state.tick = 12;
    r.robot_state.moving = true;
    r.observation.frame_id = 12;
    r.observation.task_complete = true;
    r.dialogue_context.push_back({"hi", parse_structured_output("[RES] Hello.", ParseMode::strict)});
    const auto back = policy_request_from_json(nlohmann::json::parse(to_json(r).dump()));
    EXPECT_EQ(back.utterance, r.utterance);
    EXPECT_EQ(back.observation, r.observation);
    EXPECT_EQ(back.robot_state, r.robot_state);
    ASSERT_EQ(back.dialogue_context.size(), 1u);
    EXPECT_EQ(back.dialogue_context[0].reply, r.dialogue_context[0].reply);
    EXPECT_THROW(policy_request_from_json(nlohmann::json::parse(R"({"utterance":"x"})")), std::invalid_argument);
}

TEST(RemoteBackend, FixedStringCompletes)
{
    PolicyServer server(fixed({"[RES] I see ", "an apple ", "on the table."}));
    RemoteBackend backend({"127.0.0.1", server.port()});
    auto gen = backend.generate(request("What do you see?"));
    EXPECT_EQ(drain(*gen), "[RES] I see an apple on the table.");
    EXPECT_EQ(gen->status(), GenerationStatus::completed);
    EXPECT_TRUE(gen->poll().empty());
}

TEST(RemoteBackend, ScriptedServerMatchesLocalOutput)
{
    PolicyServer server([](const Clock& clock) -> std::unique_ptr<PolicyBackend> {
        ScriptedConfig config;
        config.rules = builtin_rules();
        config.cadence_ms = 1;
        return std::make_unique<ScriptedBackend>(clock, std::move(config));
    });
    RemoteBackend backend({"127.0.0.1", server.port()});
    auto gen = backend.generate(request("Stop!"));
    EXPECT_EQ(drain(*gen), "[HALT] Stopping immediately.");
}

TEST(RemoteBackend, CloseMidStreamIsInterrupted)
{
    asio::io_context io;
    tcp::acceptor acceptor(io, tcp::endpoint(asio::ip::make_address("127.0.0.1"), 0));
    std::thread peer([&] {
        tcp::socket s(io);
        acceptor.accept(s);
        asio::streambuf in;
        asio::read_until(s, in, '\n');
        asio::write(s, asio::buffer(std::string("[RES] Hel\nlo th\n")));
        s.close();
    });
    RemoteBackend backend({"127.0.0.1", acceptor.local_endpoint().port()});
    auto gen = backend.generate(request("hi"));
    EXPECT_EQ(drain(*gen), "[RES] Hello th");
    EXPECT_EQ(gen->status(), GenerationStatus::failed);
    ASSERT_TRUE(gen->failure().has_value());
    EXPECT_EQ(gen->failure()->rfind("stream_interrupted", 0), 0u);
    peer.join();
}

TEST(RemoteBackend, CancelClosesUpstream)
{
    std::vector<std::string> many(200, "word ");
    many.insert(many.begin(), "[RES] ");
    PolicyServer server(fixed(many, 20));
    RemoteBackend backend({"127.0.0.1", server.port()});
    auto gen = backend.generate(request("Tell me a story."));
    std::string got;
    ASSERT_TRUE(eventually([&] {
        for (auto& f : gen->poll()) {
            got += f;
        }
        return got.size() > 6;
    }));
    EXPECT_EQ(gen->cancel(), GenerationStatus::cancelled);
    EXPECT_EQ(gen->status(), GenerationStatus::cancelled);
    EXPECT_TRUE(gen->poll().empty());
    EXPECT_TRUE(eventually([&] {
        const auto ev = server.events();
        return std::find(ev.begin(), ev.end(), "client_closed") != ev.end();
    }));
    const auto ev = server.events();
    EXPECT_EQ(std::find(ev.begin(), ev.end(), "complete"), ev.end());
}

TEST(RemoteBackend, UnreachableIsUnavailable)
{
    std::uint16_t port = 0;
    {
        asio::io_context io;
        tcp::acceptor a(io, tcp::endpoint(asio::ip::make_address("127.0.0.1"), 0));
        port = a.local_endpoint().port();
    }
    RemoteBackend backend({"127.0.0.1", port});
    try {
        backend.generate(request("hi"));
        FAIL() << "expected BackendError";
    } catch (const BackendError& e) {
        EXPECT_EQ(e.kind(), BackendError::Kind::unavailable);
    }
}

TEST(OutboundQueue, HaltOvertakesSaturatedChunks)
{
    OutboundQueue q;
    for (int i = 0; i < 1000; ++i) {
        q.push("chunk" + std::to_string(i));
    }
    q.push("halt", true);
    q.push("chunk-after");
    EXPECT_EQ(q.pop(), "halt");
    EXPECT_EQ(q.pop(), "chunk0");
    EXPECT_EQ(q.size(), 1000u);
}

struct Running {
    Gateway gateway;
    explicit Running(BackendFactory backend = scripted_factory())
        : gateway([&] {
              GatewayConfig c;
              c.make_backend = std::move(backend);
              c.quantum_ms = 2;
              return c;
          }())
    {
        gateway.start();
    }
    RobotClientConfig robot_config(std::string session = "default") const
    {
        RobotClientConfig r;
        r.endpoint = {"127.0.0.1", gateway.port()};
        r.session = std::move(session);
        r.tick_ms = 10;
        return r;
    }
};

bool has_event(const std::vector<LogRecord>& log, std::string_view event, std::string_view key = "",
               std::string_view value = "")
{
    return std::any_of(log.begin(), log.end(), [&](const LogRecord& r) {
        return r.event == event && (key.empty() || r.detail.value(std::string(key), std::string()) == value);
    });
}

TEST(Gateway, UtteranceProducesSpeechFramesAndObserverLog)
{
    Running g;
    RobotClient robot(g.robot_config());
    robot.start();
    WsClient observer(g.gateway.port(), "/observer");
    WsClient user(g.gateway.port(), "/user");
    ASSERT_TRUE(eventually([&] { return g.gateway.session_log("default").size() >= 4; }));
    user.send(wire::serialize(wire::Utterance{"What do you see?", 0}));
    ASSERT_TRUE(eventually([&] { return !of_type<wire::SpeechEnd>(user.frames()).empty(); }));
    std::string spoken;
    for (const auto& d : of_type<wire::SpeechDelta>(user.frames())) {
        spoken += d.text;
    }
    EXPECT_EQ(spoken, "I see an apple, a can and a toy on the table.");
    EXPECT_EQ(of_type<wire::SpeechEnd>(user.frames())[0].reason, wire::SpeechEnd::Reason::done);
    ASSERT_TRUE(eventually([&] {
        for (const auto& l : of_type<wire::Log>(observer.frames())) {
            if (l.record["event"] == "utterance") {
                return true;
            }
        }
        return false;
    }));
}

TEST(Gateway, MalformedFrameDroppedAndCounted)
{
    Running g;
    WsClient user(g.gateway.port(), "/user");
    ASSERT_TRUE(eventually([&] { return !g.gateway.sessions().empty(); }));
    user.send("{not json");
    user.send(R"({"type":"halt","epoch":9,"ts":0})");
    ASSERT_TRUE(eventually([&] { return g.gateway.malformed_frames() == 2; }));
    user.send(wire::serialize(wire::Utterance{"What do you see?", 0}));
    EXPECT_TRUE(eventually([&] { return !of_type<wire::SpeechEnd>(user.frames()).empty(); }));
    EXPECT_TRUE(user.open());
    EXPECT_TRUE(has_event(g.gateway.session_log("default"), "malformed_frame", "channel", "user"));
}

TEST(Gateway, SecondRobotRejected)
{
    Running g;
    RobotClient first(g.robot_config());
    first.start();
    RobotClient second(g.robot_config());
    second.start();
    EXPECT_TRUE(eventually([&] { return !second.connected(); }));
    EXPECT_EQ(second.close_reason(), "robot already attached");
    EXPECT_TRUE(first.connected());
}

TEST(Gateway, UnknownPathRefused)
{
    Running g;
    EXPECT_THROW(WsClient(g.gateway.port(), "/teleport"), boost::system::system_error);
    EXPECT_THROW(WsClient(g.gateway.port(), "/user?session=bad%20id"), boost::system::system_error);
}

TEST(Gateway, PickCanOverTheWire)
{
    Running g;
    RobotClient robot(g.robot_config());
    robot.start();
    WsClient user(g.gateway.port(), "/user");
    ASSERT_TRUE(eventually([&] { return has_event(g.gateway.session_log("default"), "attach", "channel", "user"); }));
    user.send(wire::serialize(wire::Utterance{"Please pick up the can.", 0}));
    ASSERT_TRUE(eventually([&] { return has_event(g.gateway.session_log("default"), "task_end"); }, 15000ms));
    EXPECT_TRUE(has_event(g.gateway.session_log("default"), "task_outcome", "outcome", "completed"));
    EXPECT_EQ(robot.scene().gripper_contents, std::optional<std::string>("can"));
    EXPECT_EQ(of_type<wire::Chunk>(robot.received()).size(), 8u);
}

TEST(Gateway, StopOverTheWireHalts)
{
    Running g;
    RobotClient robot(g.robot_config());
    robot.start();
    WsClient user(g.gateway.port(), "/user");
    ASSERT_TRUE(eventually([&] { return has_event(g.gateway.session_log("default"), "attach", "channel", "user"); }));
    user.send(wire::serialize(wire::Utterance{"Please pick up the can.", 0}));
    ASSERT_TRUE(eventually([&] { return robot.state().moving; }));
    std::this_thread::sleep_for(150ms);
    user.send(wire::serialize(wire::Utterance{"Stop!", 0}));
    ASSERT_TRUE(eventually([&] { return has_event(g.gateway.session_log("default"), "task_outcome"); }));
    EXPECT_TRUE(has_event(g.gateway.session_log("default"), "task_outcome", "outcome", "halted"));
    const auto frames = robot.received();
    const auto halt = std::find_if(frames.begin(), frames.end(),
                                   [](const wire::Frame& f) { return std::holds_alternative<wire::Halt>(f); });
    ASSERT_NE(halt, frames.end());
    const auto halt_epoch = std::get<wire::Halt>(*halt).epoch;
    for (auto it = halt; it != frames.end(); ++it) {
        if (const auto* c = std::get_if<wire::Chunk>(&*it)) {
            EXPECT_GE(c->chunk.epoch, halt_epoch);
        }
    }
    EXPECT_TRUE(eventually([&] { return !robot.state().moving; }));
}

TEST(Gateway, ShutdownMidActionEndsWithHalt)
{
    auto g = std::make_unique<Running>();
    RobotClient robot(g->robot_config());
    robot.start();
    WsClient user(g->gateway.port(), "/user");
    ASSERT_TRUE(
        eventually([&] { return has_event(g->gateway.session_log("default"), "attach", "channel", "user"); }));
    user.send(wire::serialize(wire::Utterance{"Please pick up the can.", 0}));
    ASSERT_TRUE(eventually([&] { return robot.state().moving; }));
    g->gateway.stop();
    ASSERT_TRUE(eventually([&] { return !robot.connected(); }));
    const auto frames = robot.received();
    ASSERT_FALSE(frames.empty());
    EXPECT_TRUE(std::holds_alternative<wire::Halt>(frames.back()));
    EXPECT_TRUE(eventually([&] { return !robot.state().moving; }));
}

TEST(Gateway, SessionsAreIsolated)
{
    Running g;
    WsClient a(g.gateway.port(), "/user?session=alpha");
    WsClient b(g.gateway.port(), "/user?session=beta");
    ASSERT_TRUE(eventually([&] { return g.gateway.sessions().size() == 2; }));
    a.send(wire::serialize(wire::Utterance{"What do you see?", 0}));
    ASSERT_TRUE(eventually([&] { return !of_type<wire::SpeechEnd>(a.frames()).empty(); }));
    std::this_thread::sleep_for(50ms);
    EXPECT_TRUE(b.frames().empty());
    EXPECT_FALSE(has_event(g.gateway.session_log("beta"), "utterance"));
}

TEST(Gateway, RemoteBackendEndToEnd)
{
    PolicyServer policy([](const Clock& clock) -> std::unique_ptr<PolicyBackend> {
        ScriptedConfig config;
        config.rules = builtin_rules();
        return std::make_unique<ScriptedBackend>(clock, std::move(config));
    });
    const Endpoint ep{"127.0.0.1", policy.port()};
    Running g([ep](const Clock&) { return std::make_unique<RemoteBackend>(ep); });
    RobotClient robot(g.robot_config());
    robot.start();
    WsClient user(g.gateway.port(), "/user");
    ASSERT_TRUE(eventually([&] { return has_event(g.gateway.session_log("default"), "attach", "channel", "user"); }));
    user.send(wire::serialize(wire::Utterance{"Please pick up the can.", 0}));
    ASSERT_TRUE(eventually([&] { return has_event(g.gateway.session_log("default"), "task_end"); }, 15000ms));
    EXPECT_TRUE(has_event(g.gateway.session_log("default"), "task_outcome", "outcome", "completed"));
}

TEST(Gateway, BindFailure)
{
    Running g;
    GatewayConfig c;
    c.make_backend = scripted_factory();
    c.port = g.gateway.port();
    Gateway clash(c);
    EXPECT_THROW(clash.start(), BindFailure);
}

} // namespace
} // namespace twincore::net

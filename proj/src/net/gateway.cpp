#include "twincore/net/gateway.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <chrono>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace twincore::net {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

void OutboundQueue::push(std::string text, bool priority)
{
    (priority ? urgent_ : normal_).push_back(std::move(text));
}

std::string OutboundQueue::pop()
{
    auto& lane = urgent_.empty() ? normal_ : urgent_;
    std::string out = std::move(lane.front());
    lane.pop_front();
    return out;
}

namespace {

enum class Channel { user, robot, observer };

std::string_view channel_name(Channel c)
{
    switch (c) {
    case Channel::user: return "user";
    case Channel::robot: return "robot";
    case Channel::observer: return "observer";
    }
    return "?";
}

bool valid_session_id(const std::string& id)
{
    if (id.empty() || id.size() > 64) {
        return false;
    }
    return std::all_of(id.begin(), id.end(),
                       [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'; });
}

} // namespace

struct Gateway::Impl {
    struct Conn;

    struct Session {
        std::string id;
        std::unique_ptr<PolicyBackend> backend;
        SessionLog log;
        std::unique_ptr<Coordinator> coordinator;
        std::shared_ptr<Conn> robot;
        std::set<std::shared_ptr<Conn>> users;
        std::set<std::shared_ptr<Conn>> observers;
    };

    struct Conn : std::enable_shared_from_this<Conn> {
        Impl* owner;
        websocket::stream<beast::tcp_stream> ws;
        beast::flat_buffer buffer;
        http::request<http::string_body> request;
        OutboundQueue queue;
        bool writing = false;
        bool attached = false;
        bool closing = false;
        bool closed = false;
        Channel channel = Channel::user;
        std::string session;

        Conn(Impl* o, tcp::socket socket) : owner(o), ws(std::move(socket)) {}

        void run()
        {
            auto self = shared_from_this();
            http::async_read(ws.next_layer(), buffer, request, [self](beast::error_code ec, std::size_t) {
                if (ec) {
                    return;
                }
                self->handshake();
            });
        }

        void reply_http(http::status status, std::string body)
        {
            auto res = std::make_shared<http::response<http::string_body>>(status, request.version());
            res->set(http::field::content_type, "text/plain");
            res->body() = std::move(body);
            res->prepare_payload();
            auto self = shared_from_this();
            http::async_write(ws.next_layer(), *res, [self, res](beast::error_code, std::size_t) {
                beast::error_code ignored;
                self->ws.next_layer().socket().shutdown(tcp::socket::shutdown_both, ignored);
            });
        }

        void handshake()
        {
            const std::string target(request.target());
            const auto q = target.find('?');
            const std::string path = target.substr(0, q);
            session = "default";
            if (q != std::string::npos) {
                std::string query = target.substr(q + 1);
                std::size_t pos = 0;
                while (pos <= query.size()) {
                    const auto amp = std::min(query.find('&', pos), query.size());
                    const auto kv = query.substr(pos, amp - pos);
                    if (kv.rfind("session=", 0) == 0) {
                        session = kv.substr(8);
                    }
                    pos = amp + 1;
                }
            }
            if (path == "/user") {
                channel = Channel::user;
            } else if (path == "/robot") {
                channel = Channel::robot;
            } else if (path == "/observer") {
                channel = Channel::observer;
            } else {
                reply_http(http::status::not_found, "unknown channel\n");
                return;
            }
            if (!valid_session_id(session) || !websocket::is_upgrade(request)) {
                reply_http(http::status::bad_request, "bad session id or not a websocket upgrade\n");
                return;
            }
            auto self = shared_from_this();
            ws.text(true);
            ws.async_accept(request, [self](beast::error_code ec) {
                if (ec) {
                    return;
                }
                if (self->owner->stopping) {
                    self->close(websocket::close_code::going_away, "server shutting down");
                    return;
                }
                if (!self->owner->attach(self)) {
                    self->close(websocket::close_code::policy_error, "robot already attached");
                    return;
                }
                self->attached = true;
                self->read();
            });
        }

        void read()
        {
            auto self = shared_from_this();
            ws.async_read(buffer, [self](beast::error_code ec, std::size_t) {
                if (ec) {
                    self->closed = true;
                    self->owner->detach(self);
                    return;
                }
                std::string text = beast::buffers_to_string(self->buffer.data());
                self->buffer.consume(self->buffer.size());
                self->owner->on_frame(*self, text);
                self->read();
            });
        }

        void send(const wire::Frame& frame)
        {
            if (closed || closing) {
                return;
            }
            queue.push(wire::serialize(frame), std::holds_alternative<wire::Halt>(frame));
            flush();
        }

        void flush()
        {
            if (writing || closed) {
                return;
            }
            if (queue.empty()) {
                if (closing) {
                    finish_close();
                }
                return;
            }
            writing = true;
            auto text = std::make_shared<std::string>(queue.pop());
            auto self = shared_from_this();
            ws.async_write(asio::buffer(*text), [self, text](beast::error_code ec, std::size_t) {
                self->writing = false;
                if (ec) {
                    self->closed = true;
                    return;
                }
                self->flush();
            });
        }

        // Close after the queue drains.
        void close_when_flushed()
        {
            closing = true;
            flush();
        }

        void finish_close()
        {
            close(websocket::close_code::going_away, "server shutting down");
        }

        void close(websocket::close_code code, std::string reason)
        {
            if (closed) {
                return;
            }
            closed = true;
            closing = true;
            auto self = shared_from_this();
            ws.async_close(websocket::close_reason(code, reason), [self](beast::error_code) {});
        }
    };

    GatewayConfig config;
    asio::io_context io;
    tcp::acceptor acceptor{io};
    asio::steady_timer loop_timer{io};
    SteadyClock clock;
    std::thread thread;
    std::uint16_t bound_port = 0;
    bool stopping = false;
    std::atomic<std::uint64_t> malformed{0};
    mutable std::mutex sessions_mutex;
    std::map<std::string, std::unique_ptr<Session>> sessions;

    Session& session(const std::string& id)
    {
        std::lock_guard lock(sessions_mutex);
        auto& s = sessions[id];
        if (!s) {
            s = std::make_unique<Session>();
            s->id = id;
            s->backend = config.make_backend(clock);
            auto* raw = s.get();
            s->log.add_listener([raw](const LogRecord& r) {
                for (const auto& o : raw->observers) {
                    o->send(wire::Log{to_json(r)});
                }
            });
            s->coordinator = std::make_unique<Coordinator>(clock, *s->backend, config.fixture, s->log,
                                                           config.coordinator);
        }
        return *s;
    }

    bool attach(const std::shared_ptr<Conn>& c)
    {
        auto& s = session(c->session);
        switch (c->channel) {
        case Channel::robot:
            if (s.robot) {
                return false;
            }
            s.robot = c;
            break;
        case Channel::user: s.users.insert(c); break;
        case Channel::observer: s.observers.insert(c); break;
        }
        s.log.append({clock.now_ms(), s.coordinator->epoch(), std::nullopt, "attach",
                      {{"channel", channel_name(c->channel)}}});
        return true;
    }

    void detach(const std::shared_ptr<Conn>& c)
    {
        if (!c->attached) {
            return;
        }
        c->attached = false;
        std::lock_guard lock(sessions_mutex);
        const auto it = sessions.find(c->session);
        if (it == sessions.end()) {
            return;
        }
        auto& s = *it->second;
        if (s.robot == c) {
            s.robot.reset();
        }
        s.users.erase(c);
        s.observers.erase(c);
    }

    void on_frame(Conn& c, const std::string& text)
    {
        auto& s = session(c.session);
        try {
            const auto frame = wire::parse_frame(text);
            if (c.channel == Channel::user) {
                const auto* u = std::get_if<wire::Utterance>(&frame);
                if (!u) {
                    throw wire::MalformedFrame("user channel accepts only utterance frames");
                }
                if (!s.coordinator->closed()) {
                    s.coordinator->post_utterance(u->text);
                }
            } else if (c.channel == Channel::robot) {
                if (const auto* st = std::get_if<wire::State>(&frame)) {
                    if (!s.coordinator->closed()) {
                        s.coordinator->post_robot_state(st->state, st->scene);
                    }
                } else if (const auto* a = std::get_if<wire::Ack>(&frame)) {
                    if (!s.coordinator->closed()) {
                        s.coordinator->post_chunk_ack(a->ack);
                    }
                } else {
                    throw wire::MalformedFrame("robot channel accepts only state and chunk_ack frames");
                }
            } else {
                throw wire::MalformedFrame("observer channel is read-only");
            }
        } catch (const wire::MalformedFrame& e) {
            ++malformed;
            s.log.append({clock.now_ms(), s.coordinator->epoch(), std::nullopt, "malformed_frame",
                          {{"channel", channel_name(c.channel)}, {"error", e.what()}}});
        }
    }

    void deliver(Session& s)
    {
        for (auto& f : s.coordinator->take_user_frames()) {
            for (const auto& u : s.users) {
                u->send(f);
            }
        }
        if (s.robot) {
            for (auto& f : s.coordinator->robot_outbox().drain()) {
                s.robot->send(f);
            }
        }
    }

    void tick()
    {
        std::vector<Session*> all;
        {
            std::lock_guard lock(sessions_mutex);
            for (auto& [id, s] : sessions) {
                all.push_back(s.get());
            }
        }
        for (auto* s : all) {
            s->coordinator->advance();
            deliver(*s);
        }
        loop_timer.expires_after(std::chrono::milliseconds(config.quantum_ms));
        loop_timer.async_wait([this](beast::error_code ec) {
            if (!ec && !stopping) {
                tick();
            }
        });
    }

    void accept()
    {
        acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
            if (ec) {
                return;
            }
            std::make_shared<Conn>(this, std::move(socket))->run();
            accept();
        });
    }

    void shutdown()
    {
        stopping = true;
        loop_timer.cancel();
        beast::error_code ignored;
        acceptor.close(ignored);
        std::lock_guard lock(sessions_mutex);
        for (auto& [id, s] : sessions) {
            s->coordinator->close();
            if (s->robot) {
                for (auto& f : s->coordinator->robot_outbox().drain()) {
                    s->robot->send(f);
                }
            }
            for (auto& f : s->coordinator->take_user_frames()) {
                for (const auto& u : s->users) {
                    u->send(f);
                }
            }
            std::vector<std::shared_ptr<Conn>> conns(s->users.begin(), s->users.end());
            conns.insert(conns.end(), s->observers.begin(), s->observers.end());
            if (s->robot) {
                conns.push_back(s->robot);
            }
            for (auto& c : conns) {
                c->close_when_flushed();
            }
        }
    }
};

Gateway::Gateway(GatewayConfig config) : impl_(std::make_unique<Impl>())
{
    if (!config.make_backend) {
        throw std::invalid_argument("gateway needs a backend factory");
    }
    impl_->config = std::move(config);
}

Gateway::~Gateway()
{
    stop();
}

void Gateway::start()
{
    try {
        const tcp::endpoint ep(asio::ip::make_address(impl_->config.bind), impl_->config.port);
        impl_->acceptor.open(ep.protocol());
        impl_->acceptor.set_option(tcp::acceptor::reuse_address(true));
        impl_->acceptor.bind(ep);
        impl_->acceptor.listen();
        impl_->bound_port = impl_->acceptor.local_endpoint().port();
    } catch (const boost::system::system_error& e) {
        throw BindFailure(std::string("cannot listen on ") + impl_->config.bind + ":" +
                          std::to_string(impl_->config.port) + ": " + e.what());
    }
    impl_->accept();
    impl_->tick();
    impl_->thread = std::thread([this] { impl_->io.run(); });
}

void Gateway::stop()
{
    if (!impl_->thread.joinable()) {
        return;
    }
    asio::post(impl_->io, [this] { impl_->shutdown(); });
    // Give close handshakes a moment, then stop regardless.
    asio::steady_timer guard(impl_->io);
    guard.expires_after(std::chrono::milliseconds(500));
    guard.async_wait([this](beast::error_code) { impl_->io.stop(); });
    impl_->thread.join();
}

std::uint16_t Gateway::port() const
{
    return impl_->bound_port;
}

std::uint64_t Gateway::malformed_frames() const
{
    return impl_->malformed.load();
}

std::vector<std::string> Gateway::sessions() const
{
    std::lock_guard lock(impl_->sessions_mutex);
    std::vector<std::string> out;
    for (const auto& [id, s] : impl_->sessions) {
        out.push_back(id);
    }
    return out;
}

std::vector<LogRecord> Gateway::session_log(const std::string& id) const
{
    std::lock_guard lock(impl_->sessions_mutex);
    const auto it = impl_->sessions.find(id);
    return it == impl_->sessions.end() ? std::vector<LogRecord>{} : it->second->log.records();
}

} // namespace twincore::net

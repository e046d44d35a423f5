#include "twincore/net/robot_client.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <deque>
#include <mutex>
#include <thread>

namespace twincore::net {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

struct RobotClient::Impl {
    RobotClientConfig config;
    asio::io_context io;
    websocket::stream<beast::tcp_stream> ws{io};
    asio::steady_timer timer{io};
    beast::flat_buffer buffer;
    std::deque<std::string> out;
    bool writing = false;
    std::thread thread;

    mutable std::mutex mutex;
    RobotSim sim;
    std::vector<wire::Frame> received;
    bool connected = false;
    std::string close_reason;

    explicit Impl(RobotClientConfig c) : config(std::move(c)), sim(config.fixture) {}

    void send(const wire::Frame& f)
    {
        out.push_back(wire::serialize(f));
        flush();
    }

    void flush()
    {
        if (writing || out.empty()) {
            return;
        }
        writing = true;
        ws.async_write(asio::buffer(out.front()), [this](beast::error_code ec, std::size_t) {
            writing = false;
            if (ec) {
                return;
            }
            out.pop_front();
            flush();
        });
    }

    void read()
    {
        ws.async_read(buffer, [this](beast::error_code ec, std::size_t) {
            if (ec) {
                std::lock_guard lock(mutex);
                connected = false;
                close_reason = std::string(ws.reason().reason.data(), ws.reason().reason.size());
                timer.cancel();
                return;
            }
            const auto text = beast::buffers_to_string(buffer.data());
            buffer.consume(buffer.size());
            try {
                auto frame = wire::parse_frame(text);
                std::lock_guard lock(mutex);
                if (const auto* h = std::get_if<wire::Halt>(&frame)) {
                    sim.halt(h->epoch);
                } else if (const auto* c = std::get_if<wire::Chunk>(&frame)) {
                    sim.enqueue_chunk(c->chunk);
                }
                received.push_back(std::move(frame));
            } catch (const wire::MalformedFrame&) {
                // Dropped; the server never sends these.
            }
            read();
        });
    }

    void report(const StepResult& result)
    {
        wire::State st;
        st.state = result.state;
        st.scene = sim.scene();
        st.ts = static_cast<std::int64_t>(result.state.tick) * config.tick_ms;
        send(st);
        for (const auto& a : result.acks) {
            send(wire::Ack{a, st.ts});
        }
    }

    void tick()
    {
        timer.expires_after(std::chrono::milliseconds(config.tick_ms));
        timer.async_wait([this](beast::error_code ec) {
            if (ec) {
                return;
            }
            StepResult result;
            {
                std::lock_guard lock(mutex);
                if (!connected) {
                    return;
                }
                result = sim.step();
            }
            report(result);
            tick();
        });
    }
};

RobotClient::RobotClient(RobotClientConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

RobotClient::~RobotClient()
{
    stop();
}

void RobotClient::start()
{
    auto& i = *impl_;
    try {
        tcp::resolver resolver(i.io);
        const auto results = resolver.resolve(i.config.endpoint.host, std::to_string(i.config.endpoint.port));
        beast::get_lowest_layer(i.ws).connect(results);
        i.ws.text(true);
        i.ws.handshake(i.config.endpoint.host + ":" + std::to_string(i.config.endpoint.port),
                       "/robot?session=" + i.config.session);
    } catch (const boost::system::system_error& e) {
        throw std::runtime_error(std::string("robot client: ") + e.what());
    }
    {
        std::lock_guard lock(i.mutex);
        i.connected = true;
    }
    StepResult initial;
    initial.state = i.sim.state();
    i.report(initial);
    i.read();
    i.tick();
    i.thread = std::thread([this] { impl_->io.run(); });
}

void RobotClient::stop()
{
    auto& i = *impl_;
    if (!i.thread.joinable()) {
        return;
    }
    asio::post(i.io, [&i] {
        i.timer.cancel();
        beast::error_code ignored;
        beast::get_lowest_layer(i.ws).socket().shutdown(tcp::socket::shutdown_both, ignored);
        beast::get_lowest_layer(i.ws).socket().close(ignored);
    });
    i.thread.join();
    std::lock_guard lock(i.mutex);
    i.connected = false;
}

bool RobotClient::connected() const
{
    std::lock_guard lock(impl_->mutex);
    return impl_->connected;
}

std::string RobotClient::close_reason() const
{
    std::lock_guard lock(impl_->mutex);
    return impl_->close_reason;
}

std::vector<wire::Frame> RobotClient::received() const
{
    std::lock_guard lock(impl_->mutex);
    return impl_->received;
}

std::vector<StepRecord> RobotClient::step_log() const
{
    std::lock_guard lock(impl_->mutex);
    return impl_->sim.step_log();
}

RobotState RobotClient::state() const
{
    std::lock_guard lock(impl_->mutex);
    return impl_->sim.state();
}

SceneSnapshot RobotClient::scene() const
{
    std::lock_guard lock(impl_->mutex);
    return impl_->sim.scene();
}

} // namespace twincore::net

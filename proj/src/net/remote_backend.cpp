#include "twincore/net/remote_backend.hpp"

#include <boost/asio.hpp>

#include <chrono>
#include <deque>
#include <mutex>

namespace twincore::net {

namespace asio = boost::asio;
using tcp = asio::ip::tcp;

Endpoint parse_endpoint(const std::string& text)
{
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) {
        throw std::invalid_argument("endpoint must be host:port");
    }
    Endpoint e;
    if (colon > 0) {
        e.host = text.substr(0, colon);
    }
    try {
        const auto port = std::stoul(text.substr(colon + 1));
        if (port == 0 || port > 65535) {
            throw std::out_of_range("port");
        }
        e.port = static_cast<std::uint16_t>(port);
    } catch (const std::exception&) {
        throw std::invalid_argument("bad port in endpoint " + text);
    }
    return e;
}

namespace {

class RemoteGeneration final : public GenerationHandle {
public:
    explicit RemoteGeneration(tcp::socket socket) : socket_(std::move(socket)) {}

    ~RemoteGeneration() override
    {
        cancel();
        if (thread_.joinable()) {
            thread_.join();
        }
    }

    void start()
    {
        read_next();
        thread_ = std::thread([this] { io().run(); });
    }

    std::vector<std::string> poll() override
    {
        std::lock_guard lock(mutex_);
        if (status_ == GenerationStatus::cancelled) {
            return {};
        }
        std::vector<std::string> out(pending_.begin(), pending_.end());
        pending_.clear();
        if (ended_ && status_ == GenerationStatus::live) {
            status_ = end_status_;
        }
        return out;
    }

    GenerationStatus status() const override
    {
        std::lock_guard lock(mutex_);
        if (status_ == GenerationStatus::live && ended_ && pending_.empty()) {
            return end_status_;
        }
        return status_;
    }

    GenerationStatus cancel() override
    {
        {
            std::lock_guard lock(mutex_);
            if (status_ != GenerationStatus::live) {
                return status_;
            }
            if (ended_) {
                return pending_.empty() ? end_status_ : status_;
            }
            status_ = GenerationStatus::cancelled;
            pending_.clear();
        }
        asio::post(socket_.get_executor(), [this] {
            boost::system::error_code ignored;
            socket_.shutdown(tcp::socket::shutdown_both, ignored);
            socket_.close(ignored);
        });
        return GenerationStatus::cancelled;
    }

    std::optional<std::string> failure() const override
    {
        std::lock_guard lock(mutex_);
        return failure_;
    }

private:
    asio::io_context& io() { return static_cast<asio::io_context&>(socket_.get_executor().context()); }

    void read_next()
    {
        asio::async_read_until(socket_, buffer_, '\n', [this](boost::system::error_code ec, std::size_t n) {
            std::lock_guard lock(mutex_);
            if (status_ == GenerationStatus::cancelled) {
                return;
            }
            if (ec) {
                ended_ = true;
                end_status_ = GenerationStatus::failed;
                failure_ = "stream_interrupted: " + ec.message();
                return;
            }
            std::string line(asio::buffers_begin(buffer_.data()),
                             asio::buffers_begin(buffer_.data()) + static_cast<std::ptrdiff_t>(n) - 1);
            buffer_.consume(n);
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            if (line.empty()) {
                ended_ = true;
                end_status_ = GenerationStatus::completed;
                boost::system::error_code ignored;
                socket_.close(ignored);
                return;
            }
            pending_.push_back(std::move(line));
            read_next();
        });
    }

    tcp::socket socket_;
    asio::streambuf buffer_;
    std::thread thread_;
    mutable std::mutex mutex_;
    std::deque<std::string> pending_;
    GenerationStatus status_ = GenerationStatus::live;
    bool ended_ = false;
    GenerationStatus end_status_ = GenerationStatus::completed;
    std::optional<std::string> failure_;
};

// Owns the io_context so the socket's executor outlives every handler.
class OwnedGeneration final : public GenerationHandle {
public:
    OwnedGeneration(std::unique_ptr<asio::io_context> io, std::unique_ptr<RemoteGeneration> gen)
        : io_(std::move(io)), gen_(std::move(gen))
    {
    }
    ~OwnedGeneration() override { gen_.reset(); }

    std::vector<std::string> poll() override { return gen_->poll(); }
    GenerationStatus status() const override { return gen_->status(); }
    GenerationStatus cancel() override { return gen_->cancel(); }
    std::optional<std::string> failure() const override { return gen_->failure(); }

private:
    std::unique_ptr<asio::io_context> io_;
    std::unique_ptr<RemoteGeneration> gen_;
};

} // namespace

RemoteBackend::RemoteBackend(Endpoint endpoint) : endpoint_(std::move(endpoint)) {}

std::unique_ptr<GenerationHandle> RemoteBackend::generate(const PolicyRequest& request)
{
    auto io = std::make_unique<asio::io_context>();
    tcp::socket socket(*io);
    try {
        tcp::resolver resolver(*io);
        asio::connect(socket, resolver.resolve(endpoint_.host, std::to_string(endpoint_.port)));
        asio::write(socket, asio::buffer(to_json(request).dump() + "\n"));
    } catch (const boost::system::system_error& e) {
        throw BackendError(BackendError::Kind::unavailable,
                           "policy endpoint " + endpoint_.host + ":" + std::to_string(endpoint_.port) + ": " +
                               e.what());
    }
    auto gen = std::make_unique<RemoteGeneration>(std::move(socket));
    gen->start();
    return std::make_unique<OwnedGeneration>(std::move(io), std::move(gen));
}

struct PolicyServer::Impl {
    asio::io_context io;
    tcp::acceptor acceptor{io};
    SteadyClock clock;
    std::unique_ptr<PolicyBackend> backend;
    std::thread thread;
    mutable std::mutex mutex;
    std::vector<std::string> events;
    std::uint16_t port = 0;

    void note(std::string e)
    {
        std::lock_guard lock(mutex);
        events.push_back(std::move(e));
    }

    struct Conn : std::enable_shared_from_this<Conn> {
        Impl* owner;
        tcp::socket socket;
        asio::streambuf in;
        asio::steady_timer timer;
        std::unique_ptr<GenerationHandle> gen;
        std::deque<std::string> out;
        bool writing = false;
        bool finishing = false;
        bool closed = false;

        Conn(Impl* o, tcp::socket s) : owner(o), socket(std::move(s)), timer(socket.get_executor()) {}

        void start()
        {
            auto self = shared_from_this();
            asio::async_read_until(socket, in, '\n', [self](boost::system::error_code ec, std::size_t n) {
                if (ec) {
                    self->close();
                    return;
                }
                std::string line(asio::buffers_begin(self->in.data()),
                                 asio::buffers_begin(self->in.data()) + static_cast<std::ptrdiff_t>(n));
                self->in.consume(n);
                try {
                    const auto request = policy_request_from_json(nlohmann::json::parse(line));
                    self->owner->note("request");
                    self->gen = self->owner->backend->generate(request);
                } catch (const std::exception&) {
                    self->owner->note("bad_request");
                    self->close();
                    return;
                }
                self->watch_peer();
                self->pump();
            });
        }

        // Any read completion after the request means the client went away.
        void watch_peer()
        {
            auto self = shared_from_this();
            asio::async_read(socket, in, asio::transfer_at_least(1), [self](boost::system::error_code ec, std::size_t) {
                if (self->closed) {
                    return;
                }
                if (ec) {
                    self->owner->note("client_closed");
                    if (self->gen) {
                        self->gen->cancel();
                    }
                    self->close();
                    return;
                }
                self->in.consume(self->in.size());
                self->watch_peer();
            });
        }

        void pump()
        {
            if (closed) {
                return;
            }
            for (auto& f : gen->poll()) {
                out.push_back(std::move(f) + "\n");
            }
            const auto status = gen->status();
            if (status == GenerationStatus::completed) {
                out.push_back("\n");
                finishing = true;
                owner->note("complete");
            } else if (status != GenerationStatus::live) {
                finishing = true;
            }
            flush();
            if (!finishing) {
                auto self = shared_from_this();
                timer.expires_after(std::chrono::milliseconds(2));
                timer.async_wait([self](boost::system::error_code ec) {
                    if (!ec) {
                        self->pump();
                    }
                });
            }
        }

        void flush()
        {
            if (writing || closed) {
                return;
            }
            if (out.empty()) {
                if (finishing) {
                    close();
                }
                return;
            }
            writing = true;
            auto self = shared_from_this();
            asio::async_write(socket, asio::buffer(out.front()), [self](boost::system::error_code ec, std::size_t) {
                self->writing = false;
                if (ec) {
                    self->close();
                    return;
                }
                self->out.pop_front();
                self->flush();
            });
        }

        void close()
        {
            if (closed) {
                return;
            }
            closed = true;
            boost::system::error_code ignored;
            timer.cancel();
            socket.shutdown(tcp::socket::shutdown_both, ignored);
            socket.close(ignored);
        }
    };

    void accept()
    {
        acceptor.async_accept([this](boost::system::error_code ec, tcp::socket socket) {
            if (ec) {
                return;
            }
            note("accept");
            std::make_shared<Conn>(this, std::move(socket))->start();
            accept();
        });
    }
};

PolicyServer::PolicyServer(Factory make_backend, std::uint16_t port) : impl_(std::make_unique<Impl>())
{
    impl_->backend = make_backend(impl_->clock);
    const tcp::endpoint ep(asio::ip::make_address("127.0.0.1"), port);
    impl_->acceptor.open(ep.protocol());
    impl_->acceptor.set_option(tcp::acceptor::reuse_address(true));
    impl_->acceptor.bind(ep);
    impl_->acceptor.listen();
    impl_->port = impl_->acceptor.local_endpoint().port();
    impl_->accept();
    impl_->thread = std::thread([this] { impl_->io.run(); });
}

PolicyServer::~PolicyServer()
{
    stop();
}

std::uint16_t PolicyServer::port() const
{
    return impl_->port;
}

void PolicyServer::stop()
{
    if (!impl_->thread.joinable()) {
        return;
    }
    asio::post(impl_->io, [this] {
        boost::system::error_code ignored;
        impl_->acceptor.close(ignored);
        impl_->io.stop();
    });
    impl_->thread.join();
}

std::vector<std::string> PolicyServer::events() const
{
    std::lock_guard lock(impl_->mutex);
    return impl_->events;
}

} // namespace twincore::net

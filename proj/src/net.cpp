#include "urjkit/net.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <atomic>
#include <list>

namespace urjkit::net {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace ws = beast::websocket;
using tcp = asio::ip::tcp;
using telemetry::json;

Endpoint parse_endpoint(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) throw std::invalid_argument("endpoint '" + std::string(text) + "' needs host:port");
  Endpoint e;
  if (colon > 0) e.host = std::string(text.substr(0, colon));
  const std::string port(text.substr(colon + 1));
  try {
    std::size_t used = 0;
    const int p = std::stoi(port, &used);
    if (used != port.size() || p < 0 || p > 65535) throw std::out_of_range(port);
    e.port = static_cast<unsigned short>(p);
  } catch (const std::logic_error&) {
    throw std::invalid_argument("bad port in endpoint '" + std::string(text) + "'");
  }
  return e;
}

json hello_message(const std::string& token, const std::set<telemetry::Topic>& topics) {
  json t = json::array();
  for (auto topic : topics) t.push_back(telemetry::to_string(topic));
  return {{"type", "hello"}, {"version", telemetry::kWireVersion}, {"token", token}, {"topics", t}};
}

// ---------------------------------------------------------------------------
// Server

namespace {

/// Guards posting onto the I/O context from the control thread.
struct Gate {
  std::mutex mutex;
  bool open = true;
};

class Peer : public std::enable_shared_from_this<Peer> {
 public:
  Peer(TelemetryServer::Impl& server, asio::any_io_executor ex) : server_(server), ex_(std::move(ex)) {}
  virtual ~Peer() = default;
  virtual void start() = 0;
  void detach();

 protected:
  using WriteDone = std::function<void(beast::error_code)>;
  virtual void write_one(std::shared_ptr<const std::string> record, WriteDone done) = 0;
  virtual void close_transport() = 0;
  // Flushes and ends the session once the last record is out; the peer is
  // released when the client hangs up or the grace timer fires.
  virtual void finish() { fail(); }

  void on_record(const std::string& text);
  void enqueue(std::string record);
  void kick();
  void fail();

  TelemetryServer::Impl& server_;
  asio::any_io_executor ex_;

 private:
  void hello(const json& j);
  void command(const json& j);
  void refuse(std::string_view reason, const std::string& detail);

  std::deque<std::string> out_;
  std::shared_ptr<telemetry::Subscription> sub_;
  bool writing_ = false;
  bool closing_ = false;
  bool closed_notice_ = false;
  bool finishing_ = false;
  bool dead_ = false;
};

}  // namespace

struct TelemetryServer::Impl {
  Impl(telemetry::Hub& h, telemetry::Dispatcher& d, ServerOptions o)
      : hub(h), dispatcher(d), options(std::move(o)), gate(std::make_shared<Gate>()) {}

  telemetry::Hub& hub;
  telemetry::Dispatcher& dispatcher;
  ServerOptions options;
  asio::io_context ioc;
  std::optional<tcp::acceptor> tcp_acceptor;
  std::optional<tcp::acceptor> ws_acceptor;
  std::thread thread;
  std::shared_ptr<Gate> gate;
  std::mutex peers_mutex;
  std::list<std::weak_ptr<Peer>> peers;
  std::atomic<std::size_t> live{0};
  bool running = false;

  void accept_tcp();
  void accept_ws();
  void track(const std::shared_ptr<Peer>& p) {
    std::lock_guard lock(peers_mutex);
    peers.remove_if([](const std::weak_ptr<Peer>& w) { return w.expired(); });
    peers.push_back(p);
  }
  /// Posts `fn` onto `ex` unless the server is stopping.
  void post(const asio::any_io_executor& ex, std::function<void()> fn) {
    std::lock_guard lock(gate->mutex);
    if (gate->open) asio::post(ex, std::move(fn));
  }
};

namespace {

void Peer::detach() {
  if (sub_) {
    sub_->set_notify(nullptr);
    server_.hub.unsubscribe(sub_);
  }
}

void Peer::fail() {
  if (dead_) return;
  dead_ = true;
  detach();
  --server_.live;
  close_transport();
}

void Peer::enqueue(std::string record) {
  out_.push_back(std::move(record));
  kick();
}

void Peer::kick() {
  if (writing_ || dead_) return;
  std::string next;
  if (!out_.empty()) {
    next = std::move(out_.front());
    out_.pop_front();
  } else if (auto env = sub_ ? sub_->try_pop() : std::nullopt) {
    next = telemetry::serialize(*env);
  } else if (sub_ && sub_->closed() && !closed_notice_) {
    closed_notice_ = true;
    closing_ = true;
    next = json{{"type", "closed"}, {"reason", sub_->close_reason()}}.dump();
  } else {
    if (closing_ && !finishing_) {
      finishing_ = true;
      finish();
    }
    return;
  }
  writing_ = true;
  auto self = shared_from_this();
  write_one(std::make_shared<const std::string>(std::move(next)), [self](beast::error_code ec) {
    self->writing_ = false;
    if (ec) {
      self->fail();
      return;
    }
    self->kick();
  });
}

void Peer::refuse(std::string_view reason, const std::string& detail) {
  closing_ = true;
  enqueue(json{{"type", "error"}, {"reason", reason}, {"detail", detail}}.dump());
}

void Peer::on_record(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    refuse(telemetry::reason::kBadArgs, std::string("unparsable record: ") + e.what());
    return;
  }
  const std::string type = j.is_object() ? j.value("type", "") : "";
  if (type == "hello") {
    hello(j);
  } else if (!sub_) {
    refuse(telemetry::reason::kUnauthorized, "send hello with the session token first");
  } else if (type == "command") {
    command(j);
  } else {
    enqueue(telemetry::serialize(
        telemetry::Reply::nack(j.is_object() ? j.value("id", "") : "", telemetry::reason::kBadArgs,
                               "unexpected record type '" + type + "'")));
  }
}

void Peer::hello(const json& j) {
  if (sub_) {
    enqueue(json{{"type", "error"}, {"reason", telemetry::reason::kBadArgs}, {"detail", "duplicate hello"}}.dump());
    return;
  }
  if (!j.contains("token") || !j.at("token").is_string() || j.at("token").get<std::string>() != server_.options.token) {
    refuse(telemetry::reason::kUnauthorized, "bad session token");
    return;
  }
  std::set<telemetry::Topic> topics;
  if (j.contains("topics") && j.at("topics").is_array()) {
    for (const auto& t : j.at("topics")) {
      const auto topic = t.is_string() ? telemetry::topic_from_string(t.get<std::string>()) : std::nullopt;
      if (!topic) {
        refuse(telemetry::reason::kBadArgs, "unknown topic " + t.dump());
        return;
      }
      topics.insert(*topic);
    }
  } else {
    topics = telemetry::all_topics();
  }
  json names = json::array();
  for (auto t : topics) names.push_back(telemetry::to_string(t));
  enqueue(json{{"type", "welcome"}, {"version", telemetry::kWireVersion}, {"topics", names}}.dump());

  sub_ = server_.hub.subscribe(topics, server_.options.queue_capacity);
  std::weak_ptr<Peer> weak = shared_from_this();
  auto* server = &server_;
  auto ex = ex_;
  sub_->set_notify([weak, server, ex] {
    server->post(ex, [weak] {
      if (auto p = weak.lock()) p->kick();
    });
  });
}

void Peer::command(const json& j) {
  telemetry::Command cmd;
  try {
    cmd = telemetry::command_from_json(j);
  } catch (const std::exception& e) {
    enqueue(telemetry::serialize(telemetry::Reply::nack(j.value("id", ""), telemetry::reason::kBadArgs, e.what())));
    return;
  }
  std::weak_ptr<Peer> weak = shared_from_this();
  auto* server = &server_;
  auto ex = ex_;
  server_.dispatcher.submit(std::move(cmd), [weak, server, ex](const telemetry::Reply& reply) {
    std::string text = telemetry::serialize(reply);
    server->post(ex, [weak, text = std::move(text)]() mutable {
      if (auto p = weak.lock()) p->enqueue(std::move(text));
    });
  });
}

class TcpPeer final : public Peer {
 public:
  TcpPeer(TelemetryServer::Impl& server, tcp::socket socket)
      : Peer(server, socket.get_executor()), socket_(std::move(socket)) {}

  void start() override { read(); }

 protected:
  void finish() override {
    beast::error_code ec;
    socket_.shutdown(tcp::socket::shutdown_send, ec);
    if (ec) {
      fail();
      return;
    }
    auto self = std::static_pointer_cast<TcpPeer>(shared_from_this());
    grace_.expires_after(kGrace);
    grace_.async_wait([self](beast::error_code e) {
      if (!e) self->fail();
    });
  }

 private:
  void read() {
    auto self = std::static_pointer_cast<TcpPeer>(shared_from_this());
    socket_.async_read_some(asio::buffer(buf_), [self](beast::error_code ec, std::size_t n) {
      if (ec) {
        self->fail();
        return;
      }
      self->reader_.feed(std::string_view(self->buf_.data(), n));
      try {
        while (auto rec = self->reader_.next()) self->on_record(*rec);
      } catch (const telemetry::WireError&) {
        self->fail();
        return;
      }
      self->read();
    });
  }

  void write_one(std::shared_ptr<const std::string> record, WriteDone done) override {
    auto framed = std::make_shared<std::string>(telemetry::frame_record(*record));
    asio::async_write(socket_, asio::buffer(*framed),
                      [framed, done = std::move(done)](beast::error_code ec, std::size_t) { done(ec); });
  }

  void close_transport() override {
    beast::error_code ec;
    grace_.cancel();
    socket_.shutdown(tcp::socket::shutdown_both, ec);
    socket_.close(ec);
  }

  static constexpr std::chrono::seconds kGrace{5};
  tcp::socket socket_;
  asio::steady_timer grace_{socket_.get_executor()};
  std::array<char, 4096> buf_{};
  telemetry::RecordReader reader_;
};

class WsPeer final : public Peer {
 public:
  WsPeer(TelemetryServer::Impl& server, tcp::socket socket)
      : Peer(server, socket.get_executor()), ws_(std::move(socket)) {}

  void start() override {
    ws_.set_option(ws::stream_base::timeout::suggested(beast::role_type::server));
    auto self = std::static_pointer_cast<WsPeer>(shared_from_this());
    ws_.async_accept([self](beast::error_code ec) {
      if (ec) {
        self->fail();
        return;
      }
      self->ws_.text(true);
      self->read();
    });
  }

 private:
  void read() {
    auto self = std::static_pointer_cast<WsPeer>(shared_from_this());
    ws_.async_read(buffer_, [self](beast::error_code ec, std::size_t) {
      if (ec) {
        self->fail();
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->on_record(text);
      self->read();
    });
  }

  void write_one(std::shared_ptr<const std::string> record, WriteDone done) override {
    ws_.async_write(asio::buffer(*record),
                    [record, done = std::move(done)](beast::error_code ec, std::size_t) { done(ec); });
  }

  void finish() override {
    auto self = std::static_pointer_cast<WsPeer>(shared_from_this());
    ws_.async_close(ws::close_code::policy_error, [self](beast::error_code) { self->fail(); });
  }

  void close_transport() override {
    beast::error_code ec;
    beast::get_lowest_layer(ws_).shutdown(tcp::socket::shutdown_both, ec);
    beast::get_lowest_layer(ws_).close(ec);
  }

  ws::stream<tcp::socket> ws_;
  beast::flat_buffer buffer_;
};

tcp::acceptor bind_acceptor(asio::io_context& ioc, const Endpoint& e) {
  beast::error_code ec;
  const auto address = asio::ip::make_address(e.host == "localhost" ? "127.0.0.1" : e.host, ec);
  if (ec) throw std::runtime_error("bad listen address '" + e.host + "'");
  tcp::endpoint ep(address, e.port);
  tcp::acceptor acc(ioc);
  acc.open(ep.protocol(), ec);
  if (!ec) acc.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) acc.bind(ep, ec);
  if (!ec) acc.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) throw std::runtime_error("cannot listen on " + e.host + ":" + std::to_string(e.port) + ": " + ec.message());
  return acc;
}

}  // namespace

void TelemetryServer::Impl::accept_tcp() {
  tcp_acceptor->async_accept(asio::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    auto p = std::make_shared<TcpPeer>(*this, std::move(socket));
    ++live;
    track(p);
    p->start();
    accept_tcp();
  });
}

void TelemetryServer::Impl::accept_ws() {
  ws_acceptor->async_accept(asio::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    auto p = std::make_shared<WsPeer>(*this, std::move(socket));
    ++live;
    track(p);
    p->start();
    accept_ws();
  });
}

TelemetryServer::TelemetryServer(telemetry::Hub& hub, telemetry::Dispatcher& dispatcher, ServerOptions options)
    : impl_(std::make_unique<Impl>(hub, dispatcher, std::move(options))) {}

TelemetryServer::~TelemetryServer() { stop(); }

void TelemetryServer::start() {
  if (impl_->running) return;
  if (impl_->options.tcp) {
    impl_->tcp_acceptor.emplace(bind_acceptor(impl_->ioc, *impl_->options.tcp));
    impl_->accept_tcp();
  }
  if (impl_->options.websocket) {
    impl_->ws_acceptor.emplace(bind_acceptor(impl_->ioc, *impl_->options.websocket));
    impl_->accept_ws();
  }
  impl_->running = true;
  impl_->thread = std::thread([this] { impl_->ioc.run(); });
}

void TelemetryServer::stop() {
  if (!impl_->running) return;
  impl_->running = false;
  {
    std::lock_guard lock(impl_->gate->mutex);
    impl_->gate->open = false;
  }
  {
    std::lock_guard lock(impl_->peers_mutex);
    for (auto& w : impl_->peers) {
      if (auto p = w.lock()) p->detach();
    }
  }
  impl_->ioc.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

unsigned short TelemetryServer::tcp_port() const {
  return impl_->tcp_acceptor ? impl_->tcp_acceptor->local_endpoint().port() : 0;
}

unsigned short TelemetryServer::websocket_port() const {
  return impl_->ws_acceptor ? impl_->ws_acceptor->local_endpoint().port() : 0;
}

std::size_t TelemetryServer::connections() const { return impl_->live.load(); }

// ---------------------------------------------------------------------------
// Client

struct TelemetryClient::Impl {
  asio::io_context ioc;
  tcp::socket socket{ioc};
  std::thread reader;
  mutable std::mutex mutex;
  std::condition_variable cv;
  std::deque<telemetry::Envelope> envelopes;
  std::map<std::string, telemetry::Reply> replies;
  std::optional<json> handshake;
  std::optional<std::string> closed;
  std::mutex write_mutex;

  void write(const std::string& record) {
    const std::string framed = telemetry::frame_record(record);
    std::lock_guard lock(write_mutex);
    asio::write(socket, asio::buffer(framed));
  }

  void run() {
    telemetry::RecordReader rr;
    std::array<char, 4096> buf{};
    std::string why = "EOF";
    try {
      for (;;) {
        beast::error_code ec;
        const std::size_t n = socket.read_some(asio::buffer(buf), ec);
        if (ec) break;
        rr.feed(std::string_view(buf.data(), n));
        while (auto rec = rr.next()) dispatch(*rec, why);
      }
    } catch (const std::exception& e) {
      why = std::string("protocol error: ") + e.what();
    }
    std::lock_guard lock(mutex);
    if (!closed) closed = why;
    cv.notify_all();
  }

  void dispatch(const std::string& rec, std::string& why) {
    const json j = json::parse(rec);
    const std::string type = j.value("type", "");
    std::lock_guard lock(mutex);
    if (type == "envelope") {
      envelopes.push_back(telemetry::envelope_from_json(j));
    } else if (type == "ack" || type == "nack") {
      auto r = telemetry::reply_from_json(j);
      replies[r.id] = r;
    } else if (type == "welcome" || type == "error") {
      if (!handshake) handshake = j;
      if (type == "error") why = j.value("reason", "error");
    } else if (type == "closed") {
      closed = j.value("reason", "closed");
    }
    cv.notify_all();
  }
};

TelemetryClient::TelemetryClient() : impl_(std::make_unique<Impl>()) {}

TelemetryClient::~TelemetryClient() { close(); }

void TelemetryClient::connect(const Endpoint& endpoint, const std::string& token,
                              const std::set<telemetry::Topic>& topics, std::chrono::milliseconds timeout) {
  tcp::resolver resolver(impl_->ioc);
  beast::error_code ec;
  const auto results = resolver.resolve(endpoint.host, std::to_string(endpoint.port), ec);
  if (!ec) asio::connect(impl_->socket, results, ec);
  if (ec) throw std::runtime_error("cannot connect to " + endpoint.host + ":" + std::to_string(endpoint.port) + ": " + ec.message());
  impl_->socket.set_option(tcp::no_delay(true));
  impl_->reader = std::thread([this] { impl_->run(); });
  impl_->write(hello_message(token, topics).dump());

  std::unique_lock lock(impl_->mutex);
  if (!impl_->cv.wait_for(lock, timeout, [&] { return impl_->handshake || impl_->closed; })) {
    lock.unlock();
    close();
    throw std::runtime_error("no handshake answer from server");
  }
  if (!impl_->handshake || impl_->handshake->value("type", "") != "welcome") {
    const std::string why = impl_->handshake ? impl_->handshake->value("reason", "error") : *impl_->closed;
    lock.unlock();
    close();
    throw std::runtime_error("server refused session: " + why);
  }
}

void TelemetryClient::send_async(const telemetry::Command& cmd) { impl_->write(telemetry::serialize(cmd)); }

std::optional<telemetry::Reply> TelemetryClient::wait_reply(const std::string& id, std::chrono::milliseconds timeout) {
  std::unique_lock lock(impl_->mutex);
  impl_->cv.wait_for(lock, timeout, [&] { return impl_->replies.count(id) > 0 || impl_->closed.has_value(); });
  auto it = impl_->replies.find(id);
  if (it == impl_->replies.end()) return std::nullopt;
  auto r = it->second;
  impl_->replies.erase(it);
  return r;
}

telemetry::Reply TelemetryClient::send(const telemetry::Command& cmd, std::chrono::milliseconds timeout) {
  send_async(cmd);
  auto r = wait_reply(cmd.id, timeout);
  if (!r) throw std::runtime_error("no reply to command '" + cmd.id + "'");
  return *r;
}

std::optional<telemetry::Envelope> TelemetryClient::next(std::chrono::milliseconds timeout) {
  std::unique_lock lock(impl_->mutex);
  impl_->cv.wait_for(lock, timeout, [&] { return !impl_->envelopes.empty() || impl_->closed.has_value(); });
  if (impl_->envelopes.empty()) return std::nullopt;
  auto env = std::move(impl_->envelopes.front());
  impl_->envelopes.pop_front();
  return env;
}

bool TelemetryClient::connected() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->socket.is_open() && !impl_->closed;
}

std::optional<std::string> TelemetryClient::closed_reason() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->closed;
}

void TelemetryClient::close() {
  beast::error_code ec;
  impl_->socket.shutdown(tcp::socket::shutdown_both, ec);
  if (impl_->reader.joinable()) impl_->reader.join();
  impl_->socket.close(ec);
}

}  // namespace urjkit::net

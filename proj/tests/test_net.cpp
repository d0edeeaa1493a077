#include <doctest.h>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <thread>

#include "urjkit/net.hpp"
#include "urjkit/runtime.hpp"

using namespace urjkit;
using telemetry::Command;
using telemetry::CommandKind;
using telemetry::json;

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace ws = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

// A simulated robot served over both transports, stepped by its own thread.
struct Live {
  Session session{default_config()};
  net::TelemetryServer server;
  std::atomic<bool> stop{false};
  std::thread loop;

  explicit Live(std::size_t capacity = telemetry::Hub::kDefaultCapacity)
      : server(session.hub(), session.dispatcher(),
               net::ServerOptions{net::Endpoint{"127.0.0.1", 0}, net::Endpoint{"127.0.0.1", 0}, "secret", capacity}) {
    server.start();
    loop = std::thread([this] {
      sim::SimScenario forever;
      forever.duration = std::numeric_limits<double>::infinity();
      session.run(forever, {&stop, 5.0});
    });
  }
  ~Live() {
    stop = true;
    loop.join();
    server.stop();
  }
  net::Endpoint tcp_endpoint() const { return {"127.0.0.1", server.tcp_port()}; }
};

bool wait_for(const std::function<bool()>& pred, std::chrono::milliseconds limit = std::chrono::seconds(5)) {
  const auto end = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < end) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  return pred();
}

}  // namespace

TEST_CASE("endpoint parsing") {
  const auto a = net::parse_endpoint("10.0.0.2:7300");
  CHECK(a.host == "10.0.0.2");
  CHECK(a.port == 7300);
  CHECK(net::parse_endpoint(":9").host == "127.0.0.1");
  CHECK_THROWS_AS(net::parse_endpoint("nohost"), std::invalid_argument);
  CHECK_THROWS_AS(net::parse_endpoint("h:99999"), std::invalid_argument);
  const auto hello = net::hello_message("tok", {telemetry::Topic::Depth});
  CHECK(hello["type"] == "hello");
  CHECK(hello["token"] == "tok");
  CHECK(hello["topics"] == json::array({"DEPTH"}));
}

TEST_CASE("stream client end to end") {
  Live live;
  net::TelemetryClient client;
  client.connect(live.tcp_endpoint(), "secret");
  CHECK(client.connected());
  CHECK(wait_for([&] { return live.server.connections() == 1; }));

  std::uint64_t last_seq = 0;
  std::set<telemetry::Topic> seen;
  for (int i = 0; i < 60; ++i) {
    auto e = client.next(std::chrono::seconds(5));
    REQUIRE(e);
    REQUIRE(e->seq == last_seq + 1);
    last_seq = e->seq;
    seen.insert(e->topic());
  }
  CHECK(seen.count(telemetry::Topic::JointStates));
  CHECK(seen.count(telemetry::Topic::Power));

  const auto ack = client.send(Command{"c1", CommandKind::Torque, {{"joint", "all"}, {"enabled", true}}});
  CHECK(ack.ok);
  const auto nack = client.send(Command{"c2", CommandKind::Goal, {{"joint", "hip"}, {"position", 0}}});
  CHECK_FALSE(nack.ok);
  CHECK(nack.reason == "UNKNOWN_JOINT");

  const auto t0 = std::chrono::steady_clock::now();
  const auto estop = client.send(Command{"c3", CommandKind::Estop, json::object()});
  const auto rtt = std::chrono::steady_clock::now() - t0;
  CHECK(estop.ok);
  CHECK(rtt < std::chrono::milliseconds(200));
  for (const auto& j : live.session.robot().joints()) CHECK_FALSE(j.state().torque_enabled);

  client.close();
  CHECK(wait_for([&] { return live.server.connections() == 0; }));
}

TEST_CASE("topic filtering over the link") {
  Live live;
  net::TelemetryClient client;
  client.connect(live.tcp_endpoint(), "secret", {telemetry::Topic::Depth});
  for (int i = 0; i < 3; ++i) {
    auto e = client.next(std::chrono::seconds(5));
    REQUIRE(e);
    CHECK(e->topic() == telemetry::Topic::Depth);
  }
}

TEST_CASE("bad token is refused") {
  Live live;
  net::TelemetryClient client;
  try {
    client.connect(live.tcp_endpoint(), "wrong");
    FAIL("connected with a bad token");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("UNAUTHORIZED") != std::string::npos);
  }

  // Commands before hello are refused the same way.
  asio::io_context io;
  tcp::socket sock(io);
  sock.connect({asio::ip::make_address("127.0.0.1"), live.server.tcp_port()});
  asio::write(sock, asio::buffer(telemetry::frame_record(telemetry::serialize(Command{"x", CommandKind::Estop, {}}))));
  telemetry::RecordReader reader;
  std::array<char, 4096> buf{};
  std::optional<std::string> rec;
  beast::error_code ec;
  while (!rec && !ec) {
    const auto n = sock.read_some(asio::buffer(buf), ec);
    reader.feed(std::string_view(buf.data(), n));
    rec = reader.next();
  }
  REQUIRE(rec);
  const auto j = json::parse(*rec);
  CHECK(j["type"] == "error");
  CHECK(j["reason"] == "UNAUTHORIZED");
  CHECK(live.session.robot().joints().size() == 3);
}

TEST_CASE("connection refused is reported") {
  net::TelemetryClient client;
  asio::io_context io;
  tcp::acceptor probe(io, {asio::ip::make_address("127.0.0.1"), 0});
  const auto port = probe.local_endpoint().port();
  probe.close();
  CHECK_THROWS_AS(client.connect({"127.0.0.1", port}, "secret", telemetry::all_topics(), std::chrono::milliseconds(500)),
                  std::runtime_error);
}

TEST_CASE("web-socket gateway speaks the same records") {
  Live live;
  asio::io_context io;
  ws::stream<tcp::socket> stream(io);
  stream.next_layer().connect({asio::ip::make_address("127.0.0.1"), live.server.websocket_port()});
  stream.handshake("127.0.0.1", "/");
  stream.text(true);
  stream.write(asio::buffer(net::hello_message("secret", telemetry::all_topics()).dump()));

  auto read_json = [&] {
    beast::flat_buffer b;
    stream.read(b);
    return json::parse(beast::buffers_to_string(b.data()));
  };
  const auto welcome = read_json();
  CHECK(welcome["type"] == "welcome");
  CHECK(welcome["version"] == telemetry::kWireVersion);

  int envelopes = 0;
  for (int i = 0; i < 20; ++i) {
    const auto j = read_json();
    if (j["type"] == "envelope") {
      CHECK_NOTHROW(telemetry::envelope_from_json(j));
      ++envelopes;
    }
  }
  CHECK(envelopes == 20);

  stream.write(asio::buffer(telemetry::serialize(Command{"w1", CommandKind::Torque, {{"joint", "coxa"}, {"enabled", true}}})));
  std::optional<json> reply;
  for (int i = 0; i < 500 && !reply; ++i) {
    const auto j = read_json();
    if (j["type"] == "ack" || j["type"] == "nack") reply = j;
  }
  REQUIRE(reply);
  CHECK((*reply)["type"] == "ack");
  CHECK((*reply)["id"] == "w1");
  stream.close(ws::close_code::normal);
}

TEST_CASE("stalled subscriber is closed with SUBSCRIBER_OVERFLOW") {
  telemetry::Hub hub;
  telemetry::Dispatcher dispatcher;
  net::TelemetryServer server(hub, dispatcher,
                              net::ServerOptions{net::Endpoint{"127.0.0.1", 0}, std::nullopt, "secret", 50});
  server.start();

  asio::io_context io;
  tcp::socket sock(io);
  sock.open(tcp::v4());
  sock.set_option(asio::socket_base::receive_buffer_size(4096));
  sock.connect({asio::ip::make_address("127.0.0.1"), server.tcp_port()});
  asio::write(sock, asio::buffer(telemetry::frame_record(net::hello_message("secret", telemetry::all_topics()).dump())));
  REQUIRE(wait_for([&] { return hub.subscriber_count() == 1; }));

  // Large events fill the socket buffers, then the 50-record queue.
  const std::string blob(16384, 'x');
  for (int i = 0; i < 4000 && hub.subscriber_count() == 1; ++i) {
    hub.publish(i, telemetry::EventBody{"BULK", blob, json::object()});
    if (i % 100 == 0) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  CHECK(hub.subscriber_count() == 0);

  telemetry::RecordReader reader;
  std::array<char, 65536> buf{};
  std::optional<json> last;
  beast::error_code ec;
  while (!ec) {
    const auto n = sock.read_some(asio::buffer(buf), ec);
    reader.feed(std::string_view(buf.data(), n));
    while (auto rec = reader.next()) last = json::parse(*rec);
  }
  CHECK(ec == asio::error::eof);
  REQUIRE(last);
  CHECK((*last)["type"] == "closed");
  CHECK((*last)["reason"] == "SUBSCRIBER_OVERFLOW");
  server.stop();
}

TEST_CASE("bind failure is reported") {
  telemetry::Hub hub;
  telemetry::Dispatcher dispatcher;
  asio::io_context io;
  tcp::acceptor taken(io, {asio::ip::make_address("127.0.0.1"), 0});
  net::TelemetryServer server(hub, dispatcher,
                              net::ServerOptions{net::Endpoint{"127.0.0.1", taken.local_endpoint().port()},
                                                 std::nullopt, "t", 10});
  CHECK_THROWS_AS(server.start(), std::runtime_error);
}

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>

#include "urjkit/telemetry.hpp"

namespace urjkit::net {

// Session protocol, identical on both transports:
//   client -> {"type":"hello","token":...,"topics":[...]}   topics optional (all)
//   server -> {"type":"welcome","version":1,"topics":[...]}
//           | {"type":"error","reason":"UNAUTHORIZED","detail":...} and close
//   client -> command records; server -> ack/nack replies and envelopes
//   server -> {"type":"closed","reason":"SUBSCRIBER_OVERFLOW"} before dropping
// The stream socket frames every record with telemetry::frame_record; the
// web-socket gateway sends one record per text message.

struct Endpoint {
  std::string host = "127.0.0.1";
  unsigned short port = 0;
};

/// "host:port" or ":port". Throws std::invalid_argument.
Endpoint parse_endpoint(std::string_view text);

telemetry::json hello_message(const std::string& token, const std::set<telemetry::Topic>& topics);

struct ServerOptions {
  std::optional<Endpoint> tcp;
  std::optional<Endpoint> websocket;
  std::string token;
  std::size_t queue_capacity = telemetry::Hub::kDefaultCapacity;
};

class TelemetryServer {
 public:
  TelemetryServer(telemetry::Hub& hub, telemetry::Dispatcher& dispatcher, ServerOptions options);
  ~TelemetryServer();
  TelemetryServer(const TelemetryServer&) = delete;
  TelemetryServer& operator=(const TelemetryServer&) = delete;

  /// Binds and starts the I/O thread. Throws std::runtime_error on bind failure.
  void start();
  void stop();

  unsigned short tcp_port() const;
  unsigned short websocket_port() const;
  std::size_t connections() const;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

/// Blocking client over the stream socket with a background reader.
class TelemetryClient {
 public:
  TelemetryClient();
  ~TelemetryClient();
  TelemetryClient(const TelemetryClient&) = delete;
  TelemetryClient& operator=(const TelemetryClient&) = delete;

  /// Throws std::runtime_error on refusal or an UNAUTHORIZED answer.
  void connect(const Endpoint& endpoint, const std::string& token,
               const std::set<telemetry::Topic>& topics = telemetry::all_topics(),
               std::chrono::milliseconds timeout = std::chrono::seconds(5));

  void send_async(const telemetry::Command& cmd);
  /// Sends and waits for the matching ACK/NACK. Throws on timeout.
  telemetry::Reply send(const telemetry::Command& cmd, std::chrono::milliseconds timeout = std::chrono::seconds(5));
  std::optional<telemetry::Reply> wait_reply(const std::string& id, std::chrono::milliseconds timeout);
  std::optional<telemetry::Envelope> next(std::chrono::milliseconds timeout);

  bool connected() const;
  /// Server-side close reason, or "EOF".
  std::optional<std::string> closed_reason() const;
  void close();

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace urjkit::net

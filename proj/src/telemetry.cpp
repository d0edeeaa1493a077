#include "urjkit/telemetry.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

namespace urjkit::telemetry {

DepthReading depth_from_pressure(double p_abs, double rho, double p_atm) {
  if (!(rho > 0.0)) throw std::domain_error("fluid density must be > 0");
  if (!(p_abs >= 0.0)) throw std::domain_error("absolute pressure must be >= 0");
  DepthReading r;
  r.pressure = p_abs;
  r.depth = (p_abs - p_atm) / (rho * kGravity);
  if (r.depth <= 0.0) {
    r.depth = 0.0;
    r.surface = true;
  }
  return r;
}

std::variant<PowerSample, FuseEvent> account_power(const PowerSample& prev, double voltage, double current,
                                                   double dt) {
  if (!(dt > 0.0)) throw std::domain_error("power accounting step must be > 0");
  if (prev.fuse_blown) return prev;
  if (current > kFuseRatingA) return FuseEvent{current, prev};
  PowerSample next = prev;
  next.voltage = voltage;
  next.current = std::max(0.0, current);
  next.energy_j += voltage * next.current * dt;
  return next;
}

std::optional<FuseEvent> PowerMeter::update(double voltage, double current, double dt) {
  auto result = account_power(sample_, voltage, current, dt);
  if (auto* fuse = std::get_if<FuseEvent>(&result)) {
    sample_.voltage = 0.0;
    sample_.current = 0.0;
    sample_.fuse_blown = true;
    return *fuse;
  }
  sample_ = std::get<PowerSample>(result);
  return std::nullopt;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Topic topic) {
  switch (topic) {
    case Topic::JointStates: return "JOINT_STATES";
    case Topic::Env: return "ENV";
    case Topic::Power: return "POWER";
    case Topic::Depth: return "DEPTH";
    case Topic::LeakStatus: return "LEAK_STATUS";
    case Topic::Event: return "EVENT";
  }
  return "?";
}

std::set<Topic> all_topics() {
  return {Topic::JointStates, Topic::Env, Topic::Power, Topic::Depth, Topic::LeakStatus, Topic::Event};
}

std::optional<Topic> topic_from_string(std::string_view text) {
  for (Topic t : all_topics()) {
    if (to_string(t) == text) return t;
  }
  return std::nullopt;
}

Topic topic_of(const Body& body) { return static_cast<Topic>(body.index()); }

std::string_view to_string(CommandKind kind) {
  switch (kind) {
    case CommandKind::SetMode: return "SET_MODE";
    case CommandKind::Torque: return "TORQUE";
    case CommandKind::Goal: return "GOAL";
    case CommandKind::GaitStart: return "GAIT_START";
    case CommandKind::GaitStop: return "GAIT_STOP";
    case CommandKind::Estop: return "ESTOP";
    case CommandKind::ResetAlarm: return "RESET_ALARM";
    case CommandKind::FaultInject: return "FAULT_INJECT";
  }
  return "?";
}

std::optional<CommandKind> command_kind_from_string(std::string_view text) {
  for (auto k : {CommandKind::SetMode, CommandKind::Torque, CommandKind::Goal, CommandKind::GaitStart,
                 CommandKind::GaitStop, CommandKind::Estop, CommandKind::ResetAlarm, CommandKind::FaultInject}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

namespace {

json body_to_json(const JointStatesBody& b) {
  json joints = json::array();
  for (const auto& r : b.joints) {
    joints.push_back({{"id", r.id},
                      {"name", r.name},
                      {"t", r.state.t},
                      {"position", r.state.position},
                      {"velocity", r.state.velocity},
                      {"effort", r.state.effort},
                      {"mode", joint::to_string(r.state.mode)},
                      {"torque", r.state.torque_enabled},
                      {"fault", r.state.fault ? json(joint::to_string(*r.state.fault)) : json(nullptr)}});
  }
  return {{"joints", joints}};
}

json body_to_json(const leak::EnvSample& s) {
  return {{"zone", s.zone}, {"t", s.t}, {"temperature", s.temperature}, {"rh", s.rh}};
}

json body_to_json(const PowerSample& p) {
  return {{"voltage", p.voltage},
          {"current", p.current},
          {"energy_j", p.energy_j},
          {"energy_wh", p.energy_wh()},
          {"fuse_blown", p.fuse_blown}};
}

json body_to_json(const DepthReading& d) {
  return {{"pressure", d.pressure}, {"depth", d.depth}, {"surface", d.surface}};
}

json body_to_json(const leak::LeakStatus& s) {
  return {{"zone", s.zone},
          {"state", leak::to_string(s.state)},
          {"baseline", s.baseline},
          {"delta", s.delta},
          {"since", s.since}};
}

json body_to_json(const EventBody& e) { return {{"kind", e.kind}, {"detail", e.detail}, {"data", e.data}}; }

template <typename T>
T field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw WireError(std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw WireError(std::string("bad type for field '") + key + "'");
  }
}

Body body_from_json(Topic topic, const json& j) {
  if (!j.is_object()) throw WireError("body must be an object");
  switch (topic) {
    case Topic::JointStates: {
      JointStatesBody b;
      for (const auto& r : field<json>(j, "joints")) {
        JointReport rep;
        rep.id = field<int>(r, "id");
        rep.name = field<std::string>(r, "name");
        rep.state.t = field<double>(r, "t");
        rep.state.position = field<double>(r, "position");
        rep.state.velocity = field<double>(r, "velocity");
        rep.state.effort = field<double>(r, "effort");
        const auto mode = joint::mode_from_string(field<std::string>(r, "mode"));
        if (!mode) throw WireError("unknown joint mode");
        rep.state.mode = *mode;
        rep.state.torque_enabled = field<bool>(r, "torque");
        const json fault = field<json>(r, "fault");
        if (fault.is_string()) {
          const auto f = fault.get<std::string>();
          if (f == "OVERCURRENT_SHUTDOWN") rep.state.fault = joint::JointFault::OvercurrentShutdown;
          else if (f == "BUS_FAULT") rep.state.fault = joint::JointFault::BusFault;
          else throw WireError("unknown joint fault '" + f + "'");
        } else if (!fault.is_null()) {
          throw WireError("bad joint fault");
        }
        b.joints.push_back(std::move(rep));
      }
      return b;
    }
    case Topic::Env:
      return leak::EnvSample{field<std::string>(j, "zone"), field<double>(j, "t"), field<double>(j, "temperature"),
                             field<double>(j, "rh")};
    case Topic::Power: {
      PowerSample p;
      p.voltage = field<double>(j, "voltage");
      p.current = field<double>(j, "current");
      p.energy_j = field<double>(j, "energy_j");
      p.fuse_blown = field<bool>(j, "fuse_blown");
      return p;
    }
    case Topic::Depth:
      return DepthReading{field<double>(j, "pressure"), field<double>(j, "depth"), field<bool>(j, "surface")};
    case Topic::LeakStatus: {
      leak::LeakStatus s;
      s.zone = field<std::string>(j, "zone");
      const auto state = leak::state_from_string(field<std::string>(j, "state"));
      if (!state) throw WireError("unknown leak state");
      s.state = *state;
      s.baseline = field<double>(j, "baseline");
      s.delta = field<double>(j, "delta");
      s.since = field<double>(j, "since");
      return s;
    }
    case Topic::Event:
      return EventBody{field<std::string>(j, "kind"), field<std::string>(j, "detail"), field<json>(j, "data")};
  }
  throw WireError("unknown topic");
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw WireError(std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

json to_json(const Envelope& env) {
  return {{"type", "envelope"},
          {"seq", env.seq},
          {"t", env.t},
          {"topic", to_string(env.topic())},
          {"body", std::visit([](const auto& b) { return body_to_json(b); }, env.body)}};
}

Envelope envelope_from_json(const json& j) {
  if (!j.is_object() || j.value("type", "") != "envelope") throw WireError("not an envelope record");
  const auto topic = topic_from_string(field<std::string>(j, "topic"));
  if (!topic) throw WireError("unknown topic");
  Envelope env;
  env.seq = field<std::uint64_t>(j, "seq");
  env.t = field<double>(j, "t");
  env.body = body_from_json(*topic, field<json>(j, "body"));
  return env;
}

json to_json(const Command& cmd) {
  return {{"type", "command"}, {"id", cmd.id}, {"kind", to_string(cmd.kind)}, {"args", cmd.args}};
}

Command command_from_json(const json& j) {
  if (!j.is_object() || j.value("type", "") != "command") throw WireError("not a command record");
  const auto kind = command_kind_from_string(field<std::string>(j, "kind"));
  if (!kind) throw WireError("unknown command kind");
  Command cmd;
  cmd.id = field<std::string>(j, "id");
  cmd.kind = *kind;
  cmd.args = j.contains("args") ? j.at("args") : json::object();
  if (!cmd.args.is_object()) throw WireError("command args must be an object");
  return cmd;
}

json to_json(const Reply& r) {
  json j = {{"type", r.ok ? "ack" : "nack"}, {"id", r.id}};
  if (!r.ok) j["reason"] = r.reason;
  if (!r.detail.empty()) j["detail"] = r.detail;
  return j;
}

Reply reply_from_json(const json& j) {
  const std::string type = j.value("type", "");
  if (type != "ack" && type != "nack") throw WireError("not a reply record");
  Reply r;
  r.id = field<std::string>(j, "id");
  r.ok = type == "ack";
  r.reason = j.value("reason", "");
  r.detail = j.value("detail", "");
  return r;
}

std::string serialize(const Envelope& env) { return to_json(env).dump(); }
std::string serialize(const Command& cmd) { return to_json(cmd).dump(); }
std::string serialize(const Reply& reply) { return to_json(reply).dump(); }
Envelope parse_envelope(std::string_view text) { return envelope_from_json(parse_json(text)); }
Command parse_command(std::string_view text) { return command_from_json(parse_json(text)); }

std::string frame_record(std::string_view record) {
  std::string out = std::to_string(record.size());
  out.push_back(':');
  out.append(record);
  out.push_back('\n');
  return out;
}

void RecordReader::feed(std::string_view bytes) { buffer_.append(bytes); }

std::optional<std::string> RecordReader::next() {
  const auto colon = buffer_.find(':');
  if (colon == std::string::npos) {
    if (buffer_.size() > 20) throw WireError("record length prefix too long");
    if (!std::all_of(buffer_.begin(), buffer_.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw WireError("non-digit in record length");
    }
    return std::nullopt;
  }
  std::size_t length = 0;
  const auto [ptr, ec] = std::from_chars(buffer_.data(), buffer_.data() + colon, length);
  if (ec != std::errc{} || ptr != buffer_.data() + colon || colon == 0) throw WireError("bad record length");
  if (length > kMaxRecord) throw WireError("record too large");
  if (buffer_.size() < colon + 1 + length + 1) return std::nullopt;
  if (buffer_[colon + 1 + length] != '\n') throw WireError("record not newline-terminated");
  std::string record = buffer_.substr(colon + 1, length);
  buffer_.erase(0, colon + 1 + length + 1);
  return record;
}

// ---------------------------------------------------------------------------

Subscription::Subscription(std::set<Topic> topics, std::size_t capacity)
    : topics_(std::move(topics)), capacity_(capacity) {}

bool Subscription::push(double t, const Body& body) {
  std::function<void()> notify;
  {
    std::lock_guard lock(mutex_);
    if (closed_) return false;
    if (queue_.size() >= capacity_) {
      closed_ = true;
      reason_ = "SUBSCRIBER_OVERFLOW";
    } else {
      queue_.push_back(Envelope{next_seq_++, t, body});
    }
    notify = notify_;
  }
  cv_.notify_all();
  if (notify) notify();
  return !closed();
}

void Subscription::close(std::string reason) {
  std::function<void()> notify;
  {
    std::lock_guard lock(mutex_);
    if (closed_) return;
    closed_ = true;
    reason_ = std::move(reason);
    notify = notify_;
  }
  cv_.notify_all();
  if (notify) notify();
}

std::optional<Envelope> Subscription::try_pop() {
  std::lock_guard lock(mutex_);
  if (queue_.empty()) return std::nullopt;
  Envelope env = std::move(queue_.front());
  queue_.pop_front();
  return env;
}

std::optional<Envelope> Subscription::pop(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
  if (queue_.empty()) return std::nullopt;
  Envelope env = std::move(queue_.front());
  queue_.pop_front();
  return env;
}

std::size_t Subscription::pending() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

bool Subscription::closed() const {
  std::lock_guard lock(mutex_);
  return closed_;
}

std::string Subscription::close_reason() const {
  std::lock_guard lock(mutex_);
  return reason_;
}

std::uint64_t Subscription::delivered() const {
  std::lock_guard lock(mutex_);
  return next_seq_ - 1;
}

void Subscription::set_notify(std::function<void()> fn) {
  std::lock_guard lock(mutex_);
  notify_ = std::move(fn);
}

std::shared_ptr<Subscription> Hub::subscribe(std::set<Topic> topics, std::size_t capacity) {
  auto sub = std::make_shared<Subscription>(std::move(topics), capacity);
  std::lock_guard lock(mutex_);
  subs_.push_back(sub);
  return sub;
}

void Hub::unsubscribe(const std::shared_ptr<Subscription>& sub) {
  {
    std::lock_guard lock(mutex_);
    subs_.erase(std::remove(subs_.begin(), subs_.end(), sub), subs_.end());
  }
  if (sub) sub->close("UNSUBSCRIBED");
}

void Hub::add_sink(Sink sink) {
  std::lock_guard lock(mutex_);
  sinks_.push_back({std::move(sink), 1});
}

void Hub::publish(double t, Body body) {
  const Topic topic = topic_of(body);
  std::vector<std::shared_ptr<Subscription>> targets;
  {
    std::lock_guard lock(mutex_);
    ++published_;
    for (auto& sink : sinks_) sink.fn(Envelope{sink.next_seq++, t, body});
    for (const auto& s : subs_) {
      if (s->wants(topic)) targets.push_back(s);
    }
  }
  std::vector<std::shared_ptr<Subscription>> dropped;
  for (const auto& s : targets) {
    if (!s->push(t, body)) dropped.push_back(s);
  }
  if (!dropped.empty()) {
    std::lock_guard lock(mutex_);
    for (const auto& s : dropped) subs_.erase(std::remove(subs_.begin(), subs_.end(), s), subs_.end());
  }
}

std::size_t Hub::subscriber_count() const {
  std::lock_guard lock(mutex_);
  return subs_.size();
}

std::uint64_t Hub::published() const {
  std::lock_guard lock(mutex_);
  return published_;
}

// ---------------------------------------------------------------------------

json log_header(const json& extra) {
  json h = {{"type", "log_header"}, {"schema", "urjkit-telemetry"}, {"version", kWireVersion}};
  for (auto it = extra.begin(); it != extra.end(); ++it) h[it.key()] = it.value();
  return h;
}

LogWriter::LogWriter(const std::string& path, const json& header_extra)
    : path_(path), file_(std::fopen(path.c_str(), "wb"), &std::fclose) {
  if (!file_) throw std::runtime_error("cannot open log file " + path);
  const std::string header = log_header(header_extra).dump() + "\n";
  std::fwrite(header.data(), 1, header.size(), file_.get());
}

void LogWriter::write(const Envelope& env) {
  const std::string line = serialize(env) + "\n";
  std::fwrite(line.data(), 1, line.size(), file_.get());
}

void LogWriter::flush() { std::fflush(file_.get()); }

// ---------------------------------------------------------------------------

void Dispatcher::submit(Command cmd, ReplyFn reply_to) {
  std::lock_guard lock(mutex_);
  if (cmd.kind == CommandKind::Estop) {
    while (!queue_.empty()) {
      preempted_.push_back(std::move(queue_.front()));
      queue_.pop_front();
    }
    priority_.push_back({std::move(cmd), std::move(reply_to)});
  } else {
    queue_.push_back({std::move(cmd), std::move(reply_to)});
  }
}

std::size_t Dispatcher::drain(const Handler& handler) {
  std::deque<Pending> priority;
  std::deque<Pending> preempted;
  std::deque<Pending> queue;
  {
    std::lock_guard lock(mutex_);
    priority.swap(priority_);
    preempted.swap(preempted_);
    queue.swap(queue_);
  }
  std::size_t n = 0;
  auto respond = [](Pending& p, const Reply& r) {
    if (p.reply_to) p.reply_to(r);
  };
  for (auto& p : priority) {
    respond(p, handler(p.cmd));
    ++n;
  }
  for (auto& p : preempted) {
    respond(p, Reply::nack(p.cmd.id, reason::kPreempted, "superseded by ESTOP"));
    ++n;
  }
  for (auto& p : queue) {
    respond(p, handler(p.cmd));
    ++n;
  }
  return n;
}

std::size_t Dispatcher::pending() const {
  std::lock_guard lock(mutex_);
  return priority_.size() + preempted_.size() + queue_.size();
}

Reply dispatch(const Command& cmd, const Dispatcher::Handler& handler) { return handler(cmd); }

}  // namespace urjkit::telemetry

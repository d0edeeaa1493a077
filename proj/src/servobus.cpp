#include "urjkit/servobus.hpp"

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstring>
#include <set>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <termios.h>
#include <unistd.h>

namespace urjkit::bus {

namespace {

constexpr std::array<std::uint16_t, 256> make_crc_table() {
  std::array<std::uint16_t, 256> table{};
  for (std::uint16_t i = 0; i < 256; ++i) {
    std::uint16_t crc = static_cast<std::uint16_t>(i << 8);
    for (int bit = 0; bit < 8; ++bit) {
      crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x8005) : static_cast<std::uint16_t>(crc << 1);
    }
    table[i] = crc;
  }
  return table;
}

constexpr auto kCrcTable = make_crc_table();

std::size_t frame_size_for_length(std::uint8_t length) { return std::size_t{length} + 6; }

}  // namespace

std::string_view to_string(Instruction ins) {
  switch (ins) {
    case Instruction::Ping: return "PING";
    case Instruction::Read: return "READ";
    case Instruction::Write: return "WRITE";
    case Instruction::SyncRead: return "SYNC_READ";
    case Instruction::SyncWrite: return "SYNC_WRITE";
    case Instruction::Status: return "STATUS";
  }
  return "?";
}

std::optional<Instruction> instruction_from_code(std::uint8_t code) {
  switch (code) {
    case 0x01: return Instruction::Ping;
    case 0x02: return Instruction::Read;
    case 0x03: return Instruction::Write;
    case 0x82: return Instruction::SyncRead;
    case 0x83: return Instruction::SyncWrite;
    case 0x55: return Instruction::Status;
    default: return std::nullopt;
  }
}

std::string_view to_string(BusErrorKind kind) {
  switch (kind) {
    case BusErrorKind::Timeout: return "TIMEOUT";
    case BusErrorKind::CrcMismatch: return "CRC_MISMATCH";
    case BusErrorKind::Malformed: return "MALFORMED";
    case BusErrorKind::DeviceFault: return "DEVICE_FAULT";
    case BusErrorKind::PayloadTooLong: return "PAYLOAD_TOO_LONG";
    case BusErrorKind::DuplicateId: return "DUPLICATE_ID";
  }
  return "?";
}

BusError::BusError(BusErrorKind kind, std::string detail, std::uint8_t hardware_error)
    : std::runtime_error(std::string(to_string(kind)) + ": " + detail),
      kind_(kind),
      detail_(std::move(detail)),
      hardware_error_(hardware_error) {}

std::uint16_t crc16(std::span<const std::uint8_t> data) {
  std::uint16_t crc = 0x0000;
  for (std::uint8_t byte : data) {
    crc = static_cast<std::uint16_t>((crc << 8) ^ kCrcTable[((crc >> 8) ^ byte) & 0xFF]);
  }
  return crc;
}

Bytes encode_frame(const BusFrame& frame) {
  if (frame.payload.size() > kMaxPayload) {
    throw BusError(BusErrorKind::PayloadTooLong,
                   "payload of " + std::to_string(frame.payload.size()) + " bytes exceeds " +
                       std::to_string(kMaxPayload));
  }
  Bytes out;
  out.reserve(frame.payload.size() + kFrameOverhead);
  out.push_back(kHeader0);
  out.push_back(kHeader1);
  out.push_back(frame.device_id);
  out.push_back(static_cast<std::uint8_t>(frame.payload.size() + 1));
  out.push_back(static_cast<std::uint8_t>(frame.instruction));
  out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  const std::uint16_t crc = crc16(std::span(out).subspan(2));
  out.push_back(static_cast<std::uint8_t>(crc & 0xFF));
  out.push_back(static_cast<std::uint8_t>(crc >> 8));
  return out;
}

DecodeResult decode_frame(std::span<const std::uint8_t> stream) {
  DecodeResult result;
  const std::size_t n = stream.size();

  std::size_t start = n;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (stream[i] == kHeader0 && stream[i + 1] == kHeader1) {
      start = i;
      break;
    }
  }

  if (start == n) {
    // A trailing 0xA5 may be the first half of a header still in flight.
    const std::size_t keep = (n > 0 && stream[n - 1] == kHeader0) ? 1 : 0;
    const std::size_t junk = n - keep;
    if (junk == 0) return result;
    result.status = DecodeStatus::Malformed;
    result.consumed = junk;
    result.skipped = junk;
    result.detail = "no frame header in " + std::to_string(junk) + " bytes";
    return result;
  }

  result.skipped = start;
  if (n < start + 4) {
    result.consumed = start;
    return result;
  }

  const std::uint8_t length = stream[start + 3];
  if (length == 0 || length > kMaxPayload + 1) {
    result.status = DecodeStatus::Malformed;
    result.consumed = start + 1;
    result.detail = "bad length byte " + std::to_string(length);
    return result;
  }

  const std::size_t total = frame_size_for_length(length);
  if (n < start + total) {
    result.consumed = start;
    return result;
  }

  const auto body = stream.subspan(start + 2, std::size_t{length} + 2);
  const std::uint16_t expected = crc16(body);
  const std::uint16_t received = static_cast<std::uint16_t>(stream[start + total - 2] |
                                                            (stream[start + total - 1] << 8));
  if (expected != received) {
    result.status = DecodeStatus::CrcMismatch;
    result.consumed = start + 1;
    result.detail = "crc mismatch";
    return result;
  }

  result.consumed = start + total;
  const std::uint8_t id = stream[start + 2];
  const auto ins = instruction_from_code(stream[start + 4]);
  if (id > kBroadcastId) {
    result.status = DecodeStatus::Malformed;
    result.detail = "invalid device id " + std::to_string(id);
    return result;
  }
  if (!ins) {
    result.status = DecodeStatus::Malformed;
    result.detail = "unknown instruction " + std::to_string(stream[start + 4]);
    return result;
  }

  BusFrame frame;
  frame.device_id = id;
  frame.instruction = *ins;
  frame.payload.assign(stream.begin() + static_cast<std::ptrdiff_t>(start + 5),
                       stream.begin() + static_cast<std::ptrdiff_t>(start + 5 + length - 1));
  result.status = DecodeStatus::Ok;
  result.frame = std::move(frame);
  return result;
}

// ---------------------------------------------------------------------------

ControlTable::ControlTable(std::vector<RegisterInfo> registers) : registers_(std::move(registers)) {
  std::sort(registers_.begin(), registers_.end(),
            [](const RegisterInfo& a, const RegisterInfo& b) { return a.address < b.address; });
  for (std::size_t i = 1; i < registers_.size(); ++i) {
    if (registers_[i - 1].address + registers_[i - 1].width > registers_[i].address) {
      throw std::invalid_argument("control table registers overlap at " +
                                  std::string(registers_[i].name));
    }
  }
}

const ControlTable& ControlTable::standard() {
  static const ControlTable table({
      {0, 2, Access::ReadOnly, false, "MODEL_NUMBER"},
      {11, 1, Access::ReadWrite, false, "OPERATING_MODE"},
      {64, 1, Access::ReadWrite, false, "TORQUE_ENABLE"},
      {70, 1, Access::ReadOnly, false, "HARDWARE_ERROR"},
      {102, 2, Access::ReadWrite, true, "GOAL_CURRENT"},
      {104, 4, Access::ReadWrite, true, "GOAL_VELOCITY"},
      {116, 4, Access::ReadWrite, true, "GOAL_POSITION"},
      {126, 2, Access::ReadOnly, true, "PRESENT_CURRENT"},
      {128, 4, Access::ReadOnly, true, "PRESENT_VELOCITY"},
      {132, 4, Access::ReadOnly, true, "PRESENT_POSITION"},
      {146, 1, Access::ReadOnly, false, "TEMPERATURE"},
  });
  return table;
}

const RegisterInfo& ControlTable::info(Register reg) const {
  const auto* found = find(static_cast<std::uint16_t>(reg));
  if (!found) throw std::out_of_range("register not in control table");
  return *found;
}

const RegisterInfo* ControlTable::find(std::uint16_t address) const {
  for (const auto& r : registers_) {
    if (r.address == address) return &r;
  }
  return nullptr;
}

std::size_t ControlTable::size() const {
  if (registers_.empty()) return 0;
  return registers_.back().address + registers_.back().width;
}

Bytes pack_le(std::int64_t value, std::uint8_t width) {
  Bytes out(width);
  auto u = static_cast<std::uint64_t>(value);
  for (std::uint8_t i = 0; i < width; ++i) {
    out[i] = static_cast<std::uint8_t>(u & 0xFF);
    u >>= 8;
  }
  return out;
}

std::int64_t unpack_le(std::span<const std::uint8_t> bytes, bool is_signed) {
  std::uint64_t u = 0;
  for (std::size_t i = bytes.size(); i-- > 0;) u = (u << 8) | bytes[i];
  if (is_signed && !bytes.empty() && bytes.size() < 8 && (bytes.back() & 0x80)) {
    u |= ~std::uint64_t{0} << (8 * bytes.size());
  }
  return static_cast<std::int64_t>(u);
}

bool fits_register(std::int64_t value, std::uint8_t width, bool is_signed) {
  const int bits = 8 * width;
  if (is_signed) {
    const std::int64_t lo = -(std::int64_t{1} << (bits - 1));
    const std::int64_t hi = (std::int64_t{1} << (bits - 1)) - 1;
    return value >= lo && value <= hi;
  }
  return value >= 0 && value <= (std::int64_t{1} << bits) - 1;
}

// ---------------------------------------------------------------------------

namespace {

speed_t baud_constant(int baud) {
  switch (baud) {
    case 9600: return B9600;
    case 57600: return B57600;
    case 115200: return B115200;
    case 1000000: return B1000000;
    case 2000000: return B2000000;
    case 3000000: return B3000000;
    default: throw std::invalid_argument("unsupported baud rate " + std::to_string(baud));
  }
}

}  // namespace

SerialPort::SerialPort(const std::string& path, int baud) {
  fd_ = ::open(path.c_str(), O_RDWR | O_NOCTTY | O_NONBLOCK);
  if (fd_ < 0) throw std::runtime_error("cannot open " + path + ": " + std::strerror(errno));
  termios tio{};
  if (::tcgetattr(fd_, &tio) != 0) {
    ::close(fd_);
    throw std::runtime_error("tcgetattr failed on " + path);
  }
  ::cfmakeraw(&tio);
  tio.c_cflag |= CLOCAL | CREAD;
  tio.c_cflag &= ~CSTOPB;
  const speed_t speed = baud_constant(baud);
  ::cfsetispeed(&tio, speed);
  ::cfsetospeed(&tio, speed);
  if (::tcsetattr(fd_, TCSANOW, &tio) != 0) {
    ::close(fd_);
    throw std::runtime_error("tcsetattr failed on " + path);
  }
}

SerialPort::~SerialPort() {
  if (fd_ >= 0) ::close(fd_);
}

void SerialPort::write(std::span<const std::uint8_t> bytes) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd_, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EAGAIN || errno == EINTR) {
        pollfd pfd{fd_, POLLOUT, 0};
        ::poll(&pfd, 1, 10);
        continue;
      }
      throw std::runtime_error(std::string("serial write failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

std::size_t SerialPort::read(std::span<std::uint8_t> out, std::chrono::microseconds timeout) {
  pollfd pfd{fd_, POLLIN, 0};
  const int ms = static_cast<int>((timeout.count() + 999) / 1000);
  const int ready = ::poll(&pfd, 1, ms);
  if (ready <= 0) return 0;
  const ssize_t n = ::read(fd_, out.data(), out.size());
  return n > 0 ? static_cast<std::size_t>(n) : 0;
}

// ---------------------------------------------------------------------------

namespace {

class InFlightGuard {
 public:
  InFlightGuard(std::atomic<int>& counter, std::atomic<int>& high_water) : counter_(counter) {
    const int now = ++counter_;
    if (now > 1) {
      --counter_;
      throw std::logic_error("bus master used concurrently");
    }
    int prev = high_water.load();
    while (now > prev && !high_water.compare_exchange_weak(prev, now)) {
    }
  }
  ~InFlightGuard() { --counter_; }
  InFlightGuard(const InFlightGuard&) = delete;
  InFlightGuard& operator=(const InFlightGuard&) = delete;

 private:
  std::atomic<int>& counter_;
};

}  // namespace

BusMaster::BusMaster(Transport& transport, std::chrono::microseconds timeout)
    : transport_(transport), timeout_(timeout) {}

BusFrame BusMaster::transact(const BusFrame& request) { return transact(request, timeout_); }

BusFrame BusMaster::transact(const BusFrame& request, std::chrono::microseconds timeout) {
  if (request.is_broadcast()) {
    throw BusError(BusErrorKind::Malformed, "broadcast request cannot be transacted");
  }
  InFlightGuard guard(in_flight_, max_in_flight_);
  const Bytes wire = encode_frame(request);
  ++stats_.transactions;

  for (int attempt = 0;; ++attempt) {
    rx_.clear();
    transport_.write(wire);
    try {
      BusFrame status = await_status(request.device_id, timeout);
      if (!status.payload.empty() && status.payload[0] != 0) {
        throw BusError(BusErrorKind::DeviceFault,
                       "device " + std::to_string(request.device_id) + " reports hardware error",
                       status.payload[0]);
      }
      return status;
    } catch (const BusError& e) {
      if (e.kind() == BusErrorKind::CrcMismatch && attempt == 0) {
        ++stats_.retries;
        continue;
      }
      throw;
    }
  }
}

BusFrame BusMaster::await_status(std::uint8_t id, std::chrono::microseconds timeout) {
  using Clock = std::chrono::steady_clock;
  const auto deadline = Clock::now() + timeout;
  std::array<std::uint8_t, 512> chunk{};
  bool saw_crc_error = false;

  for (;;) {
    while (!rx_.empty()) {
      const DecodeResult r = decode_frame(rx_);
      if (r.consumed == 0) break;
      stats_.discarded_bytes += r.skipped;
      rx_.erase(rx_.begin(), rx_.begin() + static_cast<std::ptrdiff_t>(r.consumed));
      if (r.status == DecodeStatus::CrcMismatch) {
        ++stats_.crc_errors;
        saw_crc_error = true;
      } else if (r.status == DecodeStatus::Ok && r.frame->instruction == Instruction::Status &&
                 r.frame->device_id == id) {
        return *r.frame;
      }
    }
    const auto now = Clock::now();
    const auto remaining = std::chrono::duration_cast<std::chrono::microseconds>(deadline - now);
    const std::size_t n =
        remaining.count() > 0 ? transport_.read(chunk, remaining) : std::size_t{0};
    if (n == 0) {
      if (saw_crc_error) {
        throw BusError(BusErrorKind::CrcMismatch, "corrupted response from device " + std::to_string(id));
      }
      ++stats_.timeouts;
      throw BusError(BusErrorKind::Timeout, "no response from device " + std::to_string(id));
    }
    rx_.insert(rx_.end(), chunk.begin(), chunk.begin() + static_cast<std::ptrdiff_t>(n));
  }
}

void BusMaster::send(const BusFrame& frame) {
  InFlightGuard guard(in_flight_, max_in_flight_);
  transport_.write(encode_frame(frame));
}

std::uint16_t BusMaster::ping(std::uint8_t id) {
  const BusFrame status = transact({id, Instruction::Ping, {}});
  if (status.payload.size() < 3) throw BusError(BusErrorKind::Malformed, "short PING status");
  return static_cast<std::uint16_t>(unpack_le(std::span(status.payload).subspan(1, 2), false));
}

Bytes BusMaster::read_block(std::uint8_t id, std::uint16_t address, std::uint8_t length) {
  Bytes payload = pack_le(address, 2);
  payload.push_back(length);
  const BusFrame status = transact({id, Instruction::Read, std::move(payload)});
  if (status.payload.size() != std::size_t{length} + 1) {
    throw BusError(BusErrorKind::Malformed, "READ status length " + std::to_string(status.payload.size()));
  }
  return Bytes(status.payload.begin() + 1, status.payload.end());
}

std::int64_t BusMaster::read_register(std::uint8_t id, Register reg) {
  const auto& info = ControlTable::standard().info(reg);
  const Bytes data = read_block(id, info.address, info.width);
  return unpack_le(data, info.is_signed);
}

void BusMaster::write_register(std::uint8_t id, Register reg, std::int64_t value) {
  const auto& info = ControlTable::standard().info(reg);
  if (!fits_register(value, info.width, info.is_signed)) {
    throw std::out_of_range(std::string(info.name) + " value out of register range");
  }
  Bytes payload = pack_le(info.address, 2);
  const Bytes data = pack_le(value, info.width);
  payload.insert(payload.end(), data.begin(), data.end());
  transact({id, Instruction::Write, std::move(payload)});
}

BusFrame make_sync_write(Register reg, std::span<const std::pair<std::uint8_t, std::int64_t>> entries) {
  const auto& info = ControlTable::standard().info(reg);
  std::set<std::uint8_t> seen;
  Bytes payload = pack_le(info.address, 2);
  payload.push_back(info.width);
  for (const auto& [id, value] : entries) {
    if (id > kMaxDeviceId) throw BusError(BusErrorKind::Malformed, "sync_write to non-device id");
    if (!seen.insert(id).second) {
      throw BusError(BusErrorKind::DuplicateId, "device " + std::to_string(id) + " listed twice");
    }
    if (!fits_register(value, info.width, info.is_signed)) {
      throw std::out_of_range(std::string(info.name) + " value out of register range");
    }
    payload.push_back(id);
    const Bytes data = pack_le(value, info.width);
    payload.insert(payload.end(), data.begin(), data.end());
  }
  if (payload.size() > kMaxPayload) {
    throw BusError(BusErrorKind::PayloadTooLong, "too many sync_write entries");
  }
  return {kBroadcastId, Instruction::SyncWrite, std::move(payload)};
}

void BusMaster::sync_write(Register reg, std::span<const std::pair<std::uint8_t, std::int64_t>> entries) {
  send(make_sync_write(reg, entries));
}

}  // namespace urjkit::bus

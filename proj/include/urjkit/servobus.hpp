#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace urjkit::bus {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint8_t kHeader0 = 0xA5;
inline constexpr std::uint8_t kHeader1 = 0x5A;
inline constexpr std::uint8_t kBroadcastId = 254;
inline constexpr std::uint8_t kMaxDeviceId = 253;
inline constexpr std::size_t kMaxPayload = 250;
/// header(2) + id + length + instruction + crc(2)
inline constexpr std::size_t kFrameOverhead = 7;

enum class Instruction : std::uint8_t {
  Ping = 0x01,
  Read = 0x02,
  Write = 0x03,
  SyncRead = 0x82,  // reserved: a broadcast never elicits STATUS
  SyncWrite = 0x83,
  Status = 0x55,
};

std::string_view to_string(Instruction ins);
std::optional<Instruction> instruction_from_code(std::uint8_t code);

struct BusFrame {
  std::uint8_t device_id = 0;
  Instruction instruction = Instruction::Ping;
  Bytes payload;

  bool is_broadcast() const { return device_id == kBroadcastId; }
  friend bool operator==(const BusFrame&, const BusFrame&) = default;
};

enum class BusErrorKind { Timeout, CrcMismatch, Malformed, DeviceFault, PayloadTooLong, DuplicateId };

std::string_view to_string(BusErrorKind kind);

class BusError : public std::runtime_error {
 public:
  BusError(BusErrorKind kind, std::string detail, std::uint8_t hardware_error = 0);

  BusErrorKind kind() const { return kind_; }
  const std::string& detail() const { return detail_; }
  /// HARDWARE_ERROR register bits, only meaningful for DeviceFault.
  std::uint8_t hardware_error() const { return hardware_error_; }

 private:
  BusErrorKind kind_;
  std::string detail_;
  std::uint8_t hardware_error_;
};

/// CRC-16/IBM, non-reflected: poly 0x8005, init 0x0000, no final xor.
std::uint16_t crc16(std::span<const std::uint8_t> data);

/// Throws BusError(PayloadTooLong) when the payload exceeds kMaxPayload.
Bytes encode_frame(const BusFrame& frame);

enum class DecodeStatus { Ok, NeedMore, CrcMismatch, Malformed };

/// Outcome of one decode attempt. `consumed` bytes should be dropped from the
/// front of the stream before the next attempt; it is zero only for NeedMore.
/// `skipped` counts garbage bytes discarded ahead of a frame header.
struct DecodeResult {
  DecodeStatus status = DecodeStatus::NeedMore;
  std::optional<BusFrame> frame;
  std::size_t consumed = 0;
  std::size_t skipped = 0;
  std::string detail;
};

DecodeResult decode_frame(std::span<const std::uint8_t> stream);

// ---------------------------------------------------------------------------
// Control table

enum class Access { ReadOnly, ReadWrite };

enum class Register : std::uint16_t {
  ModelNumber = 0,
  OperatingMode = 11,
  TorqueEnable = 64,
  HardwareError = 70,
  GoalCurrent = 102,
  GoalVelocity = 104,
  GoalPosition = 116,
  PresentCurrent = 126,
  PresentVelocity = 128,
  PresentPosition = 132,
  Temperature = 146,
};

struct RegisterInfo {
  std::uint16_t address;
  std::uint8_t width;  // 1, 2 or 4 bytes, little-endian
  Access access;
  bool is_signed;
  std::string_view name;
};

class ControlTable {
 public:
  /// The standard register layout shared by the simulator and the runtime.
  static const ControlTable& standard();

  const RegisterInfo& info(Register reg) const;
  const RegisterInfo* find(std::uint16_t address) const;
  std::span<const RegisterInfo> registers() const { return registers_; }
  /// One past the highest mapped byte.
  std::size_t size() const;

  explicit ControlTable(std::vector<RegisterInfo> registers);

 private:
  std::vector<RegisterInfo> registers_;
};

inline constexpr std::uint16_t kModelNumber = 1030;

/// Hardware error bits.
namespace hw_error {
inline constexpr std::uint8_t kInputVoltage = 0x01;
inline constexpr std::uint8_t kOverheating = 0x04;
inline constexpr std::uint8_t kEncoder = 0x08;
inline constexpr std::uint8_t kElectricalShock = 0x10;
inline constexpr std::uint8_t kOverload = 0x20;
}  // namespace hw_error

/// Little-endian encode of `value` into `width` bytes.
Bytes pack_le(std::int64_t value, std::uint8_t width);
/// Little-endian decode; sign-extends when is_signed.
std::int64_t unpack_le(std::span<const std::uint8_t> bytes, bool is_signed);
/// Range check for a register of the given width and signedness.
bool fits_register(std::int64_t value, std::uint8_t width, bool is_signed);

// ---------------------------------------------------------------------------
// Transport and master

/// Byte pipe to the bus. read() blocks for at most `timeout` and returns the
/// number of bytes placed into `out`; zero means the timeout elapsed.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void write(std::span<const std::uint8_t> bytes) = 0;
  virtual std::size_t read(std::span<std::uint8_t> out, std::chrono::microseconds timeout) = 0;
};

/// POSIX serial port (termios, 8N1, raw).
class SerialPort final : public Transport {
 public:
  SerialPort(const std::string& path, int baud);
  ~SerialPort() override;
  SerialPort(const SerialPort&) = delete;
  SerialPort& operator=(const SerialPort&) = delete;

  void write(std::span<const std::uint8_t> bytes) override;
  std::size_t read(std::span<std::uint8_t> out, std::chrono::microseconds timeout) override;

 private:
  int fd_ = -1;
};

struct MasterStats {
  std::uint64_t transactions = 0;
  std::uint64_t retries = 0;
  std::uint64_t timeouts = 0;
  std::uint64_t crc_errors = 0;
  std::uint64_t discarded_bytes = 0;
};

/// Single bus master. Transactions are strictly serialized; using one master
/// from two threads at once is a logic error and throws.
class BusMaster {
 public:
  explicit BusMaster(Transport& transport,
                     std::chrono::microseconds timeout = std::chrono::milliseconds(20));

  BusFrame transact(const BusFrame& request);
  BusFrame transact(const BusFrame& request, std::chrono::microseconds timeout);

  /// Fire-and-forget frame (broadcast).
  void send(const BusFrame& frame);

  std::uint16_t ping(std::uint8_t id);
  std::int64_t read_register(std::uint8_t id, Register reg);
  /// Raw block read starting at `address`.
  Bytes read_block(std::uint8_t id, std::uint16_t address, std::uint8_t length);
  void write_register(std::uint8_t id, Register reg, std::int64_t value);

  /// One broadcast SYNC_WRITE frame. Throws DuplicateId on repeated ids.
  void sync_write(Register reg, std::span<const std::pair<std::uint8_t, std::int64_t>> entries);

  int in_flight() const { return in_flight_.load(); }
  int max_in_flight() const { return max_in_flight_.load(); }
  const MasterStats& stats() const { return stats_; }
  std::chrono::microseconds timeout() const { return timeout_; }

 private:
  BusFrame await_status(std::uint8_t id, std::chrono::microseconds timeout);

  Transport& transport_;
  std::chrono::microseconds timeout_;
  Bytes rx_;
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
  MasterStats stats_;
};

/// Builds a SYNC_WRITE request frame without sending it.
BusFrame make_sync_write(Register reg, std::span<const std::pair<std::uint8_t, std::int64_t>> entries);

}  // namespace urjkit::bus

#include <doctest.h>

#include <random>
#include <string>

#include "oracles.hpp"
#include "urjkit/servobus.hpp"
#include "urjkit/simulator.hpp"

using namespace urjkit;
using namespace urjkit::bus;

namespace {

BusFrame random_frame(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> id(0, 254);
  std::uniform_int_distribution<int> len(0, kMaxPayload);
  std::uniform_int_distribution<int> byte(0, 255);
  const Instruction kinds[] = {Instruction::Ping,      Instruction::Read,      Instruction::Write,
                               Instruction::SyncRead,  Instruction::SyncWrite, Instruction::Status};
  BusFrame f;
  f.device_id = static_cast<std::uint8_t>(id(rng));
  f.instruction = kinds[rng() % 6];
  f.payload.resize(static_cast<std::size_t>(len(rng)));
  for (auto& b : f.payload) b = static_cast<std::uint8_t>(byte(rng));
  return f;
}

Bytes bytes_of(std::string_view s) { return Bytes(s.begin(), s.end()); }

}  // namespace

TEST_CASE("crc16 matches the bitwise oracle") {
  CHECK(crc16({}) == 0x0000);
  const Bytes one{0x01};
  CHECK(crc16(one) == oracle::crc16_bitwise(one));
  CHECK(crc16(bytes_of("123456789")) == 0xFEE8);
  CHECK(oracle::crc16_bitwise(bytes_of("123456789")) == 0xFEE8);

  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; ++i) {
    Bytes d(rng() % 300);
    for (auto& b : d) b = static_cast<std::uint8_t>(rng());
    REQUIRE(crc16(d) == oracle::crc16_bitwise(d));
    REQUIRE(crc16(d) == crc16(d));
  }
}

TEST_CASE("PING frame layout") {
  const Bytes wire = encode_frame({1, Instruction::Ping, {}});
  const Bytes body{0x01, 0x01, 0x01};
  const auto crc = oracle::crc16_bitwise(body);
  const Bytes expected{0xA5, 0x5A, 0x01, 0x01, 0x01, static_cast<std::uint8_t>(crc & 0xFF),
                       static_cast<std::uint8_t>(crc >> 8)};
  CHECK(wire == expected);
}

TEST_CASE("payload limit") {
  BusFrame f{3, Instruction::Write, Bytes(kMaxPayload, 0xAB)};
  CHECK_NOTHROW(encode_frame(f));
  f.payload.push_back(0);
  try {
    encode_frame(f);
    FAIL("expected PayloadTooLong");
  } catch (const BusError& e) {
    CHECK(e.kind() == BusErrorKind::PayloadTooLong);
  }
}

TEST_CASE("decode round trip over random frames") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 20000; ++i) {
    const BusFrame f = random_frame(rng);
    const Bytes wire = encode_frame(f);
    const auto r = decode_frame(wire);
    REQUIRE(r.status == DecodeStatus::Ok);
    REQUIRE(*r.frame == f);
    REQUIRE(r.consumed == wire.size());
    REQUIRE(r.skipped == 0);
  }
}

TEST_CASE("decode with junk prefix, truncation and corrupted crc") {
  const Bytes wire = encode_frame({1, Instruction::Ping, {}});
  Bytes noisy{0x00, 0x13, 0x37};
  noisy.insert(noisy.end(), wire.begin(), wire.end());
  auto r = decode_frame(noisy);
  // Junk ahead of a header is reported first, then the frame decodes.
  std::size_t total = 0;
  while (r.status != DecodeStatus::Ok) {
    REQUIRE(r.consumed > 0);
    total += r.consumed;
    r = decode_frame(std::span(noisy).subspan(total));
  }
  total += r.consumed;
  CHECK(total == 3 + wire.size());
  CHECK(r.frame->device_id == 1);

  CHECK(decode_frame(std::span(wire).first(4)).status == DecodeStatus::NeedMore);
  CHECK(decode_frame(std::span(wire).first(4)).consumed == 0);

  Bytes bad = wire;
  bad.back() ^= 0xFF;
  CHECK(decode_frame(bad).status == DecodeStatus::CrcMismatch);
}

TEST_CASE("single bit flips on a golden frame never decode silently") {
  const BusFrame golden{7, Instruction::Write, {0x74, 0x00, 0x00, 0x08, 0x00, 0x00}};
  const Bytes wire = encode_frame(golden);
  for (std::size_t bit = 0; bit < wire.size() * 8; ++bit) {
    Bytes bad = wire;
    bad[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    CAPTURE(bit);

    // Alone: never an Ok frame.
    std::size_t off = 0;
    while (off < bad.size()) {
      const auto r = decode_frame(std::span(bad).subspan(off));
      REQUIRE(r.status != DecodeStatus::Ok);
      if (r.consumed == 0) break;
      off += r.consumed;
    }

    // Followed by traffic longer than the largest frame: every golden copy is
    // recovered, nothing else decodes, and the corruption was reported.
    Bytes stream = bad;
    const int copies = 25;
    for (int c = 0; c < copies; ++c) stream.insert(stream.end(), wire.begin(), wire.end());
    off = 0;
    int ok = 0;
    bool detected = false;
    while (off < stream.size()) {
      const auto r = decode_frame(std::span(stream).subspan(off));
      if (r.consumed == 0) break;
      if (r.status == DecodeStatus::Ok) {
        ++ok;
        REQUIRE(*r.frame == golden);
        if (r.skipped > 0) detected = true;
      } else {
        detected = true;
      }
      off += r.consumed;
    }
    CHECK(ok == copies);
    CHECK(detected);
  }
}

TEST_CASE("resync over random noise never stalls or misparses") {
  std::mt19937_64 rng(3);
  std::vector<BusFrame> sent;
  Bytes stream;
  for (int i = 0; i < 500; ++i) {
    Bytes junk(rng() % 12);
    for (auto& b : junk) b = static_cast<std::uint8_t>(rng());
    stream.insert(stream.end(), junk.begin(), junk.end());
    BusFrame f = random_frame(rng);
    f.payload.resize(f.payload.size() % 40);
    sent.push_back(f);
    const Bytes w = encode_frame(f);
    stream.insert(stream.end(), w.begin(), w.end());
  }
  std::vector<BusFrame> got;
  std::size_t off = 0;
  while (off < stream.size()) {
    const auto r = decode_frame(std::span(stream).subspan(off));
    if (r.status == DecodeStatus::NeedMore) {
      REQUIRE(r.consumed == 0);
      break;
    }
    REQUIRE(r.consumed > 0);
    if (r.status == DecodeStatus::Ok) got.push_back(*r.frame);
    off += r.consumed;
  }
  // Every sent frame is recovered in order; a random junk run can at worst
  // add a frame whose CRC happens to check, which must then be absent from
  // the sent sequence only at positions between real frames.
  std::size_t k = 0;
  for (const auto& f : got) {
    if (k < sent.size() && f == sent[k]) ++k;
  }
  CHECK(k == sent.size());
}

TEST_CASE("control table") {
  const auto& t = ControlTable::standard();
  for (std::size_t i = 1; i < t.registers().size(); ++i) {
    const auto& a = t.registers()[i - 1];
    const auto& b = t.registers()[i];
    CHECK(a.address + a.width <= b.address);
  }
  CHECK(t.info(Register::GoalPosition).width == 4);
  CHECK_THROWS_AS(ControlTable({{0, 4, Access::ReadOnly, false, "A"}, {2, 1, Access::ReadOnly, false, "B"}}),
                  std::invalid_argument);
  CHECK(pack_le(0x01020304, 4) == Bytes{0x04, 0x03, 0x02, 0x01});
  CHECK(unpack_le(pack_le(-2, 2), true) == -2);
  CHECK(unpack_le(pack_le(0xFFFE, 2), false) == 0xFFFE);
}

TEST_CASE("transactions against simulated devices") {
  sim::SimBus bus;
  for (std::uint8_t id : {1, 2, 3}) bus.attach(sim::SimDevice(id, {}));
  BusMaster master(bus);

  SUBCASE("ping echoes the model number") { CHECK(master.ping(2) == kModelNumber); }

  SUBCASE("absent id times out after the configured timeout") {
    const auto before = bus.bus_time();
    try {
      master.ping(9);
      FAIL("expected timeout");
    } catch (const BusError& e) {
      CHECK(e.kind() == BusErrorKind::Timeout);
    }
    // The whole remaining budget is handed to the transport.
    CHECK(bus.bus_time() - before > master.timeout() - std::chrono::milliseconds(1));
  }

  SUBCASE("hardware error surfaces as DEVICE_FAULT with the bits") {
    bus.device(1).set_hardware_error(hw_error::kOverload);
    try {
      master.read_register(1, Register::PresentPosition);
      FAIL("expected device fault");
    } catch (const BusError& e) {
      CHECK(e.kind() == BusErrorKind::DeviceFault);
      CHECK(e.hardware_error() == hw_error::kOverload);
    }
  }

  SUBCASE("one retry on a corrupted response") {
    bus.corrupt_next_responses(1);
    CHECK(master.ping(1) == kModelNumber);
    CHECK(master.stats().retries == 1);
    bus.corrupt_next_responses(2);
    try {
      master.ping(1);
      FAIL("expected crc mismatch");
    } catch (const BusError& e) {
      CHECK(e.kind() == BusErrorKind::CrcMismatch);
    }
  }

  SUBCASE("sync write updates every device with one broadcast") {
    const std::pair<std::uint8_t, std::int64_t> entries[] = {{1, 100}, {2, -200}, {3, 300}};
    const auto frames = bus.frames_seen();
    master.sync_write(Register::GoalPosition, entries);
    CHECK(bus.frames_seen() == frames + 1);
    CHECK(bus.broadcasts_seen() == 1);
    CHECK(bus.device(1).reg(Register::GoalPosition) == 100);
    CHECK(bus.device(2).reg(Register::GoalPosition) == -200);
    CHECK(bus.device(3).reg(Register::GoalPosition) == 300);
    // The broadcast drew no STATUS.
    std::array<std::uint8_t, 16> buf{};
    CHECK(bus.read(buf, std::chrono::microseconds(0)) == 0);
  }

  SUBCASE("empty sync write is a valid no-op frame") {
    const auto f = make_sync_write(Register::GoalPosition, {});
    CHECK(decode_frame(encode_frame(f)).status == DecodeStatus::Ok);
    CHECK_NOTHROW(master.sync_write(Register::GoalPosition, {}));
  }

  SUBCASE("duplicate ids are rejected") {
    const std::pair<std::uint8_t, std::int64_t> entries[] = {{1, 1}, {1, 2}};
    try {
      master.sync_write(Register::GoalPosition, entries);
      FAIL("expected duplicate id");
    } catch (const BusError& e) {
      CHECK(e.kind() == BusErrorKind::DuplicateId);
    }
  }

  SUBCASE("broadcast cannot be transacted") {
    CHECK_THROWS_AS(master.transact({kBroadcastId, Instruction::Ping, {}}), BusError);
  }

  SUBCASE("at most one transaction in flight") {
    for (int i = 0; i < 50; ++i) master.ping(static_cast<std::uint8_t>(1 + i % 3));
    CHECK(master.max_in_flight() == 1);
    CHECK(master.in_flight() == 0);
  }
}

namespace {

/// Transport that re-enters the master from inside a read, as a second user would.
class ReentrantTransport : public Transport {
 public:
  BusMaster* master = nullptr;
  bool threw = false;
  void write(std::span<const std::uint8_t>) override {}
  std::size_t read(std::span<std::uint8_t>, std::chrono::microseconds) override {
    try {
      master->ping(1);
    } catch (const std::logic_error&) {
      threw = true;
    } catch (const BusError&) {
    }
    return 0;
  }
};

}  // namespace

TEST_CASE("concurrent use of the master is refused") {
  ReentrantTransport t;
  BusMaster m(t, std::chrono::microseconds(10));
  t.master = &m;
  CHECK_THROWS_AS(m.ping(1), BusError);
  CHECK(t.threw);
}

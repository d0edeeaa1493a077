import math

import pytest

import urjkit


def test_bus_frame_round_trip():
    wire = urjkit.encode_frame(1, 0x01)
    assert wire[:2] == b"\xa5\x5a"
    assert urjkit.crc16(b"123456789") == 0xFEE8
    r = urjkit.decode_frame(wire)
    assert r["status"] == "OK"
    assert r["device_id"] == 1
    assert r["consumed"] == len(wire)
    bad = wire[:-1] + bytes([wire[-1] ^ 1])
    assert urjkit.decode_frame(bad)["status"] == "CRC_MISMATCH"
    assert urjkit.decode_frame(wire[:4])["status"] == "NEED_MORE"


def test_kinematics():
    p = urjkit.fk(0.3, 0.2, -0.9)
    for branch in ("KNEE_UP", "KNEE_DOWN"):
        q = urjkit.ik(*p, branch=branch)
        assert math.dist(urjkit.fk(*q), p) < 1e-9
    with pytest.raises(urjkit.KinematicsError):
        urjkit.ik(1.0, 0.0, 0.0)
    assert urjkit.semi_ellipse(0.0)[2] == pytest.approx(-0.10)


def test_hydrostatics():
    assert urjkit.depth_from_pressure(5.0e5) == pytest.approx(39.66, abs=0.01)
    assert urjkit.depth_from_pressure(urjkit.pressure_at_depth(123.0)) == pytest.approx(123.0, abs=1e-9)
    kgf, n = urjkit.effective_underwater_weight(8.0)
    assert kgf == pytest.approx(7.28, abs=0.005)
    assert n == pytest.approx(71.4, abs=0.1)
    v = urjkit.displaced_volume_for(0.449, 0.250)
    assert urjkit.submerged_weight(0.449, v)[0] == pytest.approx(0.250, abs=1e-9)
    assert urjkit.buckling_margin(200.0)["margin"] > 1.0


def test_detector():
    d = urjkit.Detector("control")
    states = [d.ingest(2.0 * i, 63.0) for i in range(40)]
    assert states[0] == "LEARNING"
    assert states[-1] == "OK"
    for i in range(40, 45):
        state = d.ingest(2.0 * i, 70.0)
    assert state == "ALARM"
    with pytest.raises(ValueError):
        urjkit.Detector(window=5.0)


def test_check_trace():
    lines = ["# urjkit leak trace v1", "# onset a 80"]
    lines += [f"{2 * i} a 21 {63 if i < 40 else 75}" for i in range(60)]
    report = urjkit.check_trace("\n".join(lines) + "\n")
    assert report["overall"] == "ALARM"
    assert report["zones"][0]["latency"] == pytest.approx(4.0)
    with pytest.raises(urjkit.LeakError):
        urjkit.check_trace("0 a 21\n")


def test_session_run_and_replay(tmp_path):
    scenario = {
        "schema_version": 1,
        "name": "smoke",
        "duration": 30,
        "schedule": [{"t": 0, "command": {"type": "command", "id": "t", "kind": "TORQUE",
                                         "args": {"joint": "all", "enabled": True}}}],
    }
    log = tmp_path / "run.jsonl"
    summary = urjkit.run_scenario(scenario, log_path=str(log))
    assert summary["reason"] == "COMPLETED"
    assert summary["ticks"] == 1500
    envs = urjkit.replay_log(str(log))
    assert envs[-1]["body"]["kind"] == "TORQUE_OFF"
    again = tmp_path / "again.jsonl"
    urjkit.run_scenario(scenario, urjkit.default_config(), str(again))
    assert log.read_bytes() == again.read_bytes()


def test_hyperbaric_scenario_shape():
    sc = urjkit.hyperbaric_scenario()
    steps = [a["pressure_pa"] / 1e5 for a in sc["schedule"] if "pressure_pa" in a]
    assert steps == pytest.approx([1.5, 2.0, 3.0, 4.0, 5.0])
    assert sc["duration"] == 3000

import zlib

import pytest

import rrvm


def test_constants_and_hashes():
    assert rrvm.MEM_WORDS == 65536
    assert rrvm.NUM_REGS == 8
    data = b"record replay"
    assert rrvm.crc32(data) == zlib.crc32(data)
    assert rrvm.fnv1a64(b"") == 0xCBF29CE484222325


def test_assemble_and_errors():
    prog = rrvm.assemble("MOVI r0, 7\nHALT\n")
    assert len(prog) == 2
    assert prog.hash != 0
    with pytest.raises(rrvm.AsmError):
        rrvm.assemble("FROB r0\n")


def test_frame_roundtrip():
    f = rrvm.LogFrame()
    f.lsn = 42
    f.kind = rrvm.FrameKind.NET_RX
    f.epoch = rrvm.Epoch(10, 20, 0)
    f.payload = b"\x01\x02\x03"
    enc = rrvm.encode_frame(f)
    assert len(enc) == rrvm.FRAME_OVERHEAD + 3
    dec, consumed, error, truncated = rrvm.decode_frame(enc)
    assert error == "" and not truncated
    assert consumed == len(enc)
    assert dec == f
    # corrupt one byte: crc must catch it
    bad = bytearray(enc)
    bad[10] ^= 0xFF
    dec, _, error, _ = rrvm.decode_frame(bytes(bad))
    assert dec is None and "bad crc" in error


def test_record_then_replay_verifies(tmp_path):
    w = rrvm.get_workload("emptyloop")
    prog = rrvm.assemble(w.program_text)
    opt = rrvm.workload_record_options(w, rrvm.DiskMode.FULL_REPLAY)
    opt.steps = 50_000
    rec = rrvm.record_run(prog, opt)
    assert not rec.stuck
    assert rec.log.has_end()
    assert rec.log.validate() == ""

    path = str(tmp_path / "run.rrlog")
    rec.log.save(path)
    log = rrvm.Log.load(path)

    out = rrvm.replay_run(log, prog, rec.snapshot)
    assert out.ok and out.verified, out.error
    assert out.final_state.digest() == rec.final_state.digest()


def test_replay_detects_program_mismatch():
    w = rrvm.get_workload("emptyloop")
    prog = rrvm.assemble(w.program_text)
    opt = rrvm.workload_record_options(w, rrvm.DiskMode.FULL_REPLAY)
    opt.steps = 10_000
    rec = rrvm.record_run(prog, opt)
    other = rrvm.assemble("HALT\n")
    out = rrvm.replay_run(rec.log, other, rec.snapshot)
    assert not out.ok
    assert "program hash mismatch" in out.error


def test_placement():
    topo = rrvm.Topology.parse(
        "router core\n"
        "router r1 parent core\n"
        "router r2 parent core\n"
        "host h1 parent r1 capacity 1 util 0\n"
        "host h2 parent r1 capacity 1 util 0\n"
        "host h3 parent r2 capacity 1 util 0\n"
        "storage nas parent core\n"
    )
    p = rrvm.place_all(topo, [rrvm.VmDemand("web", 0.2)], 2, rrvm.PlaceWeights())
    assert rrvm.validate_placement(topo, p, rrvm.PlaceWeights()) == ""
    vm = p.vms[0]
    hosts = [vm.primary] + list(vm.secondaries)
    assert len(set(hosts)) == 2
    with pytest.raises(rrvm.InfeasibleError):
        rrvm.place_all(topo, [rrvm.VmDemand("big", 0.9)], 2, rrvm.PlaceWeights())


def test_scenario_parse():
    sc = rrvm.parse_scenario("workload emptyloop\nreplicas 3\nkill primary @ t=1.5s\n")
    assert sc.workload == "emptyloop"
    assert sc.replicas == 3
    assert sc.kill_primary_at_ms == pytest.approx(1500)
    with pytest.raises(rrvm.ScenarioError):
        rrvm.parse_scenario("replicas 99\n")

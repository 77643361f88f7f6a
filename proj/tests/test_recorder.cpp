#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rrvm/recorder.hpp"
#include "rrvm/workloads.hpp"

using namespace rrvm;

TEST_CASE("recording a compute loop yields a sparse, valid log") {
  const Workload& w = get_workload("emptyloop");
  Program prog = assemble(w.program_text);
  RecordRunOptions opt = workload_record_options(w, DiskMode::FullReplay);
  opt.steps = 200000;
  opt.duration_ms.reset();
  RecordResult r = record_run(prog, opt);
  CHECK_FALSE(r.stuck);
  CHECK(r.stats.steps >= 200000);
  CHECK(r.log.validate().empty());
  REQUIRE(r.log.has_end());
  // nothing but the snapshot ref, timer interrupts and the END frame
  for (const auto& f : r.log.frames) {
    bool ok = f.kind == FrameKind::SnapshotRef || f.kind == FrameKind::Interrupt ||
              f.kind == FrameKind::End;
    CHECK(ok);
  }
  // growth far below 5 bytes per thousand instructions
  GrowthRate g = log_growth_rate(r.log, 1.0, r.stats.steps);
  CHECK(g.bytes_per_kinstr < 5.0);
}

TEST_CASE("END frame carries the final state digest") {
  const Workload& w = get_workload("emptyloop");
  Program prog = assemble(w.program_text);
  RecordRunOptions opt = workload_record_options(w, DiskMode::FullReplay);
  opt.steps = 5000;
  opt.duration_ms.reset();
  RecordResult r = record_run(prog, opt);
  const LogFrame& end = r.log.frames.back();
  REQUIRE(end.kind == FrameKind::End);
  REQUIRE(end.payload.size() == 8);
  uint64_t d = 0;
  for (int i = 0; i < 8; ++i) d |= static_cast<uint64_t>(end.payload[i]) << (8 * i);
  CHECK(d == r.final_state.digest());
  CHECK(end.epoch == epoch_of(r.final_state));
}

TEST_CASE("interrupt frames carry pre-delivery epochs in nondecreasing order") {
  const Workload& w = get_workload("emptyloop");
  Program prog = assemble(w.program_text);
  RecordRunOptions opt = workload_record_options(w, DiskMode::FullReplay);
  opt.steps.reset();
  opt.duration_ms = 120;
  opt.timer_ms = 5;
  RecordResult r = record_run(prog, opt);
  int interrupts = 0;
  Epoch prev{};
  for (const auto& f : r.log.frames) {
    if (f.kind != FrameKind::Interrupt) continue;
    ++interrupts;
    CHECK(prev <= f.epoch);
    prev = f.epoch;
    REQUIRE(f.payload.size() == 1);
    CHECK(f.payload[0] == kTimerVector);
  }
  CHECK(interrupts >= 10);  // ~24 periods in 120 ms
  CHECK(r.stats.delivered_interrupts == static_cast<uint64_t>(interrupts));
}

TEST_CASE("sleeploop spends its time waiting, not stepping") {
  const Workload& w = get_workload("sleeploop");
  Program prog = assemble(w.program_text);
  RecordRunOptions opt = workload_record_options(w, DiskMode::FullReplay);
  opt.duration_ms = 150;
  RecordResult r = record_run(prog, opt);
  CHECK_FALSE(r.stuck);
  // two instructions per wakeup plus handler; far below a compute run
  CHECK(r.stats.steps < 5000);
  int interrupts = 0;
  for (const auto& f : r.log.frames)
    if (f.kind == FrameKind::Interrupt) ++interrupts;
  CHECK(interrupts >= 8);
}

TEST_CASE("waiting guest with no interrupt source is reported stuck") {
  Program prog = assemble("WAIT\nJMP 0\n");
  RecordRunOptions opt;
  opt.timer_ms = 0;
  opt.duration_ms = 1000;
  RecordResult r = record_run(prog, opt);
  CHECK(r.stuck);
}

TEST_CASE("diskcopy copies 1 MiB and the log sizes contrast by >= 100x") {
  const Workload& w = get_workload("diskcopy");
  Program prog = assemble(w.program_text);

  RecordRunOptions full_opt = workload_record_options(w, DiskMode::FullReplay);
  RecordResult full = record_run(prog, full_opt);
  CHECK(full.final_state.halted);
  // the copy happened: first 256 blocks equal the last 256
  for (int b = 0; b < 256; b += 37) {
    CHECK(std::memcmp(full.final_image.block(static_cast<std::size_t>(b)),
                      full.final_image.block(static_cast<std::size_t>(b) + 256),
                      kBlockBytes) == 0);
  }
  // source pattern nonzero
  CHECK(full.final_image.block(0)[1] != 0);

  RecordRunOptions out_opt = workload_record_options(w, DiskMode::OutputReplay);
  RecordResult output = record_run(prog, out_opt);
  CHECK(output.final_image == full.final_image);

  uint64_t full_bytes = full.log.frame_bytes();
  uint64_t out_bytes = output.log.frame_bytes();
  CHECK(full_bytes > 0);
  CHECK(out_bytes >= 1024 * 1024);     // the whole read payload is logged
  CHECK(out_bytes >= 100 * full_bytes);
  // FullReplay logged no disk payload at all
  for (const auto& f : full.log.frames) CHECK(f.kind != FrameKind::DiskRead);
}

TEST_CASE("disk read payloads split at the 64 KiB cap on the same epoch") {
  const Workload& w = get_workload("diskcopy");
  Program prog = assemble(w.program_text);
  RecordRunOptions opt = workload_record_options(w, DiskMode::OutputReplay);
  RecordResult r = record_run(prog, opt);
  // each 32-block (128 KiB) read must split into exactly two 64 KiB frames
  std::vector<const LogFrame*> reads;
  for (const auto& f : r.log.frames)
    if (f.kind == FrameKind::DiskRead) reads.push_back(&f);
  REQUIRE(reads.size() == 16);  // 8 reads x 2 frames
  for (std::size_t i = 0; i < reads.size(); i += 2) {
    CHECK(reads[i]->payload.size() == kMaxPayload);
    CHECK(reads[i + 1]->payload.size() == kMaxPayload);
    CHECK(reads[i]->epoch == reads[i + 1]->epoch);
  }
}

TEST_CASE("invalid disk command sets status and raises no interrupt") {
  Program prog = assemble(
      "MOVI r0, 100\n"  // block out of range for a 16-block image
      "OUT 0, r0\n"
      "MOVI r1, 0\n"
      "OUT 1, r1\n"
      "MOVI r2, 2\n"    // count 1, read
      "OUT 2, r2\n"
      "OUT 3, r2\n"
      "IN r3, 3\n"      // disk status
      "HALT\n");
  RecordRunOptions opt;
  opt.timer_ms = 0;
  opt.steps = 100;
  RecordResult r = record_run(prog, opt);
  CHECK(r.final_state.regs[3] == 1);
  for (const auto& f : r.log.frames) CHECK(f.kind != FrameKind::Interrupt);
}

TEST_CASE("rx frames are logged and delivered through the nic vector") {
  Program prog = assemble(get_workload("netrx").program_text);
  RecordRunOptions opt;
  opt.timer_ms = 10;
  opt.duration_ms = 200;
  opt.rx_schedule.push_back({20000, {5, 6, 7}});
  opt.rx_schedule.push_back({60000, {8}});
  RecordResult r = record_run(prog, opt);
  int rx = 0;
  for (const auto& f : r.log.frames)
    if (f.kind == FrameKind::NetRx) ++rx;
  CHECK(rx == 2);
  CHECK(r.stats.rx_frames == 2);
  // the guest summed the bytes: 5+6+7+8 = 26
  CHECK(r.final_state.regs[6] == 26);
}

TEST_CASE("tx frames surface with their emission epoch and next lsn") {
  Program prog = assemble(get_workload("nettx").program_text);
  RecordRunOptions opt = workload_record_options(get_workload("nettx"), DiskMode::FullReplay);
  opt.steps = 2000;
  opt.duration_ms.reset();

  Machine m;
  m.prog = prog;
  m.disk.image = opt.disk_image;
  RecordOptions ro{opt.disk_mode, opt.timer_ms, true};
  RecordSession s(std::move(m), ro, 1);
  std::vector<TxFrame> txs;
  s.tx_sink = [&](const TxFrame& t) { txs.push_back(t); };
  RecordSession::SliceLimits lim;
  lim.max_steps = 2000;
  s.run_slice(lim);
  REQUIRE(txs.size() >= 2);
  for (std::size_t i = 1; i < txs.size(); ++i) CHECK(txs[i - 1].epoch < txs[i].epoch);
  for (const auto& t : txs) {
    CHECK(t.payload.size() == 2);  // big-endian sequence number
    CHECK(t.emission_lsn >= 1);
    CHECK_FALSE(t.replay_origin);
  }
  // sequence numbers count up from 1
  CHECK(txs[0].payload[1] == 1);
  CHECK(txs[1].payload[1] == 2);
}

TEST_CASE("baseline run executes identically but logs nothing") {
  const Workload& w = get_workload("diskcopy");
  Program prog = assemble(w.program_text);
  RecordRunOptions opt = workload_record_options(w, DiskMode::FullReplay);
  BaselineResult b = baseline_run(prog, opt);
  RecordResult r = record_run(prog, opt);
  CHECK(b.final_state.halted);
  CHECK(b.final_state.regs == r.final_state.regs);
  CHECK(b.final_state.nbranches == r.final_state.nbranches);
}

TEST_CASE("lsn sequence is contiguous from 1") {
  const Workload& w = get_workload("emptyloop");
  Program prog = assemble(w.program_text);
  RecordRunOptions opt = workload_record_options(w, DiskMode::FullReplay);
  opt.steps = 20000;
  opt.duration_ms.reset();
  RecordResult r = record_run(prog, opt);
  uint64_t expect = 1;
  for (const auto& f : r.log.frames) CHECK(f.lsn == expect++);
}

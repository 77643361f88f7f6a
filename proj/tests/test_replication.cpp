#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <thread>

#include "rrvm/replication.hpp"
#include "rrvm/workloads.hpp"

using namespace rrvm;

TEST_CASE("byte channel delivers across threads and unblocks on close") {
  ByteChannel ch;
  std::thread w([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    std::vector<uint8_t> v{1, 2, 3, 4};
    ch.write(v);
  });
  uint8_t buf[4];
  REQUIRE(ch.read_exactly(buf, 4));
  CHECK(buf[3] == 4);
  w.join();

  std::thread closer([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    ch.close();
  });
  CHECK_FALSE(ch.read_exactly(buf, 1));
  closer.join();
  CHECK(ch.closed());
}

TEST_CASE("ack codec round-trips and rejects corruption") {
  Ack a{12345, 999999};
  auto bytes = encode_ack(a);
  REQUIRE(bytes.size() == kAckBytes);
  Ack out;
  REQUIRE(decode_ack(bytes.data(), out));
  CHECK(out.lsn == 12345);
  CHECK(out.nbranches == 999999);
  for (std::size_t i = 0; i < kAckBytes; ++i) {
    auto bad = bytes;
    bad[i] ^= 0x40;
    Ack dummy;
    CHECK_FALSE(decode_ack(bad.data(), dummy));
  }
}

TEST_CASE("stream source parses header, frames and watermarks off a channel") {
  auto ch = std::make_shared<ByteChannel>();
  StreamSource src(ch);

  LogHeader h;
  h.disk_mode = DiskMode::OutputReplay;
  h.program_hash = 0xabcd;
  h.init_digest = 0x1234;
  send_header_msg(*ch, h);

  LogFrame f1{1, FrameKind::Interrupt, {10, 5, 0}, {2}};
  LogFrame f2{2, FrameKind::NetRx, {20, 7, 0}, {9, 9}};
  send_frame_msg(*ch, f1);
  send_frame_msg(*ch, f2);
  send_watermark_msg(*ch, 500, 2);

  REQUIRE(src.wait_for_frame(std::chrono::milliseconds(2000)));
  for (int spin = 0; spin < 200 && src.watermark() < 500; ++spin)
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  REQUIRE(src.header().has_value());
  CHECK(src.header()->program_hash == 0xabcd);
  const LogFrame* p = src.peek();
  REQUIRE(p);
  CHECK(*p == f1);
  src.pop();
  REQUIRE(src.peek());
  CHECK(*src.peek() == f2);
  CHECK(src.watermark() == 500);
  CHECK(src.last_lsn() == 2);
  // history survives pops
  auto hist = src.history_upto(2);
  REQUIRE(hist.size() == 2);
  CHECK(hist[0] == f1);
  src.pop();
  CHECK(src.peek() == nullptr);
  CHECK_FALSE(src.closed());
  ch->close();
  for (int spin = 0; spin < 200 && !src.closed(); ++spin)
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  CHECK(src.closed());
}

namespace {

ReplicaSetConfig quick_cfg(int n) {
  ReplicaSetConfig cfg;
  cfg.n = n;
  cfg.heartbeat_ms = 30;
  cfg.miss_threshold = 4;
  cfg.ack_interval_ms = 5;
  cfg.quantum_branches = 2000;
  cfg.timer_ms = 5;
  return cfg;
}

RecordRunOptions stream_opts() {
  const Workload& w = get_workload("streamcopy");
  RecordRunOptions base = workload_record_options(w, DiskMode::OutputReplay);
  base.steps.reset();
  base.duration_ms.reset();  // the cluster run is bounded by stop()
  return base;
}

}  // namespace

TEST_CASE("three replicas converge on the same END digest") {
  Program prog = assemble(get_workload("emptyloop").program_text);
  RecordRunOptions base;
  base.timer_ms = 5;
  ReplicaSetConfig cfg = quick_cfg(3);
  cfg.branch_rate = 300000;
  Cluster c(prog, base, cfg);
  c.start();
  std::this_thread::sleep_for(std::chrono::milliseconds(400));
  c.stop();
  ClusterReport r = c.report();
  REQUIRE_MESSAGE(r.errors.empty(), (r.errors.empty() ? std::string() : r.errors[0]));
  CHECK(r.end_verified == 2);
  CHECK(r.secondaries_done == 2);
  CHECK(r.promotions == 0);
  CHECK_FALSE(r.vm_lost);
}

TEST_CASE("drift stays bounded and the throttle reports samples") {
  Program prog = assemble(get_workload("emptyloop").program_text);
  RecordRunOptions base;
  base.timer_ms = 5;
  ReplicaSetConfig cfg = quick_cfg(2);
  cfg.branch_rate = 500000;
  cfg.drift_max = 40000;
  std::vector<SecondaryTuning> tun(2);
  tun[1].speed_factor = 0.5;  // half-speed secondary forces throttling
  Cluster c(prog, base, cfg, tun);
  c.start();
  std::this_thread::sleep_for(std::chrono::milliseconds(600));
  c.stop();
  ClusterReport r = c.report();
  REQUIRE_MESSAGE(r.errors.empty(), (r.errors.empty() ? std::string() : r.errors[0]));
  CHECK(r.end_verified == 1);
  CHECK_FALSE(r.drift_samples.empty());
  CHECK(r.max_drift <= cfg.drift_max + cfg.quantum_branches);
}

TEST_CASE("unthrottled slow secondary drifts past the bound") {
  Program prog = assemble(get_workload("emptyloop").program_text);
  RecordRunOptions base;
  base.timer_ms = 5;
  ReplicaSetConfig cfg = quick_cfg(2);
  cfg.branch_rate = 500000;
  cfg.drift_max = 40000;
  cfg.throttle = false;
  std::vector<SecondaryTuning> tun(2);
  tun[1].speed_factor = 0.3;
  Cluster c(prog, base, cfg, tun);
  c.start();
  std::this_thread::sleep_for(std::chrono::milliseconds(600));
  c.stop();
  ClusterReport r = c.report();
  CHECK(r.max_drift > cfg.drift_max + cfg.quantum_branches);
}

TEST_CASE("killing the primary elects exactly one successor") {
  Program prog = assemble(get_workload("emptyloop").program_text);
  RecordRunOptions base;
  base.timer_ms = 5;
  ReplicaSetConfig cfg = quick_cfg(3);
  cfg.branch_rate = 300000;
  Cluster c(prog, base, cfg);
  c.start();
  std::this_thread::sleep_for(std::chrono::milliseconds(250));
  c.kill_primary();
  std::this_thread::sleep_for(std::chrono::milliseconds(900));
  c.stop();
  ClusterReport r = c.report();
  REQUIRE_MESSAGE(r.errors.empty(), (r.errors.empty() ? std::string() : r.errors[0]));
  CHECK(r.promotions == 1);
  CHECK(r.final_primary != 0);
  CHECK_FALSE(r.vm_lost);
  CHECK(r.detection_ms >= 0);
  CHECK(r.detection_ms < 1000);
  CHECK(r.promotion_ms >= 0);
  // the survivor kept replaying under the new primary and verified its END
  CHECK(r.end_verified >= 1);
}

TEST_CASE("delayed sends hold guest output until the replica set acks") {
  Program prog = assemble(get_workload("streamcopy").program_text);
  RecordRunOptions base = stream_opts();
  ReplicaSetConfig cfg = quick_cfg(2);
  cfg.branch_rate = 400000;
  cfg.delayed_sends = true;

  VirtualSwitch sw(0.5);
  StreamClient client(sw, "client", 40);
  Cluster c(prog, base, cfg, {}, &sw, "vm", "client");
  c.start();
  StreamResult sr = client.wait(8000);
  c.stop();
  sw.stop();
  ClusterReport r = c.report();
  REQUIRE_MESSAGE(r.errors.empty(), (r.errors.empty() ? std::string() : r.errors[0]));
  CHECK(sr.completed);
  CHECK_FALSE(sr.regression_detected);
  CHECK(r.released_sends >= 40);
}

TEST_CASE("a lagging secondary that takes over without delayed sends rolls the stream back") {
  Program prog = assemble(get_workload("streamcopy").program_text);
  RecordRunOptions base = stream_opts();
  ReplicaSetConfig cfg = quick_cfg(2);
  cfg.branch_rate = 200000;
  cfg.delayed_sends = false;
  std::vector<SecondaryTuning> tun(2);
  tun[1].lag_branches = 30000;  // secondary sees the stream well behind the primary

  VirtualSwitch sw(0.5);
  StreamClient client(sw, "client", 100000);  // never completes; we watch for regression
  Cluster c(prog, base, cfg, tun, &sw, "vm", "client");
  c.start();
  std::this_thread::sleep_for(std::chrono::milliseconds(600));
  c.kill_primary();
  std::this_thread::sleep_for(std::chrono::milliseconds(1500));
  c.stop();
  sw.stop();
  StreamResult sr = client.peek();
  ClusterReport r = c.report();
  CHECK(r.promotions == 1);
  CHECK(sr.regression_detected);  // replayed emissions repeat earlier sequence numbers
}

TEST_CASE("delayed sends survive a failover without regression") {
  Program prog = assemble(get_workload("streamcopy").program_text);
  RecordRunOptions base = stream_opts();
  ReplicaSetConfig cfg = quick_cfg(2);
  cfg.branch_rate = 200000;
  cfg.delayed_sends = true;
  std::vector<SecondaryTuning> tun(2);
  tun[1].lag_branches = 30000;

  VirtualSwitch sw(0.5);
  StreamClient client(sw, "client", 100000);
  Cluster c(prog, base, cfg, tun, &sw, "vm", "client");
  c.start();
  std::this_thread::sleep_for(std::chrono::milliseconds(600));
  c.kill_primary();
  std::this_thread::sleep_for(std::chrono::milliseconds(1500));
  c.stop();
  sw.stop();
  StreamResult sr = client.peek();
  ClusterReport r = c.report();
  CHECK(r.promotions == 1);
  CHECK_FALSE(sr.regression_detected);
  CHECK(sr.frames > 0);
}

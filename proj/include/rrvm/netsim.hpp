#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <queue>
#include <string>
#include <thread>
#include <vector>

namespace rrvm {

struct DeliveryRecord {
  double t_ms;
  std::string src;
  std::string dst;
  std::vector<uint8_t> payload;
};

// One simulated switch: an address table with at most one binding per VM
// address, per-endpoint link latency, and an append-only delivery log.
class VirtualSwitch {
 public:
  using Sink = std::function<void(const std::string& src_addr, std::vector<uint8_t> payload)>;

  explicit VirtualSwitch(double default_latency_ms = 1.0);
  ~VirtualSwitch();

  void register_endpoint(const std::string& name, Sink sink);
  void unregister_endpoint(const std::string& name);
  void bind(const std::string& addr, const std::string& endpoint);
  // Takes effect after the rebind latency (default 50 ms).
  void rebind(const std::string& addr, const std::string& endpoint, double latency_ms = 50.0);
  void set_link_latency(const std::string& endpoint, double ms);

  void send(const std::string& src_addr, const std::string& dst_addr, std::vector<uint8_t> payload);

  std::vector<DeliveryRecord> delivery_log() const;
  uint64_t dropped() const;
  double now_ms() const;
  void stop();

 private:
  struct Event {
    double due_ms;
    uint64_t seq;
    bool is_rebind;
    std::string a;  // frame: src addr / rebind: vm addr
    std::string b;  // frame: dst addr / rebind: endpoint
    std::vector<uint8_t> payload;
    bool operator>(const Event& o) const {
      return due_ms != o.due_ms ? due_ms > o.due_ms : seq > o.seq;
    }
  };

  void run();

  double default_latency_ms_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events_;
  std::map<std::string, Sink> endpoints_;
  std::map<std::string, std::string> table_;  // vm address -> endpoint
  std::map<std::string, double> latency_;
  std::vector<DeliveryRecord> log_;
  uint64_t dropped_ = 0;
  uint64_t seq_ = 0;
  bool stop_ = false;
  std::chrono::steady_clock::time_point t0_;
  std::thread worker_;
};

struct PingResult {
  int sent = 0;
  int received = 0;
  std::vector<double> rtts_ms;
  double unresponsive_window_ms = 0;  // widest gap between consecutive replies
  double median_rtt_ms = 0;
};

// Sends 2-byte probe ids to the VM address and matches echoed replies.
PingResult run_ping_client(VirtualSwitch& sw, const std::string& client_addr,
                           const std::string& vm_addr, int count, uint32_t interval_ms,
                           uint32_t timeout_ms = 1000);

struct StreamResult {
  bool completed = false;
  bool stalled = false;
  bool regression_detected = false;
  uint64_t last_seq = 0;
  uint64_t frames = 0;
  uint64_t forward_gaps = 0;
  double wall_ms = 0;
};

// Passive receiver of 2-byte big-endian sequence numbers from the guest's
// stream sender. Sequence must be strictly increasing; a lower-than-expected
// number marks the stream rolled back and the client stalls.
class StreamClient {
 public:
  StreamClient(VirtualSwitch& sw, const std::string& client_addr, uint64_t target_seq);
  StreamResult wait(double timeout_ms);
  StreamResult peek() const;

 private:
  void on_frame(std::vector<uint8_t> payload);

  mutable std::mutex mu_;
  std::condition_variable cv_;
  StreamResult res_;
  uint64_t target_;
  std::chrono::steady_clock::time_point t0_;
  double last_progress_ms_ = 0;
};

struct ScenarioError : std::runtime_error {
  int line;
  ScenarioError(int line_, const std::string& what)
      : std::runtime_error("scenario line " + std::to_string(line_) + ": " + what), line(line_) {}
};

struct Scenario {
  std::string workload = "streamcopy";
  int replicas = 2;
  uint32_t heartbeat_ms = 100;
  int miss_threshold = 5;
  bool delayed_sends = false;
  uint64_t drift_max = 1000000;
  uint64_t lag_branches = 0;
  double slow_factor = 1.0;  // secondary replay speed relative to primary
  double branch_rate = 200000;
  double latency_ms = 1;
  uint32_t ack_interval_ms = 5;
  uint32_t timer_ms = 10;
  double kill_primary_at_ms = -1;
  enum class Client { None, Ping, Stream } client = Client::None;
  int ping_count = 40;
  uint32_t ping_interval_ms = 50;
  uint64_t stream_target_seq = 1000;
  double duration_ms = 8000;
  uint64_t quantum_branches = 1000;
};

Scenario parse_scenario(const std::string& text);
Scenario load_scenario(const std::string& path);

}  // namespace rrvm

#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <thread>

#include "rrvm/netsim.hpp"
#include "rrvm/recorder.hpp"
#include "rrvm/replayer.hpp"

namespace rrvm {

// In-process stand-in for a reliable byte-stream transport.
class ByteChannel {
 public:
  void write(const uint8_t* p, std::size_t n);
  void write(const std::vector<uint8_t>& v) { write(v.data(), v.size()); }
  // Blocks until n bytes are available; false if closed first.
  bool read_exactly(uint8_t* p, std::size_t n,
                    std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));
  // Non-blocking drain of whatever is buffered.
  std::size_t read_available(uint8_t* p, std::size_t max);
  std::size_t buffered() const;
  void close();
  bool closed() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<uint8_t> buf_;
  bool closed_ = false;
};

// Stream protocol: header exchange, then frames as encoded by the recorder,
// plus watermark notices (the primary's own position) so a secondary knows
// how far it may free-run between frames.
enum class MsgType : uint8_t { Header = 0, Frame = 1, Watermark = 2 };

void send_header_msg(ByteChannel& ch, const LogHeader& h);
void send_frame_msg(ByteChannel& ch, const LogFrame& f);
void send_watermark_msg(ByteChannel& ch, uint64_t nbranches, uint64_t last_lsn);

// Acks: fixed 20-byte records (lsn u64, nbranches u64, crc u32).
inline constexpr std::size_t kAckBytes = 20;
struct Ack {
  uint64_t lsn = 0;
  uint64_t nbranches = 0;
};
std::vector<uint8_t> encode_ack(const Ack& a);
bool decode_ack(const uint8_t* p, Ack& out);  // false on crc mismatch

// Reader side of the stream: parses one channel into an lsn-ordered frame
// buffer. Keeps everything ever received so a promoted replica can re-stream
// history to the other survivors.
class StreamSource : public FrameSource {
 public:
  explicit StreamSource(std::shared_ptr<ByteChannel> ch);
  ~StreamSource() override;

  const LogFrame* peek() override;
  void pop() override;
  uint64_t watermark() override;
  bool closed() override;

  bool wait_for_frame(std::chrono::milliseconds timeout);
  std::optional<LogHeader> header() const;
  // All received frames with lsn <= bound, in order.
  std::vector<LogFrame> history_upto(uint64_t bound_lsn) const;
  uint64_t last_lsn() const;

 private:
  void reader_loop();

  std::shared_ptr<ByteChannel> ch_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<LogFrame> frames_;  // deque: peeked references stay valid
  std::size_t head_ = 0;
  uint64_t watermark_ = 0;
  uint64_t watermark_lsn_ = 0;
  std::optional<LogHeader> header_;
  bool eof_ = false;
  std::thread reader_;
};

struct DriftSample {
  double t_ms;
  uint64_t drift;
};

struct ReplicaSetConfig {
  int n = 2;
  uint64_t drift_max = 1'000'000;
  uint64_t drift_resume = 0;  // 0 -> drift_max / 2
  bool delayed_sends = false;
  bool throttle = true;
  uint32_t heartbeat_ms = 100;
  int miss_threshold = 5;
  uint32_t ack_interval_ms = 50;
  uint64_t quantum_branches = 1000;
  double branch_rate = 0;  // branches/sec pacing for the primary; 0 = unpaced
  uint32_t timer_ms = 10;
  uint64_t seed = 1;
};

struct SecondaryTuning {
  double speed_factor = 1.0;   // replay apply rate relative to branch_rate
  uint64_t lag_branches = 0;   // stream frames held until primary is this far past them
};

struct ClusterReport {
  std::vector<DriftSample> drift_samples;
  uint64_t max_drift = 0;
  int promotions = 0;
  double detection_ms = -1;  // failure declared, ms after kill
  double promotion_ms = -1;  // declared -> new primary recording and rebound
  bool vm_lost = false;
  int final_primary = 0;
  int end_verified = 0;     // secondaries that verified the END digest
  int secondaries_done = 0;
  uint64_t released_sends = 0;
  uint64_t discarded_sends = 0;  // held in the buffer when the primary died
  std::vector<std::string> errors;
};

// One primary recording live plus n-1 secondaries replaying its stream, all
// in-process. Optional virtual switch attachment carries guest rx/tx frames
// under the delayed-send policy.
class Cluster {
 public:
  Cluster(Program prog, RecordRunOptions base, ReplicaSetConfig cfg,
          std::vector<SecondaryTuning> tunings = {}, VirtualSwitch* sw = nullptr,
          std::string vm_addr = "vm", std::string client_addr = "client");
  ~Cluster();

  void start();
  void kill_primary();                  // thread-safe, once
  void stop(double drain_timeout_ms = 5000);  // graceful: END + drain + join
  bool stopped() const { return stopped_; }

  int primary_id() const { return primary_id_.load(); }
  double now_ms() const;
  ClusterReport report();  // call after stop()

 private:
  struct Replica;
  struct HeldFrame {
    std::vector<uint8_t> bytes;  // encoded stream message
    uint64_t nbranches;
  };

  void replica_main(int id);
  void run_primary(int id, std::unique_ptr<RecordSession> session);
  void run_secondary(int id);
  void stream_frame(const LogFrame& f);
  void flush_held(int to_id, uint64_t primary_nbr, bool all);
  void on_tx(const TxFrame& tx);
  void release_ready();
  void collect_acks();
  uint64_t min_acked_lsn() const;
  uint64_t min_acked_nbr() const;
  void sample_drift(uint64_t primary_nbr);
  void promote(int id);
  void deliver_client_frame(int id, std::vector<uint8_t> payload);

  Program prog_;
  RecordRunOptions base_;
  ReplicaSetConfig cfg_;
  std::vector<SecondaryTuning> tunings_;
  VirtualSwitch* sw_;
  std::string vm_addr_, client_addr_;

  std::vector<std::unique_ptr<Replica>> reps_;
  std::atomic<int> primary_id_{0};
  std::atomic<bool> stop_flag_{false};
  std::atomic<bool> primary_killed_{false};
  std::atomic<int64_t> last_beat_ms_{0};
  std::atomic<int64_t> kill_time_ms_{-1};
  std::chrono::steady_clock::time_point t0_;
  bool started_ = false;
  bool stopped_ = false;

  mutable std::mutex mu_;  // guards send buffer, samples, report fields
  std::deque<TxFrame> send_buffer_;
  ClusterReport rep_;
  std::atomic<bool> promotion_claimed_{false};
};

}  // namespace rrvm

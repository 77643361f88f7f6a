#pragma once

#include <chrono>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>

#include "rrvm/machine.hpp"

namespace rrvm {

struct RecordStats {
  uint64_t steps = 0;
  uint64_t branches = 0;
  uint64_t delivered_interrupts = 0;
  uint64_t rx_frames = 0;
  uint64_t tx_frames = 0;
  double wall_ms = 0;
};

// Outbound guest frame with the epoch of its emission.
struct TxFrame {
  std::vector<uint8_t> payload;
  Epoch epoch{};
  uint64_t emission_lsn = 0;  // lsn the next log frame will carry
  bool replay_origin = false;
};

struct RecordOptions {
  DiskMode disk_mode = DiskMode::FullReplay;
  uint32_t timer_ms = 10;
  bool recording = true;  // false: baseline run, no log
};

// Drives the guest live: timer and injected rx frames become interrupts,
// every non-deterministic value becomes a log frame tagged with its epoch.
class RecordSession {
 public:
  RecordSession(Machine m, RecordOptions opt, uint64_t first_lsn = 1);

  // Called on every appended frame, in lsn order, from the driving thread.
  std::function<void(const LogFrame&)> frame_sink;
  // Called when the guest emits a network frame.
  std::function<void(const TxFrame&)> tx_sink;

  void inject_rx(std::vector<uint8_t> frame);  // thread-safe

  enum class SliceStatus { Limit, Halted, Stuck, Deadline };

  struct SliceLimits {
    uint64_t max_steps = UINT64_MAX;
    uint64_t max_branches = UINT64_MAX;  // absolute nbranches bound
    std::optional<std::chrono::steady_clock::time_point> deadline;
  };

  SliceStatus run_slice(const SliceLimits& lim);

  // Appends the END frame (final epoch + state digest payload).
  const LogFrame& finish();

  uint64_t next_lsn() const { return next_lsn_; }
  const Machine& machine() const { return m_; }
  Machine& machine() { return m_; }
  const std::vector<LogFrame>& frames() const { return frames_; }
  const RecordStats& stats() const { return stats_; }
  const RecordOptions& options() const { return opt_; }
  bool finished() const { return finished_; }

 private:
  friend class RecordNdProvider;
  void append(FrameKind kind, Epoch epoch, std::vector<uint8_t> payload);
  void handle_out(uint16_t port, uint64_t value);
  void disk_go();
  bool poll_external();  // timer + injections -> pending interrupts
  void deliver_pending();
  uint64_t now_us() const;

  Machine m_;
  RecordOptions opt_;
  uint64_t next_lsn_;
  std::vector<LogFrame> frames_;
  RecordStats stats_;
  std::deque<uint8_t> pending_intr_;
  std::mutex rx_mu_;
  std::deque<std::vector<uint8_t>> rx_inbox_;
  std::chrono::steady_clock::time_point t0_;
  bool finished_ = false;
};

struct RecordResult {
  Log log;
  GuestState final_state;
  DiskImage final_image;
  std::optional<DiskSnapshot> snapshot;  // FullReplay only
  RecordStats stats;
  bool stuck = false;
};

struct RecordRunOptions {
  DiskMode disk_mode = DiskMode::FullReplay;
  uint32_t timer_ms = 10;
  std::optional<uint64_t> steps;
  std::optional<uint64_t> duration_ms;
  DiskImage disk_image;  // empty: 16-block scratch image
  GuestState initial_state{};
  // (offset_us, frame): injected once the wall clock passes the offset
  std::vector<std::pair<uint64_t, std::vector<uint8_t>>> rx_schedule;
};

Log make_log_prologue(const Program& prog, const GuestState& init, DiskMode mode,
                      const std::optional<DiskSnapshot>& snap);

RecordResult record_run(const Program& prog, const RecordRunOptions& opt);

struct BaselineResult {
  GuestState final_state;
  RecordStats stats;
};

BaselineResult baseline_run(const Program& prog, const RecordRunOptions& opt);

}  // namespace rrvm

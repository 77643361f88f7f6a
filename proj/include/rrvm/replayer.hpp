#pragma once

#include <functional>
#include <optional>
#include <random>
#include <string>

#include "rrvm/machine.hpp"
#include "rrvm/recorder.hpp"

namespace rrvm {

// Emulates the imprecise counter-overflow notification: armed at a branch
// count, fires up to 128 branches late, never early.
struct OverflowEmulator {
  static constexpr uint64_t kSlack = 128;
  std::mt19937_64 rng;
  bool armed = false;
  uint64_t notify_at = 0;

  explicit OverflowEmulator(uint64_t seed) : rng(seed) {}

  // target is the branch count of the pending injection; current the guest's.
  void arm(uint64_t target, uint64_t current) {
    uint64_t base = target >= kSlack ? target - kSlack : 0;
    if (base < current) base = current;
    uint64_t overshoot = std::uniform_int_distribution<uint64_t>(0, kSlack)(rng);
    notify_at = base + overshoot;
    if (notify_at > target) notify_at = target;  // margin guarantees <= target
    armed = true;
  }
  bool fired(uint64_t current) const { return armed && current >= notify_at; }
  void disarm() { armed = false; }
};

// Pull interface between the log stream and the replay driver. Frames are
// observed strictly in lsn order; watermark() is a branch count below which
// no not-yet-seen frame can exist (UINT64_MAX for a complete log).
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual const LogFrame* peek() = 0;
  virtual void pop() = 0;
  virtual uint64_t watermark() = 0;
  virtual bool closed() = 0;  // no further frames will arrive
};

class VectorFrameSource : public FrameSource {
 public:
  explicit VectorFrameSource(const std::vector<LogFrame>& frames, std::size_t start = 0)
      : frames_(&frames), i_(start) {}
  const LogFrame* peek() override { return i_ < frames_->size() ? &(*frames_)[i_] : nullptr; }
  void pop() override { ++i_; }
  uint64_t watermark() override { return UINT64_MAX; }
  bool closed() override { return true; }

 private:
  const std::vector<LogFrame>* frames_;
  std::size_t i_;
};

struct ReplayStats {
  uint64_t steps = 0;
  uint64_t single_steps = 0;  // steps taken with full-epoch comparison
  uint64_t injections = 0;
  double wall_ms = 0;
};

struct ReplayConfig {
  DiskMode disk_mode = DiskMode::FullReplay;
  uint64_t seed = 1;
  uint64_t single_step_limit = 10'000'000;
};

// Re-executes a guest from a frame stream, reproducing ND values and
// injecting interrupts at their exact recorded epochs.
class ReplaySession {
 public:
  ReplaySession(Machine m, FrameSource& src, ReplayConfig cfg);

  enum class Status { Progress, NeedFrames, Done, Diverged };

  // Executes until done/diverged, the branch position bound, the step
  // budget, or frame starvation.
  Status advance(uint64_t max_branch_pos = UINT64_MAX, uint64_t max_steps = UINT64_MAX);

  // Continues a session whose source dried up (e.g. after a failover) from a
  // new stream; no-op if the session already diverged.
  void resume_with(FrameSource& src);

  std::function<void(const TxFrame&)> tx_sink;  // replay-origin frames

  const std::string& error() const { return error_; }
  bool verified() const { return verified_; }
  bool done() const { return done_; }
  uint64_t applied_lsn() const { return applied_lsn_; }
  const Machine& machine() const { return m_; }
  Machine& machine() { return m_; }
  const ReplayStats& stats() const { return stats_; }

 private:
  friend class ReplayNdProvider;
  struct Divergence {
    std::string msg;
  };
  [[noreturn]] void diverge(uint64_t lsn, const Epoch& expected, const Epoch& at);
  StepEvent guarded_step(bool single);
  void handle_out(uint16_t port, uint64_t value);
  void disk_go();
  void consume_push(const LogFrame& f);
  Status run_toward(const LogFrame& f, uint64_t max_branch_pos, uint64_t& budget);

  Machine m_;
  FrameSource* src_;
  ReplayConfig cfg_;
  OverflowEmulator ovf_;
  uint64_t applied_lsn_ = 0;
  std::string error_;
  bool verified_ = false;
  bool done_ = false;
  bool diverged_ = false;
  ReplayStats stats_;
};

struct ReplayOutcome {
  bool ok = false;        // ran to END without divergence
  bool verified = false;  // END digest matched
  std::string error;
  GuestState final_state;
  DiskImage replay_disk_image;  // OutputReplay: must stay untouched
  ReplayStats stats;
};

// Offline replay of a complete log. FullReplay logs need the matching
// snapshot; the initial state must match the header digest.
ReplayOutcome replay_run(const Log& log, const Program& prog,
                         const std::optional<DiskSnapshot>& snapshot,
                         const GuestState& initial_state = GuestState{}, uint64_t seed = 1);

}  // namespace rrvm

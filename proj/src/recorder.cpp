#include "rrvm/recorder.hpp"

#include <algorithm>
#include <cstring>
#include <thread>

namespace rrvm {

namespace {

std::vector<uint8_t> u64_payload(uint64_t v) {
  std::vector<uint8_t> p(8);
  for (int i = 0; i < 8; ++i) p[i] = static_cast<uint8_t>(v >> (8 * i));
  return p;
}

constexpr uint64_t kBoundaryInterval = 64;

}  // namespace

class RecordNdProvider : public NdProvider {
 public:
  explicit RecordNdProvider(RecordSession& s) : s_(s) {}
  uint64_t nd_value(uint16_t port, const GuestState&) override {
    Machine& m = s_.m_;
    switch (port) {
      case kTscPort:
        return static_cast<uint64_t>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(
                std::chrono::steady_clock::now().time_since_epoch())
                .count());
      case 3: return m.disk.status;
      case 4: return m.nic.in_data();
      case 5: return m.nic.in_status();
      default: return 0;
    }
  }

 private:
  RecordSession& s_;
};

RecordSession::RecordSession(Machine m, RecordOptions opt, uint64_t first_lsn)
    : m_(std::move(m)), opt_(opt), next_lsn_(first_lsn) {
  m_.timer.set_period(opt_.timer_ms);
  m_.disk.mode = opt_.disk_mode;
  t0_ = std::chrono::steady_clock::now();
}

uint64_t RecordSession::now_us() const {
  return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::microseconds>(
                                   std::chrono::steady_clock::now() - t0_)
                                   .count());
}

void RecordSession::append(FrameKind kind, Epoch epoch, std::vector<uint8_t> payload) {
  if (!opt_.recording) return;
  LogFrame f{next_lsn_++, kind, epoch, std::move(payload)};
  frames_.push_back(f);
  if (frame_sink) frame_sink(frames_.back());
}

void RecordSession::inject_rx(std::vector<uint8_t> frame) {
  std::lock_guard<std::mutex> lk(rx_mu_);
  rx_inbox_.push_back(std::move(frame));
}

bool RecordSession::poll_external() {
  bool any = false;
  // rx frames: logged at the epoch of enqueue, nic interrupt follows
  std::deque<std::vector<uint8_t>> inbox;
  {
    std::lock_guard<std::mutex> lk(rx_mu_);
    inbox.swap(rx_inbox_);
  }
  for (auto& frame : inbox) {
    if (m_.nic.rx_enqueue(frame)) {
      append(FrameKind::NetRx, epoch_of(m_.guest), std::move(frame));
      pending_intr_.push_back(m_.nic.vector);
      ++stats_.rx_frames;
      any = true;
    }
  }
  if (m_.timer.poll(now_us())) {
    pending_intr_.push_back(m_.timer.vector);
    any = true;
  }
  return any;
}

void RecordSession::deliver_pending() {
  while (!pending_intr_.empty() && m_.guest.intr_enabled && !m_.guest.halted) {
    uint8_t vec = pending_intr_.front();
    pending_intr_.pop_front();
    Epoch e = epoch_of(m_.guest);
    if (!deliver_interrupt(m_.guest, vec)) continue;
    append(FrameKind::Interrupt, e, {vec});
    ++stats_.delivered_interrupts;
  }
}

void RecordSession::disk_go() {
  DiskDevice& d = m_.disk;
  DiskCmd cmd = d.pending_cmd();
  if (!d.cmd_valid(cmd, d.image.nblocks())) {
    d.status = 1;
    return;
  }
  d.status = 0;
  std::size_t nbytes = cmd.count * kBlockBytes;
  if (cmd.write) {
    dma_from_mem(m_.guest, cmd.buf, d.image.block(cmd.block), nbytes);
  } else {
    dma_to_mem(m_.guest, cmd.buf, d.image.block(cmd.block), nbytes);
    if (d.mode == DiskMode::OutputReplay && opt_.recording) {
      // payloads over the cap split across frames at the same epoch
      const uint8_t* p = d.image.block(cmd.block);
      std::size_t off = 0;
      while (off < nbytes) {
        std::size_t n = std::min(nbytes - off, kMaxPayload);
        append(FrameKind::DiskRead, epoch_of(m_.guest), std::vector<uint8_t>(p + off, p + off + n));
        off += n;
      }
    }
  }
  pending_intr_.push_back(kDiskVector);
}

void RecordSession::handle_out(uint16_t port, uint64_t value) {
  switch (port) {
    case 0: m_.disk.reg_block = value; break;
    case 1: m_.disk.reg_buf = value; break;
    case 2: m_.disk.reg_count_dir = value; break;
    case 3: disk_go(); break;
    case 4: m_.nic.tx_byte(value); break;
    case 5: {
      TxFrame tx;
      tx.payload = m_.nic.tx_flush();
      tx.epoch = epoch_of(m_.guest);
      tx.emission_lsn = next_lsn_;
      ++stats_.tx_frames;
      if (tx_sink) tx_sink(tx);
      break;
    }
    case 6: m_.timer.set_period(static_cast<uint32_t>(value)); break;
    default: break;
  }
}

RecordSession::SliceStatus RecordSession::run_slice(const SliceLimits& lim) {
  RecordNdProvider nd(*this);
  uint64_t steps_done = 0;
  uint64_t since_boundary = kBoundaryInterval;  // poll on entry
  auto t_start = std::chrono::steady_clock::now();
  auto account = [&] {
    stats_.steps += steps_done;
    stats_.branches = m_.guest.nbranches;
    stats_.wall_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
  };
  for (;;) {
    if (m_.guest.halted) {
      account();
      return SliceStatus::Halted;
    }
    if (steps_done >= lim.max_steps || m_.guest.nbranches >= lim.max_branches) {
      account();
      return SliceStatus::Limit;
    }
    if (since_boundary >= kBoundaryInterval) {
      since_boundary = 0;
      poll_external();
      if (lim.deadline && std::chrono::steady_clock::now() >= *lim.deadline) {
        account();
        return SliceStatus::Deadline;
      }
    }
    deliver_pending();
    if (m_.guest.waiting) {
      if (!m_.guest.intr_enabled) {
        account();
        return SliceStatus::Stuck;
      }
      bool inbox_empty;
      {
        std::lock_guard<std::mutex> lk(rx_mu_);
        inbox_empty = rx_inbox_.empty();
      }
      if (m_.timer.period_ms == 0 && pending_intr_.empty() && inbox_empty) {
        account();
        return SliceStatus::Stuck;
      }
      if (pending_intr_.empty()) {
        uint64_t now = now_us();
        uint64_t due = m_.timer.next_due_us(now);
        uint64_t sleep_us = std::min<uint64_t>(due > now ? due - now : 0, 200);
        if (sleep_us > 0) std::this_thread::sleep_for(std::chrono::microseconds(sleep_us));
        since_boundary = kBoundaryInterval;
      }
      continue;
    }
    StepEvent ev = step(m_.guest, m_.prog, nd);
    ++steps_done;
    ++since_boundary;
    switch (ev.kind) {
      case StepEvent::Kind::NdRead: {
        Epoch e = epoch_of(m_.guest);
        // epoch of the consuming instruction: ip already advanced by one
        e.ip -= 1;
        append(FrameKind::NdValue, e, u64_payload(ev.value));
        break;
      }
      case StepEvent::Kind::DeviceOut:
        handle_out(ev.port, ev.value);
        break;
      default:
        break;
    }
  }
}

const LogFrame& RecordSession::finish() {
  append(FrameKind::End, epoch_of(m_.guest), u64_payload(m_.guest.digest()));
  finished_ = true;
  return frames_.back();
}

Log make_log_prologue(const Program& prog, const GuestState& init, DiskMode mode,
                      const std::optional<DiskSnapshot>& snap) {
  Log log;
  log.header.disk_mode = mode;
  log.header.program_hash = prog.hash;
  log.header.init_digest = init.digest();
  if (mode == DiskMode::FullReplay && snap) {
    std::vector<uint8_t> p(8);
    uint64_t d = snap->base_digest();
    for (int i = 0; i < 8; ++i) p[i] = static_cast<uint8_t>(d >> (8 * i));
    log.frames.push_back(LogFrame{1, FrameKind::SnapshotRef, epoch_of(init), std::move(p)});
  }
  return log;
}

namespace {

Machine make_machine(const Program& prog, const RecordRunOptions& opt) {
  Machine m;
  m.prog = prog;
  m.guest = opt.initial_state;
  m.disk.image = opt.disk_image.bytes.empty() ? DiskImage::zeroed(16) : opt.disk_image;
  m.disk.mode = opt.disk_mode;
  return m;
}

RecordSession::SliceLimits limits_for(const RecordRunOptions& opt) {
  RecordSession::SliceLimits lim;
  if (opt.steps) lim.max_steps = *opt.steps;
  if (opt.duration_ms)
    lim.deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(*opt.duration_ms);
  return lim;
}

// Runs the session to its stop condition, feeding scheduled rx injections.
RecordSession::SliceStatus drive(RecordSession& s, const RecordRunOptions& opt) {
  auto schedule = opt.rx_schedule;
  std::sort(schedule.begin(), schedule.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::size_t next = 0;
  auto t0 = std::chrono::steady_clock::now();
  auto lim = limits_for(opt);
  uint64_t steps_left = lim.max_steps;
  for (;;) {
    auto elapsed_us = [&] {
      return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::microseconds>(
                                       std::chrono::steady_clock::now() - t0)
                                       .count());
    };
    while (next < schedule.size() && schedule[next].first <= elapsed_us())
      s.inject_rx(schedule[next++].second);
    RecordSession::SliceLimits slice = lim;
    slice.max_steps = std::min<uint64_t>(steps_left, 1 << 14);
    if (next < schedule.size()) {
      auto due = t0 + std::chrono::microseconds(schedule[next].first);
      if (!slice.deadline || due < *slice.deadline) slice.deadline = due;
    }
    auto st = s.run_slice(slice);
    if (lim.max_steps != UINT64_MAX) {
      uint64_t used = lim.max_steps - steps_left;
      (void)used;
      steps_left = lim.max_steps > s.stats().steps ? lim.max_steps - s.stats().steps : 0;
      if (steps_left == 0 && st == RecordSession::SliceStatus::Limit) return st;
    }
    switch (st) {
      case RecordSession::SliceStatus::Halted:
      case RecordSession::SliceStatus::Stuck:
        return st;
      case RecordSession::SliceStatus::Deadline:
        if (lim.deadline && std::chrono::steady_clock::now() >= *lim.deadline) return st;
        break;  // was an injection wakeup
      case RecordSession::SliceStatus::Limit:
        if (steps_left == 0) return st;
        break;
    }
  }
}

}  // namespace

RecordResult record_run(const Program& prog, const RecordRunOptions& opt) {
  Machine m = make_machine(prog, opt);
  std::optional<DiskSnapshot> snap;
  if (opt.disk_mode == DiskMode::FullReplay) snap = DiskSnapshot::of(m.disk.image);
  Log log = make_log_prologue(prog, m.guest, opt.disk_mode, snap);
  RecordOptions ropt{opt.disk_mode, opt.timer_ms, true};
  RecordSession s(std::move(m), ropt, log.frames.size() + 1);
  auto st = drive(s, opt);
  s.finish();
  RecordResult res;
  res.stuck = st == RecordSession::SliceStatus::Stuck;
  for (const auto& f : s.frames()) log.frames.push_back(f);
  res.log = std::move(log);
  res.final_state = s.machine().guest;
  res.final_image = s.machine().disk.image;
  res.snapshot = std::move(snap);
  res.stats = s.stats();
  return res;
}

BaselineResult baseline_run(const Program& prog, const RecordRunOptions& opt) {
  Machine m = make_machine(prog, opt);
  RecordOptions ropt{opt.disk_mode, opt.timer_ms, false};
  RecordSession s(std::move(m), ropt);
  drive(s, opt);
  return BaselineResult{s.machine().guest, s.stats()};
}

}  // namespace rrvm

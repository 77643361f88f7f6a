#include "rrvm/replayer.hpp"

#include <chrono>
#include <cstring>

namespace rrvm {

namespace {

uint64_t payload_u64(const std::vector<uint8_t>& p) {
  uint64_t v = 0;
  for (std::size_t i = 0; i < 8 && i < p.size(); ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

class ReplayNdProvider : public NdProvider {
 public:
  explicit ReplayNdProvider(ReplaySession& s) : s_(s) {}
  uint64_t nd_value(uint16_t port, const GuestState& pre) override {
    const LogFrame* f = s_.src_->peek();
    Epoch at = epoch_of(pre);
    if (!f || f->kind != FrameKind::NdValue || f->epoch != at) {
      s_.diverge(f ? f->lsn : s_.applied_lsn_ + 1, f ? f->epoch : Epoch{}, at);
    }
    uint64_t v = payload_u64(f->payload);
    // keep device state in lockstep with the recording side
    switch (port) {
      case 4: s_.m_.nic.in_data(); break;
      case 5: s_.m_.nic.in_status(); break;
      default: break;
    }
    s_.applied_lsn_ = f->lsn;
    s_.src_->pop();
    return v;
  }

 private:
  ReplaySession& s_;
};

ReplaySession::ReplaySession(Machine m, FrameSource& src, ReplayConfig cfg)
    : m_(std::move(m)), src_(&src), cfg_(cfg), ovf_(cfg.seed) {
  m_.disk.mode = cfg.disk_mode;
}

void ReplaySession::diverge(uint64_t lsn, const Epoch& expected, const Epoch& at) {
  throw Divergence{"divergence at lsn " + std::to_string(lsn) + ", expected epoch " +
                   expected.str() + ", at epoch " + at.str()};
}

void ReplaySession::disk_go() {
  DiskDevice& d = m_.disk;
  DiskCmd cmd = d.pending_cmd();
  if (cfg_.disk_mode == DiskMode::FullReplay && d.snapshot) {
    if (!d.cmd_valid(cmd, d.snapshot->base.nblocks())) {
      d.status = 1;
      return;
    }
    d.status = 0;
    std::vector<uint8_t> buf(kBlockBytes);
    for (uint64_t b = 0; b < cmd.count; ++b) {
      if (cmd.write) {
        dma_from_mem(m_.guest, cmd.buf + b * kBlockWords, buf.data(), kBlockBytes);
        d.snapshot->write_block(static_cast<uint32_t>(cmd.block + b), buf.data());
      } else {
        d.snapshot->read_block(static_cast<uint32_t>(cmd.block + b), buf.data());
        dma_to_mem(m_.guest, cmd.buf + b * kBlockWords, buf.data(), kBlockBytes);
      }
    }
    return;
  }
  // OutputReplay: the scratch image says nothing about the recorded disk, so
  // command validity is read off the log. A valid read left DISK_READ frames
  // at exactly this epoch; anything else left none (status reads and the
  // completion interrupt replay from their own frames; writes are dropped).
  if (cmd.write) return;
  Epoch here = epoch_of(m_.guest);
  const LogFrame* f = src_->peek();
  if (!f || f->kind != FrameKind::DiskRead || f->epoch != here) return;
  std::size_t nbytes = cmd.count * kBlockBytes;
  std::size_t off = 0;
  while (off < nbytes) {
    f = src_->peek();
    if (!f || f->kind != FrameKind::DiskRead || f->epoch != here) break;
    if (f->payload.size() > nbytes - off)
      throw Divergence{"divergence at lsn " + std::to_string(f->lsn) +
                       ": disk payload exceeds command size"};
    dma_to_mem(m_.guest, cmd.buf + off / 8, f->payload.data(), f->payload.size());
    off += f->payload.size();
    applied_lsn_ = f->lsn;
    src_->pop();
  }
}

void ReplaySession::handle_out(uint16_t port, uint64_t value) {
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
      tx.replay_origin = true;
      if (tx_sink) tx_sink(tx);
      break;
    }
    case 6: m_.timer.set_period(static_cast<uint32_t>(value)); break;
    default: break;
  }
}

StepEvent ReplaySession::guarded_step(bool single) {
  ReplayNdProvider nd(*this);
  StepEvent ev = step(m_.guest, m_.prog, nd);
  ++stats_.steps;
  if (single) ++stats_.single_steps;
  if (ev.kind == StepEvent::Kind::DeviceOut) handle_out(ev.port, ev.value);
  return ev;
}

void ReplaySession::consume_push(const LogFrame& f) {
  switch (f.kind) {
    case FrameKind::Interrupt: {
      uint8_t vec = f.payload.empty() ? 0 : f.payload[0];
      if (!deliver_interrupt(m_.guest, vec))
        throw Divergence{"divergence at lsn " + std::to_string(f.lsn) +
                         ": interrupt not deliverable at " + epoch_of(m_.guest).str()};
      ++stats_.injections;
      break;
    }
    case FrameKind::NetRx:
      m_.nic.rx_enqueue(f.payload);
      break;
    case FrameKind::End: {
      uint64_t want = payload_u64(f.payload);
      uint64_t got = m_.guest.digest();
      // HALT leaves the epoch unchanged, so the recorded final state can sit
      // one epoch-preserving step past where the epoch match stopped us
      for (int extra = 0; want != got && !m_.guest.halted && extra < 4; ++extra) {
        Epoch before = epoch_of(m_.guest);
        uint64_t prev = got;
        guarded_step(true);
        got = m_.guest.digest();
        if (!(epoch_of(m_.guest) == before) || got == prev) break;
      }
      if (want != got) {
        diverged_ = true;
        error_ = "final state digest mismatch";
      } else {
        verified_ = true;
      }
      done_ = true;
      break;
    }
    default:
      break;
  }
  applied_lsn_ = f.lsn;
  src_->pop();
  ovf_.disarm();
}

ReplaySession::Status ReplaySession::run_toward(const LogFrame& f, uint64_t max_branch_pos,
                                                uint64_t& budget) {
  const Epoch target = f.epoch;
  uint64_t single_stepped = 0;
  for (;;) {
    Epoch here = epoch_of(m_.guest);
    if (here == target) {
      consume_push(f);
      return Status::Progress;
    }
    if (m_.guest.nbranches > target.nbranches || m_.guest.halted || m_.guest.waiting)
      diverge(f.lsn, target, here);
    if (budget == 0 || m_.guest.nbranches >= max_branch_pos) return Status::Progress;
    bool single = target.nbranches - m_.guest.nbranches <= OverflowEmulator::kSlack;
    if (!single) {
      if (!ovf_.armed) ovf_.arm(target.nbranches, m_.guest.nbranches);
      single = ovf_.fired(m_.guest.nbranches);
    }
    if (single && ++single_stepped > cfg_.single_step_limit)
      throw Divergence{"divergence at lsn " + std::to_string(f.lsn) +
                       ": single-step limit exceeded before " + target.str()};
    guarded_step(single);
    --budget;
  }
}

void ReplaySession::resume_with(FrameSource& src) {
  src_ = &src;
  if (diverged_) return;
  done_ = false;
  error_.clear();
}

ReplaySession::Status ReplaySession::advance(uint64_t max_branch_pos, uint64_t max_steps) {
  auto t0 = std::chrono::steady_clock::now();
  uint64_t budget = max_steps;
  Status out = Status::Progress;
  try {
    for (;;) {
      if (done_) {
        out = diverged_ ? Status::Diverged : Status::Done;
        break;
      }
      if (budget == 0 || m_.guest.nbranches >= max_branch_pos) {
        out = Status::Progress;
        break;
      }
      const LogFrame* f = src_->peek();
      if (!f) {
        if (src_->closed()) {
          error_ = "truncated log";
          done_ = true;
          out = Status::Done;
          break;
        }
        if (m_.guest.waiting || m_.guest.halted) {
          out = Status::NeedFrames;
          break;
        }
        uint64_t w = std::min(src_->watermark(), max_branch_pos);
        if (m_.guest.nbranches >= w) {
          out = Status::NeedFrames;
          break;
        }
        while (budget > 0 && !m_.guest.halted && !m_.guest.waiting && m_.guest.nbranches < w &&
               src_->peek() == nullptr) {
          guarded_step(false);
          --budget;
        }
        continue;
      }
      switch (f->kind) {
        case FrameKind::SnapshotRef:
          applied_lsn_ = f->lsn;
          src_->pop();
          break;
        case FrameKind::NdValue:
        case FrameKind::DiskRead: {
          // passive frames: execute until the guest pulls them
          const uint64_t lsn = f->lsn;
          const Epoch fe = f->epoch;
          if (m_.guest.nbranches > fe.nbranches || m_.guest.halted || m_.guest.waiting)
            diverge(lsn, fe, epoch_of(m_.guest));
          while (budget > 0 && applied_lsn_ < lsn) {
            if (m_.guest.nbranches > fe.nbranches || m_.guest.halted || m_.guest.waiting)
              diverge(lsn, fe, epoch_of(m_.guest));
            guarded_step(false);
            --budget;
          }
          break;
        }
        default:
          run_toward(*f, max_branch_pos, budget);
          break;
      }
    }
  } catch (const Divergence& d) {
    diverged_ = true;
    done_ = true;
    error_ = d.msg;
    out = Status::Diverged;
  }
  stats_.wall_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

ReplayOutcome replay_run(const Log& log, const Program& prog,
                         const std::optional<DiskSnapshot>& snapshot,
                         const GuestState& initial_state, uint64_t seed) {
  ReplayOutcome out;
  out.final_state = initial_state;
  if (log.header.program_hash != prog.hash) {
    out.error = "program hash mismatch";
    return out;
  }
  if (log.header.init_digest != initial_state.digest()) {
    out.error = "initial state digest mismatch";
    return out;
  }
  Machine m;
  m.prog = prog;
  m.guest = initial_state;
  if (log.header.disk_mode == DiskMode::FullReplay) {
    if (!snapshot) {
      out.error = "FullReplay log requires the matching snapshot";
      return out;
    }
    if (!log.frames.empty() && log.frames.front().kind == FrameKind::SnapshotRef) {
      uint64_t want = payload_u64(log.frames.front().payload);
      if (want != snapshot->base_digest()) {
        out.error = "snapshot digest mismatch";
        return out;
      }
    }
    m.disk.snapshot = *snapshot;
  } else {
    m.disk.image = DiskImage::zeroed(16);
  }
  VectorFrameSource src(log.frames);
  ReplayConfig cfg;
  cfg.disk_mode = log.header.disk_mode;
  cfg.seed = seed;
  ReplaySession s(std::move(m), src, cfg);
  s.advance();
  out.ok = s.error().empty() || s.error() == "truncated log";
  out.verified = s.verified();
  out.error = s.error();
  out.final_state = s.machine().guest;
  out.replay_disk_image = s.machine().disk.image;
  out.stats = s.stats();
  return out;
}

}  // namespace rrvm

#include "rrvm/replication.hpp"

#include <algorithm>
#include <cstring>

namespace rrvm {

// --- ByteChannel -----------------------------------------------------------

void ByteChannel::write(const uint8_t* p, std::size_t n) {
  {
    std::lock_guard<std::mutex> lk(mu_);
    if (closed_) return;
    buf_.insert(buf_.end(), p, p + n);
  }
  cv_.notify_all();
}

bool ByteChannel::read_exactly(uint8_t* p, std::size_t n, std::chrono::milliseconds timeout) {
  std::unique_lock<std::mutex> lk(mu_);
  if (!cv_.wait_for(lk, timeout, [&] { return buf_.size() >= n || closed_; })) return false;
  if (buf_.size() < n) return false;
  std::copy_n(buf_.begin(), n, p);
  buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(n));
  return true;
}

std::size_t ByteChannel::read_available(uint8_t* p, std::size_t max) {
  std::lock_guard<std::mutex> lk(mu_);
  std::size_t n = std::min(max, buf_.size());
  std::copy_n(buf_.begin(), n, p);
  buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(n));
  return n;
}

std::size_t ByteChannel::buffered() const {
  std::lock_guard<std::mutex> lk(mu_);
  return buf_.size();
}

void ByteChannel::close() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool ByteChannel::closed() const {
  std::lock_guard<std::mutex> lk(mu_);
  return closed_;
}

// --- stream / ack codecs ---------------------------------------------------

namespace {

void put_u64(std::vector<uint8_t>& v, uint64_t x) {
  for (int i = 0; i < 8; ++i) v.push_back(static_cast<uint8_t>(x >> (8 * i)));
}

uint64_t get_u64(const uint8_t* p) {
  uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(p[i]) << (8 * i);
  return x;
}

void put_u32(std::vector<uint8_t>& v, uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(static_cast<uint8_t>(x >> (8 * i)));
}

}  // namespace

void send_header_msg(ByteChannel& ch, const LogHeader& h) {
  std::vector<uint8_t> msg{static_cast<uint8_t>(MsgType::Header)};
  auto enc = encode_header(h);
  msg.insert(msg.end(), enc.begin(), enc.end());
  ch.write(msg);
}

void send_frame_msg(ByteChannel& ch, const LogFrame& f) {
  std::vector<uint8_t> msg{static_cast<uint8_t>(MsgType::Frame)};
  auto enc = encode_frame(f);
  msg.insert(msg.end(), enc.begin(), enc.end());
  ch.write(msg);
}

void send_watermark_msg(ByteChannel& ch, uint64_t nbranches, uint64_t last_lsn) {
  std::vector<uint8_t> msg{static_cast<uint8_t>(MsgType::Watermark)};
  put_u64(msg, nbranches);
  put_u64(msg, last_lsn);
  ch.write(msg);
}

std::vector<uint8_t> encode_ack(const Ack& a) {
  std::vector<uint8_t> v;
  v.reserve(kAckBytes);
  put_u64(v, a.lsn);
  put_u64(v, a.nbranches);
  put_u32(v, crc32(v.data(), 16));
  return v;
}

bool decode_ack(const uint8_t* p, Ack& out) {
  uint32_t want = 0;
  for (int i = 0; i < 4; ++i) want |= static_cast<uint32_t>(p[16 + i]) << (8 * i);
  if (crc32(p, 16) != want) return false;
  out.lsn = get_u64(p);
  out.nbranches = get_u64(p + 8);
  return true;
}

// --- StreamSource ----------------------------------------------------------

StreamSource::StreamSource(std::shared_ptr<ByteChannel> ch) : ch_(std::move(ch)) {
  reader_ = std::thread([this] { reader_loop(); });
}

StreamSource::~StreamSource() {
  ch_->close();
  if (reader_.joinable()) reader_.join();
}

void StreamSource::reader_loop() {
  for (;;) {
    uint8_t type;
    if (!ch_->read_exactly(&type, 1, std::chrono::milliseconds(50))) {
      if (ch_->closed() && ch_->buffered() == 0) break;
      continue;
    }
    switch (static_cast<MsgType>(type)) {
      case MsgType::Header: {
        std::vector<uint8_t> raw(kHeaderBytes);
        if (!ch_->read_exactly(raw.data(), raw.size())) goto out;
        try {
          LogHeader h = decode_header(raw.data(), raw.size());
          std::lock_guard<std::mutex> lk(mu_);
          header_ = h;
        } catch (const std::exception&) {
          goto out;
        }
        break;
      }
      case MsgType::Frame: {
        uint8_t lenb[4];
        if (!ch_->read_exactly(lenb, 4)) goto out;
        uint32_t len = 0;  // bytes after the len field, crc included
        for (int i = 0; i < 4; ++i) len |= static_cast<uint32_t>(lenb[i]) << (8 * i);
        if (len < kFrameOverhead - 4 || len > kFrameOverhead - 4 + kMaxPayload) goto out;
        std::vector<uint8_t> raw(lenb, lenb + 4);
        raw.resize(4 + len);
        if (!ch_->read_exactly(raw.data() + 4, len)) goto out;
        DecodeResult d = decode_frame(raw.data(), raw.size());
        if (!d.error.empty() || !d.frame) goto out;
        {
          std::lock_guard<std::mutex> lk(mu_);
          frames_.push_back(std::move(*d.frame));
        }
        cv_.notify_all();
        break;
      }
      case MsgType::Watermark: {
        uint8_t body[16];
        if (!ch_->read_exactly(body, 16)) goto out;
        std::lock_guard<std::mutex> lk(mu_);
        watermark_ = std::max(watermark_, get_u64(body));
        watermark_lsn_ = std::max(watermark_lsn_, get_u64(body + 8));
        break;
      }
      default:
        goto out;  // protocol error: treat as connection loss
    }
  }
out:
  {
    std::lock_guard<std::mutex> lk(mu_);
    eof_ = true;
  }
  cv_.notify_all();
}

const LogFrame* StreamSource::peek() {
  std::lock_guard<std::mutex> lk(mu_);
  return head_ < frames_.size() ? &frames_[head_] : nullptr;
}

void StreamSource::pop() {
  std::lock_guard<std::mutex> lk(mu_);
  if (head_ < frames_.size()) ++head_;
}

uint64_t StreamSource::watermark() {
  std::lock_guard<std::mutex> lk(mu_);
  return watermark_;
}

bool StreamSource::closed() {
  std::lock_guard<std::mutex> lk(mu_);
  return eof_ && head_ >= frames_.size();
}

bool StreamSource::wait_for_frame(std::chrono::milliseconds timeout) {
  std::unique_lock<std::mutex> lk(mu_);
  return cv_.wait_for(lk, timeout, [&] { return head_ < frames_.size() || eof_; });
}

std::optional<LogHeader> StreamSource::header() const {
  std::lock_guard<std::mutex> lk(mu_);
  return header_;
}

std::vector<LogFrame> StreamSource::history_upto(uint64_t bound_lsn) const {
  std::lock_guard<std::mutex> lk(mu_);
  std::vector<LogFrame> out;
  for (const auto& f : frames_)
    if (f.lsn <= bound_lsn) out.push_back(f);
  return out;
}

uint64_t StreamSource::last_lsn() const {
  std::lock_guard<std::mutex> lk(mu_);
  return frames_.empty() ? 0 : frames_.back().lsn;
}

// --- Cluster ---------------------------------------------------------------

struct Cluster::Replica {
  int id = 0;
  std::thread thr;
  SecondaryTuning tuning;
  std::atomic<bool> alive{true};
  std::atomic<bool> is_primary{false};

  // stream current-primary -> this replica
  std::shared_ptr<ByteChannel> in_chan;
  std::unique_ptr<StreamSource> src;
  std::shared_ptr<ByteChannel> ack_chan;  // this replica -> current primary

  // primary-side view of this secondary
  std::atomic<uint64_t> acked_lsn{0};
  std::atomic<uint64_t> acked_nbr{0};
  std::vector<uint8_t> ack_carry;     // partial ack record bytes
  std::deque<HeldFrame> held;         // frames withheld by the induced lag
  uint64_t last_sent_lsn = 0;

  // secondary-side state
  std::unique_ptr<ReplaySession> rsess;
  std::atomic<uint64_t> applied_pub{0};
  std::atomic<bool> drained{false};

  // live record session (when primary), for rx injection
  std::mutex rec_mu;
  RecordSession* record = nullptr;

  // handoff of a replacement stream after a promotion
  std::mutex new_src_mu;
  std::condition_variable new_src_cv;
  std::unique_ptr<StreamSource> new_src;
};

Cluster::Cluster(Program prog, RecordRunOptions base, ReplicaSetConfig cfg,
                 std::vector<SecondaryTuning> tunings, VirtualSwitch* sw, std::string vm_addr,
                 std::string client_addr)
    : prog_(std::move(prog)),
      base_(std::move(base)),
      cfg_(cfg),
      tunings_(std::move(tunings)),
      sw_(sw),
      vm_addr_(std::move(vm_addr)),
      client_addr_(std::move(client_addr)) {
  if (cfg_.n < 2 || cfg_.n > 8) throw std::runtime_error("replicas must be in [2, 8]");
  if (cfg_.drift_resume == 0) cfg_.drift_resume = cfg_.drift_max / 2;
  tunings_.resize(static_cast<std::size_t>(cfg_.n));
  if (base_.disk_image.bytes.empty()) base_.disk_image = DiskImage::zeroed(16);
  for (int i = 0; i < cfg_.n; ++i) {
    auto r = std::make_unique<Replica>();
    r->id = i;
    r->tuning = tunings_[static_cast<std::size_t>(i)];
    r->in_chan = std::make_shared<ByteChannel>();
    r->ack_chan = std::make_shared<ByteChannel>();
    reps_.push_back(std::move(r));
  }
}

Cluster::~Cluster() {
  if (started_ && !stopped_) stop();
}

double Cluster::now_ms() const {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0_).count();
}

void Cluster::start() {
  t0_ = std::chrono::steady_clock::now();
  last_beat_ms_ = 0;
  started_ = true;
  if (sw_) {
    for (int i = 0; i < cfg_.n; ++i) {
      int id = i;
      sw_->register_endpoint("replica-" + std::to_string(i),
                             [this, id](const std::string&, std::vector<uint8_t> p) {
                               deliver_client_frame(id, std::move(p));
                             });
    }
    sw_->bind(vm_addr_, "replica-0");
  }
  for (int i = 1; i < cfg_.n; ++i)
    reps_[static_cast<std::size_t>(i)]->src =
        std::make_unique<StreamSource>(reps_[static_cast<std::size_t>(i)]->in_chan);
  for (int i = 0; i < cfg_.n; ++i)
    reps_[static_cast<std::size_t>(i)]->thr = std::thread([this, i] { replica_main(i); });
}

void Cluster::replica_main(int id) {
  if (id == 0) {
    // initial primary: fresh machine, log prologue streamed first
    Machine m;
    m.prog = prog_;
    m.guest = base_.initial_state;
    m.disk.image = base_.disk_image;
    std::optional<DiskSnapshot> snap;
    if (base_.disk_mode == DiskMode::FullReplay) snap = DiskSnapshot::of(m.disk.image);
    Log pro = make_log_prologue(prog_, m.guest, base_.disk_mode, snap);
    for (auto& r : reps_) {
      if (r->id == 0) continue;
      send_header_msg(*r->in_chan, pro.header);
    }
    for (const auto& f : pro.frames) stream_frame(f);
    RecordOptions ro{base_.disk_mode, cfg_.timer_ms, true};
    auto s = std::make_unique<RecordSession>(std::move(m), ro, pro.frames.size() + 1);
    run_primary(id, std::move(s));
  } else {
    run_secondary(id);
  }
}

// Streams one frame to every live secondary, honoring per-secondary lag.
void Cluster::stream_frame(const LogFrame& f) {
  std::vector<uint8_t> enc{static_cast<uint8_t>(MsgType::Frame)};
  auto raw = encode_frame(f);
  enc.insert(enc.end(), raw.begin(), raw.end());
  int pid = primary_id_.load();
  for (auto& r : reps_) {
    if (r->id == pid || !r->alive) continue;
    if (r->tuning.lag_branches == 0) {
      r->in_chan->write(enc);
      r->last_sent_lsn = f.lsn;
    } else {
      r->held.push_back(HeldFrame{enc, f.epoch.nbranches});
    }
  }
}

void Cluster::flush_held(int to_id, uint64_t primary_nbr, bool all) {
  Replica& r = *reps_[static_cast<std::size_t>(to_id)];
  uint64_t lag = r.tuning.lag_branches;
  while (!r.held.empty()) {
    const HeldFrame& h = r.held.front();
    if (!all && primary_nbr < h.nbranches + lag) break;
    r.in_chan->write(h.bytes);
    r.held.pop_front();
  }
}

void Cluster::on_tx(const TxFrame& tx) {
  if (tx.replay_origin) return;
  if (!cfg_.delayed_sends) {
    if (sw_) sw_->send(vm_addr_, client_addr_, tx.payload);
    std::lock_guard<std::mutex> lk(mu_);
    ++rep_.released_sends;
    return;
  }
  std::lock_guard<std::mutex> lk(mu_);
  send_buffer_.push_back(tx);
}

uint64_t Cluster::min_acked_lsn() const {
  uint64_t m = UINT64_MAX;
  int pid = primary_id_.load();
  bool any = false;
  for (const auto& r : reps_) {
    if (r->id == pid || !r->alive) continue;
    m = std::min(m, r->acked_lsn.load());
    any = true;
  }
  return any ? m : UINT64_MAX;  // no live secondary: nothing gates release
}

uint64_t Cluster::min_acked_nbr() const {
  uint64_t m = UINT64_MAX;
  int pid = primary_id_.load();
  bool any = false;
  for (const auto& r : reps_) {
    if (r->id == pid || !r->alive) continue;
    m = std::min(m, r->acked_nbr.load());
    any = true;
  }
  return any ? m : UINT64_MAX;
}

void Cluster::release_ready() {
  uint64_t bound = min_acked_lsn();
  std::vector<TxFrame> out;
  {
    std::lock_guard<std::mutex> lk(mu_);
    while (!send_buffer_.empty() && send_buffer_.front().emission_lsn <= bound) {
      out.push_back(std::move(send_buffer_.front()));
      send_buffer_.pop_front();
      ++rep_.released_sends;
    }
  }
  for (auto& tx : out)
    if (sw_) sw_->send(vm_addr_, client_addr_, tx.payload);
}

void Cluster::collect_acks() {
  int pid = primary_id_.load();
  uint8_t buf[1024];
  for (auto& r : reps_) {
    if (r->id == pid || !r->alive) continue;
    for (;;) {
      std::size_t n = r->ack_chan->read_available(buf, sizeof(buf));
      if (n == 0) break;
      r->ack_carry.insert(r->ack_carry.end(), buf, buf + n);
    }
    std::size_t off = 0;
    while (r->ack_carry.size() - off >= kAckBytes) {
      Ack a;
      if (decode_ack(r->ack_carry.data() + off, a)) {
        if (a.lsn > r->acked_lsn.load()) r->acked_lsn = a.lsn;
        if (a.nbranches > r->acked_nbr.load()) r->acked_nbr = a.nbranches;
      }
      off += kAckBytes;
    }
    r->ack_carry.erase(r->ack_carry.begin(), r->ack_carry.begin() + static_cast<std::ptrdiff_t>(off));
  }
}

void Cluster::sample_drift(uint64_t primary_nbr) {
  uint64_t acked = min_acked_nbr();
  uint64_t drift = acked == UINT64_MAX ? 0 : (primary_nbr > acked ? primary_nbr - acked : 0);
  std::lock_guard<std::mutex> lk(mu_);
  rep_.drift_samples.push_back(DriftSample{now_ms(), drift});
  rep_.max_drift = std::max(rep_.max_drift, drift);
}

void Cluster::deliver_client_frame(int id, std::vector<uint8_t> payload) {
  Replica& r = *reps_[static_cast<std::size_t>(id)];
  std::lock_guard<std::mutex> lk(r.rec_mu);
  if (r.record && r.is_primary && r.alive) r.record->inject_rx(std::move(payload));
}

void Cluster::run_primary(int id, std::unique_ptr<RecordSession> s) {
  Replica& me = *reps_[static_cast<std::size_t>(id)];
  me.is_primary = true;
  primary_id_ = id;
  s->frame_sink = [this](const LogFrame& f) { stream_frame(f); };
  s->tx_sink = [this](const TxFrame& tx) { on_tx(tx); };
  {
    std::lock_guard<std::mutex> lk(me.rec_mu);
    me.record = s.get();
  }

  const double quantum_s =
      cfg_.branch_rate > 0 ? static_cast<double>(cfg_.quantum_branches) / cfg_.branch_rate : 0;
  bool paused = false;
  bool halted = false;
  while (!stop_flag_.load() && me.alive.load()) {
    last_beat_ms_ = static_cast<int64_t>(now_ms());
    collect_acks();
    release_ready();
    uint64_t nbr = s->machine().guest.nbranches;

    if (cfg_.throttle) {
      uint64_t acked = min_acked_nbr();
      uint64_t drift = acked == UINT64_MAX ? 0 : (nbr > acked ? nbr - acked : 0);
      uint64_t limit = paused ? cfg_.drift_resume : cfg_.drift_max;
      if (drift > limit) {
        paused = true;
        sample_drift(nbr);
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
        continue;
      }
      paused = false;
    }
    if (halted) {  // guest done; keep heartbeating until told to stop
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
      continue;
    }

    auto slice_start = std::chrono::steady_clock::now();
    RecordSession::SliceLimits lim;
    lim.max_branches = nbr + cfg_.quantum_branches;
    double cap_ms = std::min<double>(cfg_.heartbeat_ms / 2.0, 20.0);
    lim.deadline = slice_start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                     std::chrono::duration<double, std::milli>(cap_ms));
    auto st = s->run_slice(lim);
    uint64_t new_nbr = s->machine().guest.nbranches;
    for (auto& r : reps_) {
      if (r->id == id || !r->alive) continue;
      flush_held(r->id, new_nbr, false);
      uint64_t wm = new_nbr > r->tuning.lag_branches ? new_nbr - r->tuning.lag_branches : 0;
      send_watermark_msg(*r->in_chan, wm, me.last_sent_lsn);
    }
    sample_drift(new_nbr);
    if (st == RecordSession::SliceStatus::Halted || st == RecordSession::SliceStatus::Stuck)
      halted = true;
    if (quantum_s > 0 && new_nbr > nbr) {
      double budget_s = static_cast<double>(new_nbr - nbr) / cfg_.branch_rate;
      auto wake = slice_start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                    std::chrono::duration<double>(budget_s));
      std::this_thread::sleep_until(wake);
    }
  }

  {
    std::lock_guard<std::mutex> lk(me.rec_mu);
    me.record = nullptr;
  }
  if (me.alive.load()) {
    // graceful stop: final acks gate nothing further; emit END and drain
    collect_acks();
    release_ready();
    s->finish();
    uint64_t nbr = s->machine().guest.nbranches;
    for (auto& r : reps_) {
      if (r->id == id || !r->alive) continue;
      flush_held(r->id, nbr, true);
      send_watermark_msg(*r->in_chan, nbr, s->next_lsn() - 1);
      r->in_chan->close();
    }
  } else {
    // killed: held frames and the send buffer die with the primary
    std::lock_guard<std::mutex> lk(mu_);
    rep_.discarded_sends += send_buffer_.size();
    send_buffer_.clear();
    for (auto& r : reps_) {
      if (r->id == id) continue;
      r->held.clear();
      r->in_chan->close();
    }
  }
}

void Cluster::run_secondary(int id) {
  Replica& me = *reps_[static_cast<std::size_t>(id)];
  // wait for the stream header
  while (!me.src->header() && !me.src->closed() && !stop_flag_.load())
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  Machine m;
  m.prog = prog_;
  m.guest = base_.initial_state;
  if (base_.disk_mode == DiskMode::FullReplay)
    m.disk.snapshot = DiskSnapshot::of(base_.disk_image);
  else
    m.disk.image = DiskImage::zeroed(16);
  ReplayConfig rc;
  rc.disk_mode = base_.disk_mode;
  rc.seed = cfg_.seed + static_cast<uint64_t>(id) * 7919;
  me.rsess = std::make_unique<ReplaySession>(std::move(m), *me.src, rc);

  auto t_start = std::chrono::steady_clock::now();
  double rate = cfg_.branch_rate * me.tuning.speed_factor;
  auto last_ack = t_start;
  auto send_ack = [&] {
    Ack a{me.rsess->applied_lsn(), me.rsess->machine().guest.nbranches};
    me.ack_chan->write(encode_ack(a));
    me.applied_pub = a.lsn;
  };

  for (;;) {
    if (!me.alive.load()) return;
    uint64_t max_pos = UINT64_MAX;
    if (rate > 0) {
      double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      max_pos = static_cast<uint64_t>(rate * el);
    }
    auto st = me.rsess->advance(max_pos, 1 << 18);
    auto now = std::chrono::steady_clock::now();
    if (now - last_ack >= std::chrono::milliseconds(cfg_.ack_interval_ms)) {
      send_ack();
      last_ack = now;
    }
    if (st == ReplaySession::Status::Diverged) {
      std::lock_guard<std::mutex> lk(mu_);
      rep_.errors.push_back("replica " + std::to_string(id) + ": " + me.rsess->error());
      return;
    }
    if (st == ReplaySession::Status::Done) {
      send_ack();
      if (me.rsess->verified()) {
        std::lock_guard<std::mutex> lk(mu_);
        ++rep_.end_verified;
        ++rep_.secondaries_done;
        return;  // clean END
      }
      // source dried up: either graceful shutdown already seen, or failover
      if (stop_flag_.load()) {
        std::lock_guard<std::mutex> lk(mu_);
        ++rep_.secondaries_done;
        return;
      }
      break;  // drained after a primary failure
    }
    if (st == ReplaySession::Status::NeedFrames) me.src->wait_for_frame(std::chrono::milliseconds(2));
    // failure detection: heartbeat staleness
    if (!stop_flag_.load() &&
        now_ms() - static_cast<double>(last_beat_ms_.load()) >
            static_cast<double>(cfg_.heartbeat_ms) * cfg_.miss_threshold &&
        me.src->closed() && me.rsess->done()) {
      break;
    }
  }

  // --- failure path: drain is complete (source closed and consumed) --------
  while (!stop_flag_.load() &&
         now_ms() - static_cast<double>(last_beat_ms_.load()) <
             static_cast<double>(cfg_.heartbeat_ms) * cfg_.miss_threshold)
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  if (stop_flag_.load()) {
    std::lock_guard<std::mutex> lk(mu_);
    ++rep_.secondaries_done;
    return;
  }
  double detect_t = now_ms();
  {
    std::lock_guard<std::mutex> lk(mu_);
    if (rep_.detection_ms < 0) {
      int64_t kt = kill_time_ms_.load();
      rep_.detection_ms = detect_t - (kt >= 0 ? static_cast<double>(kt) : detect_t);
    }
  }
  me.applied_pub = me.rsess->applied_lsn();
  send_ack();
  me.drained = true;  // after the last ack: the winner may swap our channels now

  // wait (bounded) for the other survivors to drain, then elect
  int old_pid = primary_id_.load();
  auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(1500);
  for (;;) {
    bool all = true;
    for (auto& r : reps_)
      if (r->id != old_pid && r->alive.load() && !r->drained.load()) all = false;
    if (all || std::chrono::steady_clock::now() >= deadline || stop_flag_.load()) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  int winner = -1;
  uint64_t best = 0;
  for (auto& r : reps_) {
    if (r->id == old_pid || !r->alive.load() || !r->drained.load()) continue;
    uint64_t a = r->applied_pub.load();
    if (winner < 0 || a > best || (a == best && r->id < winner)) {
      winner = r->id;
      best = a;
    }
  }
  if (winner == id && !promotion_claimed_.exchange(true)) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      ++rep_.promotions;
      rep_.promotion_ms = now_ms() - detect_t;  // finalized after rebind below
    }
    promote(id);
    return;
  }
  // loser: wait for a replacement stream from the new primary
  std::unique_ptr<StreamSource> fresh;
  {
    std::unique_lock<std::mutex> lk(me.new_src_mu);
    me.new_src_cv.wait_for(lk, std::chrono::seconds(5),
                           [&] { return me.new_src != nullptr || stop_flag_.load(); });
    fresh = std::move(me.new_src);
  }
  if (!fresh) {
    std::lock_guard<std::mutex> lk(mu_);
    ++rep_.secondaries_done;
    return;
  }
  me.src = std::move(fresh);
  me.rsess->resume_with(*me.src);
  me.drained = false;
  // continue replaying against the new primary
  for (;;) {
    if (!me.alive.load() ) return;
    auto st = me.rsess->advance(UINT64_MAX, 1 << 18);
    auto now = std::chrono::steady_clock::now();
    if (now - last_ack >= std::chrono::milliseconds(cfg_.ack_interval_ms)) {
      send_ack();
      last_ack = now;
    }
    if (st == ReplaySession::Status::Diverged) {
      std::lock_guard<std::mutex> lk(mu_);
      rep_.errors.push_back("replica " + std::to_string(id) + ": " + me.rsess->error());
      return;
    }
    if (st == ReplaySession::Status::Done) {
      send_ack();
      std::lock_guard<std::mutex> lk(mu_);
      if (me.rsess->verified()) ++rep_.end_verified;
      ++rep_.secondaries_done;
      return;
    }
    if (st == ReplaySession::Status::NeedFrames) me.src->wait_for_frame(std::chrono::milliseconds(2));
  }
}

void Cluster::promote(int id) {
  Replica& me = *reps_[static_cast<std::size_t>(id)];
  Machine m = me.rsess->machine();  // continue live from the replayed position
  uint64_t first = me.rsess->applied_lsn() + 1;
  // re-stream history to the other survivors from their own positions
  int old_pid = primary_id_.load();
  std::optional<LogHeader> hdr = me.src->header();
  for (auto& r : reps_) {
    if (r->id == id || r->id == old_pid || !r->alive.load()) continue;
    r->in_chan = std::make_shared<ByteChannel>();
    r->ack_chan = std::make_shared<ByteChannel>();
    if (hdr) send_header_msg(*r->in_chan, *hdr);
    for (const auto& f : me.src->history_upto(first - 1))
      if (f.lsn > r->applied_pub.load()) send_frame_msg(*r->in_chan, f);
    r->acked_lsn = r->applied_pub.load();
    r->acked_nbr = 0;
    r->last_sent_lsn = first - 1;
    auto fresh = std::make_unique<StreamSource>(r->in_chan);
    {
      std::lock_guard<std::mutex> lk(r->new_src_mu);
      r->new_src = std::move(fresh);
    }
    r->new_src_cv.notify_all();
  }
  if (sw_) sw_->rebind(vm_addr_, "replica-" + std::to_string(id));
  RecordOptions ro{base_.disk_mode, cfg_.timer_ms, true};
  auto s = std::make_unique<RecordSession>(std::move(m), ro, first);
  run_primary(id, std::move(s));
}

void Cluster::kill_primary() {
  int pid = primary_id_.load();
  kill_time_ms_ = static_cast<int64_t>(now_ms());
  primary_killed_ = true;
  reps_[static_cast<std::size_t>(pid)]->alive = false;
}

void Cluster::stop(double) {
  if (!started_ || stopped_) return;
  stop_flag_ = true;
  for (auto& r : reps_) {
    if (r->thr.joinable()) r->thr.join();
  }
  if (sw_)
    for (auto& r : reps_) sw_->unregister_endpoint("replica-" + std::to_string(r->id));
  {
    std::lock_guard<std::mutex> lk(mu_);
    rep_.final_primary = primary_id_.load();
    bool any_secondary = false;
    for (auto& r : reps_)
      if (r->alive.load() && !r->is_primary.load()) any_secondary = true;
    if (primary_killed_.load() && rep_.promotions == 0 && !any_secondary) rep_.vm_lost = true;
  }
  stopped_ = true;
}

ClusterReport Cluster::report() {
  std::lock_guard<std::mutex> lk(mu_);
  return rep_;
}

}  // namespace rrvm

#include "rrvm/netsim.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace rrvm {

VirtualSwitch::VirtualSwitch(double default_latency_ms)
    : default_latency_ms_(default_latency_ms), t0_(std::chrono::steady_clock::now()) {
  worker_ = std::thread([this] { run(); });
}

VirtualSwitch::~VirtualSwitch() { stop(); }

double VirtualSwitch::now_ms() const {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0_).count();
}

void VirtualSwitch::stop() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    if (stop_) return;
    stop_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void VirtualSwitch::register_endpoint(const std::string& name, Sink sink) {
  std::lock_guard<std::mutex> lk(mu_);
  endpoints_[name] = std::move(sink);
}

void VirtualSwitch::unregister_endpoint(const std::string& name) {
  std::lock_guard<std::mutex> lk(mu_);
  endpoints_.erase(name);
}

void VirtualSwitch::bind(const std::string& addr, const std::string& endpoint) {
  std::lock_guard<std::mutex> lk(mu_);
  table_[addr] = endpoint;
}

void VirtualSwitch::rebind(const std::string& addr, const std::string& endpoint, double latency_ms) {
  {
    std::lock_guard<std::mutex> lk(mu_);
    events_.push(Event{now_ms() + latency_ms, seq_++, true, addr, endpoint, {}});
  }
  cv_.notify_all();
}

void VirtualSwitch::set_link_latency(const std::string& endpoint, double ms) {
  std::lock_guard<std::mutex> lk(mu_);
  latency_[endpoint] = ms;
}

void VirtualSwitch::send(const std::string& src_addr, const std::string& dst_addr,
                         std::vector<uint8_t> payload) {
  {
    std::lock_guard<std::mutex> lk(mu_);
    events_.push(Event{now_ms() + default_latency_ms_, seq_++, false, src_addr, dst_addr,
                       std::move(payload)});
  }
  cv_.notify_all();
}

void VirtualSwitch::run() {
  std::unique_lock<std::mutex> lk(mu_);
  for (;;) {
    if (stop_) return;
    if (events_.empty()) {
      cv_.wait(lk, [this] { return stop_ || !events_.empty(); });
      continue;
    }
    double due = events_.top().due_ms;
    double now = now_ms();
    if (due > now) {
      cv_.wait_for(lk, std::chrono::duration<double, std::milli>(due - now));
      continue;
    }
    Event ev = events_.top();
    events_.pop();
    if (ev.is_rebind) {
      table_[ev.a] = ev.b;
      continue;
    }
    auto it = table_.find(ev.b);
    if (it == table_.end()) {
      ++dropped_;
      continue;
    }
    double extra = 0;
    if (auto lit = latency_.find(it->second); lit != latency_.end()) extra = lit->second;
    auto eit = endpoints_.find(it->second);
    if (eit == endpoints_.end()) {
      ++dropped_;
      continue;
    }
    Sink sink = eit->second;
    log_.push_back(DeliveryRecord{now_ms(), ev.a, ev.b, ev.payload});
    lk.unlock();
    if (extra > 0)
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(extra));
    sink(ev.a, std::move(ev.payload));
    lk.lock();
  }
}

std::vector<DeliveryRecord> VirtualSwitch::delivery_log() const {
  std::lock_guard<std::mutex> lk(mu_);
  return log_;
}

uint64_t VirtualSwitch::dropped() const {
  std::lock_guard<std::mutex> lk(mu_);
  return dropped_;
}

PingResult run_ping_client(VirtualSwitch& sw, const std::string& client_addr,
                           const std::string& vm_addr, int count, uint32_t interval_ms,
                           uint32_t timeout_ms) {
  struct Shared {
    std::mutex mu;
    std::map<uint16_t, double> reply_ms;  // probe id -> receive time
  };
  auto shared = std::make_shared<Shared>();
  std::string ep = "ep:" + client_addr;
  sw.register_endpoint(ep, [shared, &sw](const std::string&, std::vector<uint8_t> p) {
    if (p.size() < 2) return;
    uint16_t id = static_cast<uint16_t>((p[0] << 8) | p[1]);
    std::lock_guard<std::mutex> lk(shared->mu);
    if (!shared->reply_ms.count(id)) shared->reply_ms[id] = sw.now_ms();
  });
  sw.bind(client_addr, ep);

  PingResult res;
  std::vector<double> send_ms(static_cast<std::size_t>(count), 0);
  for (int i = 0; i < count; ++i) {
    send_ms[static_cast<std::size_t>(i)] = sw.now_ms();
    sw.send(client_addr, vm_addr,
            {static_cast<uint8_t>(i >> 8), static_cast<uint8_t>(i & 0xff)});
    ++res.sent;
    std::this_thread::sleep_for(std::chrono::milliseconds(interval_ms));
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(timeout_ms));
  std::vector<double> reply_times;
  {
    std::lock_guard<std::mutex> lk(shared->mu);
    for (int i = 0; i < count; ++i) {
      auto it = shared->reply_ms.find(static_cast<uint16_t>(i));
      if (it != shared->reply_ms.end()) {
        ++res.received;
        res.rtts_ms.push_back(it->second - send_ms[static_cast<std::size_t>(i)]);
        reply_times.push_back(it->second);
      }
    }
  }
  sw.unregister_endpoint(ep);
  std::sort(reply_times.begin(), reply_times.end());
  double window = 0;
  for (std::size_t i = 1; i < reply_times.size(); ++i)
    window = std::max(window, reply_times[i] - reply_times[i - 1]);
  if (reply_times.empty())
    window = static_cast<double>(count) * interval_ms + timeout_ms;
  res.unresponsive_window_ms = window;
  if (!res.rtts_ms.empty()) {
    auto sorted = res.rtts_ms;
    std::sort(sorted.begin(), sorted.end());
    res.median_rtt_ms = sorted[sorted.size() / 2];
  }
  return res;
}

StreamClient::StreamClient(VirtualSwitch& sw, const std::string& client_addr, uint64_t target_seq)
    : target_(target_seq), t0_(std::chrono::steady_clock::now()) {
  std::string ep = "ep:" + client_addr;
  sw.register_endpoint(ep, [this](const std::string&, std::vector<uint8_t> p) {
    on_frame(std::move(p));
  });
  sw.bind(client_addr, ep);
}

void StreamClient::on_frame(std::vector<uint8_t> payload) {
  if (payload.size() < 2) return;
  uint64_t seq = (static_cast<uint64_t>(payload[0]) << 8) | payload[1];
  std::lock_guard<std::mutex> lk(mu_);
  if (res_.stalled) return;  // a confused client stops accepting
  ++res_.frames;
  uint64_t expected = res_.last_seq + 1;
  if (seq < expected) {
    res_.regression_detected = true;
    res_.stalled = true;
    cv_.notify_all();
    return;
  }
  if (seq > expected) res_.forward_gaps += seq - expected;
  res_.last_seq = seq;
  last_progress_ms_ =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0_).count();
  if (res_.last_seq >= target_) {
    res_.completed = true;
    res_.wall_ms = last_progress_ms_;
    cv_.notify_all();
  }
}

StreamResult StreamClient::wait(double timeout_ms) {
  std::unique_lock<std::mutex> lk(mu_);
  cv_.wait_for(lk, std::chrono::duration<double, std::milli>(timeout_ms),
               [this] { return res_.completed || res_.stalled; });
  if (!res_.completed && !res_.stalled) res_.stalled = true;  // timed out without progress
  if (res_.wall_ms == 0)
    res_.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0_).count();
  return res_;
}

StreamResult StreamClient::peek() const {
  std::lock_guard<std::mutex> lk(mu_);
  return res_;
}

namespace {

bool parse_bool(const std::string& v, int line) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ScenarioError(line, "expected on/off, got '" + v + "'");
}

double parse_time_ms(std::string v, int line) {
  double mult = 1;
  if (v.size() > 2 && v.substr(v.size() - 2) == "ms") {
    v = v.substr(0, v.size() - 2);
  } else if (!v.empty() && v.back() == 's') {
    mult = 1000;
    v.pop_back();
  }
  char* end = nullptr;
  double x = std::strtod(v.c_str(), &end);
  if (v.empty() || !end || end == v.c_str() || *end != '\0')
    throw ScenarioError(line, "bad time '" + v + "'");
  return x * mult;
}

}  // namespace

Scenario parse_scenario(const std::string& text) {
  Scenario sc;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::vector<std::string> t;
    std::string tok;
    while (ls >> tok) t.push_back(tok);
    if (t.empty()) continue;
    auto need = [&](std::size_t n) {
      if (t.size() != n) throw ScenarioError(lineno, "expected " + std::to_string(n - 1) + " value(s) after '" + t[0] + "'");
    };
    const std::string& k = t[0];
    if (k == "workload") { need(2); sc.workload = t[1]; }
    else if (k == "replicas") { need(2); sc.replicas = std::atoi(t[1].c_str()); }
    else if (k == "heartbeat-ms") { need(2); sc.heartbeat_ms = static_cast<uint32_t>(std::atoi(t[1].c_str())); }
    else if (k == "miss-threshold") { need(2); sc.miss_threshold = std::atoi(t[1].c_str()); }
    else if (k == "delayed-sends") { need(2); sc.delayed_sends = parse_bool(t[1], lineno); }
    else if (k == "drift-max") { need(2); sc.drift_max = std::strtoull(t[1].c_str(), nullptr, 10); }
    else if (k == "lag-branches") { need(2); sc.lag_branches = std::strtoull(t[1].c_str(), nullptr, 10); }
    else if (k == "slow-factor") { need(2); sc.slow_factor = std::atof(t[1].c_str()); }
    else if (k == "branch-rate") { need(2); sc.branch_rate = std::atof(t[1].c_str()); }
    else if (k == "latency-ms") { need(2); sc.latency_ms = std::atof(t[1].c_str()); }
    else if (k == "ack-interval-ms") { need(2); sc.ack_interval_ms = static_cast<uint32_t>(std::atoi(t[1].c_str())); }
    else if (k == "timer-ms") { need(2); sc.timer_ms = static_cast<uint32_t>(std::atoi(t[1].c_str())); }
    else if (k == "quantum-branches") { need(2); sc.quantum_branches = std::strtoull(t[1].c_str(), nullptr, 10); }
    else if (k == "duration") { need(2); sc.duration_ms = parse_time_ms(t[1], lineno); }
    else if (k == "kill") {
      // kill primary @ t=5s
      if (t.size() != 4 || t[1] != "primary" || t[2] != "@" || t[3].substr(0, 2) != "t=")
        throw ScenarioError(lineno, "expected 'kill primary @ t=<time>'");
      sc.kill_primary_at_ms = parse_time_ms(t[3].substr(2), lineno);
    } else if (k == "client") {
      if (t.size() < 2) throw ScenarioError(lineno, "expected client kind");
      if (t[1] == "ping") {
        if (t.size() != 4) throw ScenarioError(lineno, "expected 'client ping <count> <interval-ms>'");
        sc.client = Scenario::Client::Ping;
        sc.ping_count = std::atoi(t[2].c_str());
        sc.ping_interval_ms = static_cast<uint32_t>(std::atoi(t[3].c_str()));
      } else if (t[1] == "stream") {
        if (t.size() != 3) throw ScenarioError(lineno, "expected 'client stream <target-seq>'");
        sc.client = Scenario::Client::Stream;
        sc.stream_target_seq = std::strtoull(t[2].c_str(), nullptr, 10);
      } else {
        throw ScenarioError(lineno, "unknown client kind '" + t[1] + "'");
      }
    } else {
      throw ScenarioError(lineno, "unknown directive '" + k + "'");
    }
  }
  if (sc.replicas < 2 || sc.replicas > 8) throw ScenarioError(0, "replicas must be in [2, 8]");
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_scenario(ss.str());
}

}  // namespace rrvm

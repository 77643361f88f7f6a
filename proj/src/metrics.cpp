#include "rrvm/metrics.hpp"

#include <algorithm>
#include <sstream>

#include "rrvm/replayer.hpp"

namespace rrvm {

std::string csv_header() {
  return std::string(kCsvSchema) +
         "\nworkload,mode,wall_ms,instructions,branches,log_bytes,bytes_per_sec,bytes_per_kinstr,"
         "valid,note";
}

std::string MetricsRow::csv() const {
  std::ostringstream os;
  os << workload << ',' << mode << ',' << wall_ms << ',' << instructions << ',' << branches << ','
     << log_bytes << ',' << bytes_per_sec << ',' << bytes_per_kinstr << ','
     << (valid ? "true" : "false") << ',' << note;
  return os.str();
}

namespace {

MetricsRow make_row(const std::string& wl, const std::string& mode, double wall_ms, uint64_t instr,
                    uint64_t branches, uint64_t log_bytes) {
  MetricsRow r;
  r.workload = wl;
  r.mode = mode;
  r.wall_ms = wall_ms;
  r.instructions = instr;
  r.branches = branches;
  r.log_bytes = log_bytes;
  if (wall_ms > 0) r.bytes_per_sec = static_cast<double>(log_bytes) / (wall_ms / 1000.0);
  if (instr > 0) r.bytes_per_kinstr = static_cast<double>(log_bytes) / (static_cast<double>(instr) / 1000.0);
  return r;
}

MetricsRow median_row(std::vector<MetricsRow> rows) {
  std::sort(rows.begin(), rows.end(),
            [](const MetricsRow& a, const MetricsRow& b) { return a.wall_ms < b.wall_ms; });
  MetricsRow m = rows[rows.size() / 2];
  m.mode += "-median";
  for (const auto& r : rows) m.valid = m.valid && r.valid;
  return m;
}

}  // namespace

BenchResult bench(const std::string& workload, int repetitions, DiskMode mode, uint64_t seed) {
  const Workload& w = get_workload(workload);
  Program prog = assemble(w.program_text);
  BenchResult res;
  std::vector<MetricsRow> base_rows, rec_rows, rep_rows;
  for (int i = 0; i < repetitions; ++i) {
    RecordRunOptions opt = workload_record_options(w, mode);
    BaselineResult b = baseline_run(prog, opt);
    base_rows.push_back(
        make_row(workload, "baseline", b.stats.wall_ms, b.stats.steps, b.stats.branches, 0));

    RecordResult rr = record_run(prog, opt);
    rec_rows.push_back(make_row(workload, "record", rr.stats.wall_ms, rr.stats.steps,
                                rr.stats.branches, rr.log.frame_bytes()));

    ReplayOutcome ro = replay_run(rr.log, prog, rr.snapshot, opt.initial_state,
                                  seed + static_cast<uint64_t>(i));
    MetricsRow rrow = make_row(workload, "replay", ro.stats.wall_ms, ro.stats.steps,
                               rr.log.frame_bytes() ? rr.final_state.nbranches : 0,
                               rr.log.frame_bytes());
    rrow.branches = ro.final_state.nbranches;
    rrow.valid = ro.verified;
    if (!ro.verified) {
      rrow.note = ro.error.empty() ? "digest unverified" : ro.error;
      res.ok = false;
    }
    rep_rows.push_back(rrow);
  }
  for (auto* v : {&base_rows, &rec_rows, &rep_rows}) {
    for (const auto& r : *v) res.rows.push_back(r);
    res.rows.push_back(median_row(*v));
  }
  return res;
}

std::string drift_csv(const ClusterReport& rep) {
  std::ostringstream os;
  os << kCsvSchema << "\nwall_ms,drift_branches\n";
  uint64_t sum = 0;
  for (const auto& s : rep.drift_samples) {
    os << s.t_ms << ',' << s.drift << '\n';
    sum += s.drift;
  }
  double mean = rep.drift_samples.empty()
                    ? 0
                    : static_cast<double>(sum) / static_cast<double>(rep.drift_samples.size());
  os << "# max=" << rep.max_drift << " mean=" << mean << '\n';
  return os.str();
}

FailoverReport run_failover_experiment(const Scenario& sc, uint64_t seed) {
  FailoverReport out;
  Program prog;
  try {
    if (sc.client == Scenario::Client::Ping)
      prog = assemble(ping_responder_program());
    else if (sc.client == Scenario::Client::Stream)
      prog = assemble(stream_sender_program());
    else
      prog = assemble(get_workload(sc.workload).program_text);
  } catch (const std::exception& e) {
    out.error = e.what();
    return out;
  }

  RecordRunOptions base;
  base.disk_mode = DiskMode::FullReplay;
  base.timer_ms = sc.timer_ms;

  ReplicaSetConfig cfg;
  cfg.n = sc.replicas;
  cfg.drift_max = sc.drift_max;
  cfg.delayed_sends = sc.delayed_sends;
  cfg.heartbeat_ms = sc.heartbeat_ms;
  cfg.miss_threshold = sc.miss_threshold;
  cfg.ack_interval_ms = sc.ack_interval_ms;
  cfg.quantum_branches = sc.quantum_branches;
  cfg.branch_rate = sc.branch_rate;
  cfg.timer_ms = sc.timer_ms;
  cfg.seed = seed;
  std::vector<SecondaryTuning> tunings(static_cast<std::size_t>(sc.replicas));
  for (std::size_t i = 1; i < tunings.size(); ++i) {
    tunings[i].speed_factor = sc.slow_factor;
    tunings[i].lag_branches = sc.lag_branches;
  }

  VirtualSwitch sw(sc.latency_ms);
  Cluster cluster(std::move(prog), base, cfg, tunings, &sw, "vm", "client");

  std::thread killer;
  cluster.start();
  if (sc.kill_primary_at_ms >= 0) {
    killer = std::thread([&] {
      std::this_thread::sleep_for(
          std::chrono::duration<double, std::milli>(sc.kill_primary_at_ms));
      cluster.kill_primary();
    });
  }

  if (sc.client == Scenario::Client::Ping) {
    PingResult pr = run_ping_client(sw, "client", "vm", sc.ping_count, sc.ping_interval_ms);
    out.unresponsive_window_ms = pr.unresponsive_window_ms;
    out.median_rtt_ms = pr.median_rtt_ms;
  } else if (sc.client == Scenario::Client::Stream) {
    StreamClient sc_client(sw, "client", sc.stream_target_seq);
    StreamResult sr = sc_client.wait(sc.duration_ms);
    out.completed = sr.completed;
    out.stalled = sr.stalled;
    out.regression_detected = sr.regression_detected;
    out.stream_wall_ms = sr.wall_ms;
  } else {
    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(sc.duration_ms));
  }

  if (killer.joinable()) killer.join();
  cluster.stop();
  sw.stop();
  ClusterReport rep = cluster.report();
  out.ran = true;
  out.detection_ms = rep.detection_ms;
  out.promotion_ms = rep.promotion_ms;
  out.promotions = rep.promotions;
  out.released_sends = rep.released_sends;
  out.discarded_sends = rep.discarded_sends;
  out.max_drift = rep.max_drift;
  out.cluster = rep;
  for (const auto& e : rep.errors) {
    if (!out.error.empty()) out.error += "; ";
    out.error += e;
  }
  return out;
}

}  // namespace rrvm

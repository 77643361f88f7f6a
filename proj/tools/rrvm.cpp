#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rrvm/metrics.hpp"
#include "rrvm/replayer.hpp"
#include "rrvm/scheduler.hpp"
#include "rrvm/workloads.hpp"

using namespace rrvm;

namespace {

constexpr int kExitVerify = 2;
constexpr int kExitInfeasible = 3;

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_out(const std::string& csv_path, const std::string& text) {
  if (csv_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream os(csv_path);
  if (!os) throw std::runtime_error("cannot open " + csv_path);
  os << text;
}

DiskMode parse_mode(const std::string& s) {
  if (s == "full") return DiskMode::FullReplay;
  if (s == "output") return DiskMode::OutputReplay;
  throw CLI::ValidationError("--disk-mode", "expected 'full' or 'output'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"record/replay virtual machine toolkit"};
  app.require_subcommand(1);

  uint64_t seed = 1;
  std::string csv_path;
  app.add_option("--seed", seed, "rng seed for replay overshoot and experiments");
  app.add_option("--csv", csv_path, "write tabular output to this file instead of stdout");

  // record
  auto* rec = app.add_subcommand("record", "record a guest run into a log");
  std::string rec_program, rec_log, rec_disk_image, rec_mode = "full", rec_snapshot;
  uint32_t rec_timer = 10;
  double rec_duration = 0;
  uint64_t rec_steps = 0;
  rec->add_option("--program", rec_program, "guest program text file")->required();
  rec->add_option("--log", rec_log, "output log file")->required();
  rec->add_option("--disk-image", rec_disk_image, "initial disk image file");
  rec->add_option("--disk-mode", rec_mode, "full | output");
  rec->add_option("--timer-ms", rec_timer, "timer period, 0 disables");
  rec->add_option("--duration", rec_duration, "record for this many seconds");
  rec->add_option("--steps", rec_steps, "record this many instructions");
  rec->add_option("--snapshot-out", rec_snapshot,
                  "write the start-of-run snapshot to FILE and FILE.overlay (full mode)");

  // replay
  auto* rep = app.add_subcommand("replay", "re-execute a recorded log");
  std::string rep_log, rep_program, rep_disk_image, rep_snapshot;
  bool rep_verify = false;
  rep->add_option("--log", rep_log, "log file")->required();
  rep->add_option("--program", rep_program, "guest program text file")->required();
  rep->add_option("--disk-image", rep_disk_image, "scratch disk image (output mode)");
  rep->add_option("--snapshot", rep_snapshot, "snapshot base file; overlay at FILE.overlay");
  rep->add_flag("--verify", rep_verify, "exit 0 only if the END digest matches");

  // cluster
  auto* clu = app.add_subcommand("cluster", "primary plus replaying secondaries, in process");
  std::string clu_workload = "emptyloop";
  int clu_replicas = 2;
  uint64_t clu_drift = 1000000;
  bool clu_delayed = false;
  uint32_t clu_heartbeat = 100;
  double clu_duration = 2.0, clu_kill = -1, clu_rate = 200000, clu_slow = 1.0;
  clu->add_option("--workload", clu_workload, "named workload");
  clu->add_option("--replicas", clu_replicas, "replica count (2-8)")->check(CLI::Range(2, 8));
  clu->add_option("--drift-max", clu_drift, "drift bound in branches");
  clu->add_flag("--delayed-sends", clu_delayed, "hold guest output until acked");
  clu->add_option("--heartbeat-ms", clu_heartbeat, "heartbeat period");
  clu->add_option("--duration", clu_duration, "run for this many seconds");
  clu->add_option("--kill-primary-at", clu_kill, "kill the primary after this many seconds");
  clu->add_option("--branch-rate", clu_rate, "primary pacing, branches/sec");
  clu->add_option("--slow-factor", clu_slow, "secondary replay speed factor");

  // bench
  auto* ben = app.add_subcommand("bench", "baseline/record/replay timing rows");
  std::string ben_workload = "emptyloop", ben_mode = "full";
  int ben_reps = 5;
  ben->add_option("--workload", ben_workload, "named workload");
  ben->add_option("--reps", ben_reps, "repetitions per mode")->check(CLI::PositiveNumber);
  ben->add_option("--disk-mode", ben_mode, "full | output");

  // sched
  auto* sch = app.add_subcommand("sched", "replica placement");
  auto* plan = sch->add_subcommand("plan", "place every VM on the topology");
  std::string sch_topo, sch_vms;
  int sch_replicas = 2;
  plan->add_option("--topology", sch_topo, "topology file")->required();
  plan->add_option("--vms", sch_vms, "vm demand file")->required();
  plan->add_option("--replicas", sch_replicas, "replicas per vm")->check(CLI::Range(1, 8));
  sch->require_subcommand(1);

  // faultinject
  auto* fi = app.add_subcommand("faultinject", "run a scenario file");
  std::string fi_scenario;
  fi->add_option("--scenario", fi_scenario, "scenario file")->required();

  // drift-report
  auto* dr = app.add_subcommand("drift-report", "drift time series for a cluster run");
  std::string dr_workload = "emptyloop";
  uint64_t dr_drift = 1000000;
  double dr_duration = 1.0, dr_rate = 400000, dr_slow = 1.0;
  bool dr_no_throttle = false;
  dr->add_option("--workload", dr_workload, "named workload");
  dr->add_option("--drift-max", dr_drift, "drift bound in branches");
  dr->add_option("--duration", dr_duration, "run for this many seconds");
  dr->add_option("--branch-rate", dr_rate, "primary pacing, branches/sec");
  dr->add_option("--slow-factor", dr_slow, "secondary replay speed factor");
  dr->add_flag("--no-throttle", dr_no_throttle, "disable the drift throttle");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*rec) {
      Program prog = assemble(read_file(rec_program));
      RecordRunOptions opt;
      opt.disk_mode = parse_mode(rec_mode);
      opt.timer_ms = rec_timer;
      if (rec_steps > 0) opt.steps = rec_steps;
      if (rec_duration > 0) opt.duration_ms = static_cast<uint64_t>(rec_duration * 1000);
      if (!opt.steps && !opt.duration_ms) opt.duration_ms = 1000;
      if (!rec_disk_image.empty()) opt.disk_image = DiskImage::load(rec_disk_image);
      RecordResult r = record_run(prog, opt);
      r.log.save(rec_log);
      if (!rec_snapshot.empty() && r.snapshot)
        DiskSnapshot::of(r.snapshot->base).save(rec_snapshot, rec_snapshot + ".overlay");
      std::cerr << "recorded " << r.log.frames.size() << " frames, " << r.stats.steps
                << " instructions, " << r.stats.branches << " branches, "
                << r.log.frame_bytes() << " log bytes" << (r.stuck ? " (guest stuck)" : "")
                << "\n";
      return r.stuck ? 1 : 0;
    }

    if (*rep) {
      Program prog = assemble(read_file(rep_program));
      Log log = Log::load(rep_log);
      std::optional<DiskSnapshot> snap;
      if (!rep_snapshot.empty())
        snap = DiskSnapshot::load(rep_snapshot, rep_snapshot + ".overlay");
      else if (!rep_disk_image.empty() && log.header.disk_mode == DiskMode::FullReplay)
        snap = DiskSnapshot::of(DiskImage::load(rep_disk_image));
      ReplayOutcome o = replay_run(log, prog, snap, GuestState{}, seed);
      std::cerr << "replayed " << o.stats.steps << " instructions ("
                << o.stats.single_steps << " single-stepped), " << o.stats.injections
                << " interrupts injected\n";
      if (!o.error.empty()) std::cerr << o.error << "\n";
      if (rep_verify) return o.verified ? 0 : kExitVerify;
      return o.ok ? 0 : kExitVerify;
    }

    if (*clu) {
      Scenario sc;
      sc.workload = clu_workload;
      sc.replicas = clu_replicas;
      sc.drift_max = clu_drift;
      sc.delayed_sends = clu_delayed;
      sc.heartbeat_ms = clu_heartbeat;
      sc.duration_ms = clu_duration * 1000;
      sc.kill_primary_at_ms = clu_kill >= 0 ? clu_kill * 1000 : -1;
      sc.branch_rate = clu_rate;
      sc.slow_factor = clu_slow;
      FailoverReport r = run_failover_experiment(sc, seed);
      if (!r.error.empty()) {
        std::cerr << r.error << "\n";
        return 1;
      }
      std::ostringstream os;
      os << "final_primary=" << r.cluster.final_primary << " promotions=" << r.promotions
         << " max_drift=" << r.max_drift << " end_verified=" << r.cluster.end_verified
         << " released_sends=" << r.released_sends << " discarded_sends=" << r.discarded_sends;
      if (r.detection_ms >= 0) os << " detection_ms=" << r.detection_ms;
      if (r.promotion_ms >= 0) os << " promotion_ms=" << r.promotion_ms;
      os << "\n";
      write_out(csv_path, os.str());
      return r.cluster.vm_lost ? 1 : 0;
    }

    if (*ben) {
      BenchResult r = bench(ben_workload, ben_reps, parse_mode(ben_mode), seed);
      std::ostringstream os;
      os << csv_header() << "\n";
      for (const auto& row : r.rows) os << row.csv() << "\n";
      write_out(csv_path, os.str());
      return r.ok ? 0 : kExitVerify;
    }

    if (*plan) {
      Topology t = Topology::load(sch_topo);
      std::vector<VmDemand> vms = load_vms(sch_vms);
      Placement p;
      try {
        p = place_all(t, vms, sch_replicas, PlaceWeights{});
      } catch (const InfeasibleError& e) {
        std::cerr << e.what() << "\n";
        return kExitInfeasible;
      }
      std::ostringstream os;
      os << "# rrvm-plan v1\nvm,primary,secondaries,storage_cost,stream_cost,branches,cost\n";
      for (const auto& vp : p.vms) {
        os << vp.vm << ',' << t.nodes[static_cast<std::size_t>(vp.primary)].name << ',';
        for (std::size_t i = 0; i < vp.secondaries.size(); ++i)
          os << (i ? ";" : "") << t.nodes[static_cast<std::size_t>(vp.secondaries[i])].name;
        os << ',' << vp.storage_cost << ',' << vp.stream_cost << ',' << vp.distinct_branches
           << ',' << vp.cost << "\n";
      }
      write_out(csv_path, os.str());
      return 0;
    }

    if (*fi) {
      Scenario sc;
      try {
        sc = load_scenario(fi_scenario);
      } catch (const ScenarioError& e) {
        std::cerr << e.what() << "\n";
        return kExitInfeasible;
      }
      FailoverReport r = run_failover_experiment(sc, seed);
      if (!r.error.empty()) {
        std::cerr << r.error << "\n";
        return 1;
      }
      std::ostringstream os;
      os << "promotions=" << r.promotions << " detection_ms=" << r.detection_ms
         << " promotion_ms=" << r.promotion_ms << " unresponsive_ms=" << r.unresponsive_window_ms
         << " median_rtt_ms=" << r.median_rtt_ms << " completed=" << (r.completed ? 1 : 0)
         << " regression=" << (r.regression_detected ? 1 : 0) << " max_drift=" << r.max_drift
         << "\n";
      write_out(csv_path, os.str());
      return 0;
    }

    if (*dr) {
      Program prog = assemble(get_workload(dr_workload).program_text);
      RecordRunOptions base;
      base.timer_ms = 5;
      ReplicaSetConfig cfg;
      cfg.n = 2;
      cfg.drift_max = dr_drift;
      cfg.branch_rate = dr_rate;
      cfg.throttle = !dr_no_throttle;
      cfg.ack_interval_ms = 5;
      cfg.timer_ms = 5;
      cfg.seed = seed;
      std::vector<SecondaryTuning> tun(2);
      tun[1].speed_factor = dr_slow;
      Cluster c(prog, base, cfg, tun);
      c.start();
      std::this_thread::sleep_for(std::chrono::duration<double>(dr_duration));
      c.stop();
      write_out(csv_path, drift_csv(c.report()));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

#include <string>
#include <vector>

#include "rrvm/netsim.hpp"
#include "rrvm/replication.hpp"
#include "rrvm/workloads.hpp"

namespace rrvm {

inline constexpr const char* kCsvSchema = "# rrvm-bench v1";

struct MetricsRow {
  std::string workload;
  std::string mode;  // baseline | record | replay | cluster | median
  double wall_ms = 0;
  uint64_t instructions = 0;
  uint64_t branches = 0;
  uint64_t log_bytes = 0;
  double bytes_per_sec = 0;
  double bytes_per_kinstr = 0;
  bool valid = true;
  std::string note;

  std::string csv() const;
};
std::string csv_header();

struct BenchResult {
  std::vector<MetricsRow> rows;
  bool ok = true;  // false on any replay digest mismatch
};

// Runs baseline, record and replay for one workload; one row per repetition
// plus a median row per mode. Replay rows are digest-verified.
BenchResult bench(const std::string& workload, int repetitions, DiskMode mode, uint64_t seed);

// Drift time series of a finished cluster run.
std::string drift_csv(const ClusterReport& rep);

struct FailoverReport {
  bool ran = false;
  double unresponsive_window_ms = 0;
  double detection_ms = -1;
  double promotion_ms = -1;
  int promotions = 0;
  bool regression_detected = false;
  bool completed = false;
  bool stalled = false;
  double median_rtt_ms = 0;
  double stream_wall_ms = 0;
  uint64_t released_sends = 0;
  uint64_t discarded_sends = 0;
  uint64_t max_drift = 0;
  ClusterReport cluster;
  std::string error;
};

// Drives netsim + replication from a scenario description.
FailoverReport run_failover_experiment(const Scenario& sc, uint64_t seed);

}  // namespace rrvm

#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rrvm {

// Tree of routers with host leaves plus one storage node. Distances are
// tree-path hop counts; a "branch" is the child-of-root subtree a node
// lives in.
struct TopoNode {
  std::string name;
  int parent = -1;  // -1: root
  bool is_host = false;
  bool is_storage = false;
  double capacity = 1.0;
  double util = 0.0;  // current utilization in [0, 1]
};

struct Topology {
  std::vector<TopoNode> nodes;
  int root = -1;
  int storage = -1;

  int index_of(const std::string& name) const;  // -1 if absent
  int dist(int a, int b) const;                 // hop count along the tree
  int branch_of(int node) const;                // child-of-root ancestor; root -> -1
  std::vector<int> hosts() const;

  // Text form, one node per line:
  //   router NAME [parent P]
  //   host NAME parent P capacity F util F
  //   storage NAME parent P
  static Topology parse(const std::string& text);
  static Topology load(const std::string& path);
};

struct VmDemand {
  std::string name;
  double demand = 0.1;
};
// Text form: `vm NAME demand F`, one per line.
std::vector<VmDemand> parse_vms(const std::string& text);
std::vector<VmDemand> load_vms(const std::string& path);

struct PlaceWeights {
  double alpha = 1.0;   // storage proximity
  double beta = 1.0;    // log-stream proximity
  double gamma = 0.5;   // branch-diversity reward
  double u_max = 0.7;
};

struct VmPlacement {
  std::string vm;
  double demand = 0;
  int primary = -1;
  std::vector<int> secondaries;
  double storage_cost = 0;
  double stream_cost = 0;
  int distinct_branches = 0;
  double cost = 0;

  std::vector<int> all_hosts() const;
};

struct Placement {
  std::vector<VmPlacement> vms;
};

struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Objective for a concrete assignment, same for greedy and brute force.
double placement_cost(const Topology& t, VmPlacement& p, const PlaceWeights& w);

// Greedy placement of one VM given current utilizations (indexed like
// t.nodes). Throws InfeasibleError("infeasible: k available") when fewer
// than n hosts fit.
VmPlacement place_replicas(const Topology& t, const std::vector<double>& util,
                           const std::string& vm, double demand, int n, const PlaceWeights& w);

// Places every VM in order, accumulating projected utilization.
Placement place_all(const Topology& t, const std::vector<VmDemand>& vms, int n,
                    const PlaceWeights& w);

struct Move {
  std::string vm;
  int from = -1;
  int to = -1;
};

struct RebalanceResult {
  Placement placement;
  std::vector<Move> moves;
  std::vector<std::string> degraded;  // "vm@host" replicas with no feasible target
};

// Moves replicas off hosts whose reported utilization reached u_max, keeping
// the other replicas of each VM fixed.
RebalanceResult rebalance(const Topology& t, const Placement& p,
                          const std::vector<double>& reported_util, const PlaceWeights& w);

// Independent hard-constraint check: distinct hosts per VM and projected
// utilization below u_max everywhere. Returns "" or a description.
std::string validate_placement(const Topology& t, const Placement& p, const PlaceWeights& w);

}  // namespace rrvm

#include "rrvm/scheduler.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace rrvm {

int Topology::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].name == name) return static_cast<int>(i);
  return -1;
}

int Topology::dist(int a, int b) const {
  // hop count via lowest common ancestor
  auto depth = [&](int n) {
    int d = 0;
    while (nodes[static_cast<std::size_t>(n)].parent >= 0) {
      n = nodes[static_cast<std::size_t>(n)].parent;
      ++d;
    }
    return d;
  };
  int da = depth(a), db = depth(b), hops = 0;
  while (da > db) { a = nodes[static_cast<std::size_t>(a)].parent; --da; ++hops; }
  while (db > da) { b = nodes[static_cast<std::size_t>(b)].parent; --db; ++hops; }
  while (a != b) {
    a = nodes[static_cast<std::size_t>(a)].parent;
    b = nodes[static_cast<std::size_t>(b)].parent;
    hops += 2;
  }
  return hops;
}

int Topology::branch_of(int node) const {
  if (node == root) return -1;
  while (nodes[static_cast<std::size_t>(node)].parent != root)
    node = nodes[static_cast<std::size_t>(node)].parent;
  return node;
}

std::vector<int> Topology::hosts() const {
  std::vector<int> h;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].is_host) h.push_back(static_cast<int>(i));
  return h;
}

namespace {

[[noreturn]] void parse_fail(int line, const std::string& what) {
  throw std::runtime_error("line " + std::to_string(line) + ": " + what);
}

std::vector<std::vector<std::string>> tokenize_lines(const std::string& text,
                                                     std::vector<int>& line_nos) {
  std::vector<std::vector<std::string>> out;
  std::istringstream is(text);
  std::string line;
  int no = 0;
  while (std::getline(is, line)) {
    ++no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::vector<std::string> toks;
    std::string t;
    while (ls >> t) toks.push_back(t);
    if (toks.empty()) continue;
    out.push_back(std::move(toks));
    line_nos.push_back(no);
  }
  return out;
}

}  // namespace

Topology Topology::parse(const std::string& text) {
  Topology t;
  std::vector<int> line_nos;
  auto lines = tokenize_lines(text, line_nos);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const auto& tk = lines[li];
    int no = line_nos[li];
    TopoNode n;
    std::size_t i = 2;
    if (tk[0] == "router") {
      if (tk.size() != 2 && tk.size() != 4) parse_fail(no, "router NAME [parent P]");
    } else if (tk[0] == "host") {
      if (tk.size() != 8) parse_fail(no, "host NAME parent P capacity F util F");
      n.is_host = true;
    } else if (tk[0] == "storage") {
      if (tk.size() != 4) parse_fail(no, "storage NAME parent P");
      n.is_storage = true;
    } else {
      parse_fail(no, "unknown node kind '" + tk[0] + "'");
    }
    n.name = tk[1];
    if (t.index_of(n.name) >= 0) parse_fail(no, "duplicate node '" + n.name + "'");
    while (i + 1 < tk.size()) {
      const std::string& key = tk[i];
      const std::string& val = tk[i + 1];
      if (key == "parent") {
        n.parent = t.index_of(val);
        if (n.parent < 0) parse_fail(no, "unknown parent '" + val + "'");
      } else if (key == "capacity" && n.is_host) {
        n.capacity = std::stod(val);
      } else if (key == "util" && n.is_host) {
        n.util = std::stod(val);
        if (n.util < 0 || n.util > 1) parse_fail(no, "util must be in [0, 1]");
      } else {
        parse_fail(no, "unknown attribute '" + key + "'");
      }
      i += 2;
    }
    if (n.parent < 0 && !n.is_host && !n.is_storage) {
      if (t.root >= 0) parse_fail(no, "second root '" + n.name + "'");
      t.root = static_cast<int>(t.nodes.size());
    } else if (n.parent < 0) {
      parse_fail(no, "'" + n.name + "' needs a parent");
    }
    if (n.is_storage) {
      if (t.storage >= 0) parse_fail(no, "second storage node '" + n.name + "'");
      t.storage = static_cast<int>(t.nodes.size());
    }
    t.nodes.push_back(std::move(n));
  }
  if (t.root < 0) throw std::runtime_error("topology has no root router");
  if (t.storage < 0) throw std::runtime_error("topology has no storage node");
  return t;
}

Topology Topology::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::vector<VmDemand> parse_vms(const std::string& text) {
  std::vector<VmDemand> vms;
  std::vector<int> line_nos;
  auto lines = tokenize_lines(text, line_nos);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const auto& tk = lines[li];
    if (tk.size() != 4 || tk[0] != "vm" || tk[2] != "demand")
      parse_fail(line_nos[li], "vm NAME demand F");
    double demand = std::stod(tk[3]);
    if (demand < 0 || demand > 1) parse_fail(line_nos[li], "demand must be in [0, 1]");
    vms.push_back(VmDemand{tk[1], demand});
  }
  return vms;
}

std::vector<VmDemand> load_vms(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_vms(ss.str());
}

std::vector<int> VmPlacement::all_hosts() const {
  std::vector<int> h{primary};
  h.insert(h.end(), secondaries.begin(), secondaries.end());
  return h;
}

double placement_cost(const Topology& t, VmPlacement& p, const PlaceWeights& w) {
  p.storage_cost = 0;
  p.stream_cost = 0;
  std::set<int> branches;
  for (int h : p.all_hosts()) {
    p.storage_cost += t.dist(h, t.storage);
    branches.insert(t.branch_of(h));
  }
  for (int s : p.secondaries) p.stream_cost += t.dist(p.primary, s);
  p.distinct_branches = static_cast<int>(branches.size());
  p.cost = w.alpha * p.storage_cost + w.beta * p.stream_cost - w.gamma * p.distinct_branches;
  return p.cost;
}

VmPlacement place_replicas(const Topology& t, const std::vector<double>& util,
                           const std::string& vm, double demand, int n, const PlaceWeights& w) {
  std::vector<int> feasible;
  for (int h : t.hosts())
    if (util[static_cast<std::size_t>(h)] + demand < w.u_max) feasible.push_back(h);
  if (static_cast<int>(feasible.size()) < n)
    throw InfeasibleError("infeasible: " + std::to_string(feasible.size()) + " available");

  // sort primaries cheapest-to-storage first so ties resolve toward the
  // intuitive pick; each candidate primary gets a greedy secondary round
  // picking the host with the lowest marginal cost (stream distance minus
  // the reward for reaching a new branch), and the cheapest total wins
  std::vector<int> by_storage = feasible;
  std::sort(by_storage.begin(), by_storage.end(), [&](int a, int b) {
    double ca = w.alpha * t.dist(a, t.storage);
    double cb = w.alpha * t.dist(b, t.storage);
    return ca != cb ? ca < cb : a < b;
  });
  std::optional<VmPlacement> best_p;
  for (int prim : by_storage) {
    VmPlacement p;
    p.vm = vm;
    p.demand = demand;
    p.primary = prim;
    std::set<int> used{prim};
    std::set<int> branches{t.branch_of(prim)};
    while (static_cast<int>(used.size()) < n) {
      int best = -1;
      double best_cost = 0;
      for (int h : feasible) {
        if (used.count(h)) continue;
        bool fresh = !branches.count(t.branch_of(h));
        double c = w.alpha * t.dist(h, t.storage) + w.beta * t.dist(prim, h) -
                   (fresh ? w.gamma : 0.0);
        if (best < 0 || c < best_cost || (c == best_cost && h < best)) {
          best = h;
          best_cost = c;
        }
      }
      used.insert(best);
      branches.insert(t.branch_of(best));
      p.secondaries.push_back(best);
    }
    placement_cost(t, p, w);
    if (!best_p || p.cost < best_p->cost) best_p = std::move(p);
  }
  return *best_p;
}

Placement place_all(const Topology& t, const std::vector<VmDemand>& vms, int n,
                    const PlaceWeights& w) {
  std::vector<double> util(t.nodes.size(), 0);
  for (std::size_t i = 0; i < t.nodes.size(); ++i) util[i] = t.nodes[i].util;
  Placement p;
  for (const auto& vm : vms) {
    VmPlacement one = place_replicas(t, util, vm.name, vm.demand, n, w);
    for (int h : one.all_hosts()) util[static_cast<std::size_t>(h)] += vm.demand;
    p.vms.push_back(std::move(one));
  }
  return p;
}

RebalanceResult rebalance(const Topology& t, const Placement& p,
                          const std::vector<double>& reported_util, const PlaceWeights& w) {
  RebalanceResult res;
  res.placement = p;
  // projected utilization: reported host load plus demands of replicas we keep
  std::vector<double> util = reported_util;
  auto overloaded = [&](int h) {
    return reported_util[static_cast<std::size_t>(h)] >= w.u_max;
  };
  for (auto& vmp : res.placement.vms) {
    std::vector<int> hosts = vmp.all_hosts();
    std::set<int> kept;
    for (int h : hosts)
      if (!overloaded(h)) kept.insert(h);
    for (std::size_t ri = 0; ri < hosts.size(); ++ri) {
      int from = hosts[ri];
      if (!overloaded(from)) continue;
      // cheapest feasible replacement preserving distinctness
      int best = -1;
      double best_cost = 0;
      for (int h : t.hosts()) {
        if (kept.count(h) || overloaded(h)) continue;
        if (util[static_cast<std::size_t>(h)] + vmp.demand >= w.u_max) continue;
        double c = ri == 0 ? w.alpha * t.dist(h, t.storage) : w.beta * t.dist(vmp.primary, h);
        if (best < 0 || c < best_cost || (c == best_cost && h < best)) {
          best = h;
          best_cost = c;
        }
      }
      if (best < 0) {
        res.degraded.push_back(vmp.vm + "@" + t.nodes[static_cast<std::size_t>(from)].name);
        kept.insert(from);  // stays put, still counts toward distinctness
        continue;
      }
      res.moves.push_back(Move{vmp.vm, from, best});
      kept.insert(best);
      util[static_cast<std::size_t>(best)] += vmp.demand;
      if (ri == 0)
        vmp.primary = best;
      else
        vmp.secondaries[ri - 1] = best;
    }
    placement_cost(t, vmp, w);
  }
  return res;
}

std::string validate_placement(const Topology& t, const Placement& p, const PlaceWeights& w) {
  std::vector<double> util(t.nodes.size(), 0);
  for (std::size_t i = 0; i < t.nodes.size(); ++i) util[i] = t.nodes[i].util;
  for (const auto& vmp : p.vms) {
    std::set<int> seen;
    for (int h : vmp.all_hosts()) {
      if (h < 0 || h >= static_cast<int>(t.nodes.size()) ||
          !t.nodes[static_cast<std::size_t>(h)].is_host)
        return vmp.vm + ": replica on non-host node";
      if (!seen.insert(h).second)
        return vmp.vm + ": duplicate host " + t.nodes[static_cast<std::size_t>(h)].name;
      util[static_cast<std::size_t>(h)] += vmp.demand;
    }
  }
  for (std::size_t i = 0; i < util.size(); ++i)
    if (t.nodes[i].is_host && util[i] >= w.u_max)
      return t.nodes[i].name + ": projected utilization " + std::to_string(util[i]) +
             " >= " + std::to_string(w.u_max);
  return "";
}

}  // namespace rrvm

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "rrvm/netsim.hpp"
#include "rrvm/scheduler.hpp"
#include "rrvm/workloads.hpp"

using namespace rrvm;

namespace {

std::string fixture(const std::string& name) {
  std::string path = std::string(RRVM_SOURCE_DIR) + "/fixtures/" + name;
  std::ifstream is(path);
  REQUIRE_MESSAGE(bool(is), "missing fixture ", path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("checked-in programs match the embedded workload texts") {
  for (const auto& n : workload_names()) {
    CAPTURE(n);
    CHECK(fixture(n + ".rr") == get_workload(n).program_text);
  }
  CHECK(fixture("ping_responder.rr") == ping_responder_program());
  CHECK(fixture("stream_sender.rr") == stream_sender_program());
}

TEST_CASE("every checked-in program assembles") {
  for (const auto& n : workload_names()) CHECK_NOTHROW(assemble(fixture(n + ".rr")));
  CHECK_NOTHROW(assemble(fixture("ping_responder.rr")));
  CHECK_NOTHROW(assemble(fixture("stream_sender.rr")));
}

TEST_CASE("example scenario file parses") {
  Scenario sc = parse_scenario(fixture("failover.scenario"));
  CHECK(sc.workload == "streamcopy");
  CHECK(sc.delayed_sends);
  CHECK(sc.kill_primary_at_ms == doctest::Approx(1000));
  CHECK(sc.client == Scenario::Client::Stream);
  CHECK(sc.stream_target_seq == 500);
}

TEST_CASE("example topology and vm files parse and place") {
  Topology t = Topology::parse(fixture("smallsite.topology"));
  auto vms = parse_vms(fixture("smallsite.vms"));
  Placement p = place_all(t, vms, 2, PlaceWeights{});
  CHECK(validate_placement(t, p, PlaceWeights{}).empty());
}

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rrvm/log.hpp"
#include "rrvm/machine.hpp"
#include "rrvm/metrics.hpp"
#include "rrvm/netsim.hpp"
#include "rrvm/recorder.hpp"
#include "rrvm/replayer.hpp"
#include "rrvm/scheduler.hpp"
#include "rrvm/workloads.hpp"

namespace py = pybind11;
using namespace rrvm;

namespace {

std::vector<uint8_t> to_bytes(py::bytes b) {
  std::string s = b;
  return std::vector<uint8_t>(s.begin(), s.end());
}

py::bytes from_bytes(const std::vector<uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

}  // namespace

PYBIND11_MODULE(_rrvm, m) {
  m.doc() = "record/replay virtual machine core";

  m.attr("MEM_WORDS") = kMemWords;
  m.attr("NUM_REGS") = kNumRegs;
  m.attr("BLOCK_BYTES") = kBlockBytes;
  m.attr("MAX_PAYLOAD") = kMaxPayload;
  m.attr("FRAME_OVERHEAD") = kFrameOverhead;
  m.attr("HEADER_BYTES") = kHeaderBytes;

  m.def("fnv1a64", [](py::bytes b) {
    std::string s = b;
    return fnv1a64(reinterpret_cast<const uint8_t*>(s.data()), s.size());
  });
  m.def("crc32", [](py::bytes b, uint32_t seed) {
    std::string s = b;
    return crc32(reinterpret_cast<const uint8_t*>(s.data()), s.size(), seed);
  }, py::arg("data"), py::arg("seed") = 0);

  py::register_exception<AsmError>(m, "AsmError");
  py::register_exception<ScenarioError>(m, "ScenarioError");
  py::register_exception<InfeasibleError>(m, "InfeasibleError");

  py::class_<Program>(m, "Program")
      .def_readonly("hash", &Program::hash)
      .def("__len__", &Program::size);
  m.def("assemble", [](const std::string& text) { return assemble(text); });
  m.def("to_text", &to_text);

  py::class_<Epoch>(m, "Epoch")
      .def(py::init<>())
      .def(py::init([](uint64_t nb, uint64_t ip, uint64_t cnt) {
        return Epoch{nb, ip, cnt};
      }), py::arg("nbranches") = 0, py::arg("ip") = 0, py::arg("cnt") = 0)
      .def_readwrite("nbranches", &Epoch::nbranches)
      .def_readwrite("ip", &Epoch::ip)
      .def_readwrite("cnt", &Epoch::cnt)
      .def("__eq__", [](const Epoch& a, const Epoch& b) { return a == b; })
      .def("__repr__", &Epoch::str);

  py::class_<GuestState>(m, "GuestState")
      .def(py::init<>())
      .def_readwrite("ip", &GuestState::ip)
      .def_readwrite("cnt", &GuestState::cnt)
      .def_readwrite("nbranches", &GuestState::nbranches)
      .def_readwrite("halted", &GuestState::halted)
      .def_readwrite("waiting", &GuestState::waiting)
      .def_property("regs",
          [](const GuestState& s) { return std::vector<uint64_t>(s.regs.begin(), s.regs.end()); },
          [](GuestState& s, const std::vector<uint64_t>& v) {
            if (v.size() != kNumRegs) throw std::invalid_argument("need 8 registers");
            std::copy(v.begin(), v.end(), s.regs.begin());
          })
      .def("mem", [](const GuestState& s, std::size_t addr) {
        if (addr >= kMemWords) throw std::out_of_range("address");
        return s.mem[addr];
      })
      .def("digest", &GuestState::digest)
      .def("epoch", [](const GuestState& s) { return epoch_of(s); })
      .def("__eq__", [](const GuestState& a, const GuestState& b) { return a == b; });

  py::enum_<FrameKind>(m, "FrameKind")
      .value("ND_VALUE", FrameKind::NdValue)
      .value("INTERRUPT", FrameKind::Interrupt)
      .value("NET_RX", FrameKind::NetRx)
      .value("DISK_READ", FrameKind::DiskRead)
      .value("SNAPSHOT_REF", FrameKind::SnapshotRef)
      .value("END", FrameKind::End);

  py::enum_<DiskMode>(m, "DiskMode")
      .value("FULL_REPLAY", DiskMode::FullReplay)
      .value("OUTPUT_REPLAY", DiskMode::OutputReplay);

  py::class_<LogFrame>(m, "LogFrame")
      .def(py::init<>())
      .def_readwrite("lsn", &LogFrame::lsn)
      .def_readwrite("kind", &LogFrame::kind)
      .def_readwrite("epoch", &LogFrame::epoch)
      .def_property("payload",
          [](const LogFrame& f) { return from_bytes(f.payload); },
          [](LogFrame& f, py::bytes b) { f.payload = to_bytes(b); })
      .def("__eq__", [](const LogFrame& a, const LogFrame& b) { return a == b; });

  m.def("encode_frame", [](const LogFrame& f) { return from_bytes(encode_frame(f)); });
  m.def("decode_frame", [](py::bytes b) {
    auto v = to_bytes(b);
    DecodeResult r = decode_frame(v.data(), v.size());
    return py::make_tuple(r.frame ? py::cast(*r.frame) : py::none(), r.consumed, r.error,
                          r.truncated);
  }, "Returns (frame_or_None, consumed, error, truncated).");

  py::class_<LogHeader>(m, "LogHeader")
      .def(py::init<>())
      .def_readwrite("version", &LogHeader::version)
      .def_readwrite("disk_mode", &LogHeader::disk_mode)
      .def_readwrite("program_hash", &LogHeader::program_hash)
      .def_readwrite("init_digest", &LogHeader::init_digest);

  py::class_<Log>(m, "Log")
      .def(py::init<>())
      .def_readwrite("header", &Log::header)
      .def_readwrite("frames", &Log::frames)
      .def("frame_bytes", &Log::frame_bytes)
      .def("payload_bytes", &Log::payload_bytes)
      .def("has_end", &Log::has_end)
      .def("serialize", [](const Log& l) { return from_bytes(l.serialize()); })
      .def("save", &Log::save)
      .def_static("load", &Log::load)
      .def_static("parse", [](py::bytes b) {
        auto v = to_bytes(b);
        return Log::parse(v.data(), v.size());
      })
      .def("validate", &Log::validate);

  py::class_<DiskImage>(m, "DiskImage")
      .def_static("zeroed", &DiskImage::zeroed)
      .def_static("load", &DiskImage::load)
      .def("save", &DiskImage::save)
      .def("nblocks", &DiskImage::nblocks)
      .def("digest", &DiskImage::digest)
      .def("__eq__", [](const DiskImage& a, const DiskImage& b) { return a == b; });

  py::class_<DiskSnapshot>(m, "DiskSnapshot")
      .def_static("of", &DiskSnapshot::of)
      .def("materialize", &DiskSnapshot::materialize)
      .def("base_digest", &DiskSnapshot::base_digest)
      .def("save", &DiskSnapshot::save)
      .def_static("load", &DiskSnapshot::load);

  m.def("prefilled_image", &prefilled_image);

  py::class_<RecordStats>(m, "RecordStats")
      .def_readonly("steps", &RecordStats::steps)
      .def_readonly("branches", &RecordStats::branches)
      .def_readonly("delivered_interrupts", &RecordStats::delivered_interrupts)
      .def_readonly("rx_frames", &RecordStats::rx_frames)
      .def_readonly("tx_frames", &RecordStats::tx_frames)
      .def_readonly("wall_ms", &RecordStats::wall_ms);

  py::class_<RecordRunOptions>(m, "RecordRunOptions")
      .def(py::init<>())
      .def_readwrite("disk_mode", &RecordRunOptions::disk_mode)
      .def_readwrite("timer_ms", &RecordRunOptions::timer_ms)
      .def_readwrite("steps", &RecordRunOptions::steps)
      .def_readwrite("duration_ms", &RecordRunOptions::duration_ms)
      .def_readwrite("disk_image", &RecordRunOptions::disk_image)
      .def_readwrite("initial_state", &RecordRunOptions::initial_state);

  py::class_<RecordResult>(m, "RecordResult")
      .def_readonly("log", &RecordResult::log)
      .def_readonly("final_state", &RecordResult::final_state)
      .def_readonly("final_image", &RecordResult::final_image)
      .def_readonly("snapshot", &RecordResult::snapshot)
      .def_readonly("stats", &RecordResult::stats)
      .def_readonly("stuck", &RecordResult::stuck);

  m.def("record_run", &record_run, py::arg("prog"), py::arg("options"),
        py::call_guard<py::gil_scoped_release>());

  py::class_<BaselineResult>(m, "BaselineResult")
      .def_readonly("final_state", &BaselineResult::final_state)
      .def_readonly("stats", &BaselineResult::stats);
  m.def("baseline_run", &baseline_run, py::arg("prog"), py::arg("options"),
        py::call_guard<py::gil_scoped_release>());

  py::class_<ReplayStats>(m, "ReplayStats")
      .def_readonly("steps", &ReplayStats::steps)
      .def_readonly("single_steps", &ReplayStats::single_steps)
      .def_readonly("injections", &ReplayStats::injections)
      .def_readonly("wall_ms", &ReplayStats::wall_ms);

  py::class_<ReplayOutcome>(m, "ReplayOutcome")
      .def_readonly("ok", &ReplayOutcome::ok)
      .def_readonly("verified", &ReplayOutcome::verified)
      .def_readonly("error", &ReplayOutcome::error)
      .def_readonly("final_state", &ReplayOutcome::final_state)
      .def_readonly("replay_disk_image", &ReplayOutcome::replay_disk_image)
      .def_readonly("stats", &ReplayOutcome::stats);

  m.def("replay_run", &replay_run, py::arg("log"), py::arg("prog"),
        py::arg("snapshot") = std::nullopt, py::arg("initial_state") = GuestState{},
        py::arg("seed") = 1, py::call_guard<py::gil_scoped_release>());

  py::class_<Workload>(m, "Workload")
      .def_readonly("name", &Workload::name)
      .def_readonly("program_text", &Workload::program_text)
      .def_readonly("timer_ms", &Workload::timer_ms)
      .def_readonly("steps", &Workload::steps)
      .def_readonly("duration_ms", &Workload::duration_ms)
      .def_readonly("disk_blocks", &Workload::disk_blocks)
      .def_readonly("disk_prefill", &Workload::disk_prefill);

  m.def("workload_names", [] { return workload_names(); });
  m.def("get_workload", &get_workload, py::return_value_policy::reference);
  m.def("workload_record_options", &workload_record_options);
  m.def("ping_responder_program", &ping_responder_program);
  m.def("stream_sender_program", &stream_sender_program);

  py::class_<PlaceWeights>(m, "PlaceWeights")
      .def(py::init<>())
      .def_readwrite("alpha", &PlaceWeights::alpha)
      .def_readwrite("beta", &PlaceWeights::beta)
      .def_readwrite("gamma", &PlaceWeights::gamma)
      .def_readwrite("u_max", &PlaceWeights::u_max);

  py::class_<Topology>(m, "Topology")
      .def_static("parse", &Topology::parse)
      .def_static("load", &Topology::load)
      .def("index_of", &Topology::index_of)
      .def("dist", &Topology::dist)
      .def("branch_of", &Topology::branch_of)
      .def("hosts", &Topology::hosts)
      .def("node_name", [](const Topology& t, int i) { return t.nodes.at(i).name; })
      .def("__len__", [](const Topology& t) { return t.nodes.size(); });

  py::class_<VmDemand>(m, "VmDemand")
      .def(py::init([](std::string name, double demand) {
        return VmDemand{std::move(name), demand};
      }), py::arg("name"), py::arg("demand"))
      .def_readwrite("name", &VmDemand::name)
      .def_readwrite("demand", &VmDemand::demand);
  m.def("parse_vms", &parse_vms);

  py::class_<VmPlacement>(m, "VmPlacement")
      .def_readonly("vm", &VmPlacement::vm)
      .def_readonly("demand", &VmPlacement::demand)
      .def_readonly("primary", &VmPlacement::primary)
      .def_readonly("secondaries", &VmPlacement::secondaries)
      .def_readonly("storage_cost", &VmPlacement::storage_cost)
      .def_readonly("stream_cost", &VmPlacement::stream_cost)
      .def_readonly("distinct_branches", &VmPlacement::distinct_branches)
      .def_readonly("cost", &VmPlacement::cost);

  py::class_<Placement>(m, "Placement")
      .def_readonly("vms", &Placement::vms);

  m.def("place_replicas", &place_replicas, py::arg("topology"), py::arg("util"),
        py::arg("vm"), py::arg("demand"), py::arg("n"), py::arg("weights") = PlaceWeights{});
  m.def("place_all", &place_all, py::arg("topology"), py::arg("vms"), py::arg("n"),
        py::arg("weights") = PlaceWeights{});
  m.def("validate_placement", &validate_placement, py::arg("topology"), py::arg("placement"),
        py::arg("weights") = PlaceWeights{});

  m.attr("CSV_SCHEMA") = kCsvSchema;
  py::class_<MetricsRow>(m, "MetricsRow")
      .def_readonly("workload", &MetricsRow::workload)
      .def_readonly("mode", &MetricsRow::mode)
      .def_readonly("wall_ms", &MetricsRow::wall_ms)
      .def_readonly("instructions", &MetricsRow::instructions)
      .def_readonly("branches", &MetricsRow::branches)
      .def_readonly("log_bytes", &MetricsRow::log_bytes)
      .def_readonly("bytes_per_sec", &MetricsRow::bytes_per_sec)
      .def_readonly("bytes_per_kinstr", &MetricsRow::bytes_per_kinstr)
      .def_readonly("valid", &MetricsRow::valid)
      .def_readonly("note", &MetricsRow::note)
      .def("csv", &MetricsRow::csv);
  m.def("csv_header", &csv_header);

  py::class_<BenchResult>(m, "BenchResult")
      .def_readonly("rows", &BenchResult::rows)
      .def_readonly("ok", &BenchResult::ok);
  m.def("bench", &bench, py::arg("workload"), py::arg("repetitions"), py::arg("mode"),
        py::arg("seed"), py::call_guard<py::gil_scoped_release>());

  py::class_<Scenario> scenario(m, "Scenario");
  py::enum_<Scenario::Client>(scenario, "Client")
      .value("NONE", Scenario::Client::None)
      .value("PING", Scenario::Client::Ping)
      .value("STREAM", Scenario::Client::Stream);
  scenario.def(py::init<>())
      .def_readwrite("workload", &Scenario::workload)
      .def_readwrite("replicas", &Scenario::replicas)
      .def_readwrite("heartbeat_ms", &Scenario::heartbeat_ms)
      .def_readwrite("miss_threshold", &Scenario::miss_threshold)
      .def_readwrite("delayed_sends", &Scenario::delayed_sends)
      .def_readwrite("drift_max", &Scenario::drift_max)
      .def_readwrite("lag_branches", &Scenario::lag_branches)
      .def_readwrite("slow_factor", &Scenario::slow_factor)
      .def_readwrite("branch_rate", &Scenario::branch_rate)
      .def_readwrite("latency_ms", &Scenario::latency_ms)
      .def_readwrite("ack_interval_ms", &Scenario::ack_interval_ms)
      .def_readwrite("timer_ms", &Scenario::timer_ms)
      .def_readwrite("kill_primary_at_ms", &Scenario::kill_primary_at_ms)
      .def_readwrite("client", &Scenario::client)
      .def_readwrite("ping_count", &Scenario::ping_count)
      .def_readwrite("ping_interval_ms", &Scenario::ping_interval_ms)
      .def_readwrite("stream_target_seq", &Scenario::stream_target_seq)
      .def_readwrite("duration_ms", &Scenario::duration_ms)
      .def_readwrite("quantum_branches", &Scenario::quantum_branches);
  m.def("parse_scenario", &parse_scenario);
  m.def("load_scenario", &load_scenario);

  py::class_<FailoverReport>(m, "FailoverReport")
      .def_readonly("ran", &FailoverReport::ran)
      .def_readonly("unresponsive_window_ms", &FailoverReport::unresponsive_window_ms)
      .def_readonly("detection_ms", &FailoverReport::detection_ms)
      .def_readonly("promotion_ms", &FailoverReport::promotion_ms)
      .def_readonly("promotions", &FailoverReport::promotions)
      .def_readonly("regression_detected", &FailoverReport::regression_detected)
      .def_readonly("completed", &FailoverReport::completed)
      .def_readonly("stalled", &FailoverReport::stalled)
      .def_readonly("median_rtt_ms", &FailoverReport::median_rtt_ms)
      .def_readonly("stream_wall_ms", &FailoverReport::stream_wall_ms)
      .def_readonly("released_sends", &FailoverReport::released_sends)
      .def_readonly("discarded_sends", &FailoverReport::discarded_sends)
      .def_readonly("max_drift", &FailoverReport::max_drift)
      .def_readonly("error", &FailoverReport::error);
  m.def("run_failover_experiment", &run_failover_experiment, py::arg("scenario"), py::arg("seed"),
        py::call_guard<py::gil_scoped_release>());
}

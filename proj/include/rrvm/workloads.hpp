#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rrvm/recorder.hpp"

namespace rrvm {

// Named benchmark fixtures written in the guest ISA. The same texts are
// checked in under fixtures/ for use with `rrvm record --program`.
struct Workload {
  std::string name;
  std::string program_text;
  uint32_t timer_ms = 10;
  std::optional<uint64_t> steps;
  std::optional<uint64_t> duration_ms;
  std::size_t disk_blocks = 16;
  bool disk_prefill = false;  // deterministic pattern in the source blocks
};

const std::vector<std::string>& workload_names();
const Workload& get_workload(const std::string& name);  // throws on unknown name

// Builds the record-run options for a workload (disk image included).
RecordRunOptions workload_record_options(const Workload& w, DiskMode mode);

// Deterministic source pattern over the first half of the image.
DiskImage prefilled_image(std::size_t nblocks);

// Standalone guest programs used by the network experiments.
std::string ping_responder_program();
std::string stream_sender_program();

}  // namespace rrvm

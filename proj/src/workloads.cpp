#include "rrvm/workloads.hpp"

#include <stdexcept>

namespace rrvm {

namespace {

// Shared prologue: the store loop writes mem[0..7] = 1, pointing every
// interrupt vector at the bare IRET at address 1. Workload body starts at 10.
const char* kPrologue =
    "JMP 2\n"
    "IRET\n"
    "MOVI r0, 1\n"
    "MOVI r1, 0\n"
    "MOVI r7, 1\n"
    "MOVI r2, 8\n"
    "STORE r1, r0\n"
    "ADD r1, r1, r7\n"
    "SUB r3, r2, r1\n"
    "JNZ r3, 6\n";

std::string with_prologue(const char* body) { return std::string(kPrologue) + body; }

const char* kEmptyloopBody =
    "ADD r4, r4, r7\n"
    "ADD r5, r5, r7\n"
    "JMP 10\n";

const char* kSleeploopBody =
    "WAIT\n"
    "JMP 10\n";

// Copies blocks 0..255 to 256..511 using 32-block commands: 8 reads and
// 8 writes move the full 1 MiB through a 4-block guest buffer window.
const char* kDiskcopyBody =
    "MOVI r0, 0\n"     // 10: src block
    "MOVI r1, 256\n"   // 11: dst block
    "MOVI r2, 8\n"     // 12: chunks left
    "MOVI r3, 1024\n"  // 13: buffer word address
    "MOVI r6, 32\n"    // 14: blocks per chunk
    "OUT 0, r0\n"      // 15: read chunk
    "OUT 1, r3\n"
    "MOVI r4, 64\n"    // 17: count 32, dir read
    "OUT 2, r4\n"
    "OUT 3, r4\n"
    "OUT 0, r1\n"      // 20: write chunk
    "OUT 1, r3\n"
    "MOVI r4, 65\n"    // 22: count 32, dir write
    "OUT 2, r4\n"
    "OUT 3, r4\n"
    "ADD r0, r0, r6\n"
    "ADD r1, r1, r6\n"
    "SUB r2, r2, r7\n"
    "JNZ r2, 15\n"
    "HALT\n";

// Drains every rx frame from the nic interrupt handler, summing bytes.
const char* kNetrxBody =
    "MOVI r0, 14\n"   // 10: nic vector 1 -> handler at 14
    "MOVI r1, 1\n"
    "STORE r1, r0\n"  // mem[1] = 14
    "JMP 22\n"
    "IN r0, 5\n"      // 14: bytes left in head frame
    "JNZ r0, 17\n"
    "IRET\n"
    "IN r1, 4\n"      // 17: pull a byte
    "ADD r6, r6, r1\n"
    "SUB r0, r0, r7\n"
    "JNZ r0, 17\n"
    "JMP 14\n"
    "WAIT\n"          // 22: idle between frames
    "JMP 22\n";

// Emits 2-byte big-endian sequence numbers as outbound frames, with a
// short busy-wait between frames to pace emission.
const char* kStreamBody =
    "MOVI r4, 0\n"    // 10: seq hi
    "MOVI r5, 0\n"    // 11: seq lo
    "MOVI r3, 256\n"  // 12: lo wrap
    "ADD r5, r5, r7\n" // 13: ++seq
    "SUB r2, r5, r3\n"
    "JNZ r2, 18\n"
    "MOVI r5, 0\n"
    "ADD r4, r4, r7\n"
    "OUT 4, r4\n"     // 18: frame = hi, lo
    "OUT 4, r5\n"
    "OUT 5, r2\n"
    "MOVI r2, 40\n"   // 21: pacing loop
    "SUB r2, r2, r7\n"
    "JNZ r2, 22\n"
    "JMP 13\n";

// Echoes each rx frame back out from the nic interrupt handler.
const char* kPingBody =
    "MOVI r0, 14\n"
    "MOVI r1, 1\n"
    "STORE r1, r0\n"
    "JMP 23\n"
    "IN r0, 5\n"      // 14: bytes left
    "JNZ r0, 17\n"
    "IRET\n"
    "IN r1, 4\n"      // 17: echo byte
    "OUT 4, r1\n"
    "SUB r0, r0, r7\n"
    "JNZ r0, 17\n"
    "OUT 5, r0\n"     // 21: flush echo frame
    "JMP 14\n"
    "ADD r6, r6, r7\n"  // 23: spin so branches (and thus drift) accrue
    "JMP 23\n";

std::vector<Workload> make_workloads() {
  std::vector<Workload> ws;
  {
    Workload w;
    w.name = "emptyloop";
    w.program_text = with_prologue(kEmptyloopBody);
    w.timer_ms = 10;
    w.steps = 1'000'000;
    ws.push_back(w);
  }
  {
    Workload w;
    w.name = "sleeploop";
    w.program_text = with_prologue(kSleeploopBody);
    w.timer_ms = 10;
    w.duration_ms = 500;
    ws.push_back(w);
  }
  {
    Workload w;
    w.name = "diskcopy";
    w.program_text = with_prologue(kDiskcopyBody);
    w.timer_ms = 0;  // runs to HALT with no timer traffic
    w.disk_blocks = 512;
    w.disk_prefill = true;
    ws.push_back(w);
  }
  {
    Workload w;
    w.name = "netrx";
    w.program_text = with_prologue(kNetrxBody);
    w.timer_ms = 10;
    w.duration_ms = 500;
    ws.push_back(w);
  }
  {
    Workload w;
    w.name = "nettx";
    w.program_text = with_prologue(kStreamBody);
    w.timer_ms = 10;
    w.steps = 500'000;
    ws.push_back(w);
  }
  {
    Workload w;
    w.name = "streamcopy";
    w.program_text = with_prologue(kStreamBody);
    w.timer_ms = 10;
    w.steps = 500'000;
    ws.push_back(w);
  }
  return ws;
}

const std::vector<Workload>& all_workloads() {
  static const std::vector<Workload> ws = make_workloads();
  return ws;
}

}  // namespace

const std::vector<std::string>& workload_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& w : all_workloads()) n.push_back(w.name);
    return n;
  }();
  return names;
}

const Workload& get_workload(const std::string& name) {
  for (const auto& w : all_workloads())
    if (w.name == name) return w;
  throw std::runtime_error("unknown workload '" + name + "'");
}

DiskImage prefilled_image(std::size_t nblocks) {
  DiskImage img = DiskImage::zeroed(nblocks);
  std::size_t half = nblocks / 2;
  for (std::size_t b = 0; b < half; ++b) {
    uint8_t* p = img.block(b);
    for (std::size_t j = 0; j < kBlockBytes; ++j)
      p[j] = static_cast<uint8_t>((b * 7 + j * 13 + 1) & 0xff);
  }
  return img;
}

RecordRunOptions workload_record_options(const Workload& w, DiskMode mode) {
  RecordRunOptions opt;
  opt.disk_mode = mode;
  opt.timer_ms = w.timer_ms;
  opt.steps = w.steps;
  opt.duration_ms = w.duration_ms;
  opt.disk_image = w.disk_prefill ? prefilled_image(w.disk_blocks) : DiskImage::zeroed(w.disk_blocks);
  return opt;
}

std::string ping_responder_program() { return with_prologue(kPingBody); }
std::string stream_sender_program() { return with_prologue(kStreamBody); }

}  // namespace rrvm

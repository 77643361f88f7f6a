#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rrvm {

inline constexpr std::size_t kMemWords = 65536;
inline constexpr std::size_t kNumRegs = 8;
inline constexpr std::size_t kNumVectors = 8;

// Pseudo-port used for RDTSC results; real device ports are 0..7.
inline constexpr uint16_t kTscPort = 0xffff;

// Register index 8 names the repeat counter in MOVI.
inline constexpr uint8_t kCntReg = 8;

enum class Opcode : uint8_t {
  Add,
  Sub,
  Movi,
  Load,
  Store,
  Jmp,
  Jnz,
  RepStore,
  Rdtsc,
  In,
  Out,
  Wait,
  Iret,
  Halt,
};

struct Instruction {
  Opcode op = Opcode::Halt;
  uint8_t a = 0;
  uint8_t b = 0;
  uint8_t c = 0;
  uint64_t imm = 0;
};

struct AsmError : std::runtime_error {
  int line;
  AsmError(int line_, const std::string& what)
      : std::runtime_error("line " + std::to_string(line_) + ": " + what), line(line_) {}
};

struct Program {
  std::vector<Instruction> code;
  uint64_t hash = 0;  // fnv1a64 over the canonical text

  std::size_t size() const { return code.size(); }
};

// One instruction per line, "OPCODE operands" with decimal operands, '#'
// comments. Instruction line k maps to code address k.
Program assemble(std::string_view text);
std::string to_text(const Program& prog);

struct Epoch {
  uint64_t nbranches = 0;
  uint64_t ip = 0;
  uint64_t cnt = 0;

  auto operator<=>(const Epoch&) const = default;
  std::string str() const;
};

struct GuestState {
  std::array<uint64_t, kNumRegs> regs{};
  uint64_t ip = 0;
  uint64_t cnt = 0;
  uint64_t nbranches = 0;
  uint64_t isave = 0;
  bool intr_enabled = true;
  bool halted = false;
  bool waiting = false;
  std::vector<uint64_t> mem = std::vector<uint64_t>(kMemWords, 0);

  uint64_t digest() const;  // fnv1a64 over registers + flags + memory
  bool operator==(const GuestState&) const = default;
};

inline Epoch epoch_of(const GuestState& s) { return Epoch{s.nbranches, s.ip, s.cnt}; }

struct StepEvent {
  enum class Kind : uint8_t { None, NdRead, DeviceOut, Halted, EnteredWait, Fault };
  Kind kind = Kind::None;
  uint16_t port = 0;   // NdRead / DeviceOut
  uint64_t value = 0;  // NdRead result / DeviceOut operand

  bool is_nd() const { return kind == Kind::NdRead; }
};

// Supplies results for RDTSC (port kTscPort) and IN. The guest state passed
// in is the pre-step state of the consuming instruction.
class NdProvider {
 public:
  virtual ~NdProvider() = default;
  virtual uint64_t nd_value(uint16_t port, const GuestState& pre) = 0;
};

// Executes one instruction. No-op when halted. The caller is responsible for
// not stepping a waiting guest.
StepEvent step(GuestState& s, const Program& prog, NdProvider& nd);

// Returns false (state unchanged) when the vector is out of range or
// interrupts are disabled; the caller keeps the interrupt pending.
bool deliver_interrupt(GuestState& s, uint8_t vector);

struct StopCondition {
  enum class Kind { Steps, EpochReached, Halted };
  Kind kind = Kind::Halted;
  uint64_t steps = 0;
  Epoch epoch{};

  static StopCondition after_steps(uint64_t n) { return {Kind::Steps, n, {}}; }
  static StopCondition at_epoch(Epoch e) { return {Kind::EpochReached, 0, e}; }
  static StopCondition until_halt() { return {Kind::Halted, 0, {}}; }
};

struct RunResult {
  std::vector<StepEvent> trace;
  uint64_t steps = 0;
  bool stopped_waiting = false;  // guest entered WAIT with no interrupt source
};

struct EpochInPast : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Batch driver over step(). Stops on the condition, on halt, or when the
// guest enters WAIT (this driver has no interrupt source). Throws
// EpochInPast if the stop epoch is already behind the guest.
RunResult run_until(GuestState& s, const Program& prog, NdProvider& nd, const StopCondition& stop);

uint64_t fnv1a64(const uint8_t* data, std::size_t len);
uint64_t fnv1a64(std::string_view sv);

}  // namespace rrvm

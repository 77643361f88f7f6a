#include "rrvm/guest.hpp"

#include <cctype>
#include <cstring>
#include <sstream>

namespace rrvm {

uint64_t fnv1a64(const uint8_t* data, std::size_t len) {
  uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t fnv1a64(std::string_view sv) {
  return fnv1a64(reinterpret_cast<const uint8_t*>(sv.data()), sv.size());
}

std::string Epoch::str() const {
  std::ostringstream os;
  os << "(" << nbranches << ", " << ip << ", " << cnt << ")";
  return os.str();
}

namespace {

struct OpSpec {
  const char* name;
  Opcode op;
  // operand pattern: 'r' register, 'R' register-or-cnt, 'i' immediate, 'p' port
  const char* pattern;
};

constexpr OpSpec kOps[] = {
    {"ADD", Opcode::Add, "rrr"},  {"SUB", Opcode::Sub, "rrr"},
    {"MOVI", Opcode::Movi, "Ri"}, {"LOAD", Opcode::Load, "rr"},
    {"STORE", Opcode::Store, "rr"}, {"JMP", Opcode::Jmp, "i"},
    {"JNZ", Opcode::Jnz, "ri"},   {"REPSTORE", Opcode::RepStore, "rr"},
    {"RDTSC", Opcode::Rdtsc, "r"}, {"IN", Opcode::In, "rp"},
    {"OUT", Opcode::Out, "pr"},   {"WAIT", Opcode::Wait, ""},
    {"IRET", Opcode::Iret, ""},   {"HALT", Opcode::Halt, ""},
};

const OpSpec* find_op(std::string_view name) {
  for (const auto& s : kOps)
    if (name == s.name) return &s;
  return nullptr;
}

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == '#') break;
    if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

uint8_t parse_reg(const std::string& tok, int line, bool allow_cnt) {
  if (allow_cnt && tok == "cnt") return kCntReg;
  if (tok.size() >= 2 && (tok[0] == 'r' || tok[0] == 'R')) {
    char* end = nullptr;
    long v = std::strtol(tok.c_str() + 1, &end, 10);
    if (end && *end == '\0' && v >= 0 && v < static_cast<long>(kNumRegs))
      return static_cast<uint8_t>(v);
  }
  throw AsmError(line, "bad register '" + tok + "'");
}

uint64_t parse_imm(const std::string& tok, int line) {
  if (tok.empty()) throw AsmError(line, "missing operand");
  char* end = nullptr;
  uint64_t v = std::strtoull(tok.c_str(), &end, 10);
  if (!end || *end != '\0') throw AsmError(line, "bad immediate '" + tok + "'");
  return v;
}

}  // namespace

Program assemble(std::string_view text) {
  Program prog;
  int lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    ++lineno;
    auto toks = tokenize(line);
    if (toks.empty()) continue;
    const OpSpec* spec = find_op(toks[0]);
    if (!spec) throw AsmError(lineno, "unknown opcode '" + toks[0] + "'");
    std::string_view pat = spec->pattern;
    if (toks.size() - 1 != pat.size())
      throw AsmError(lineno, std::string(spec->name) + " expects " + std::to_string(pat.size()) +
                                 " operand(s), got " + std::to_string(toks.size() - 1));
    Instruction ins;
    ins.op = spec->op;
    uint8_t regs[3] = {0, 0, 0};
    int nregs = 0;
    for (std::size_t i = 0; i < pat.size(); ++i) {
      const std::string& tok = toks[i + 1];
      switch (pat[i]) {
        case 'r': regs[nregs++] = parse_reg(tok, lineno, false); break;
        case 'R': regs[nregs++] = parse_reg(tok, lineno, true); break;
        case 'i': ins.imm = parse_imm(tok, lineno); break;
        case 'p': {
          uint64_t p = parse_imm(tok, lineno);
          if (p > 0xfffe) throw AsmError(lineno, "port out of range");
          if (pat[i] == 'p' && i == 0)
            ins.imm = p;  // OUT port, ra
          else
            ins.imm = p;  // IN rd, port
          break;
        }
      }
    }
    ins.a = regs[0];
    ins.b = regs[1];
    ins.c = regs[2];
    prog.code.push_back(ins);
  }
  prog.hash = fnv1a64(to_text(prog));
  return prog;
}

std::string to_text(const Program& prog) {
  std::ostringstream os;
  for (const auto& ins : prog.code) {
    const OpSpec* spec = nullptr;
    for (const auto& s : kOps)
      if (s.op == ins.op) { spec = &s; break; }
    os << spec->name;
    std::string_view pat = spec->pattern;
    int nregs = 0;
    auto reg_name = [](uint8_t r) {
      return r == kCntReg ? std::string("cnt") : "r" + std::to_string(r);
    };
    for (std::size_t i = 0; i < pat.size(); ++i) {
      os << (i == 0 ? " " : ", ");
      switch (pat[i]) {
        case 'r':
        case 'R': {
          uint8_t r = nregs == 0 ? ins.a : (nregs == 1 ? ins.b : ins.c);
          ++nregs;
          os << reg_name(r);
          break;
        }
        case 'i':
        case 'p': os << ins.imm; break;
      }
    }
    os << "\n";
  }
  return os.str();
}

uint64_t GuestState::digest() const {
  uint64_t h = 14695981039346656037ull;
  auto mix64 = [&h](uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= static_cast<uint8_t>(v >> (8 * i));
      h *= 1099511628211ull;
    }
  };
  for (uint64_t r : regs) mix64(r);
  mix64(ip);
  mix64(cnt);
  mix64(nbranches);
  mix64(isave);
  mix64((intr_enabled ? 1u : 0u) | (halted ? 2u : 0u) | (waiting ? 4u : 0u));
  for (uint64_t w : mem) mix64(w);
  return h;
}

namespace {

StepEvent fault(GuestState& s) {
  s.halted = true;
  return StepEvent{StepEvent::Kind::Fault, 0, 0};
}

}  // namespace

StepEvent step(GuestState& s, const Program& prog, NdProvider& nd) {
  if (s.halted) return StepEvent{StepEvent::Kind::None, 0, 0};
  if (s.ip >= prog.code.size()) return fault(s);
  const Instruction& ins = prog.code[s.ip];
  switch (ins.op) {
    case Opcode::Add:
      s.regs[ins.a] = s.regs[ins.b] + s.regs[ins.c];
      ++s.ip;
      break;
    case Opcode::Sub:
      s.regs[ins.a] = s.regs[ins.b] - s.regs[ins.c];
      ++s.ip;
      break;
    case Opcode::Movi:
      if (ins.a == kCntReg)
        s.cnt = ins.imm;
      else
        s.regs[ins.a] = ins.imm;
      ++s.ip;
      break;
    case Opcode::Load: {
      uint64_t addr = s.regs[ins.b];
      if (addr >= kMemWords) return fault(s);
      s.regs[ins.a] = s.mem[addr];
      ++s.ip;
      break;
    }
    case Opcode::Store: {
      uint64_t addr = s.regs[ins.a];
      if (addr >= kMemWords) return fault(s);
      s.mem[addr] = s.regs[ins.b];
      ++s.ip;
      break;
    }
    case Opcode::Jmp:
      ++s.nbranches;
      s.ip = ins.imm;
      break;
    case Opcode::Jnz:
      ++s.nbranches;
      s.ip = (s.regs[ins.a] != 0) ? ins.imm : s.ip + 1;
      break;
    case Opcode::RepStore: {
      if (s.cnt == 0) {
        ++s.ip;
        break;
      }
      uint64_t addr = s.regs[ins.a];
      if (addr >= kMemWords) return fault(s);
      s.mem[addr] = s.regs[ins.b];
      ++s.regs[ins.a];
      --s.cnt;
      if (s.cnt == 0) ++s.ip;
      break;
    }
    case Opcode::Rdtsc: {
      uint64_t v = nd.nd_value(kTscPort, s);
      s.regs[ins.a] = v;
      ++s.ip;
      return StepEvent{StepEvent::Kind::NdRead, kTscPort, v};
    }
    case Opcode::In: {
      uint16_t port = static_cast<uint16_t>(ins.imm);
      uint64_t v = nd.nd_value(port, s);
      s.regs[ins.a] = v;
      ++s.ip;
      return StepEvent{StepEvent::Kind::NdRead, port, v};
    }
    case Opcode::Out: {
      uint64_t v = s.regs[ins.a];
      ++s.ip;
      return StepEvent{StepEvent::Kind::DeviceOut, static_cast<uint16_t>(ins.imm), v};
    }
    case Opcode::Wait:
      s.waiting = true;
      ++s.ip;
      return StepEvent{StepEvent::Kind::EnteredWait, 0, 0};
    case Opcode::Iret:
      s.ip = s.isave;
      s.intr_enabled = true;
      break;
    case Opcode::Halt:
      s.halted = true;
      return StepEvent{StepEvent::Kind::Halted, 0, 0};
  }
  return StepEvent{StepEvent::Kind::None, 0, 0};
}

bool deliver_interrupt(GuestState& s, uint8_t vector) {
  if (vector >= kNumVectors) return false;
  if (!s.intr_enabled) return false;
  s.isave = s.ip;
  s.ip = s.mem[vector];
  s.intr_enabled = false;
  s.waiting = false;
  return true;
}

RunResult run_until(GuestState& s, const Program& prog, NdProvider& nd, const StopCondition& stop) {
  if (stop.kind == StopCondition::Kind::EpochReached && s.nbranches > stop.epoch.nbranches)
    throw EpochInPast("epoch in the past: " + stop.epoch.str() + " vs " + epoch_of(s).str());
  RunResult res;
  while (!s.halted) {
    if (stop.kind == StopCondition::Kind::Steps && res.steps >= stop.steps) break;
    if (stop.kind == StopCondition::Kind::EpochReached) {
      if (epoch_of(s) == stop.epoch) break;
      if (s.nbranches > stop.epoch.nbranches)
        throw EpochInPast("epoch in the past: " + stop.epoch.str() + " vs " + epoch_of(s).str());
    }
    if (s.waiting) {
      res.stopped_waiting = true;
      break;
    }
    res.trace.push_back(step(s, prog, nd));
    ++res.steps;
  }
  return res;
}

}  // namespace rrvm

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "rrvm/guest.hpp"

using namespace rrvm;

namespace {

struct FixedNd : NdProvider {
  uint64_t v;
  explicit FixedNd(uint64_t v_ = 0) : v(v_) {}
  uint64_t nd_value(uint16_t, const GuestState&) override { return v; }
};

GuestState run_steps(const Program& p, uint64_t n, NdProvider& nd) {
  GuestState s;
  run_until(s, p, nd, StopCondition::after_steps(n));
  return s;
}

}  // namespace

TEST_CASE("fnv1a64 matches reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("assembler round-trips and maps line k to address k") {
  Program p = assemble(
      "MOVI r0, 7\n"
      "# comment line, occupies no address\n"
      "ADD r1, r0, r0\n"
      "JMP 0\n");
  REQUIRE(p.size() == 3);
  CHECK(p.code[0].op == Opcode::Movi);
  CHECK(p.code[1].op == Opcode::Add);
  CHECK(p.code[2].op == Opcode::Jmp);
  CHECK(p.code[2].imm == 0);
  Program p2 = assemble(to_text(p));
  CHECK(p2.code.size() == p.code.size());
  for (std::size_t i = 0; i < p.code.size(); ++i) {
    CHECK(p2.code[i].op == p.code[i].op);
    CHECK(p2.code[i].imm == p.code[i].imm);
  }
}

TEST_CASE("assembler rejects bad input with line numbers") {
  CHECK_THROWS_AS(assemble("BOGUS r0\n"), AsmError);
  try {
    assemble("MOVI r0, 1\nNOPE\n");
    FAIL("expected AsmError");
  } catch (const AsmError& e) {
    CHECK(e.line == 2);
  }
  CHECK_THROWS_AS(assemble("ADD r0, r1\n"), AsmError);  // wrong arity
  CHECK_THROWS_AS(assemble("MOVI r9, 1\n"), AsmError);  // bad register
}

TEST_CASE("arithmetic wraps modulo 2^64") {
  Program p = assemble(
      "MOVI r0, 18446744073709551615\n"
      "MOVI r1, 1\n"
      "ADD r2, r0, r1\n"
      "SUB r3, r2, r1\n"
      "HALT\n");
  FixedNd nd;
  GuestState s = run_steps(p, 10, nd);
  CHECK(s.regs[2] == 0);
  CHECK(s.regs[3] == UINT64_MAX);
  CHECK(s.halted);
}

TEST_CASE("JMP and JNZ both count a branch whether or not taken") {
  Program p = assemble(
      "MOVI r0, 0\n"
      "JNZ r0, 0\n"  // not taken: still counts
      "JMP 3\n"      // taken
      "MOVI r1, 1\n"
      "JNZ r1, 6\n"  // taken
      "HALT\n"
      "HALT\n");
  FixedNd nd;
  GuestState s = run_steps(p, 10, nd);
  CHECK(s.halted);
  CHECK(s.nbranches == 3);
  CHECK(s.ip == 6);
}

TEST_CASE("LOAD and STORE move words through memory") {
  Program p = assemble(
      "MOVI r0, 100\n"
      "MOVI r1, 42\n"
      "STORE r0, r1\n"
      "MOVI r2, 100\n"
      "LOAD r3, r2\n"
      "HALT\n");
  FixedNd nd;
  GuestState s = run_steps(p, 10, nd);
  CHECK(s.mem[100] == 42);
  CHECK(s.regs[3] == 42);
}

TEST_CASE("REPSTORE hand-traced oracle") {
  // cnt=3, r0=200, r1=9: three stores at 200,201,202; r0 ends at 203.
  // ip stays on the REPSTORE until cnt reaches 0; cnt appears in the epoch.
  Program p = assemble(
      "MOVI r0, 200\n"
      "MOVI r1, 9\n"
      "MOVI cnt, 3\n"
      "REPSTORE r0, r1\n"
      "HALT\n");
  FixedNd nd;
  GuestState s;
  run_until(s, p, nd, StopCondition::after_steps(3));
  REQUIRE(s.cnt == 3);
  REQUIRE(s.ip == 3);

  StepEvent ev = step(s, p, nd);  // first iteration
  CHECK(ev.kind == StepEvent::Kind::None);
  CHECK(s.mem[200] == 9);
  CHECK(s.regs[0] == 201);
  CHECK(s.cnt == 2);
  CHECK(s.ip == 3);  // still on the REPSTORE

  step(s, p, nd);
  CHECK(s.mem[201] == 9);
  CHECK(s.cnt == 1);
  CHECK(s.ip == 3);

  step(s, p, nd);  // final iteration advances ip
  CHECK(s.mem[202] == 9);
  CHECK(s.cnt == 0);
  CHECK(s.ip == 4);
  CHECK(s.regs[0] == 203);
  CHECK(s.nbranches == 0);  // REPSTORE iterations are not branches
}

TEST_CASE("REPSTORE with cnt=0 is a no-op that advances ip") {
  Program p = assemble(
      "MOVI r0, 50\n"
      "MOVI r1, 1\n"
      "REPSTORE r0, r1\n"
      "HALT\n");
  FixedNd nd;
  GuestState s = run_steps(p, 10, nd);
  CHECK(s.mem[50] == 0);
  CHECK(s.halted);
}

TEST_CASE("epoch identifies a mid-REPSTORE position uniquely") {
  Program p = assemble(
      "MOVI r0, 10\n"
      "MOVI r1, 1\n"
      "MOVI cnt, 4\n"
      "REPSTORE r0, r1\n"
      "HALT\n");
  FixedNd nd;
  GuestState s;
  run_until(s, p, nd, StopCondition::after_steps(3));
  std::vector<Epoch> seen;
  seen.push_back(epoch_of(s));
  for (int i = 0; i < 4; ++i) {
    step(s, p, nd);
    seen.push_back(epoch_of(s));
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    for (std::size_t j = i + 1; j < seen.size(); ++j) CHECK(seen[i] != seen[j]);
  // epochs advance in the strict ordering
  for (std::size_t i = 1; i < seen.size(); ++i) CHECK(seen[i - 1].cnt > 0);
}

TEST_CASE("interrupt delivery does not count a branch and IRET returns") {
  Program p = assemble(
      "JMP 2\n"
      "IRET\n"
      "MOVI r0, 5\n"
      "MOVI r1, 5\n"
      "HALT\n");
  FixedNd nd;
  GuestState s;
  s.mem[0] = 1;  // vector table lives in guest memory: mem[v] = handler address
  run_until(s, p, nd, StopCondition::after_steps(2));  // JMP + MOVI
  uint64_t nb = s.nbranches;
  uint64_t ip = s.ip;
  REQUIRE(deliver_interrupt(s, 0));
  CHECK(s.nbranches == nb);     // delivery is not a branch
  CHECK(s.ip == 1);             // handler installed above
  CHECK(s.isave == ip);
  CHECK_FALSE(s.intr_enabled);
  CHECK_FALSE(deliver_interrupt(s, 0));  // disabled while in handler
  step(s, p, nd);                        // IRET
  CHECK(s.ip == ip);
  CHECK(s.intr_enabled);
  CHECK(s.nbranches == nb);  // IRET is not a branch either
}

TEST_CASE("interrupt mid-REPSTORE resumes the remaining iterations") {
  Program p = assemble(
      "JMP 2\n"
      "IRET\n"
      "MOVI r0, 30\n"
      "MOVI r1, 7\n"
      "MOVI cnt, 5\n"
      "REPSTORE r0, r1\n"
      "HALT\n");
  FixedNd nd;
  GuestState s;
  s.mem[0] = 1;
  run_until(s, p, nd, StopCondition::after_steps(4));  // up to the REPSTORE
  step(s, p, nd);                                      // two iterations
  step(s, p, nd);
  REQUIRE(s.cnt == 3);
  REQUIRE(deliver_interrupt(s, 0));
  step(s, p, nd);  // IRET
  CHECK(s.ip == 5);
  CHECK(s.cnt == 3);
  while (!s.halted) step(s, p, nd);
  CHECK(s.mem[30] == 7);
  CHECK(s.mem[34] == 7);
  CHECK(s.regs[0] == 35);
}

TEST_CASE("WAIT stops the run driver; IRET returns past the WAIT") {
  Program p = assemble(
      "JMP 2\n"
      "IRET\n"
      "WAIT\n"
      "MOVI r0, 1\n"
      "HALT\n");
  FixedNd nd;
  GuestState s;
  s.mem[0] = 1;
  RunResult r = run_until(s, p, nd, StopCondition::until_halt());
  CHECK(r.stopped_waiting);
  CHECK(s.waiting);
  REQUIRE(deliver_interrupt(s, 0));
  CHECK_FALSE(s.waiting);
  run_until(s, p, nd, StopCondition::until_halt());
  CHECK(s.halted);
  CHECK(s.regs[0] == 1);
}

TEST_CASE("out-of-range vector is rejected") {
  GuestState s;
  CHECK_FALSE(deliver_interrupt(s, 8));
  CHECK_FALSE(deliver_interrupt(s, 200));
}

TEST_CASE("faults halt the guest") {
  Program p = assemble("JMP 99\n");  // jump outside the program
  FixedNd nd;
  GuestState s;
  run_until(s, p, nd, StopCondition::after_steps(5));
  CHECK(s.halted);

  Program p2 = assemble(
      "MOVI r0, 18446744073709551615\n"
      "LOAD r1, r0\n");
  GuestState s2;
  run_until(s2, p2, nd, StopCondition::after_steps(5));
  CHECK(s2.halted);
}

TEST_CASE("RDTSC and IN consult the provider with the pre-step epoch") {
  struct Probe : NdProvider {
    Epoch seen{};
    uint64_t nd_value(uint16_t port, const GuestState& pre) override {
      seen = epoch_of(pre);
      return port == kTscPort ? 111 : 222;
    }
  } nd;
  Program p = assemble(
      "JMP 1\n"
      "RDTSC r0\n"
      "IN r1, 4\n"
      "HALT\n");
  GuestState s;
  run_until(s, p, nd, StopCondition::after_steps(2));
  CHECK(s.regs[0] == 111);
  CHECK(nd.seen == Epoch{1, 1, 0});
  run_until(s, p, nd, StopCondition::after_steps(1));
  CHECK(s.regs[1] == 222);
  CHECK(nd.seen == Epoch{1, 2, 0});
}

TEST_CASE("run_until at_epoch throws when the epoch is behind") {
  Program p = assemble(
      "MOVI r0, 1\n"
      "JMP 0\n");
  FixedNd nd;
  GuestState s;
  run_until(s, p, nd, StopCondition::after_steps(10));
  CHECK_THROWS_AS(run_until(s, p, nd, StopCondition::at_epoch(Epoch{1, 0, 0})), EpochInPast);
}

TEST_CASE("deterministic re-execution: same program, same trace") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    // random straight-line arithmetic with a loop
    std::string text = "MOVI r7, 1\n";
    int lines = 1;
    for (int i = 0; i < 30; ++i) {
      int op = static_cast<int>(rng() % 3);
      int a = static_cast<int>(rng() % 7), b = static_cast<int>(rng() % 7),
          c = static_cast<int>(rng() % 7);
      char buf[64];
      if (op == 0)
        snprintf(buf, sizeof buf, "ADD r%d, r%d, r%d\n", a, b, c);
      else if (op == 1)
        snprintf(buf, sizeof buf, "SUB r%d, r%d, r%d\n", a, b, c);
      else
        snprintf(buf, sizeof buf, "MOVI r%d, %d\n", a, static_cast<int>(rng() % 1000));
      text += buf;
      ++lines;
    }
    text += "JNZ r7, 1\n";
    Program p = assemble(text);
    FixedNd nd;
    GuestState s1, s2;
    run_until(s1, p, nd, StopCondition::after_steps(5000));
    run_until(s2, p, nd, StopCondition::after_steps(5000));
    CHECK(s1 == s2);
    CHECK(s1.digest() == s2.digest());
  }
}

TEST_CASE("digest is sensitive to registers, memory and flags") {
  GuestState a, b;
  CHECK(a.digest() == b.digest());
  b.regs[3] = 1;
  CHECK(a.digest() != b.digest());
  b = a;
  b.mem[40000] = 9;
  CHECK(a.digest() != b.digest());
  b = a;
  b.intr_enabled = false;
  CHECK(a.digest() != b.digest());
  b = a;
  b.cnt = 5;
  CHECK(a.digest() != b.digest());
}

TEST_CASE("epoch string form") {
  Epoch e{3, 14, 2};
  CHECK(e.str() == "(3, 14, 2)");
}

#include "rrvm/machine.hpp"

namespace rrvm {

void dma_to_mem(GuestState& g, uint64_t buf_word, const uint8_t* data, std::size_t nbytes) {
  std::size_t nwords = nbytes / 8;
  for (std::size_t i = 0; i < nwords; ++i) {
    uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<uint64_t>(data[i * 8 + b]) << (8 * b);
    g.mem[buf_word + i] = v;
  }
}

void dma_from_mem(const GuestState& g, uint64_t buf_word, uint8_t* out, std::size_t nbytes) {
  std::size_t nwords = nbytes / 8;
  for (std::size_t i = 0; i < nwords; ++i) {
    uint64_t v = g.mem[buf_word + i];
    for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<uint8_t>(v >> (8 * b));
  }
}

}  // namespace rrvm

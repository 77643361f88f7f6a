#pragma once

#include "rrvm/devices.hpp"
#include "rrvm/guest.hpp"

namespace rrvm {

// One guest plus its devices, owned by exactly one execution driver.
struct Machine {
  GuestState guest;
  Program prog;
  DiskDevice disk;
  NicDevice nic;
  TimerDevice timer;
};

// Device DMA between the block store and guest memory, 64-bit words,
// little-endian bytes.
void dma_to_mem(GuestState& g, uint64_t buf_word, const uint8_t* data, std::size_t nbytes);
void dma_from_mem(const GuestState& g, uint64_t buf_word, uint8_t* out, std::size_t nbytes);

}  // namespace rrvm

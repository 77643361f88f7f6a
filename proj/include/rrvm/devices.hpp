#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rrvm/log.hpp"

namespace rrvm {

inline constexpr std::size_t kBlockBytes = 4096;
inline constexpr std::size_t kBlockWords = kBlockBytes / 8;
inline constexpr std::size_t kMaxImageBlocks = 4096;   // 16 MiB
inline constexpr std::size_t kMaxFrameBytes = 1500;
inline constexpr uint64_t kMaxBlocksPerCmd = 64;

// Port map (bit-exact, documented in the README):
//   OUT 0  disk block number        IN 3  disk status (0 ok, 1 error)
//   OUT 1  disk buffer word address IN 4  nic rx next byte (~0 when drained)
//   OUT 2  disk count*2 | direction IN 5  nic rx bytes left in head frame
//   OUT 3  disk go (value ignored)
//   OUT 4  nic tx append byte (low 8 bits)
//   OUT 5  nic tx flush frame
//   OUT 6  timer period, host milliseconds (0 disables)
//   OUT 7  unused
// Interrupt vectors: 0 timer, 1 nic, 2 disk.
inline constexpr uint8_t kTimerVector = 0;
inline constexpr uint8_t kNicVector = 1;
inline constexpr uint8_t kDiskVector = 2;

struct DiskImage {
  std::vector<uint8_t> bytes;  // nblocks * kBlockBytes

  std::size_t nblocks() const { return bytes.size() / kBlockBytes; }
  static DiskImage zeroed(std::size_t nblocks);
  static DiskImage load(const std::string& path);
  void save(const std::string& path) const;

  const uint8_t* block(std::size_t n) const { return bytes.data() + n * kBlockBytes; }
  uint8_t* block(std::size_t n) { return bytes.data() + n * kBlockBytes; }
  uint64_t digest() const;

  bool operator==(const DiskImage&) const = default;
};

// Copy-on-write snapshot taken at record start: an immutable base plus an
// overlay of replayed writes. File form: base image file, plus an overlay
// file of (u32 block#, 4096-byte data) pairs, little-endian.
struct DiskSnapshot {
  DiskImage base;
  std::unordered_map<uint32_t, std::vector<uint8_t>> overlay;

  static DiskSnapshot of(const DiskImage& img) { return DiskSnapshot{img, {}}; }
  void read_block(uint32_t n, uint8_t* out) const;
  void write_block(uint32_t n, const uint8_t* data);
  DiskImage materialize() const;
  uint64_t base_digest() const { return base.digest(); }

  void save(const std::string& base_path, const std::string& overlay_path) const;
  static DiskSnapshot load(const std::string& base_path, const std::string& overlay_path);
};

struct DiskCmd {
  uint64_t block = 0;
  uint64_t buf = 0;       // guest memory word address
  uint64_t count = 1;     // blocks
  bool write = false;
};

// Command registers and backing store. The execution driver performs the
// actual DMA; the device only tracks registers, status and storage.
struct DiskDevice {
  DiskMode mode = DiskMode::FullReplay;
  DiskImage image;                          // live image (record / baseline)
  std::optional<DiskSnapshot> snapshot;     // replay side, FullReplay mode
  uint64_t reg_block = 0, reg_buf = 0, reg_count_dir = 0;
  uint64_t status = 0;

  DiskCmd pending_cmd() const {
    DiskCmd c;
    c.block = reg_block;
    c.buf = reg_buf;
    c.count = reg_count_dir >> 1;
    c.write = (reg_count_dir & 1) != 0;
    return c;
  }
  bool cmd_valid(const DiskCmd& c, std::size_t image_blocks) const;
};

struct TimerDevice {
  uint32_t period_ms = 10;  // 0 disables
  uint8_t vector = kTimerVector;
  uint64_t last_fire_us = 0;
  bool started = false;

  // Recording side only; returns at most one request per call, carrying a
  // backlog across calls so missed periods fire on successive polls.
  uint64_t backlog = 0;
  bool poll(uint64_t now_us);
  // Next host time at which a tick becomes due, for idle sleeping.
  uint64_t next_due_us(uint64_t now_us) const;
  void set_period(uint32_t ms) { period_ms = ms; }
};

struct NicDevice {
  uint8_t vector = kNicVector;
  std::deque<std::vector<uint8_t>> rx_queue;
  std::size_t rx_head_off = 0;
  std::vector<uint8_t> tx_partial;
  uint64_t dropped_oversize = 0;

  // Returns false (frame dropped, counter bumped) when payload > 1500 bytes.
  bool rx_enqueue(std::vector<uint8_t> frame);
  uint64_t in_data();    // IN port 4
  uint64_t in_status();  // IN port 5
  void tx_byte(uint64_t v) { tx_partial.push_back(static_cast<uint8_t>(v)); }
  std::vector<uint8_t> tx_flush();
};

}  // namespace rrvm

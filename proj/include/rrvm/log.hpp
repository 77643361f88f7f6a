#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rrvm/guest.hpp"

namespace rrvm {

uint32_t crc32(const uint8_t* data, std::size_t len, uint32_t seed = 0);

enum class FrameKind : uint8_t {
  NdValue = 0,
  Interrupt = 1,
  NetRx = 2,
  DiskRead = 3,
  SnapshotRef = 4,
  End = 5,
};

const char* frame_kind_name(FrameKind k);

inline constexpr std::size_t kMaxPayload = 64 * 1024;
inline constexpr std::size_t kFrameOverhead = 41;  // encoded size of an empty-payload frame

struct LogFrame {
  uint64_t lsn = 0;
  FrameKind kind = FrameKind::End;
  Epoch epoch{};
  std::vector<uint8_t> payload;

  bool operator==(const LogFrame&) const = default;
};

// Layout, all little-endian:
//   len u32   bytes following this field (37 + payload size)
//   lsn u64
//   kind u8
//   nbranches u64, ip u64, cnt u64
//   payload
//   crc u32   crc32 over everything before it, including len
std::vector<uint8_t> encode_frame(const LogFrame& f);

struct DecodeResult {
  std::optional<LogFrame> frame;
  std::size_t consumed = 0;   // bytes consumed on success
  std::string error;          // "bad crc at offset N" / "incomplete frame"
  bool truncated = false;
};

DecodeResult decode_frame(const uint8_t* data, std::size_t len);

enum class DiskMode : uint8_t { FullReplay = 0, OutputReplay = 1 };

inline constexpr uint16_t kLogVersion = 1;

struct LogHeader {
  uint16_t version = kLogVersion;
  DiskMode disk_mode = DiskMode::FullReplay;
  uint64_t program_hash = 0;
  uint64_t init_digest = 0;

  bool operator==(const LogHeader&) const = default;
};

inline constexpr std::size_t kHeaderBytes = 23;  // "RRLG" + u16 + u8 + u64 + u64

std::vector<uint8_t> encode_header(const LogHeader& h);
// Throws std::runtime_error on bad magic / version.
LogHeader decode_header(const uint8_t* data, std::size_t len);

// In-memory log: header plus frames in lsn order. Frame bytes exclude the
// header; the END frame counts.
struct Log {
  LogHeader header;
  std::vector<LogFrame> frames;

  uint64_t frame_bytes() const;
  uint64_t payload_bytes() const;
  bool has_end() const {
    return !frames.empty() && frames.back().kind == FrameKind::End;
  }

  std::vector<uint8_t> serialize() const;
  void save(const std::string& path) const;
  static Log load(const std::string& path);      // throws on malformed input
  static Log parse(const uint8_t* data, std::size_t len);

  // Re-scan: every crc checked on decode; verifies the lsn chain and the
  // presence of an END frame. Returns an error description or empty string.
  std::string validate() const;
};

struct GrowthRate {
  double bytes_per_sec = 0;
  double bytes_per_kinstr = 0;
};

GrowthRate log_growth_rate(const Log& log, double wall_seconds, uint64_t instructions);

}  // namespace rrvm

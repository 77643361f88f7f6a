#include "rrvm/log.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rrvm {

namespace {

std::array<uint32_t, 256> make_crc_table() {
  std::array<uint32_t, 256> t{};
  for (uint32_t i = 0; i < 256; ++i) {
    uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t get_u32(const uint8_t* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
  return v;
}

uint64_t get_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

uint32_t crc32(const uint8_t* data, std::size_t len, uint32_t seed) {
  static const auto table = make_crc_table();
  uint32_t c = seed ^ 0xffffffffu;
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xff] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

const char* frame_kind_name(FrameKind k) {
  switch (k) {
    case FrameKind::NdValue: return "ND_VALUE";
    case FrameKind::Interrupt: return "INTERRUPT";
    case FrameKind::NetRx: return "NET_RX";
    case FrameKind::DiskRead: return "DISK_READ";
    case FrameKind::SnapshotRef: return "SNAPSHOT_REF";
    case FrameKind::End: return "END";
  }
  return "?";
}

std::vector<uint8_t> encode_frame(const LogFrame& f) {
  if (f.payload.size() > kMaxPayload) throw std::runtime_error("frame payload over 64 KiB");
  std::vector<uint8_t> out;
  out.reserve(kFrameOverhead + f.payload.size());
  put_u32(out, static_cast<uint32_t>(37 + f.payload.size()));
  put_u64(out, f.lsn);
  out.push_back(static_cast<uint8_t>(f.kind));
  put_u64(out, f.epoch.nbranches);
  put_u64(out, f.epoch.ip);
  put_u64(out, f.epoch.cnt);
  out.insert(out.end(), f.payload.begin(), f.payload.end());
  put_u32(out, crc32(out.data(), out.size()));
  return out;
}

DecodeResult decode_frame(const uint8_t* data, std::size_t len) {
  DecodeResult res;
  if (len < 4) {
    res.error = "incomplete frame";
    res.truncated = true;
    return res;
  }
  uint32_t body = get_u32(data);
  if (body < 37 || body > 37 + kMaxPayload) {
    res.error = "bad frame length " + std::to_string(body);
    return res;
  }
  std::size_t total = 4 + body;  // len counts everything after itself, crc included
  if (len < total) {
    res.error = "incomplete frame";
    res.truncated = true;
    return res;
  }
  uint32_t want = get_u32(data + total - 4);
  uint32_t got = crc32(data, total - 4);
  if (want != got) {
    res.error = "bad crc at offset 0";
    return res;
  }
  LogFrame f;
  f.lsn = get_u64(data + 4);
  uint8_t kind = data[12];
  if (kind > static_cast<uint8_t>(FrameKind::End)) {
    res.error = "bad frame kind " + std::to_string(kind);
    return res;
  }
  f.kind = static_cast<FrameKind>(kind);
  f.epoch.nbranches = get_u64(data + 13);
  f.epoch.ip = get_u64(data + 21);
  f.epoch.cnt = get_u64(data + 29);
  f.payload.assign(data + 37, data + total - 4);
  res.frame = std::move(f);
  res.consumed = total;
  return res;
}

std::vector<uint8_t> encode_header(const LogHeader& h) {
  std::vector<uint8_t> out = {'R', 'R', 'L', 'G'};
  out.push_back(static_cast<uint8_t>(h.version));
  out.push_back(static_cast<uint8_t>(h.version >> 8));
  out.push_back(static_cast<uint8_t>(h.disk_mode));
  put_u64(out, h.program_hash);
  put_u64(out, h.init_digest);
  return out;
}

LogHeader decode_header(const uint8_t* data, std::size_t len) {
  if (len < kHeaderBytes) throw std::runtime_error("log header truncated");
  if (std::memcmp(data, "RRLG", 4) != 0) throw std::runtime_error("bad log magic");
  LogHeader h;
  h.version = static_cast<uint16_t>(data[4] | (data[5] << 8));
  if (h.version != kLogVersion)
    throw std::runtime_error("unsupported log version " + std::to_string(h.version));
  if (data[6] > 1) throw std::runtime_error("bad disk mode");
  h.disk_mode = static_cast<DiskMode>(data[6]);
  h.program_hash = get_u64(data + 7);
  h.init_digest = get_u64(data + 15);
  return h;
}

uint64_t Log::frame_bytes() const {
  uint64_t n = 0;
  for (const auto& f : frames) n += kFrameOverhead + f.payload.size();
  return n;
}

uint64_t Log::payload_bytes() const {
  uint64_t n = 0;
  for (const auto& f : frames) n += f.payload.size();
  return n;
}

std::vector<uint8_t> Log::serialize() const {
  std::vector<uint8_t> out = encode_header(header);
  for (const auto& f : frames) {
    auto b = encode_frame(f);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

void Log::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path);
  auto bytes = serialize();
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("short write to " + path);
}

Log Log::parse(const uint8_t* data, std::size_t len) {
  Log log;
  log.header = decode_header(data, len);
  std::size_t pos = kHeaderBytes;
  while (pos < len) {
    auto res = decode_frame(data + pos, len - pos);
    if (!res.frame) {
      if (res.truncated) throw std::runtime_error("incomplete frame at offset " + std::to_string(pos));
      throw std::runtime_error(res.error + " (offset " + std::to_string(pos) + ")");
    }
    log.frames.push_back(std::move(*res.frame));
    pos += res.consumed;
  }
  return log;
}

Log Log::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse(bytes.data(), bytes.size());
}

std::string Log::validate() const {
  uint64_t expect = 1;
  for (const auto& f : frames) {
    if (f.lsn != expect)
      return "lsn chain broken: expected " + std::to_string(expect) + ", got " + std::to_string(f.lsn);
    ++expect;
  }
  if (!has_end()) return "missing END frame";
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    if (frames[i].kind == FrameKind::End) return "END frame not last";
    if (frames[i + 1].epoch.nbranches < frames[i].epoch.nbranches)
      return "frames out of epoch order at lsn " + std::to_string(frames[i + 1].lsn);
  }
  return "";
}

GrowthRate log_growth_rate(const Log& log, double wall_seconds, uint64_t instructions) {
  if (wall_seconds <= 0) throw std::runtime_error("wall-seconds must be positive");
  GrowthRate g;
  double bytes = static_cast<double>(log.frame_bytes());
  g.bytes_per_sec = bytes / wall_seconds;
  g.bytes_per_kinstr = instructions ? bytes / (static_cast<double>(instructions) / 1000.0) : 0.0;
  return g;
}

}  // namespace rrvm

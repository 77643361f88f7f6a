#include "rrvm/devices.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rrvm {

DiskImage DiskImage::zeroed(std::size_t nblocks) {
  if (nblocks > kMaxImageBlocks) throw std::runtime_error("disk image over 16 MiB");
  DiskImage img;
  img.bytes.assign(nblocks * kBlockBytes, 0);
  return img;
}

DiskImage DiskImage::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  DiskImage img;
  img.bytes.assign((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (img.bytes.size() % kBlockBytes != 0)
    throw std::runtime_error(path + ": size not a multiple of 4096");
  if (img.nblocks() > kMaxImageBlocks) throw std::runtime_error(path + ": image over 16 MiB");
  return img;
}

void DiskImage::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("short write to " + path);
}

uint64_t DiskImage::digest() const { return fnv1a64(bytes.data(), bytes.size()); }

void DiskSnapshot::read_block(uint32_t n, uint8_t* out) const {
  auto it = overlay.find(n);
  if (it != overlay.end())
    std::memcpy(out, it->second.data(), kBlockBytes);
  else
    std::memcpy(out, base.block(n), kBlockBytes);
}

void DiskSnapshot::write_block(uint32_t n, const uint8_t* data) {
  overlay[n].assign(data, data + kBlockBytes);
}

DiskImage DiskSnapshot::materialize() const {
  DiskImage img = base;
  for (const auto& [n, data] : overlay) std::memcpy(img.block(n), data.data(), kBlockBytes);
  return img;
}

void DiskSnapshot::save(const std::string& base_path, const std::string& overlay_path) const {
  base.save(base_path);
  std::ofstream os(overlay_path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + overlay_path);
  for (const auto& [n, data] : overlay) {
    uint8_t hdr[4] = {static_cast<uint8_t>(n), static_cast<uint8_t>(n >> 8),
                      static_cast<uint8_t>(n >> 16), static_cast<uint8_t>(n >> 24)};
    os.write(reinterpret_cast<const char*>(hdr), 4);
    os.write(reinterpret_cast<const char*>(data.data()), kBlockBytes);
  }
}

DiskSnapshot DiskSnapshot::load(const std::string& base_path, const std::string& overlay_path) {
  DiskSnapshot snap;
  snap.base = DiskImage::load(base_path);
  std::ifstream is(overlay_path, std::ios::binary);
  if (!is) return snap;  // missing overlay means no writes
  for (;;) {
    uint8_t hdr[4];
    is.read(reinterpret_cast<char*>(hdr), 4);
    if (is.gcount() == 0) break;
    if (is.gcount() != 4) throw std::runtime_error(overlay_path + ": truncated entry");
    uint32_t n = hdr[0] | (hdr[1] << 8) | (hdr[2] << 16) | (static_cast<uint32_t>(hdr[3]) << 24);
    std::vector<uint8_t> data(kBlockBytes);
    is.read(reinterpret_cast<char*>(data.data()), kBlockBytes);
    if (static_cast<std::size_t>(is.gcount()) != kBlockBytes)
      throw std::runtime_error(overlay_path + ": truncated block");
    snap.overlay[n] = std::move(data);
  }
  return snap;
}

bool DiskDevice::cmd_valid(const DiskCmd& c, std::size_t image_blocks) const {
  if (c.count == 0 || c.count > kMaxBlocksPerCmd) return false;
  if (c.block + c.count > image_blocks) return false;
  if (c.buf + c.count * kBlockWords > kMemWords) return false;
  return true;
}

bool TimerDevice::poll(uint64_t now_us) {
  if (period_ms == 0) return false;
  uint64_t period_us = static_cast<uint64_t>(period_ms) * 1000;
  if (!started) {
    started = true;
    last_fire_us = now_us;
    return false;
  }
  while (now_us - last_fire_us >= period_us) {
    last_fire_us += period_us;
    ++backlog;
  }
  if (backlog > 0) {
    --backlog;
    return true;
  }
  return false;
}

uint64_t TimerDevice::next_due_us(uint64_t now_us) const {
  if (period_ms == 0) return now_us + 1000000;
  if (backlog > 0 || !started) return now_us;
  uint64_t period_us = static_cast<uint64_t>(period_ms) * 1000;
  uint64_t due = last_fire_us + period_us;
  return due > now_us ? due : now_us;
}

bool NicDevice::rx_enqueue(std::vector<uint8_t> frame) {
  if (frame.size() > kMaxFrameBytes) {
    ++dropped_oversize;
    return false;
  }
  rx_queue.push_back(std::move(frame));
  return true;
}

uint64_t NicDevice::in_data() {
  while (!rx_queue.empty() && rx_head_off >= rx_queue.front().size()) {
    rx_queue.pop_front();
    rx_head_off = 0;
  }
  if (rx_queue.empty()) return ~0ull;
  uint64_t v = rx_queue.front()[rx_head_off++];
  if (rx_head_off >= rx_queue.front().size()) {
    rx_queue.pop_front();
    rx_head_off = 0;
  }
  return v;
}

uint64_t NicDevice::in_status() {
  if (rx_queue.empty()) return 0;
  return rx_queue.front().size() - rx_head_off;
}

std::vector<uint8_t> NicDevice::tx_flush() {
  std::vector<uint8_t> out;
  out.swap(tx_partial);
  return out;
}

}  // namespace rrvm

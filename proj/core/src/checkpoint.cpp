// SPDX-License-Identifier: Apache-2.0
#include "mosa/checkpoint.hpp"

#include <zlib.h>

#include <cstring>

#include "byte_io.hpp"
#include "mosa/errors.hpp"

namespace mosa {

const NamedTensor* Checkpoint::find_tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const NamedMask* Checkpoint::find_mask(const std::string& name) const {
  for (const auto& m : masks)
    if (m.name == name) return &m;
  return nullptr;
}

std::uint32_t crc32(std::span<const unsigned char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large buffers.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  io::Writer w;
  w.bytes("MSCK", 4);
  w.u32(kCheckpointVersion);
  w.str(ckpt.config);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (shape_numel(t.shape) != t.values.size()) {
      throw InvariantError("checkpoint: tensor '" + t.name + "' shape/value mismatch");
    }
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values) w.f64(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.masks.size()));
  for (const auto& m : ckpt.masks) {
    const std::size_t n = static_cast<std::size_t>(m.rows) * m.cols;
    if (m.bits.size() != n) throw InvariantError("checkpoint: mask '" + m.name + "' size mismatch");
    w.str(m.name);
    w.u32(m.rows);
    w.u32(m.cols);
    std::vector<unsigned char> packed((n + 7) / 8, 0);
    for (std::size_t e = 0; e < n; ++e)
      if (m.bits[e]) packed[e / 8] |= static_cast<unsigned char>(1u << (e % 8));
    w.bytes(packed.data(), packed.size());
  }
  w.u32(crc32(w.buffer()));
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4) throw LengthError("checkpoint: file shorter than its magic");
  if (std::memcmp(bytes.data(), "MSCK", 4) != 0) throw FormatError("checkpoint: bad magic");
  io::Reader r(bytes, "checkpoint");
  r.skip(4);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint: version " + std::to_string(version) +
                       " not supported (reader " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.config = r.str();
  const auto tensor_count = r.u32();
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    NamedTensor t;
    t.name = r.str();
    const auto rank = r.u32();
    if (rank > 8) throw FormatError("checkpoint: tensor '" + t.name + "' has rank " + std::to_string(rank));
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.u32());
    const auto n = shape_numel(t.shape);
    if (n > r.remaining() / 8) {
      throw LengthError("checkpoint: tensor '" + t.name + "' runs past end of file");
    }
    t.values.resize(n);
    for (auto& v : t.values) v = r.f64();
    ckpt.tensors.push_back(std::move(t));
  }
  const auto mask_count = r.u32();
  for (std::uint32_t i = 0; i < mask_count; ++i) {
    NamedMask m;
    m.name = r.str();
    m.rows = r.u32();
    m.cols = r.u32();
    const std::size_t n = static_cast<std::size_t>(m.rows) * m.cols;
    auto packed = r.take((n + 7) / 8);
    m.bits.resize(n);
    for (std::size_t e = 0; e < n; ++e) m.bits[e] = (packed[e / 8] >> (e % 8)) & 1u;
    ckpt.masks.push_back(std::move(m));
  }
  const std::size_t body = r.pos();
  const auto stored = r.u32();
  if (r.remaining() != 0) {
    throw FormatError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes");
  }
  if (stored != crc32(bytes.first(body))) throw CorruptionError("checkpoint: CRC mismatch");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace mosa

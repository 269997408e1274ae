#include "pvpl/hash.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <bit>
#include <cstring>

#include "pvpl/bytes.hpp"

namespace pvpl {

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large buffers.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    c = ::crc32(c, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

std::vector<std::uint8_t> serialize_named(const NamedTensors& tensors) {
  ByteWriter w;
  for (const auto& [name, t] : tensors) {
    w.str(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    w.f32s(t.data());
  }
  return w.take();
}

std::string checksum(const NamedTensors& tensors) { return sha256_hex(serialize_named(tensors)); }

}  // namespace pvpl

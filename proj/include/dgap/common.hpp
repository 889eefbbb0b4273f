#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>

namespace dgap {

inline constexpr std::size_t kCacheLine = 64;
inline constexpr std::uint32_t kMaxVertexId = (1u << 30) - 2;  // ids < 2^30 - 1

enum class Errc {
  IoError,
  CapacityTooSmall,
  BadMagic,
  VersionMismatch,
  OutOfBounds,
  Misaligned,
  RegionCapacityExceeded,
  BadConfig,
  Overflow,
  CorruptRegion,
  CheckpointAreaTooSmall,
  UnknownVertex,
  ParseError,
  IdOverflow,
  BadParams,
  EmptyGraph,
  UnknownKernel,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) { throw Error(code, what); }

constexpr std::uint64_t align_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }
constexpr std::uint64_t align_down(std::uint64_t v, std::uint64_t a) { return v / a * a; }

// Little-endian scalar access into raw byte buffers. x86 is little-endian but
// going through memcpy keeps this well-defined everywhere.
inline std::uint32_t load_le32(const std::uint8_t* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}
inline std::uint64_t load_le64(const std::uint8_t* p) {
  std::uint64_t v;
  std::memcpy(&v, p, 8);
  return v;
}
inline void store_le32(std::uint8_t* p, std::uint32_t v) { std::memcpy(p, &v, 4); }
inline void store_le64(std::uint8_t* p, std::uint64_t v) { std::memcpy(p, &v, 8); }

// splitmix64; used wherever a cheap deterministic hash of a few words is needed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace dgap

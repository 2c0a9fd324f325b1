#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace dexnet {

/// Incremental 64-bit FNV-1a digest.
class Fnv1a64 {
 public:
  Fnv1a64& update(std::span<const std::byte> bytes) {
    for (std::byte b : bytes) {
      state_ ^= static_cast<std::uint64_t>(b);
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }

  Fnv1a64& update(std::string_view text) {
    return update(std::as_bytes(std::span(text.data(), text.size())));
  }

  template <typename T>
  Fnv1a64& update_pod(const T& value) {
    return update(std::as_bytes(std::span(&value, 1)));
  }

  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a64(std::span<const std::byte> bytes) {
  return Fnv1a64{}.update(bytes).digest();
}

inline std::uint64_t fnv1a64(std::string_view text) {
  return Fnv1a64{}.update(text).digest();
}

inline std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

inline std::uint32_t crc32_of(std::span<const std::byte> bytes, std::uint32_t seed = 0) {
  return static_cast<std::uint32_t>(
      ::crc32(seed, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

/// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for sub-stream `index` of `base`. Pure, so streams can be drawn in any order.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  return derive_seed(base, fnv1a64(tag));
}

}  // namespace dexnet

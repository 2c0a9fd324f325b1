#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dexnet/architectures.hpp"
#include "dexnet/manifest.hpp"

namespace dexnet {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

enum class WeightsState { generic_pretrained, domain_adapted };

inline std::string_view to_string(WeightsState s) {
  return s == WeightsState::generic_pretrained ? "generic_pretrained" : "domain_adapted";
}

inline WeightsState weights_state_from_string(std::string_view s) {
  if (s == "generic_pretrained") return WeightsState::generic_pretrained;
  if (s == "domain_adapted") return WeightsState::domain_adapted;
  throw ConfigError("unknown weights state '" + std::string(s) + "'");
}

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const std::byte*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void str(std::string_view s) {
    pod(static_cast<std::uint32_t>(s.size()));
    const auto* p = reinterpret_cast<const std::byte*>(s.data());
    bytes.insert(bytes.end(), p, p + s.size());
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::byte*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::byte> bytes;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> b) : bytes_(b) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + at_, sizeof(T));
    at_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + at_), n);
    at_ += n;
    return s;
  }
  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, bytes_.data() + at_, n);
    at_ += n;
  }
  bool done() const { return at_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (at_ + n > bytes_.size()) throw WeightsUnavailable("truncated weights payload");
  }
  std::span<const std::byte> bytes_;
  std::size_t at_ = 0;
};

inline constexpr char kWeightsMagic[4] = {'D', 'E', 'X', 'W'};
inline constexpr std::uint16_t kWeightsVersion = 1;

}  // namespace detail

/// Serialized backbone parameters. The file layout is
///   "DEXW" u16 version u16 reserved, critic name, u32 width divisor,
///   u32 input size, u32 tensor count, then per tensor:
///   name, 4 x u32 shape, f32 little-endian values.
/// Tensor names follow the torchvision state-dict keys.
template <typename T>
std::vector<std::byte> serialize_weights(CriticId id, CriticScale scale, nn::Module<T>& net) {
  detail::ByteWriter w;
  w.raw(detail::kWeightsMagic, 4);
  w.pod(detail::kWeightsVersion);
  w.pod(std::uint16_t{0});
  w.str(to_string(id));
  w.pod(static_cast<std::uint32_t>(scale.width_divisor));
  w.pod(static_cast<std::uint32_t>(scale.input_size));
  std::uint32_t count = 0;
  net.visit("", [&](const std::string&, nn::Parameter<T>&) { ++count; });
  w.pod(count);
  net.visit("", [&](const std::string& name, nn::Parameter<T>& p) {
    w.str(name);
    for (auto d : p.value.shape()) w.pod(static_cast<std::uint32_t>(d));
    for (T v : p.value.storage()) w.pod(static_cast<float>(v));
  });
  return std::move(w.bytes);
}

struct WeightsHeader {
  CriticId critic;
  CriticScale scale;
};

inline WeightsHeader read_weights_header(std::span<const std::byte> bytes) {
  detail::ByteReader r(bytes);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, detail::kWeightsMagic, 4) != 0) throw WeightsUnavailable("bad weights magic");
  if (r.pod<std::uint16_t>() != detail::kWeightsVersion) throw WeightsUnavailable("unsupported weights version");
  r.pod<std::uint16_t>();
  WeightsHeader h{critic_from_string(r.str()), {}};
  h.scale.width_divisor = r.pod<std::uint32_t>();
  h.scale.input_size = r.pod<std::uint32_t>();
  return h;
}

/// Loads a serialized payload into `net`; names and shapes must match exactly.
template <typename T>
void deserialize_weights(std::span<const std::byte> bytes, nn::Module<T>& net) {
  detail::ByteReader r(bytes);
  char magic[4];
  r.raw(magic, 4);
  r.pod<std::uint16_t>();
  r.pod<std::uint16_t>();
  r.str();
  r.pod<std::uint32_t>();
  r.pod<std::uint32_t>();
  const auto count = r.pod<std::uint32_t>();
  std::map<std::string, std::pair<std::array<std::size_t, 4>, std::vector<float>>> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    std::array<std::size_t, 4> shape{};
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.pod<std::uint32_t>();
      n *= d;
    }
    std::vector<float> values(n);
    r.raw(values.data(), n * sizeof(float));
    tensors.emplace(std::move(name), std::make_pair(shape, std::move(values)));
  }
  if (!r.done()) throw WeightsUnavailable("trailing bytes in weights payload");
  std::size_t used = 0;
  net.visit("", [&](const std::string& name, nn::Parameter<T>& p) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw WeightsUnavailable("weights lack tensor " + name);
    if (it->second.first != p.value.shape()) throw WeightsUnavailable("shape mismatch for " + name);
    std::transform(it->second.second.begin(), it->second.second.end(), p.value.data(),
                   [](float v) { return static_cast<T>(v); });
    ++used;
  });
  if (used != tensors.size()) throw WeightsUnavailable("weights carry tensors the architecture does not have");
}

/// Directory of weight files `<critic>.<state>.<hash>.bin` plus `index.json`
/// mapping critic -> state -> hash.
class WeightsStore {
 public:
  explicit WeightsStore(fs::path dir) : dir_(std::move(dir)) {}

  const fs::path& dir() const { return dir_; }

  fs::path file_for(CriticId id, WeightsState state, const std::string& hash) const {
    return dir_ / (std::string(to_string(id)) + "." + std::string(to_string(state)) + "." + hash + ".bin");
  }

  /// Writes the payload, records it in the index, returns its hash.
  std::string save(CriticId id, WeightsState state, std::span<const std::byte> payload) {
    std::lock_guard lock(mutex_);
    const std::string hash = to_hex(fnv1a64(payload));
    std::error_code ec;
    fs::create_directories(dir_, ec);
    const fs::path path = file_for(id, state, hash);
    {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
      if (!out) throw IoError("cannot write " + path.string());
    }
    json index = read_index();
    index[std::string(to_string(id))][std::string(to_string(state))] = hash;
    write_text_file(dir_ / "index.json", index.dump(2) + "\n");
    return hash;
  }

  std::optional<std::string> hash_of(CriticId id, WeightsState state) const {
    const json index = read_index();
    const auto c = index.find(std::string(to_string(id)));
    if (c == index.end()) return std::nullopt;
    const auto s = c->find(std::string(to_string(state)));
    if (s == c->end()) return std::nullopt;
    return s->get<std::string>();
  }

  /// Payload whose digest matches the indexed hash.
  std::vector<std::byte> load(CriticId id, WeightsState state) const {
    const auto hash = hash_of(id, state);
    if (!hash) {
      throw WeightsUnavailable(std::string(to_string(id)) + "/" + std::string(to_string(state)) +
                               " not in weights index");
    }
    return load(id, state, *hash);
  }

  /// A specific generation, regardless of what the index currently points at.
  std::vector<std::byte> load(CriticId id, WeightsState state, const std::string& hash) const {
    const fs::path path = file_for(id, state, hash);
    std::vector<std::byte> bytes;
    try {
      bytes = read_file_bytes(path);
    } catch (const IoError&) {
      throw WeightsUnavailable("missing weight file " + path.string());
    }
    if (to_hex(fnv1a64(bytes)) != hash) throw WeightsUnavailable("digest mismatch for " + path.string());
    return bytes;
  }

 private:
  json read_index() const {
    const fs::path p = dir_ / "index.json";
    std::error_code ec;
    if (!fs::exists(p, ec)) return json::object();
    try {
      return json::parse(read_text_file(p));
    } catch (const json::exception& e) {
      throw WeightsUnavailable(std::string("unreadable weights index: ") + e.what());
    }
  }

  fs::path dir_;
  mutable std::mutex mutex_;
};

}  // namespace dexnet

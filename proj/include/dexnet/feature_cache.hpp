#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "dexnet/fusion.hpp"

namespace dexnet {

struct FeatureCacheKey {
  CriticId critic = CriticId::resnet18;
  std::string weights_hash;
  std::string dataset_id;
  std::string sample_id;
};

/// Append-only file of float32 records for one (critic, dataset, weights) triple.
///
/// Header: "DEXF", u16 version, critic label, weights hash, u32 dim,
/// u64 record count, u8 dtype (0 = f32 little-endian). Strings are u32
/// length-prefixed UTF-8. Each record is the sample id, dim x 4 bytes,
/// then a CRC32 over id bytes and vector bytes.
///
/// Any number of concurrent readers; writes take the file exclusively.
class RecordFile {
 public:
  static constexpr std::uint16_t kVersion = 1;

  RecordFile(fs::path path, std::string label, std::string weights_hash, std::uint32_t dim)
      : path_(std::move(path)), label_(std::move(label)), hash_(std::move(weights_hash)), dim_(dim) {
    std::error_code ec;
    if (fs::exists(path_, ec)) {
      load_index();
    } else {
      if (path_.has_parent_path()) fs::create_directories(path_.parent_path(), ec);
      write_header();
    }
  }

  const fs::path& path() const { return path_; }
  std::uint32_t dim() const { return dim_; }

  std::size_t count() const {
    std::shared_lock lock(mutex_);
    return index_.size();
  }

  bool contains(const std::string& id) const {
    std::shared_lock lock(mutex_);
    return index_.contains(id);
  }

  void put(const std::string& id, std::span<const float> vector) {
    if (vector.size() != dim_) {
      throw DimensionError(label_ + " record needs " + std::to_string(dim_) + " values, got " +
                           std::to_string(vector.size()));
    }
    std::unique_lock lock(mutex_);
    if (auto it = index_.find(id); it != index_.end()) {
      const auto existing = read_record(it->second, id);
      if (std::memcmp(existing.data(), vector.data(), vector.size() * sizeof(float)) == 0) return;
    }
    std::vector<char> rec;
    append_str(rec, id);
    const auto* fb = reinterpret_cast<const char*>(vector.data());
    rec.insert(rec.end(), fb, fb + vector.size() * sizeof(float));
    const std::uint32_t crc = record_crc(id, vector);
    append_pod(rec, crc);

    std::fstream f(path_, std::ios::in | std::ios::out | std::ios::binary);
    if (!f) throw IoError("cannot open " + path_.string());
    f.seekp(static_cast<std::streamoff>(end_));
    f.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    index_[id] = end_;
    end_ += rec.size();
    records_ += 1;
    f.seekp(static_cast<std::streamoff>(count_offset_));
    f.write(reinterpret_cast<const char*>(&records_), sizeof(records_));
    f.flush();
    if (!f) throw IoError("write failed on " + path_.string());
  }

  std::optional<std::vector<float>> get(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return read_record(it->second, id);
  }

  /// Every live record, in id order.
  std::map<std::string, std::vector<float>> read_all() const {
    std::shared_lock lock(mutex_);
    std::map<std::string, std::vector<float>> out;
    for (const auto& [id, offset] : index_) out.emplace(id, read_record(offset, id));
    return out;
  }

 private:
  template <typename T>
  static void append_pod(std::vector<char>& buf, const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf.insert(buf.end(), p, p + sizeof(T));
  }
  static void append_str(std::vector<char>& buf, const std::string& s) {
    append_pod(buf, static_cast<std::uint32_t>(s.size()));
    buf.insert(buf.end(), s.begin(), s.end());
  }

  static std::uint32_t record_crc(const std::string& id, std::span<const float> v) {
    const std::uint32_t c = crc32_of(std::as_bytes(std::span(id.data(), id.size())));
    return crc32_of(std::as_bytes(v), c);
  }

  void write_header() {
    std::vector<char> h = {'D', 'E', 'X', 'F'};
    append_pod(h, kVersion);
    append_str(h, label_);
    append_str(h, hash_);
    append_pod(h, dim_);
    count_offset_ = h.size();
    append_pod(h, std::uint64_t{0});
    append_pod(h, std::uint8_t{0});
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    if (!out) throw IoError("cannot create " + path_.string());
    end_ = h.size();
  }

  void load_index() {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw IoError("cannot open " + path_.string());
    auto fail = [&](const std::string& why) { throw CacheCorrupt(path_.string() + ": " + why); };
    auto read = [&](void* dst, std::size_t n) {
      in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
      return static_cast<bool>(in);
    };
    auto read_str = [&](std::string& s) {
      std::uint32_t n = 0;
      if (!read(&n, sizeof(n)) || n > (1u << 20)) return false;
      s.resize(n);
      return n == 0 || read(s.data(), n);
    };
    char magic[4];
    std::uint16_t version = 0;
    std::string label, hash;
    std::uint32_t dim = 0;
    std::uint64_t count = 0;
    std::uint8_t dtype = 0;
    if (!read(magic, 4) || std::memcmp(magic, "DEXF", 4) != 0) fail("bad magic");
    if (!read(&version, sizeof(version)) || version != kVersion) fail("unsupported version");
    if (!read_str(label) || !read_str(hash) || !read(&dim, sizeof(dim))) fail("truncated header");
    count_offset_ = static_cast<std::size_t>(in.tellg());
    if (!read(&count, sizeof(count)) || !read(&dtype, sizeof(dtype))) fail("truncated header");
    if (label != label_ || hash != hash_ || dim != dim_ || dtype != 0) fail("header does not match its key");
    end_ = static_cast<std::size_t>(in.tellg());
    const auto file_size = static_cast<std::size_t>(fs::file_size(path_));
    // A torn trailing record (crash mid-append) is dropped and later overwritten.
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::size_t at = end_;
      std::string id;
      if (!read_str(id)) break;
      const std::size_t next = at + sizeof(std::uint32_t) + id.size() + dim_ * sizeof(float) + sizeof(std::uint32_t);
      if (next > file_size) break;
      in.seekg(static_cast<std::streamoff>(next));
      index_[id] = at;
      end_ = next;
      records_ = i + 1;
    }
  }

  std::vector<float> read_record(std::size_t offset, const std::string& id) const {
    std::ifstream in(path_, std::ios::binary);
    in.seekg(static_cast<std::streamoff>(offset));
    std::uint32_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    std::string stored(n, '\0');
    in.read(stored.data(), n);
    std::vector<float> v(dim_);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(dim_ * sizeof(float)));
    std::uint32_t crc = 0;
    in.read(reinterpret_cast<char*>(&crc), sizeof(crc));
    if (!in) throw CacheCorrupt(path_.string() + ": truncated record for " + id);
    if (stored != id || crc != record_crc(stored, v)) throw CacheCorrupt(path_.string() + ": checksum mismatch for " + id);
    return v;
  }

  fs::path path_;
  std::string label_, hash_;
  std::uint32_t dim_;
  std::size_t count_offset_ = 0;
  std::size_t end_ = 0;
  std::uint64_t records_ = 0;
  std::map<std::string, std::size_t> index_;
  mutable std::shared_mutex mutex_;
};

/// Embedding cache keyed by (critic, weights hash, dataset, sample). A new
/// weights hash lands in a new file, so re-adapted critics never read stale
/// vectors.
class FeatureCache {
 public:
  FeatureCache(fs::path dir, CriticScale scale) : dir_(std::move(dir)), scale_(scale) {}

  const fs::path& dir() const { return dir_; }
  const CriticScale& scale() const { return scale_; }

  void put(const FeatureCacheKey& key, std::span<const float> vector) {
    const std::size_t expected = embedding_dim(key.critic, scale_);
    if (vector.size() != expected) {
      throw DimensionError(std::string(to_string(key.critic)) + " vectors have " + std::to_string(expected) +
                           " dims, got " + std::to_string(vector.size()));
    }
    file(key).put(key.sample_id, vector);
  }

  std::optional<std::vector<float>> get(const FeatureCacheKey& key) const {
    auto* f = existing(key);
    return f ? f->get(key.sample_id) : std::nullopt;
  }

  bool contains(const FeatureCacheKey& key) const {
    auto* f = existing(key);
    return f && f->contains(key.sample_id);
  }

  std::map<std::string, std::vector<float>> read_all(CriticId critic, const std::string& weights_hash,
                                                     const std::string& dataset_id) const {
    auto* f = existing({critic, weights_hash, dataset_id, {}});
    return f ? f->read_all() : std::map<std::string, std::vector<float>>{};
  }

  fs::path path_for(const FeatureCacheKey& key) const {
    return dir_ / (std::string(to_string(key.critic)) + "__" + key.dataset_id + "__" + key.weights_hash + ".dexf");
  }

 private:
  RecordFile& file(const FeatureCacheKey& key) const {
    const fs::path path = path_for(key);
    std::lock_guard lock(files_mutex_);
    auto it = files_.find(path.string());
    if (it == files_.end()) {
      auto f = std::make_unique<RecordFile>(path, std::string(to_string(key.critic)), key.weights_hash,
                                            static_cast<std::uint32_t>(embedding_dim(key.critic, scale_)));
      it = files_.emplace(path.string(), std::move(f)).first;
    }
    return *it->second;
  }

  RecordFile* existing(const FeatureCacheKey& key) const {
    const fs::path path = path_for(key);
    {
      std::lock_guard lock(files_mutex_);
      if (auto it = files_.find(path.string()); it != files_.end()) return it->second.get();
    }
    std::error_code ec;
    if (!fs::exists(path, ec)) return nullptr;
    return &file(key);
  }

  fs::path dir_;
  CriticScale scale_;
  mutable std::mutex files_mutex_;
  mutable std::map<std::string, std::unique_ptr<RecordFile>> files_;
};

/// Weight generation to assemble from: critic -> weights hash.
using WeightsGeneration = std::map<CriticId, std::string>;

/// Gathers one observation per layout critic from the cache. Every absent
/// critic is named in the IncompleteBundle message.
inline ObservationBundle assemble_bundle(const std::string& sample_id, const FeatureCache& cache,
                                         const WeightsGeneration& generation, const std::string& dataset_id,
                                         const FusionLayout& layout, WeightsState state) {
  std::vector<Embedding> embeddings;
  std::vector<std::string> missing;
  for (CriticId id : layout.critics()) {
    auto hash = generation.find(id);
    std::optional<std::vector<float>> v;
    if (hash != generation.end()) v = cache.get({id, hash->second, dataset_id, sample_id});
    if (!v) {
      missing.emplace_back(to_string(id));
      continue;
    }
    embeddings.push_back({id, hash->second, state, sample_id, std::move(*v)});
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw IncompleteBundle("missing observations for " + sample_id + ": [" + list + "]");
  }
  return {sample_id, std::move(embeddings), layout};
}

/// Writes fused vectors to the record format under critic label "fused".
inline void export_fused(const fs::path& path, const std::string& generation_hash,
                         const std::vector<FusedFeature>& features) {
  if (features.empty()) throw ConfigError("nothing to export");
  const auto dim = static_cast<std::uint32_t>(features.front().values.size());
  RecordFile file(path, "fused", generation_hash, dim);
  for (const auto& f : features) file.put(f.sample_id, f.values);
}

}  // namespace dexnet

#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "dexnet/experiment.hpp"

namespace dexnet::testing {

/// In-memory manifest whose samples point nowhere; enough for protocol and
/// episode logic.
inline DatasetManifest fake_manifest(const std::string& id, const std::vector<std::string>& classes,
                                     std::size_t per_class) {
  std::map<std::string, std::vector<ImageSample>> samples;
  for (const auto& c : classes) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::string sid = c + "/" + std::to_string(i) + ".jpg";
      samples[c].push_back({sid, c, id, fnv1a64(id + sid)});
    }
  }
  return {id, std::move(samples)};
}

inline std::vector<std::string> numbered(const std::string& prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("dexnet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline Embedding fake_embedding(CriticId id, const std::string& sample, CriticScale scale, float fill,
                                const std::string& hash = "h0") {
  return {id, hash, WeightsState::generic_pretrained, sample, std::vector<float>(embedding_dim(id, scale), fill)};
}

}  // namespace dexnet::testing

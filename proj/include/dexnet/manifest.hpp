#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dexnet/error.hpp"
#include "dexnet/hashing.hpp"

namespace dexnet {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct ImageSample {
  std::string sample_id;  // "<class>/<file>" relative to the dataset root
  std::string class_label;
  std::string dataset_id;
  std::uint64_t content_hash = 0;

  friend bool operator==(const ImageSample&, const ImageSample&) = default;
  friend auto operator<=>(const ImageSample& a, const ImageSample& b) {
    return a.sample_id <=> b.sample_id;
  }
};

inline std::vector<std::byte> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw IoError("short read on " + path.string());
  }
  return bytes;
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed on " + path.string());
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Immutable inventory of one image dataset. Classes are kept in
/// lexicographic order; that order defines label indices downstream.
class DatasetManifest {
 public:
  DatasetManifest() = default;

  DatasetManifest(std::string dataset_id, std::map<std::string, std::vector<ImageSample>> samples,
                  std::string root = {}, std::string created_at = {})
      : dataset_id_(std::move(dataset_id)),
        root_(std::move(root)),
        created_at_(std::move(created_at)),
        samples_(std::move(samples)) {
    std::set<std::string> seen;
    for (auto& [label, list] : samples_) {
      if (list.empty()) throw ClassEmpty("class '" + label + "' has no samples");
      std::sort(list.begin(), list.end());
      for (auto& s : list) {
        if (s.class_label != label) {
          throw ConfigError("sample " + s.sample_id + " filed under '" + label + "' but labelled '" +
                            s.class_label + "'");
        }
        if (!seen.insert(s.sample_id).second) throw ConfigError("duplicate sample id " + s.sample_id);
        s.dataset_id = dataset_id_;
      }
      classes_.push_back(label);
    }
  }

  const std::string& dataset_id() const { return dataset_id_; }
  const std::string& root() const { return root_; }
  const std::string& created_at() const { return created_at_; }
  const std::vector<std::string>& classes() const { return classes_; }

  bool has_class(const std::string& label) const { return samples_.contains(label); }

  const std::vector<ImageSample>& samples(const std::string& label) const {
    auto it = samples_.find(label);
    if (it == samples_.end()) throw ProtocolClassMissing("class '" + label + "' not in " + dataset_id_);
    return it->second;
  }

  std::size_t sample_count() const {
    std::size_t n = 0;
    for (const auto& [_, list] : samples_) n += list.size();
    return n;
  }

  fs::path path_of(const ImageSample& sample) const { return fs::path(root_) / sample.sample_id; }

  /// Content equality; the creation timestamp is not part of a manifest's identity.
  bool same_content(const DatasetManifest& other) const {
    return dataset_id_ == other.dataset_id_ && root_ == other.root_ && samples_ == other.samples_;
  }

  json to_json() const {
    json samples = json::array();
    for (const auto& label : classes_) {
      for (const auto& s : samples_.at(label)) {
        samples.push_back({{"id", s.sample_id}, {"class", s.class_label}, {"hash", to_hex(s.content_hash)}});
      }
    }
    return {{"dataset_id", dataset_id_},
            {"classes", classes_},
            {"samples", std::move(samples)},
            {"root", root_},
            {"created_at", created_at_}};
  }

  static DatasetManifest from_json(const json& j) {
    std::map<std::string, std::vector<ImageSample>> grouped;
    const std::string id = j.at("dataset_id").get<std::string>();
    for (const auto& label : j.at("classes")) grouped[label.get<std::string>()];
    for (const auto& s : j.at("samples")) {
      ImageSample sample{s.at("id").get<std::string>(), s.at("class").get<std::string>(), id,
                         std::stoull(s.at("hash").get<std::string>(), nullptr, 16)};
      auto it = grouped.find(sample.class_label);
      if (it == grouped.end()) throw ConfigError("sample " + sample.sample_id + " has undeclared class");
      it->second.push_back(std::move(sample));
    }
    return DatasetManifest(id, std::move(grouped), j.value("root", std::string{}),
                           j.value("created_at", std::string{}));
  }

 private:
  std::string dataset_id_;
  std::string root_;
  std::string created_at_;
  std::vector<std::string> classes_;
  std::map<std::string, std::vector<ImageSample>> samples_;
};

struct SkippedFile {
  std::string path;
  std::string reason;
};

struct ScanResult {
  DatasetManifest manifest;
  std::vector<SkippedFile> skipped;
};

namespace detail {

inline bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

inline bool has_image_signature(const std::vector<std::byte>& bytes) {
  auto at = [&](std::size_t i) { return std::to_integer<unsigned>(bytes[i]); };
  if (bytes.size() >= 3 && at(0) == 0xFF && at(1) == 0xD8 && at(2) == 0xFF) return true;
  return bytes.size() >= 8 && at(0) == 0x89 && at(1) == 'P' && at(2) == 'N' && at(3) == 'G' &&
         at(4) == 0x0D && at(5) == 0x0A && at(6) == 0x1A && at(7) == 0x0A;
}

}  // namespace detail

/// Walks `<root>/<class>/...` and fingerprints every JPEG/PNG file.
/// Unreadable files land in the skip report; a class with no readable
/// image is an error.
inline ScanResult scan_dataset(const fs::path& root, const std::string& dataset_id) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw NoClassesFound(root.string() + " is not a directory");

  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    const auto name = entry.path().filename().string();
    if (entry.is_directory() && !name.empty() && name.front() != '.') class_dirs.push_back(entry.path());
  }
  if (class_dirs.empty()) throw NoClassesFound("no class directories under " + root.string());
  std::sort(class_dirs.begin(), class_dirs.end());

  ScanResult result;
  std::map<std::string, std::vector<ImageSample>> grouped;
  for (const auto& dir : class_dirs) {
    const std::string label = dir.filename().string();
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (entry.is_regular_file() && detail::has_image_extension(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    auto& list = grouped[label];
    for (const auto& file : files) {
      const std::string rel = fs::relative(file, root).generic_string();
      std::vector<std::byte> bytes;
      try {
        bytes = read_file_bytes(file);
      } catch (const IoError& e) {
        result.skipped.push_back({rel, e.what()});
        continue;
      }
      if (!detail::has_image_signature(bytes)) {
        result.skipped.push_back({rel, "not a JPEG/PNG stream"});
        continue;
      }
      list.push_back({rel, label, dataset_id, fnv1a64(bytes)});
    }
    if (list.empty()) throw ClassEmpty("class '" + label + "' has no readable images");
  }
  result.manifest = DatasetManifest(dataset_id, std::move(grouped), fs::absolute(root).lexically_normal().string(),
                                    utc_timestamp());
  return result;
}

}  // namespace dexnet

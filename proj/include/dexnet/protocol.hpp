#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dexnet/manifest.hpp"
#include "dexnet/random.hpp"

namespace dexnet {

enum class ProtocolId { pv_tomato10, pv_argueso6, pnp_mixed, pnp_cross1, pnp_cross2, potato_field, cotton_field, custom };

inline constexpr std::array<ProtocolId, 8> kAllProtocols = {
    ProtocolId::pv_tomato10, ProtocolId::pv_argueso6, ProtocolId::pnp_mixed,    ProtocolId::pnp_cross1,
    ProtocolId::pnp_cross2,  ProtocolId::potato_field, ProtocolId::cotton_field, ProtocolId::custom};

inline std::string_view to_string(ProtocolId id) {
  switch (id) {
    case ProtocolId::pv_tomato10: return "pv_tomato10";
    case ProtocolId::pv_argueso6: return "pv_argueso6";
    case ProtocolId::pnp_mixed: return "pnp_mixed";
    case ProtocolId::pnp_cross1: return "pnp_cross1";
    case ProtocolId::pnp_cross2: return "pnp_cross2";
    case ProtocolId::potato_field: return "potato_field";
    case ProtocolId::cotton_field: return "cotton_field";
    case ProtocolId::custom: return "custom";
  }
  return "?";
}

inline ProtocolId protocol_from_string(std::string_view name) {
  for (ProtocolId id : kAllProtocols) {
    if (to_string(id) == name) return id;
  }
  throw ConfigError("unknown protocol '" + std::string(name) + "'");
}

/// Directory names of the 38 PlantVillage classes, in canonical order.
inline const std::vector<std::string>& plantvillage_classes() {
  static const std::vector<std::string> names = {
      "Apple___Apple_scab",
      "Apple___Black_rot",
      "Apple___Cedar_apple_rust",
      "Apple___healthy",
      "Blueberry___healthy",
      "Cherry_(including_sour)___Powdery_mildew",
      "Cherry_(including_sour)___healthy",
      "Corn_(maize)___Cercospora_leaf_spot Gray_leaf_spot",
      "Corn_(maize)___Common_rust_",
      "Corn_(maize)___Northern_Leaf_Blight",
      "Corn_(maize)___healthy",
      "Grape___Black_rot",
      "Grape___Esca_(Black_Measles)",
      "Grape___Leaf_blight_(Isariopsis_Leaf_Spot)",
      "Grape___healthy",
      "Orange___Haunglongbing_(Citrus_greening)",
      "Peach___Bacterial_spot",
      "Peach___healthy",
      "Pepper,_bell___Bacterial_spot",
      "Pepper,_bell___healthy",
      "Potato___Early_blight",
      "Potato___Late_blight",
      "Potato___healthy",
      "Raspberry___healthy",
      "Soybean___healthy",
      "Squash___Powdery_mildew",
      "Strawberry___Leaf_scorch",
      "Strawberry___healthy",
      "Tomato___Bacterial_spot",
      "Tomato___Early_blight",
      "Tomato___Late_blight",
      "Tomato___Leaf_Mold",
      "Tomato___Septoria_leaf_spot",
      "Tomato___Spider_mites Two-spotted_spider_mite",
      "Tomato___Target_Spot",
      "Tomato___Tomato_Yellow_Leaf_Curl_Virus",
      "Tomato___Tomato_mosaic_virus",
      "Tomato___healthy",
  };
  return names;
}

inline std::vector<std::string> plantvillage_tomato_classes() {
  std::vector<std::string> out;
  for (const auto& c : plantvillage_classes()) {
    if (c.starts_with("Tomato___")) out.push_back(c);
  }
  return out;
}

/// Six apple/blueberry/cherry target classes of the PlantVillage-6 benchmark.
inline std::vector<std::string> plantvillage_argueso_classes() {
  return {"Apple___Apple_scab",       "Apple___Black_rot",   "Apple___Cedar_apple_rust",
          "Apple___healthy",          "Blueberry___healthy", "Cherry_(including_sour)___healthy"};
}

inline constexpr std::string_view kPlantVillageDataset = "plantvillage";
inline constexpr std::string_view kPnpPlantsDataset = "pnp_plants";
inline constexpr std::string_view kPnpPestsDataset = "pnp_pests";
inline constexpr std::string_view kPotatoFieldDataset = "potato_field";
inline constexpr std::string_view kCottonFieldDataset = "cotton_field";

/// Support:query proportion, e.g. {80, 20}.
struct SplitRatio {
  std::uint32_t support = 80;
  std::uint32_t query = 20;

  /// round-half-up(total * query / (support + query)), clamped so both sides keep one sample.
  std::size_t query_count(std::size_t total) const {
    const std::uint64_t den = std::uint64_t{support} + query;
    std::size_t q = static_cast<std::size_t>((2 * std::uint64_t{total} * query + den) / (2 * den));
    return std::clamp<std::size_t>(q, 1, total - 1);
  }
};

/// User-supplied class lists for ProtocolId::custom.
struct CustomProtocol {
  std::vector<std::string> meta_train;
  std::vector<std::string> meta_test;
};

/// Disjoint meta-train / meta-test classes and, once partitioned, the
/// per-class support and query pools of the meta-test side.
class MetaSplit {
 public:
  ProtocolId protocol_id = ProtocolId::custom;
  std::uint64_t split_seed = 0;
  std::optional<SplitRatio> ratio;  // set once pools are filled
  std::vector<std::string> meta_train_classes;
  std::vector<std::string> meta_test_classes;
  std::map<std::string, std::vector<ImageSample>> support_pool;
  std::map<std::string, std::vector<ImageSample>> query_pool;
  /// Every sample of every class on either side, keyed by class.
  std::map<std::string, std::vector<ImageSample>> class_samples;

  bool partitioned() const { return ratio.has_value(); }

  std::size_t query_pool_size() const {
    std::size_t n = 0;
    for (const auto& [_, v] : query_pool) n += v.size();
    return n;
  }

  std::size_t support_pool_size() const {
    std::size_t n = 0;
    for (const auto& [_, v] : support_pool) n += v.size();
    return n;
  }

  std::size_t min_support_pool() const {
    std::size_t m = SIZE_MAX;
    for (const auto& [_, v] : support_pool) m = std::min(m, v.size());
    return support_pool.empty() ? 0 : m;
  }

  std::size_t min_query_pool() const {
    std::size_t m = SIZE_MAX;
    for (const auto& [_, v] : query_pool) m = std::min(m, v.size());
    return query_pool.empty() ? 0 : m;
  }

  std::vector<ImageSample> meta_train_samples() const {
    std::vector<ImageSample> out;
    for (const auto& c : meta_train_classes) {
      const auto& v = class_samples.at(c);
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  }

  json to_json() const {
    auto ids = [](const std::map<std::string, std::vector<ImageSample>>& pools) {
      json j = json::object();
      for (const auto& [c, v] : pools) {
        json list = json::array();
        for (const auto& s : v) list.push_back(s.sample_id);
        j[c] = std::move(list);
      }
      return j;
    };
    json j = {{"protocol_id", std::string(to_string(protocol_id))},
              {"split_seed", split_seed},
              {"meta_train_classes", meta_train_classes},
              {"meta_test_classes", meta_test_classes},
              {"support_pool", ids(support_pool)},
              {"query_pool", ids(query_pool)}};
    if (ratio) j["ratio"] = {ratio->support, ratio->query};
    return j;
  }
};

namespace detail {

struct ClassIndex {
  std::map<std::string, const DatasetManifest*> owner;

  explicit ClassIndex(std::span<const DatasetManifest> manifests) {
    for (const auto& m : manifests) {
      for (const auto& c : m.classes()) {
        auto [it, fresh] = owner.emplace(c, &m);
        if (!fresh) {
          throw ConfigError("class '" + c + "' appears in both " + it->second->dataset_id() + " and " +
                            m.dataset_id());
        }
      }
    }
  }

  void require(const std::vector<std::string>& classes, ProtocolId id) const {
    std::vector<std::string> missing;
    for (const auto& c : classes) {
      if (!owner.contains(c)) missing.push_back(c);
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto& c : missing) list += (list.empty() ? "" : ", ") + c;
      throw ProtocolClassMissing(std::string(to_string(id)) + " needs [" + list + "]");
    }
  }
};

inline const DatasetManifest& require_dataset(std::span<const DatasetManifest> manifests, std::string_view id,
                                              ProtocolId protocol) {
  for (const auto& m : manifests) {
    if (m.dataset_id() == id) return m;
  }
  throw ProtocolClassMissing(std::string(to_string(protocol)) + " needs dataset '" + std::string(id) + "'");
}

inline std::vector<std::string> without(const std::vector<std::string>& all, const std::vector<std::string>& drop) {
  std::vector<std::string> out;
  for (const auto& c : all) {
    if (std::find(drop.begin(), drop.end(), c) == drop.end()) out.push_back(c);
  }
  return out;
}

inline std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace detail

/// Resolves a protocol's class lists against the supplied manifests.
/// Pools are left empty; see partition_support_query.
inline MetaSplit build_meta_split(std::span<const DatasetManifest> manifests, ProtocolId protocol,
                                  std::uint64_t split_seed, const CustomProtocol& custom = {}) {
  detail::ClassIndex index(manifests);
  std::vector<std::string> train;
  std::vector<std::string> test;

  auto pnp_halves = [&](std::string_view dataset) {
    const auto& m = detail::require_dataset(manifests, dataset, protocol);
    if (m.classes().size() != 10) {
      throw ProtocolClassMissing(std::string(dataset) + " must have 10 classes, found " +
                                 std::to_string(m.classes().size()));
    }
    return m.classes();
  };

  switch (protocol) {
    case ProtocolId::pv_tomato10:
      test = plantvillage_tomato_classes();
      train = detail::without(plantvillage_classes(), test);
      break;
    case ProtocolId::pv_argueso6:
      test = plantvillage_argueso_classes();
      train = detail::without(plantvillage_classes(), test);
      break;
    case ProtocolId::pnp_mixed: {
      const auto plants = pnp_halves(kPnpPlantsDataset);
      const auto pests = pnp_halves(kPnpPestsDataset);
      train.assign(plants.begin(), plants.begin() + 5);
      train.insert(train.end(), pests.begin(), pests.begin() + 5);
      test.assign(plants.begin() + 5, plants.end());
      test.insert(test.end(), pests.begin() + 5, pests.end());
      break;
    }
    case ProtocolId::pnp_cross1:
      train = pnp_halves(kPnpPestsDataset);
      test = pnp_halves(kPnpPlantsDataset);
      break;
    case ProtocolId::pnp_cross2:
      train = pnp_halves(kPnpPlantsDataset);
      test = pnp_halves(kPnpPestsDataset);
      break;
    case ProtocolId::potato_field:
    case ProtocolId::cotton_field: {
      const auto target_id = protocol == ProtocolId::potato_field ? kPotatoFieldDataset : kCottonFieldDataset;
      test = detail::require_dataset(manifests, target_id, protocol).classes();
      for (const auto& m : manifests) {
        if (m.dataset_id() != target_id) train.insert(train.end(), m.classes().begin(), m.classes().end());
      }
      break;
    }
    case ProtocolId::custom:
      train = custom.meta_train;
      test = custom.meta_test;
      break;
  }

  train = detail::sorted(std::move(train));
  test = detail::sorted(std::move(test));
  for (const auto& c : test) {
    if (std::binary_search(train.begin(), train.end(), c)) {
      throw ClassOverlap("class '" + c + "' is on both sides of " + std::string(to_string(protocol)));
    }
  }
  if (std::adjacent_find(test.begin(), test.end()) != test.end() ||
      std::adjacent_find(train.begin(), train.end()) != train.end()) {
    throw ConfigError("duplicate class in protocol lists");
  }
  if (test.size() < 2) throw ConfigError("meta-test side needs at least two classes");
  index.require(train, protocol);
  index.require(test, protocol);

  MetaSplit split;
  split.protocol_id = protocol;
  split.split_seed = split_seed;
  split.meta_train_classes = std::move(train);
  split.meta_test_classes = std::move(test);
  for (const auto* side : {&split.meta_train_classes, &split.meta_test_classes}) {
    for (const auto& c : *side) split.class_samples[c] = index.owner.at(c)->samples(c);
  }
  return split;
}

/// Seeded one-time support/query partition of every meta-test class.
inline MetaSplit partition_support_query(MetaSplit split, SplitRatio ratio, std::uint64_t split_seed) {
  if (ratio.support == 0 || ratio.query == 0) throw ConfigError("split ratio must lie strictly inside (0,1)");
  if (split.partitioned()) throw ConfigError("pools already filled");
  split.split_seed = split_seed;
  for (const auto& c : split.meta_test_classes) {
    std::vector<ImageSample> all = split.class_samples.at(c);
    if (all.size() < 2) throw CannotPartition("class '" + c + "' has " + std::to_string(all.size()) + " sample(s)");
    Rng rng(derive_seed(split_seed, c));
    rng.shuffle(all);
    const std::size_t q = ratio.query_count(all.size());
    std::vector<ImageSample> query(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(q));
    std::vector<ImageSample> support(all.begin() + static_cast<std::ptrdiff_t>(q), all.end());
    std::sort(query.begin(), query.end());
    std::sort(support.begin(), support.end());
    split.query_pool[c] = std::move(query);
    split.support_pool[c] = std::move(support);
  }
  split.ratio = ratio;
  return split;
}

}  // namespace dexnet

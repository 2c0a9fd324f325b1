#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dexnet/protocol.hpp"

namespace dexnet {

/// N-way k-shot task shape. An empty `queries_per_class` means the full query pool.
struct EpisodeSpec {
  std::size_t n_ways = 10;
  std::size_t k_shots = 5;
  std::optional<std::size_t> queries_per_class = 50;
  std::size_t task_count = 100;
  std::uint64_t campaign_seed = 0;

  bool full_query() const { return !queries_per_class.has_value(); }

  json to_json() const {
    return {{"n_ways", n_ways},
            {"k_shots", k_shots},
            {"queries_per_class", queries_per_class ? json(*queries_per_class) : json("full")},
            {"task_count", task_count},
            {"campaign_seed", campaign_seed}};
  }

  static EpisodeSpec from_json(const json& j) {
    EpisodeSpec s;
    s.n_ways = j.at("n_ways").get<std::size_t>();
    s.k_shots = j.at("k_shots").get<std::size_t>();
    const auto& q = j.at("queries_per_class");
    if (q.is_string()) {
      if (q.get<std::string>() != "full") throw ConfigError("queries_per_class must be an integer or \"full\"");
      s.queries_per_class.reset();
    } else {
      s.queries_per_class = q.get<std::size_t>();
    }
    s.task_count = j.at("task_count").get<std::size_t>();
    s.campaign_seed = j.at("campaign_seed").get<std::uint64_t>();
    return s;
  }

  friend bool operator==(const EpisodeSpec&, const EpisodeSpec&) = default;
};

struct LabeledSample {
  ImageSample sample;
  std::size_t label = 0;

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

struct Episode {
  std::size_t task_index = 0;
  std::vector<std::string> classes;  // label index -> class name
  std::vector<LabeledSample> support;
  std::vector<LabeledSample> query;

  json to_json() const {
    auto list = [](const std::vector<LabeledSample>& v) {
      json j = json::array();
      for (const auto& s : v) j.push_back({s.sample.sample_id, s.label});
      return j;
    };
    return {{"task_index", task_index}, {"classes", classes}, {"support", list(support)}, {"query", list(query)}};
  }

  friend bool operator==(const Episode&, const Episode&) = default;
};

/// Draws task `task_index` of a campaign. The RNG stream depends only on
/// (campaign_seed, task_index), so tasks can be drawn in any order or in parallel.
inline Episode sample_episode(const MetaSplit& split, const EpisodeSpec& spec, std::size_t task_index) {
  if (!split.partitioned()) throw ConfigError("meta split has no support/query pools");
  if (task_index >= spec.task_count) {
    throw ConfigError("task index " + std::to_string(task_index) + " outside [0, " +
                      std::to_string(spec.task_count) + ")");
  }
  if (spec.k_shots == 0) throw ConfigError("k_shots must be positive");
  if (spec.queries_per_class && *spec.queries_per_class == 0) throw ConfigError("queries_per_class must be positive");
  const auto& all_classes = split.meta_test_classes;
  if (spec.n_ways < 2 || spec.n_ways > all_classes.size()) {
    throw ConfigError("n_ways=" + std::to_string(spec.n_ways) + " but " + std::to_string(all_classes.size()) +
                      " meta-test classes");
  }

  Rng rng(derive_seed(spec.campaign_seed, task_index));
  Episode ep;
  ep.task_index = task_index;
  if (spec.n_ways == all_classes.size()) {
    ep.classes = all_classes;
  } else {
    for (std::size_t i : rng.sample_indices(all_classes.size(), spec.n_ways)) ep.classes.push_back(all_classes[i]);
    std::sort(ep.classes.begin(), ep.classes.end());
  }

  for (std::size_t label = 0; label < ep.classes.size(); ++label) {
    const auto& name = ep.classes[label];
    const auto& support = split.support_pool.at(name);
    const auto& query = split.query_pool.at(name);
    if (spec.k_shots > support.size()) {
      throw InsufficientSupport("k=" + std::to_string(spec.k_shots) + " but '" + name + "' has " +
                                std::to_string(support.size()) + " support samples");
    }
    for (std::size_t i : rng.sample_indices(support.size(), spec.k_shots)) ep.support.push_back({support[i], label});

    if (spec.full_query()) {
      for (const auto& s : query) ep.query.push_back({s, label});
    } else {
      if (*spec.queries_per_class > query.size()) {
        throw InsufficientQuery("Q=" + std::to_string(*spec.queries_per_class) + " but '" + name + "' has " +
                                std::to_string(query.size()) + " query samples");
      }
      for (std::size_t i : rng.sample_indices(query.size(), *spec.queries_per_class)) {
        ep.query.push_back({query[i], label});
      }
    }
  }
  return ep;
}

}  // namespace dexnet

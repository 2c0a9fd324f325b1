#include <gtest/gtest.h>

#include <set>

#include "helpers.hpp"

using namespace dexnet;
using dexnet::testing::fake_manifest;
using dexnet::testing::numbered;

namespace {

// Published per-class image counts of the PlantVillage tomato subset.
const std::map<std::string, std::size_t> kTomatoCounts = {
    {"Tomato___Bacterial_spot", 2127},
    {"Tomato___Early_blight", 1000},
    {"Tomato___Late_blight", 1909},
    {"Tomato___Leaf_Mold", 952},
    {"Tomato___Septoria_leaf_spot", 1771},
    {"Tomato___Spider_mites Two-spotted_spider_mite", 1676},
    {"Tomato___Target_Spot", 1404},
    {"Tomato___Tomato_Yellow_Leaf_Curl_Virus", 5357},
    {"Tomato___Tomato_mosaic_virus", 373},
    {"Tomato___healthy", 1591},
};

DatasetManifest plantvillage_like(std::size_t other_per_class = 3) {
  std::map<std::string, std::vector<ImageSample>> samples;
  for (const auto& c : plantvillage_classes()) {
    const auto it = kTomatoCounts.find(c);
    const std::size_t n = it == kTomatoCounts.end() ? other_per_class : it->second;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string sid = c + "/" + std::to_string(i) + ".jpg";
      samples[c].push_back({sid, c, "plantvillage", i});
    }
  }
  return {"plantvillage", std::move(samples)};
}

std::vector<DatasetManifest> pnp_manifests(std::size_t per_class = 300) {
  return {fake_manifest("pnp_plants", numbered("plant_", 10), per_class),
          fake_manifest("pnp_pests", numbered("pest_", 10), per_class)};
}

}  // namespace

TEST(Protocol, TomatoTenSplitsTwentyEightAgainstTen) {
  const std::vector<DatasetManifest> ms = {plantvillage_like()};
  const auto split = build_meta_split(ms, ProtocolId::pv_tomato10, 0);
  EXPECT_EQ(split.meta_train_classes.size(), 28u);
  EXPECT_EQ(split.meta_test_classes.size(), 10u);
  for (const auto& c : split.meta_test_classes) EXPECT_TRUE(c.starts_with("Tomato___"));
}

TEST(Protocol, TomatoSubsetHasPublishedSize) {
  std::size_t total = 0;
  for (const auto& c : plantvillage_tomato_classes()) total += kTomatoCounts.at(c);
  EXPECT_EQ(total, 18160u);
}

TEST(Protocol, TomatoQueryPoolIsPerClassRounded) {
  const std::vector<DatasetManifest> ms = {plantvillage_like()};
  const auto split = partition_support_query(build_meta_split(ms, ProtocolId::pv_tomato10, 0), {}, 0);
  // round-half-up of 20% per class, summed by hand
  std::size_t expected = 0;
  for (const auto& [_, n] : kTomatoCounts) expected += static_cast<std::size_t>(std::floor(n * 0.2 + 0.5));
  EXPECT_EQ(expected, 3631u);
  EXPECT_EQ(split.query_pool_size(), expected);
  EXPECT_EQ(split.query_pool_size() + split.support_pool_size(), 18160u);
}

TEST(Protocol, ArguesoSixHoldsOutSixClasses) {
  const std::vector<DatasetManifest> ms = {plantvillage_like()};
  const auto split = build_meta_split(ms, ProtocolId::pv_argueso6, 0);
  EXPECT_EQ(split.meta_test_classes.size(), 6u);
  EXPECT_EQ(split.meta_train_classes.size(), 32u);
}

TEST(Protocol, PlantsAndPestsLayouts) {
  const auto ms = pnp_manifests();
  const auto mixed = build_meta_split(ms, ProtocolId::pnp_mixed, 0);
  auto count_prefix = [](const std::vector<std::string>& v, const std::string& p) {
    return std::count_if(v.begin(), v.end(), [&](const std::string& c) { return c.starts_with(p); });
  };
  EXPECT_EQ(count_prefix(mixed.meta_train_classes, "plant_"), 5);
  EXPECT_EQ(count_prefix(mixed.meta_train_classes, "pest_"), 5);
  EXPECT_EQ(count_prefix(mixed.meta_test_classes, "plant_"), 5);
  EXPECT_EQ(count_prefix(mixed.meta_test_classes, "pest_"), 5);

  const auto cross1 = build_meta_split(ms, ProtocolId::pnp_cross1, 0);
  EXPECT_EQ(count_prefix(cross1.meta_train_classes, "pest_"), 10);
  EXPECT_EQ(count_prefix(cross1.meta_test_classes, "plant_"), 10);
  for (const auto& c : cross1.meta_test_classes) EXPECT_EQ(cross1.class_samples.at(c).size(), 300u);

  const auto cross2 = build_meta_split(ms, ProtocolId::pnp_cross2, 0);
  EXPECT_EQ(cross2.meta_train_classes, cross1.meta_test_classes);
  EXPECT_EQ(cross2.meta_test_classes, cross1.meta_train_classes);
}

TEST(Protocol, FieldProtocolsTargetTheirDataset) {
  const std::vector<DatasetManifest> ms = {plantvillage_like(), fake_manifest("potato_field", numbered("potato_", 3), 20)};
  const auto split = build_meta_split(ms, ProtocolId::potato_field, 0);
  EXPECT_EQ(split.meta_test_classes.size(), 3u);
  EXPECT_EQ(split.meta_train_classes.size(), 38u);
  EXPECT_THROW(build_meta_split(ms, ProtocolId::cotton_field, 0), ProtocolClassMissing);
}

TEST(Protocol, CustomOverlapIsRejected) {
  const std::vector<DatasetManifest> ms = {fake_manifest("d", {"a", "b", "c"}, 4)};
  EXPECT_THROW(build_meta_split(ms, ProtocolId::custom, 0, {{"a", "b"}, {"b", "c"}}), ClassOverlap);
  EXPECT_THROW(build_meta_split(ms, ProtocolId::custom, 0, {{"a"}, {"b", "zzz"}}), ProtocolClassMissing);
}

TEST(Protocol, MissingPlantVillageClassIsNamed) {
  auto classes = plantvillage_classes();
  std::erase(classes, "Tomato___Late_blight");
  const std::vector<DatasetManifest> ms = {fake_manifest("plantvillage", classes, 4)};
  try {
    build_meta_split(ms, ProtocolId::pv_tomato10, 0);
    FAIL();
  } catch (const ProtocolClassMissing& e) {
    EXPECT_NE(std::string(e.what()).find("[Tomato___Late_blight]"), std::string::npos) << e.what();
  }
}

TEST(Partition, HundredSamplesSplitEightyTwenty) {
  const std::vector<DatasetManifest> ms = {fake_manifest("d", {"a", "b", "c"}, 100)};
  const auto split = partition_support_query(build_meta_split(ms, ProtocolId::custom, 3, {{"a"}, {"b", "c"}}), {}, 3);
  for (const auto& c : split.meta_test_classes) {
    EXPECT_EQ(split.support_pool.at(c).size(), 80u);
    EXPECT_EQ(split.query_pool.at(c).size(), 20u);
    std::set<std::string> ids;
    for (const auto& s : split.support_pool.at(c)) ids.insert(s.sample_id);
    for (const auto& s : split.query_pool.at(c)) EXPECT_FALSE(ids.contains(s.sample_id));
  }
}

TEST(Partition, SameSeedSamePools) {
  const std::vector<DatasetManifest> ms = {fake_manifest("d", {"a", "b", "c"}, 37)};
  const auto base = build_meta_split(ms, ProtocolId::custom, 0, {{"a"}, {"b", "c"}});
  const auto one = partition_support_query(base, {}, 11);
  const auto two = partition_support_query(base, {}, 11);
  const auto other = partition_support_query(base, {}, 12);
  EXPECT_EQ(one.to_json(), two.to_json());
  EXPECT_NE(one.to_json(), other.to_json());
}

TEST(Partition, SingleSampleClassCannotPartition) {
  const std::vector<DatasetManifest> ms = {fake_manifest("d", {"a", "b"}, 1), fake_manifest("e", {"c"}, 5)};
  const auto base = build_meta_split(ms, ProtocolId::custom, 0, {{"c"}, {"a", "b"}});
  EXPECT_THROW(partition_support_query(base, {}, 0), CannotPartition);
}

TEST(Partition, QueryCountRounding) {
  const SplitRatio r;
  EXPECT_EQ(r.query_count(100), 20u);
  EXPECT_EQ(r.query_count(373), 75u);  // 74.6
  EXPECT_EQ(r.query_count(2), 1u);     // clamped so support keeps one
  EXPECT_EQ(r.query_count(5357), 1071u);
}

class EpisodeTest : public ::testing::Test {
 protected:
  void SetUp() override {
    // 300 images per class: 240 support, 60 query
    ms_ = {fake_manifest("d", numbered("c", 14), 300)};
    const std::vector<std::string> train = {"c0", "c1", "c2", "c3"};
    const std::vector<std::string> test = {"c4", "c5", "c6", "c7", "c8", "c9", "c10", "c11", "c12", "c13"};
    split_ = partition_support_query(build_meta_split(ms_, ProtocolId::custom, 0, {train, test}), {}, 0);
  }
  std::vector<DatasetManifest> ms_;
  MetaSplit split_;
};

TEST_F(EpisodeTest, TenWayFiveShotCounts) {
  const auto ep = sample_episode(split_, {10, 5, 50, 100, 9}, 0);
  EXPECT_EQ(ep.support.size(), 50u);
  EXPECT_EQ(ep.query.size(), 500u);
}

TEST_F(EpisodeTest, QueryBeyondPoolIsInsufficient) {
  EXPECT_THROW(sample_episode(split_, {10, 5, 61, 100, 9}, 0), InsufficientQuery);
  EXPECT_THROW(sample_episode(split_, {10, 241, 5, 100, 9}, 0), InsufficientSupport);
}

TEST_F(EpisodeTest, FullQueryTakesWholePool) {
  const auto ep = sample_episode(split_, {10, 15, std::nullopt, 3, 1}, 2);
  EXPECT_EQ(ep.query.size(), split_.query_pool_size());
  EXPECT_EQ(ep.support.size(), 150u);
  EXPECT_EQ(ep.query.size(), 600u);
}

TEST_F(EpisodeTest, TaskIndexIsOrderIndependent) {
  const EpisodeSpec spec{5, 3, 10, 10, 42};
  const auto a7 = sample_episode(split_, spec, 7);
  (void)sample_episode(split_, spec, 3);
  const auto b3 = sample_episode(split_, spec, 3);
  const auto b7 = sample_episode(split_, spec, 7);
  EXPECT_EQ(a7, b7);
  EXPECT_EQ(a7.to_json().dump(), b7.to_json().dump());
  EXPECT_NE(b3.to_json().dump(), b7.to_json().dump());
}

TEST_F(EpisodeTest, RejectsBadSpecs) {
  EXPECT_THROW(sample_episode(split_, {11, 1, 1, 1, 0}, 0), ConfigError);
  EXPECT_THROW(sample_episode(split_, {1, 1, 1, 1, 0}, 0), ConfigError);
  EXPECT_THROW(sample_episode(split_, {5, 0, 1, 1, 0}, 0), ConfigError);
  EXPECT_THROW(sample_episode(split_, {5, 1, 1, 4, 0}, 4), ConfigError);
  MetaSplit unpartitioned = build_meta_split(ms_, ProtocolId::custom, 0, {{"c0"}, {"c1", "c2"}});
  EXPECT_THROW(sample_episode(unpartitioned, {2, 1, 1, 1, 0}, 0), ConfigError);
}

TEST_F(EpisodeTest, InvariantsHoldOverManySeeds) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const EpisodeSpec spec{2 + seed % 9, 1 + seed % 7, 1 + seed % 20, 5, seed};
    for (std::size_t t = 0; t < spec.task_count; ++t) {
      const auto ep = sample_episode(split_, spec, t);
      ASSERT_EQ(ep.classes.size(), spec.n_ways);
      std::vector<std::size_t> s_count(spec.n_ways, 0), q_count(spec.n_ways, 0);
      std::set<std::string> support_ids;
      for (const auto& s : ep.support) {
        ASSERT_LT(s.label, spec.n_ways);
        ASSERT_EQ(s.sample.class_label, ep.classes[s.label]);
        ++s_count[s.label];
        ASSERT_TRUE(support_ids.insert(s.sample.sample_id).second);
      }
      for (const auto& q : ep.query) {
        ASSERT_LT(q.label, spec.n_ways);
        ASSERT_EQ(q.sample.class_label, ep.classes[q.label]);
        ++q_count[q.label];
        ASSERT_FALSE(support_ids.contains(q.sample.sample_id));
      }
      for (std::size_t k = 0; k < spec.n_ways; ++k) {
        ASSERT_EQ(s_count[k], spec.k_shots);
        ASSERT_EQ(q_count[k], *spec.queries_per_class);
      }
    }
  }
}

#include <gtest/gtest.h>

#include <fstream>
#include <numeric>

#include "helpers.hpp"

using namespace dexnet;
using dexnet::testing::fake_embedding;
using dexnet::testing::TempDir;

namespace {

const std::vector<std::size_t> kFullDims = {512, 512, 2048, 2048, 2048, 1024, 2208, 1664, 1920};

std::vector<CriticId> all_ids() { return {kCanonicalCritics.begin(), kCanonicalCritics.end()}; }

ObservationBundle bundle_with(const std::vector<std::vector<float>>& vectors, CriticScale scale = kFullScale) {
  const auto layout = FusionLayout::all(scale);
  std::vector<Embedding> es;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    es.push_back({layout.critics()[i], "h", WeightsState::generic_pretrained, "s", vectors[i]});
  }
  return {"s", std::move(es), layout};
}

std::vector<std::vector<float>> random_vectors(CriticScale scale, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<float>> out;
  for (CriticId id : kCanonicalCritics) {
    std::vector<float> v(embedding_dim(id, scale));
    for (auto& x : v) x = static_cast<float>(rng.normal());
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

TEST(Dims, FullScaleTable) {
  const auto ids = all_ids();
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(embedding_dim(ids[i]), kFullDims[i]) << to_string(ids[i]);
  EXPECT_EQ(std::accumulate(kFullDims.begin(), kFullDims.end(), std::size_t{0}), 13984u);
  EXPECT_EQ(FusionLayout::all().total_dim(), 13984u);
  EXPECT_EQ(FusionLayout::all().max_dim(), 2208u);
}

TEST(Dims, ToyScaleDividesEveryWidth) {
  std::size_t sum = 0;
  for (std::size_t i = 0; i < kFullDims.size(); ++i) {
    EXPECT_EQ(embedding_dim(kCanonicalCritics[i], kToyScale) * 16, kFullDims[i]);
    sum += kFullDims[i] / 16;
  }
  EXPECT_EQ(sum, 874u);
  EXPECT_EQ(FusionLayout::all(kToyScale).total_dim(), 874u);
}

TEST(Fusion, ConcatenatedLengthAndSliceIdentity) {
  const auto vs = random_vectors(kFullScale, 1);
  const auto layout = FusionLayout::all();
  const auto fused = fuse_concatenated(bundle_with(vs));
  ASSERT_EQ(fused.values.size(), 13984u);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto slice = critic_slice(fused, layout, i);
    ASSERT_EQ(slice.size(), vs[i].size());
    EXPECT_EQ(std::memcmp(slice.data(), vs[i].data(), slice.size() * sizeof(float)), 0);
  }
}

TEST(Fusion, OnesOnlyInOwnSlice) {
  const auto layout = FusionLayout::all();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    std::vector<std::vector<float>> vs;
    for (std::size_t j = 0; j < layout.size(); ++j) vs.emplace_back(layout.dim(j), j == i ? 1.0f : 0.0f);
    const auto fused = fuse_concatenated(bundle_with(vs));
    for (std::size_t p = 0; p < fused.values.size(); ++p) {
      const bool inside = p >= layout.offset(i) && p < layout.offset(i) + layout.dim(i);
      ASSERT_EQ(fused.values[p], inside ? 1.0f : 0.0f);
    }
  }
}

TEST(Fusion, OrderSensitivity) {
  // swapping two equal-width critics' vectors changes the fused output
  auto vs = random_vectors(kFullScale, 2);
  const auto a = fuse_concatenated(bundle_with(vs));
  std::swap(vs[0], vs[1]);
  const auto b = fuse_concatenated(bundle_with(vs));
  EXPECT_NE(a.values, b.values);
}

TEST(Fusion, ParallelPadding) {
  const auto vs = random_vectors(kFullScale, 3);
  const auto fused = fuse_parallel(bundle_with(vs));
  ASSERT_EQ(fused.steps, 9u);
  ASSERT_EQ(fused.width, 2208u);
  for (std::size_t t = 0; t < 9; ++t) {
    const auto step = fused.step(t);
    for (std::size_t k = 0; k < step.size(); ++k) {
      ASSERT_EQ(step[k], k < vs[t].size() ? vs[t][k] : 0.0f);
    }
  }
  // densenet161 fills its whole step
  EXPECT_EQ(vs[6].size(), fused.width);
}

TEST(Fusion, AllZeroBundleGivesZeroSteps) {
  std::vector<std::vector<float>> vs;
  for (std::size_t d : kFullDims) vs.emplace_back(d, 0.0f);
  const auto fused = fuse_parallel(bundle_with(vs));
  EXPECT_EQ(fused.steps, 9u);
  EXPECT_TRUE(std::all_of(fused.values.begin(), fused.values.end(), [](float v) { return v == 0.0f; }));
}

TEST(Fusion, BundleRejectsMismatches) {
  const auto layout = FusionLayout::all(kToyScale);
  std::vector<Embedding> es;
  for (CriticId id : layout.critics()) es.push_back(fake_embedding(id, "s", kToyScale, 1.0f));
  EXPECT_NO_THROW(ObservationBundle("s", es, layout));

  auto short_one = es;
  short_one.pop_back();
  EXPECT_THROW(ObservationBundle("s", short_one, layout), IncompleteBundle);

  auto mixed = es;
  mixed[3].state = WeightsState::domain_adapted;
  EXPECT_THROW(ObservationBundle("s", mixed, layout), IncompleteBundle);

  auto wrong_dim = es;
  wrong_dim[0].vector.pop_back();
  EXPECT_THROW(ObservationBundle("s", wrong_dim, layout), DimensionError);

  auto swapped = es;
  std::swap(swapped[0], swapped[1]);
  EXPECT_THROW(ObservationBundle("s", swapped, layout), IncompleteBundle);
}

TEST(Chunking, DefaultIsSixteenStepsOf874) {
  EXPECT_EQ(default_chunk_len(13984), 874u);
  const auto fused = fuse_concatenated(bundle_with(random_vectors(kFullScale, 4)));
  const auto chunked = chunk_for_recurrence(fused, 874);
  EXPECT_EQ(chunked.steps, 16u);
  EXPECT_EQ(chunked.width, 874u);
  EXPECT_EQ(chunked.values, fused.values);
  const auto back = flatten(chunked);
  EXPECT_EQ(back.steps, 1u);
  EXPECT_EQ(back.values, fused.values);
}

TEST(Chunking, IdentityAndRejection) {
  const auto fused = fuse_concatenated(bundle_with(random_vectors(kFullScale, 5)));
  const auto one = chunk_for_recurrence(fused, 13984);
  EXPECT_EQ(one.steps, 1u);
  EXPECT_EQ(one.values, fused.values);
  EXPECT_THROW(chunk_for_recurrence(fused, 1000), ChunkError);
  EXPECT_THROW(chunk_for_recurrence(fused, 0), ChunkError);
}

TEST(Chunking, EveryDivisorRoundTrips) {
  const auto fused = fuse_concatenated(bundle_with(random_vectors(kToyScale, 6), kToyScale));
  for (std::size_t d = 1; d <= 874; ++d) {
    if (874 % d) {
      EXPECT_THROW(chunk_for_recurrence(fused, d), ChunkError);
      continue;
    }
    const auto c = chunk_for_recurrence(fused, d);
    ASSERT_EQ(c.steps * c.width, 874u);
    for (std::size_t t = 0; t < c.steps; ++t) {
      ASSERT_EQ(std::memcmp(c.step(t).data(), fused.values.data() + t * d, d * sizeof(float)), 0);
    }
  }
}

TEST(Cache, PutGetRoundTrip) {
  TempDir dir("cache");
  FeatureCache cache(dir.path(), kFullScale);
  Rng rng(1);
  std::vector<float> v(512);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  const FeatureCacheKey key{CriticId::resnet18, "abc", "ds", "cls/img.png"};
  EXPECT_FALSE(cache.get(key).has_value());
  cache.put(key, v);
  const auto got = cache.get(key);
  ASSERT_TRUE(got.has_value());
  EXPECT_EQ(std::memcmp(got->data(), v.data(), v.size() * sizeof(float)), 0);

  FeatureCache reopened(dir.path(), kFullScale);
  EXPECT_EQ(*reopened.get(key), v);
  EXPECT_FALSE(reopened.get({CriticId::resnet18, "other", "ds", "cls/img.png"}).has_value());
}

TEST(Cache, WrongLengthIsRejected) {
  TempDir dir("cache");
  FeatureCache cache(dir.path(), kFullScale);
  EXPECT_THROW(cache.put({CriticId::resnet18, "h", "d", "s"}, std::vector<float>(511)), DimensionError);
}

TEST(Cache, CorruptRecordIsDetected) {
  TempDir dir("cache");
  const FeatureCacheKey key{CriticId::resnet18, "h", "d", "s"};
  fs::path path;
  {
    FeatureCache cache(dir.path(), kFullScale);
    cache.put(key, std::vector<float>(512, 0.25f));
    path = cache.path_for(key);
  }
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-40, std::ios::end);
    const char junk = 0x5a;
    f.write(&junk, 1);
  }
  FeatureCache cache(dir.path(), kFullScale);
  EXPECT_THROW(cache.get(key), CacheCorrupt);
}

TEST(Cache, AssembleNamesMissingCritics) {
  TempDir dir("cache");
  FeatureCache cache(dir.path(), kToyScale);
  const auto layout = FusionLayout::all(kToyScale);
  WeightsGeneration gen;
  for (CriticId id : layout.critics()) {
    gen[id] = "g";
    if (id != CriticId::densenet201) cache.put({id, "g", "d", "s"}, std::vector<float>(embedding_dim(id, kToyScale), 1.0f));
  }
  try {
    assemble_bundle("s", cache, gen, "d", layout, WeightsState::generic_pretrained);
    FAIL();
  } catch (const IncompleteBundle& e) {
    EXPECT_NE(std::string(e.what()).find("[densenet201]"), std::string::npos) << e.what();
  }
  cache.put({CriticId::densenet201, "g", "d", "s"}, std::vector<float>(120, 1.0f));
  const auto b = assemble_bundle("s", cache, gen, "d", layout, WeightsState::generic_pretrained);
  EXPECT_EQ(fuse_concatenated(b).values.size(), 874u);
}

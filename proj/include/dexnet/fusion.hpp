#pragma once

#include <algorithm>
#include <cstdlib>
#include <string>
#include <vector>

#include "dexnet/embedding.hpp"

namespace dexnet {

/// Ordered critics contributing to a fused observation, with their widths.
class FusionLayout {
 public:
  FusionLayout() = default;

  FusionLayout(std::vector<CriticId> critics, CriticScale scale) : critics_(std::move(critics)), scale_(scale) {
    if (critics_.empty()) throw ConfigError("a fusion layout needs at least one critic");
    std::sort(critics_.begin(), critics_.end());
    if (std::adjacent_find(critics_.begin(), critics_.end()) != critics_.end()) {
      throw ConfigError("duplicate critic in fusion layout");
    }
    std::size_t offset = 0;
    for (CriticId id : critics_) {
      const std::size_t d = embedding_dim(id, scale_);
      offsets_.push_back(offset);
      dims_.push_back(d);
      offset += d;
      max_dim_ = std::max(max_dim_, d);
    }
    total_ = offset;
  }

  /// All nine critics in canonical order.
  static FusionLayout all(CriticScale scale = kFullScale) {
    return {std::vector<CriticId>(kCanonicalCritics.begin(), kCanonicalCritics.end()), scale};
  }

  const std::vector<CriticId>& critics() const { return critics_; }
  const CriticScale& scale() const { return scale_; }
  std::size_t size() const { return critics_.size(); }
  std::size_t dim(std::size_t i) const { return dims_[i]; }
  std::size_t offset(std::size_t i) const { return offsets_[i]; }
  std::size_t total_dim() const { return total_; }
  std::size_t max_dim() const { return max_dim_; }

 private:
  std::vector<CriticId> critics_;
  CriticScale scale_;
  std::vector<std::size_t> offsets_, dims_;
  std::size_t total_ = 0, max_dim_ = 0;
};

/// One image's observations, one per critic of the layout, canonical order.
class ObservationBundle {
 public:
  ObservationBundle(std::string sample_id, std::vector<Embedding> embeddings, const FusionLayout& layout)
      : sample_id_(std::move(sample_id)), embeddings_(std::move(embeddings)), layout_(layout) {
    if (embeddings_.size() != layout_.size()) {
      throw IncompleteBundle("expected " + std::to_string(layout_.size()) + " observations, got " +
                             std::to_string(embeddings_.size()));
    }
    for (std::size_t i = 0; i < embeddings_.size(); ++i) {
      const auto& e = embeddings_[i];
      if (e.critic != layout_.critics()[i]) throw IncompleteBundle("observations out of canonical critic order");
      if (e.sample_id != sample_id_) throw IncompleteBundle("observation for " + e.sample_id + " in bundle of " + sample_id_);
      if (e.state != embeddings_.front().state) throw IncompleteBundle("observations mix weight generations");
      if (e.vector.size() != layout_.dim(i)) {
        throw DimensionError(std::string(to_string(e.critic)) + " observation has " + std::to_string(e.vector.size()) +
                             " dims, expected " + std::to_string(layout_.dim(i)));
      }
    }
  }

  const std::string& sample_id() const { return sample_id_; }
  const std::vector<Embedding>& embeddings() const { return embeddings_; }
  const FusionLayout& layout() const { return layout_; }

 private:
  std::string sample_id_;
  std::vector<Embedding> embeddings_;
  FusionLayout layout_;
};

enum class FusionMode { concatenated, parallel };

inline std::string_view to_string(FusionMode m) { return m == FusionMode::concatenated ? "concatenated" : "parallel"; }

inline FusionMode fusion_from_string(std::string_view s) {
  if (s == "concatenated" || s == "concat") return FusionMode::concatenated;
  if (s == "parallel") return FusionMode::parallel;
  throw ConfigError("unknown fusion mode '" + std::string(s) + "'");
}

/// A fused observation stored as a row-major (steps x width) sequence.
/// Concatenated features are a single step until chunked.
struct FusedFeature {
  std::string sample_id;
  FusionMode mode = FusionMode::concatenated;
  std::size_t steps = 0;
  std::size_t width = 0;
  std::vector<float> values;

  std::span<const float> step(std::size_t t) const { return {values.data() + t * width, width}; }
};

inline FusedFeature fuse_concatenated(const ObservationBundle& bundle) {
  const auto& layout = bundle.layout();
  FusedFeature f{bundle.sample_id(), FusionMode::concatenated, 1, layout.total_dim(), {}};
  f.values.reserve(layout.total_dim());
  for (const auto& e : bundle.embeddings()) f.values.insert(f.values.end(), e.vector.begin(), e.vector.end());
  return f;
}

/// Nine-step sequence, each critic's vector right-padded with zeros to the widest critic.
inline FusedFeature fuse_parallel(const ObservationBundle& bundle) {
  const auto& layout = bundle.layout();
  FusedFeature f{bundle.sample_id(), FusionMode::parallel, layout.size(), layout.max_dim(), {}};
  f.values.assign(f.steps * f.width, 0.0f);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& v = bundle.embeddings()[i].vector;
    std::copy(v.begin(), v.end(), f.values.begin() + static_cast<std::ptrdiff_t>(i * f.width));
  }
  return f;
}

/// Inverse of fuse_concatenated: the slice belonging to critic `i` of the layout.
inline std::vector<float> critic_slice(const FusedFeature& fused, const FusionLayout& layout, std::size_t i) {
  if (fused.mode != FusionMode::concatenated || fused.values.size() != layout.total_dim()) {
    throw DimensionError("critic_slice needs a flat concatenated feature");
  }
  const auto begin = fused.values.begin() + static_cast<std::ptrdiff_t>(layout.offset(i));
  return {begin, begin + static_cast<std::ptrdiff_t>(layout.dim(i))};
}

/// Divisor of `total` closest to total/16 (ties to the larger divisor);
/// exactly 874 for the 13,984-dim full-scale vector.
inline std::size_t default_chunk_len(std::size_t total) {
  const double target = static_cast<double>(total) / 16.0;
  std::size_t best = total;
  double best_gap = std::abs(static_cast<double>(total) - target);
  for (std::size_t d = 1; d <= total; ++d) {
    if (total % d != 0) continue;
    const double gap = std::abs(static_cast<double>(d) - target);
    if (gap < best_gap || (gap == best_gap && d > best)) {
      best = d;
      best_gap = gap;
    }
  }
  return best;
}

/// Splits a flat concatenated feature into equal consecutive chunks.
inline FusedFeature chunk_for_recurrence(const FusedFeature& fused, std::size_t chunk_len) {
  if (fused.mode != FusionMode::concatenated) throw ChunkError("only concatenated features are chunked");
  const std::size_t total = fused.values.size();
  if (chunk_len == 0 || total % chunk_len != 0) {
    throw ChunkError("chunk length " + std::to_string(chunk_len) + " does not divide " + std::to_string(total));
  }
  FusedFeature out = fused;
  out.steps = total / chunk_len;
  out.width = chunk_len;
  return out;
}

inline FusedFeature flatten(const FusedFeature& f) {
  FusedFeature out = f;
  out.steps = 1;
  out.width = f.values.size();
  return out;
}

inline FusedFeature fuse(const ObservationBundle& bundle, FusionMode mode) {
  return mode == FusionMode::concatenated ? fuse_concatenated(bundle) : fuse_parallel(bundle);
}

}  // namespace dexnet

#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "dexnet/embedding.hpp"
#include "dexnet/image.hpp"
#include "dexnet/optim.hpp"
#include "dexnet/protocol.hpp"

namespace dexnet {

struct CriticSpec {
  CriticId id = CriticId::resnet18;
  std::size_t embedding_dim = 0;
  WeightsState state = WeightsState::generic_pretrained;
  std::string weights_hash;
  CriticScale scale;
};

/// Loads dataset images as preprocessed tensors, optionally memoizing them.
/// Safe to share between threads.
class ImageLoader {
 public:
  explicit ImageLoader(std::size_t input_size, bool memoize = true) : size_(input_size), memoize_(memoize) {}

  void add_dataset(const DatasetManifest& manifest) { roots_[manifest.dataset_id()] = manifest.root(); }
  void add_root(const std::string& dataset_id, fs::path root) { roots_[dataset_id] = std::move(root); }

  std::size_t input_size() const { return size_; }

  nn::Tensor<float> load(const ImageSample& sample) const {
    const std::string key = sample.dataset_id + "\n" + sample.sample_id;
    if (memoize_) {
      std::shared_lock lock(mutex_);
      if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    }
    auto root = roots_.find(sample.dataset_id);
    if (root == roots_.end()) throw ConfigError("no root registered for dataset " + sample.dataset_id);
    nn::Tensor<float> t = preprocess(read_file_bytes(root->second / sample.sample_id), size_);
    if (memoize_) {
      std::unique_lock lock(mutex_);
      memo_.emplace(key, t);
    }
    return t;
  }

  nn::Tensor<float> load_batch(const std::vector<const ImageSample*>& samples) const {
    nn::Tensor<float> batch(samples.size(), 3, size_, size_);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto one = load(*samples[i]);
      std::copy_n(one.data(), one.size(), batch.sample(i));
    }
    return batch;
  }

 private:
  std::size_t size_;
  bool memoize_;
  std::map<std::string, fs::path> roots_;
  mutable std::shared_mutex mutex_;
  mutable std::map<std::string, nn::Tensor<float>> memo_;
};

/// A headless backbone with fixed weights. Embedding is read-only and may be
/// called concurrently.
class Critic {
 public:
  Critic(CriticSpec spec, std::unique_ptr<nn::Sequential<float>> net) : spec_(std::move(spec)), net_(std::move(net)) {}

  const CriticSpec& spec() const { return spec_; }
  nn::Sequential<float>& network() { return *net_; }

  std::vector<std::vector<float>> embed_batch(const nn::Tensor<float>& batch) const {
    const std::size_t s = spec_.scale.input_size;
    if (batch.c() != 3 || batch.h() != s || batch.w() != s) {
      throw DimensionError(std::string(to_string(spec_.id)) + " expects (n,3," + std::to_string(s) + "," +
                           std::to_string(s) + ") input, got " + batch.shape_string());
    }
    const nn::Tensor<float> out = net_->infer(batch);
    if (out.sample_size() != spec_.embedding_dim) throw DimensionError("backbone output width mismatch");
    std::vector<std::vector<float>> rows(out.n());
    for (std::size_t i = 0; i < out.n(); ++i) {
      rows[i].assign(out.sample(i), out.sample(i) + out.sample_size());
      for (float v : rows[i]) {
        if (!std::isfinite(v)) throw NumericalError(std::string(to_string(spec_.id)) + " produced a non-finite value");
      }
    }
    return rows;
  }

  Embedding embed(const nn::Tensor<float>& image, std::string sample_id = {}) const {
    if (image.n() != 1) throw DimensionError("embed takes a single image");
    return {spec_.id, spec_.weights_hash, spec_.state, std::move(sample_id), std::move(embed_batch(image).front())};
  }

  std::vector<std::byte> serialize() const { return serialize_weights(spec_.id, spec_.scale, *net_); }

  Critic clone() const {
    auto net = nn::build_backbone<float>(spec_.id, spec_.scale, 0);
    deserialize_weights(serialize(), *net);
    return Critic(spec_, std::move(net));
  }

 private:
  CriticSpec spec_;
  std::unique_ptr<nn::Sequential<float>> net_;
};

inline Critic critic_from_payload(std::span<const std::byte> payload, WeightsState state) {
  const WeightsHeader header = read_weights_header(payload);
  auto net = nn::build_backbone<float>(header.critic, header.scale, 0);
  deserialize_weights(payload, *net);
  CriticSpec spec{header.critic, embedding_dim(header.critic, header.scale), state, to_hex(fnv1a64(payload)),
                  header.scale};
  return Critic(std::move(spec), std::move(net));
}

/// Loads a critic from the weights store; a missing file or a digest
/// mismatch raises WeightsUnavailable.
inline Critic create_critic(CriticId id, WeightsState state, const WeightsStore& store) {
  const auto payload = store.load(id, state);
  Critic critic = critic_from_payload(payload, state);
  if (critic.spec().id != id) throw WeightsUnavailable("weight file holds a different critic");
  return critic;
}

/// Re-estimates batch-norm running statistics as the plain average over the
/// given batches. Used to give randomly initialized backbones sane statistics.
inline void calibrate_batch_norm(nn::Sequential<float>& net, const std::vector<nn::Tensor<float>>& batches) {
  std::vector<nn::BatchNorm2d<float>*> norms;
  net.walk([&](nn::Module<float>& m) {
    if (auto* bn = dynamic_cast<nn::BatchNorm2d<float>*>(&m)) norms.push_back(bn);
  });
  for (auto* bn : norms) bn->set_cumulative(true);
  for (const auto& b : batches) net.forward(b);
  for (auto* bn : norms) bn->set_cumulative(false);
  net.release();
}

/// Seeded random backbone with calibrated statistics, stored as the
/// generic_pretrained generation. Returns the weights hash.
inline std::string init_generic_weights(CriticId id, CriticScale scale, std::uint64_t seed, WeightsStore& store,
                                        const std::vector<nn::Tensor<float>>& calibration) {
  auto net = nn::build_backbone<float>(id, scale, seed);
  if (!calibration.empty()) calibrate_batch_norm(*net, calibration);
  return store.save(id, WeightsState::generic_pretrained, serialize_weights(id, scale, *net));
}

struct AdaptationConfig {
  std::vector<std::string> source_classes;  // empty: every meta-train class
  std::size_t epochs = 10;
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::string optimizer_id = "rmsprop";
  /// Leading fraction of backbone parameter tensors kept fixed (0 = full fine-tune).
  double frozen_fraction = 0.0;
  double validation_fraction = 0.1;
  std::size_t early_stop_patience = 3;
  std::uint64_t seed = 0;

  json to_json() const {
    return {{"source_classes", source_classes}, {"epochs", epochs},
            {"learning_rate", learning_rate},   {"batch_size", batch_size},
            {"optimizer_id", optimizer_id},     {"frozen_fraction", frozen_fraction},
            {"validation_fraction", validation_fraction}, {"early_stop_patience", early_stop_patience},
            {"seed", seed}};
  }

  static AdaptationConfig from_json(const json& j) {
    AdaptationConfig c;
    c.source_classes = j.value("source_classes", c.source_classes);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.optimizer_id = j.value("optimizer_id", c.optimizer_id);
    c.frozen_fraction = j.value("frozen_fraction", c.frozen_fraction);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  std::optional<double> validation_accuracy;
};

struct TrainingLog {
  CriticId critic = CriticId::resnet18;
  std::vector<EpochRecord> epochs;
  double wall_clock_seconds = 0;
  std::string final_weights_hash;

  /// One JSON object per epoch; the last line also carries the totals.
  std::string to_jsonl() const {
    std::string out;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      const auto& e = epochs[i];
      json j = {{"critic", std::string(to_string(critic))},
                {"epoch", e.epoch},
                {"train_loss", e.train_loss},
                {"train_accuracy", e.train_accuracy},
                {"validation_accuracy", e.validation_accuracy ? json(*e.validation_accuracy) : json(nullptr)}};
      if (i + 1 == epochs.size()) {
        j["wall_clock_seconds"] = wall_clock_seconds;
        j["final_weights_hash"] = final_weights_hash;
      }
      out += j.dump() + "\n";
    }
    return out;
  }
};

struct AdaptationResult {
  Critic critic;
  TrainingLog log;
};

/// Fine-tunes a generic critic on meta-train classes through a temporary
/// classification head, then drops the head. Any source class on the
/// meta-test side is a hard LeakageError.
inline AdaptationResult domain_adapt(const Critic& generic, const MetaSplit& split, const ImageLoader& loader,
                                     const AdaptationConfig& config) {
  const auto started = std::chrono::steady_clock::now();
  if (generic.spec().state != WeightsState::generic_pretrained) {
    throw ConfigError("domain adaptation starts from generic_pretrained weights");
  }
  std::vector<std::string> sources = config.source_classes.empty() ? split.meta_train_classes : config.source_classes;
  std::sort(sources.begin(), sources.end());
  sources.erase(std::unique(sources.begin(), sources.end()), sources.end());
  const std::set<std::string> test(split.meta_test_classes.begin(), split.meta_test_classes.end());
  const std::set<std::string> train(split.meta_train_classes.begin(), split.meta_train_classes.end());
  for (const auto& c : sources) {
    if (test.contains(c)) throw LeakageError("source class '" + c + "' is a meta-test class");
    if (!train.contains(c)) throw LeakageError("source class '" + c + "' is not on the meta-train side");
  }
  if (sources.size() < 2) throw ConfigError("adaptation needs at least two source classes");
  if (config.batch_size < 2) throw ConfigError("adaptation batch size must be at least 2");
  if (loader.input_size() != generic.spec().scale.input_size) throw ConfigError("loader resolution mismatch");

  // stratified train/validation split
  Rng split_rng(derive_seed(config.seed, "adapt-split"));
  std::vector<std::pair<const ImageSample*, std::size_t>> train_set, val_set;
  for (std::size_t label = 0; label < sources.size(); ++label) {
    const auto& samples = split.class_samples.at(sources[label]);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    split_rng.shuffle(order);
    std::size_t n_val = static_cast<std::size_t>(std::lround(config.validation_fraction * static_cast<double>(samples.size())));
    n_val = std::min(n_val, samples.size() - 1);
    for (std::size_t i = 0; i < order.size(); ++i) {
      (i < n_val ? val_set : train_set).emplace_back(&samples[order[i]], label);
    }
  }

  Critic adapted = generic.clone();
  auto& net = adapted.network();
  nn::Linear<float> head(adapted.spec().embedding_dim, sources.size());
  {
    Rng head_rng(derive_seed(config.seed, "adapt-head"));
    head.init(head_rng);
  }

  std::vector<nn::Parameter<float>*> params;
  net.visit("", [&](const std::string&, nn::Parameter<float>& p) {
    if (!p.buffer) params.push_back(&p);
  });
  const auto n_frozen = static_cast<std::size_t>(std::floor(config.frozen_fraction * static_cast<double>(params.size())));
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->frozen = i < n_frozen;
  head.visit("", [&](const std::string&, nn::Parameter<float>& p) { params.push_back(&p); });

  std::vector<nn::Optimizer<float>::Slot> slots;
  for (auto* p : params) {
    if (!p->frozen) slots.push_back({p->value.span(), p->grad.span()});
  }
  nn::Optimizer<float> optimizer(nn::optimizer_from_string(config.optimizer_id), config.learning_rate);

  auto evaluate = [&](const std::vector<std::pair<const ImageSample*, std::size_t>>& set) {
    std::size_t hits = 0;
    for (std::size_t start = 0; start < set.size(); start += config.batch_size) {
      const std::size_t end = std::min(set.size(), start + config.batch_size);
      std::vector<const ImageSample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(set[i].first);
      const auto logits = head.infer(net.infer(loader.load_batch(batch)));
      for (std::size_t i = start; i < end; ++i) {
        const float* z = logits.sample(i - start);
        const auto arg = static_cast<std::size_t>(std::max_element(z, z + logits.sample_size()) - z);
        if (arg == set[i].second) ++hits;
      }
    }
    return set.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(set.size());
  };

  TrainingLog log;
  log.critic = adapted.spec().id;
  double best_val = -1.0;
  std::vector<std::byte> best_payload;
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng epoch_rng(derive_seed(config.seed, epoch));
    epoch_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t seen = 0, hits = 0;
    for (std::size_t start = 0; start + 2 <= order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      if (end - start < 2) break;  // batch statistics need two samples
      std::vector<const ImageSample*> batch;
      std::vector<std::size_t> labels;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(train_set[order[i]].first);
        labels.push_back(train_set[order[i]].second);
      }
      for (auto* p : params) p->grad.fill(0.0f);
      const auto features = net.forward(loader.load_batch(batch));
      const auto logits = head.forward(features);
      nn::Tensor<float> dlogits;
      std::size_t correct = 0;
      const double loss = nn::softmax_cross_entropy(logits, labels, dlogits, &correct);
      if (!std::isfinite(loss)) {
        throw TrainingDiverged(std::string(to_string(log.critic)) + " loss became non-finite at epoch " +
                               std::to_string(epoch));
      }
      net.backward(head.backward(dlogits));
      optimizer.step(slots);
      loss_sum += loss * static_cast<double>(labels.size());
      seen += labels.size();
      hits += correct;
    }
    net.release();
    head.release();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    rec.train_accuracy = seen ? static_cast<double>(hits) / static_cast<double>(seen) : 0.0;
    if (!val_set.empty()) rec.validation_accuracy = evaluate(val_set);
    log.epochs.push_back(rec);

    if (rec.validation_accuracy) {
      if (*rec.validation_accuracy > best_val) {
        best_val = *rec.validation_accuracy;
        best_payload = adapted.serialize();
        stale = 0;
      } else if (++stale >= config.early_stop_patience) {
        break;
      }
    }
  }
  for (auto* p : params) p->frozen = false;

  std::vector<std::byte> payload = best_payload.empty() ? adapted.serialize() : std::move(best_payload);
  Critic result = critic_from_payload(payload, WeightsState::domain_adapted);
  log.final_weights_hash = result.spec().weights_hash;
  log.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(result), std::move(log)};
}

}  // namespace dexnet

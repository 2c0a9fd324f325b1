#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dexnet/critic.hpp"
#include "dexnet/episode.hpp"
#include "dexnet/feature_cache.hpp"
#include "dexnet/heads.hpp"
#include "dexnet/synthetic.hpp"

namespace dexnet {

inline std::vector<CriticId> resnet_critics() {
  return {CriticId::resnet18, CriticId::resnet34, CriticId::resnet50, CriticId::resnet101, CriticId::resnet152};
}
inline std::vector<CriticId> densenet_critics() {
  return {CriticId::densenet121, CriticId::densenet161, CriticId::densenet169, CriticId::densenet201};
}
inline std::vector<CriticId> all_critics() { return {kCanonicalCritics.begin(), kCanonicalCritics.end()}; }

/// "all", "resnets", "densenets" or a comma-separated list of critic names.
inline std::vector<CriticId> critics_from_string(std::string_view text) {
  if (text == "all" || text == "all-nine") return all_critics();
  if (text == "resnets") return resnet_critics();
  if (text == "densenets") return densenet_critics();
  std::vector<CriticId> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    const auto item = text.substr(start, comma - start);
    if (!item.empty()) out.push_back(critic_from_string(item));
    start = comma + 1;
  }
  if (out.empty()) throw ConfigError("empty critic set");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::string critics_label(std::vector<CriticId> critics) {
  std::sort(critics.begin(), critics.end());
  if (critics == all_critics()) return "all";
  if (critics == resnet_critics()) return "resnets";
  if (critics == densenet_critics()) return "densenets";
  std::string out;
  for (CriticId c : critics) out += (out.empty() ? "" : ",") + std::string(to_string(c));
  return out;
}

struct ExperimentConfig {
  ProtocolId protocol = ProtocolId::pv_tomato10;
  CustomProtocol custom;
  std::vector<CriticId> critics = all_critics();
  bool adapted = false;
  FusionMode fusion = FusionMode::concatenated;
  HeadKind head = HeadKind::bilstm;
  int hidden_units = 1024;
  std::size_t chunk_len = 0;
  EpisodeSpec episode;  // n_ways = 0 means every meta-test class
  HeadTrainConfig train;
  AdaptationConfig adaptation;
  std::uint64_t split_seed = 0;
  SplitRatio ratio;

  json to_json() const {
    return {{"protocol", std::string(to_string(protocol))},
            {"custom", {{"meta_train", custom.meta_train}, {"meta_test", custom.meta_test}}},
            {"critics", critics_label(critics)},
            {"adapted", adapted},
            {"fusion", std::string(to_string(fusion))},
            {"head", std::string(to_string(head))},
            {"hidden_units", hidden_units},
            {"chunk_len", chunk_len},
            {"episode", episode.to_json()},
            {"train", train.to_json()},
            {"adaptation", adaptation.to_json()},
            {"split_seed", split_seed},
            {"ratio", {ratio.support, ratio.query}}};
  }

  /// Missing keys keep their defaults, so a config file may be partial.
  static ExperimentConfig from_json(const json& j) {
    ExperimentConfig c;
    try {
      if (j.contains("protocol")) c.protocol = protocol_from_string(j.at("protocol").get<std::string>());
      if (j.contains("custom")) {
        c.custom.meta_train = j.at("custom").value("meta_train", std::vector<std::string>{});
        c.custom.meta_test = j.at("custom").value("meta_test", std::vector<std::string>{});
      }
      if (j.contains("critics")) c.critics = critics_from_string(j.at("critics").get<std::string>());
      c.adapted = j.value("adapted", c.adapted);
      if (j.contains("fusion")) c.fusion = fusion_from_string(j.at("fusion").get<std::string>());
      if (j.contains("head")) c.head = head_from_string(j.at("head").get<std::string>());
      c.hidden_units = j.value("hidden_units", c.hidden_units);
      c.chunk_len = j.value("chunk_len", c.chunk_len);
      if (j.contains("episode")) {
        json e = c.episode.to_json();
        e.update(j.at("episode"));
        c.episode = EpisodeSpec::from_json(e);
      }
      if (j.contains("train")) c.train = HeadTrainConfig::from_json(j.at("train"));
      if (j.contains("adaptation")) c.adaptation = AdaptationConfig::from_json(j.at("adaptation"));
      c.split_seed = j.value("split_seed", c.split_seed);
      if (j.contains("ratio")) {
        c.ratio.support = j.at("ratio").at(0).get<std::uint32_t>();
        c.ratio.query = j.at("ratio").at(1).get<std::uint32_t>();
      }
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad experiment config: ") + e.what());
    }
    if (c.critics.empty()) throw ConfigError("critic set is empty");
    return c;
  }
};

/// Arithmetic mean and population standard deviation.
struct Summary {
  double mean = 0;
  double dispersion = 0;
};

inline Summary aggregate(std::span<const double> accuracies) {
  if (accuracies.empty()) throw EmptyAggregate("no task accuracies to aggregate");
  double sum = 0.0;
  for (double a : accuracies) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("accuracy outside [0,1]");
    sum += a;
  }
  const double mean = sum / static_cast<double>(accuracies.size());
  double sq = 0.0;
  for (double a : accuracies) sq += (a - mean) * (a - mean);
  return {mean, std::sqrt(sq / static_cast<double>(accuracies.size()))};
}

struct TaskRecord {
  std::size_t task_index = 0;
  std::optional<double> accuracy;  // empty when the task failed
  std::string error;

  friend bool operator==(const TaskRecord&, const TaskRecord&) = default;
};

struct AggregateResult {
  json config;
  std::vector<TaskRecord> tasks;  // one per task index, failures included
  double mean = 0;
  double dispersion = 0;
  json fingerprint;
  double wall_clock_seconds = 0;

  std::vector<double> per_task_accuracies() const {
    std::vector<double> out;
    for (const auto& t : tasks) {
      if (t.accuracy) out.push_back(*t.accuracy);
    }
    return out;
  }

  std::vector<std::size_t> failed_tasks() const {
    std::vector<std::size_t> out;
    for (const auto& t : tasks) {
      if (!t.accuracy) out.push_back(t.task_index);
    }
    return out;
  }

  json to_json() const {
    json tasks_json = json::array();
    for (const auto& t : tasks) {
      json r = {{"task_index", t.task_index}, {"accuracy", t.accuracy ? json(*t.accuracy) : json(nullptr)}};
      if (!t.error.empty()) r["error"] = t.error;
      tasks_json.push_back(std::move(r));
    }
    return {{"config", config},
            {"tasks", std::move(tasks_json)},
            {"mean", mean},
            {"dispersion", dispersion},
            {"dispersion_kind", "population standard deviation across tasks"},
            {"failed_tasks", failed_tasks()},
            {"fingerprint", fingerprint},
            {"wall_clock_seconds", wall_clock_seconds}};
  }

  static AggregateResult from_json(const json& j) {
    AggregateResult r;
    r.config = j.at("config");
    for (const auto& t : j.at("tasks")) {
      TaskRecord rec;
      rec.task_index = t.at("task_index").get<std::size_t>();
      if (!t.at("accuracy").is_null()) rec.accuracy = t.at("accuracy").get<double>();
      rec.error = t.value("error", std::string{});
      r.tasks.push_back(std::move(rec));
    }
    r.mean = j.at("mean").get<double>();
    r.dispersion = j.at("dispersion").get<double>();
    r.fingerprint = j.at("fingerprint");
    r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    return r;
  }

  friend bool operator==(const AggregateResult&, const AggregateResult&) = default;
};

/// On-disk state shared by campaigns: manifests, weight generations,
/// adaptation records, training logs and the feature cache.
class Workspace {
 public:
  explicit Workspace(fs::path root, CriticScale scale = kFullScale, std::uint64_t generic_seed = 0)
      : root_(std::move(root)),
        scale_(scale),
        generic_seed_(generic_seed),
        store_(root_ / "weights"),
        cache_(root_ / "cache", scale),
        loader_(scale.input_size, scale.input_size <= 64) {
    fs::create_directories(root_);
    const fs::path meta = root_ / "workspace.json";
    const json mine = {{"width_divisor", scale.width_divisor}, {"input_size", scale.input_size},
                       {"generic_seed", generic_seed}};
    std::error_code ec;
    if (fs::exists(meta, ec)) {
      const json stored = json::parse(read_text_file(meta));
      if (stored != mine) throw ConfigError("workspace " + root_.string() + " was created with " + stored.dump());
    } else {
      write_text_file(meta, mine.dump(2) + "\n");
    }
    if (fs::exists(root_ / "manifests", ec)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(root_ / "manifests")) {
        if (e.path().extension() == ".json") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) register_manifest(DatasetManifest::from_json(json::parse(read_text_file(f))));
    }
  }

  const fs::path& root() const { return root_; }
  const CriticScale& scale() const { return scale_; }
  const std::vector<DatasetManifest>& manifests() const { return manifests_; }
  WeightsStore& weights() { return store_; }
  FeatureCache& cache() { return cache_; }
  const FeatureCache& cache() const { return cache_; }
  const ImageLoader& loader() const { return loader_; }

  /// Persists a manifest (replacing one with the same dataset id).
  void add_manifest(const DatasetManifest& m) {
    write_text_file(root_ / "manifests" / (m.dataset_id() + ".json"), m.to_json().dump(1) + "\n");
    register_manifest(m);
  }

  /// Generic weights for a critic, created from a seeded initialization on first use.
  std::string ensure_generic(CriticId id) {
    if (auto hash = store_.hash_of(id, WeightsState::generic_pretrained)) {
      store_.load(id, WeightsState::generic_pretrained, *hash);
      return *hash;
    }
    const std::size_t batch = scale_.input_size <= 64 ? 32 : 8;
    const auto calibration = generic_calibration_batches(4, batch, scale_.input_size,
                                                         derive_seed(generic_seed_, "calibration"));
    return init_generic_weights(id, scale_, derive_seed(generic_seed_, to_string(id)), store_, calibration);
  }

  Critic load_critic(CriticId id, WeightsState state, const std::string& hash) const {
    return critic_from_payload(store_.load(id, state, hash), state);
  }

  /// Adapted weights for (generic generation, meta-train side, config); adapts
  /// once and reuses the recorded generation afterwards.
  std::string ensure_adapted(CriticId id, const MetaSplit& split, const AdaptationConfig& config,
                             const std::function<void(const std::string&)>& progress = {}) {
    const std::string generic = ensure_generic(id);
    Fnv1a64 key;
    key.update(generic).update("\n").update(config.to_json().dump()).update("\n");
    for (const auto& c : split.meta_train_classes) key.update(c).update("\n");
    for (const auto& c : split.meta_test_classes) key.update("test:").update(c).update("\n");
    const std::string key_hex = std::string(to_string(id)) + "." + to_hex(key.digest());

    const fs::path record = root_ / "adaptations.json";
    json index = json::object();
    std::error_code ec;
    if (fs::exists(record, ec)) index = json::parse(read_text_file(record));
    if (index.contains(key_hex)) {
      const std::string hash = index.at(key_hex).get<std::string>();
      if (fs::exists(store_.file_for(id, WeightsState::domain_adapted, hash), ec)) return hash;
    }
    if (progress) progress("adapting " + std::string(to_string(id)));
    const Critic base = load_critic(id, WeightsState::generic_pretrained, generic);
    auto result = domain_adapt(base, split, loader_, config);
    const std::string hash = store_.save(id, WeightsState::domain_adapted, result.critic.serialize());
    write_text_file(root_ / "logs" / (key_hex + ".jsonl"), result.log.to_jsonl());
    index[key_hex] = hash;
    write_text_file(record, index.dump(2) + "\n");
    return hash;
  }

  /// Embeds every sample not yet cached for this weight generation.
  void ensure_embeddings(CriticId id, const std::string& hash, WeightsState state,
                         const std::vector<const ImageSample*>& samples) {
    std::vector<const ImageSample*> todo;
    for (const auto* s : samples) {
      if (!cache_.contains({id, hash, s->dataset_id, s->sample_id})) todo.push_back(s);
    }
    if (todo.empty()) return;
    const Critic critic = load_critic(id, state, hash);
    const std::size_t batch = scale_.input_size <= 64 ? 64 : 16;
    for (std::size_t start = 0; start < todo.size(); start += batch) {
      const std::vector<const ImageSample*> part(todo.begin() + static_cast<std::ptrdiff_t>(start),
                                                 todo.begin() + static_cast<std::ptrdiff_t>(std::min(todo.size(), start + batch)));
      const auto rows = critic.embed_batch(loader_.load_batch(part));
      for (std::size_t i = 0; i < part.size(); ++i) {
        cache_.put({id, hash, part[i]->dataset_id, part[i]->sample_id}, rows[i]);
      }
    }
  }

 private:
  void register_manifest(const DatasetManifest& m) {
    auto it = std::find_if(manifests_.begin(), manifests_.end(),
                           [&](const DatasetManifest& x) { return x.dataset_id() == m.dataset_id(); });
    if (it != manifests_.end()) {
      *it = m;
    } else {
      manifests_.push_back(m);
    }
    loader_.add_dataset(m);
  }

  fs::path root_;
  CriticScale scale_;
  std::uint64_t generic_seed_;
  WeightsStore store_;
  FeatureCache cache_;
  ImageLoader loader_;
  std::vector<DatasetManifest> manifests_;
};

inline std::string sample_key(const ImageSample& s) { return s.dataset_id + "/" + s.sample_id; }

/// Split, weight generation and fused features for one configuration: all
/// stages before per-task head training.
struct PreparedCampaign {
  MetaSplit split;
  FusionLayout layout;
  WeightsGeneration generation;
  WeightsState state = WeightsState::generic_pretrained;
  std::map<std::string, FusedFeature> features;  // keyed by sample_key
};

inline PreparedCampaign prepare_campaign(Workspace& ws, const ExperimentConfig& cfg,
                                         const std::function<void(const std::string&)>& progress = {}) {
  if (cfg.critics.empty()) throw ConfigError("critic set is empty");
  PreparedCampaign p;
  p.split = build_meta_split(ws.manifests(), cfg.protocol, cfg.split_seed, cfg.custom);
  p.split = partition_support_query(std::move(p.split), cfg.ratio, cfg.split_seed);
  p.layout = FusionLayout(cfg.critics, ws.scale());
  p.state = cfg.adapted ? WeightsState::domain_adapted : WeightsState::generic_pretrained;

  std::vector<const ImageSample*> samples;
  for (const auto& c : p.split.meta_test_classes) {
    for (const auto& s : p.split.class_samples.at(c)) samples.push_back(&s);
  }
  for (CriticId id : p.layout.critics()) {
    p.generation[id] = cfg.adapted ? ws.ensure_adapted(id, p.split, cfg.adaptation, progress) : ws.ensure_generic(id);
    if (progress) progress("embedding with " + std::string(to_string(id)));
    ws.ensure_embeddings(id, p.generation[id], p.state, samples);
  }

  std::set<std::string> datasets;
  for (const auto* s : samples) datasets.insert(s->dataset_id);
  std::map<std::string, std::map<std::string, std::vector<float>>> columns[kCanonicalCritics.size()];
  for (CriticId id : p.layout.critics()) {
    for (const auto& d : datasets) {
      columns[static_cast<std::size_t>(id)][d] = ws.cache().read_all(id, p.generation.at(id), d);
    }
  }
  for (const auto* s : samples) {
    std::vector<Embedding> embeddings;
    bool complete = true;
    for (CriticId id : p.layout.critics()) {
      auto& col = columns[static_cast<std::size_t>(id)][s->dataset_id];
      auto it = col.find(s->sample_id);
      if (it == col.end()) {
        complete = false;
        break;
      }
      embeddings.push_back({id, p.generation.at(id), p.state, s->sample_id, std::move(it->second)});
    }
    ObservationBundle bundle = complete ? ObservationBundle(s->sample_id, std::move(embeddings), p.layout)
                                        : assemble_bundle(s->sample_id, ws.cache(), p.generation, s->dataset_id,
                                                          p.layout, p.state);
    p.features.emplace(sample_key(*s), fuse(bundle, cfg.fusion));
  }
  return p;
}

/// Fresh head per task: init from a task-derived seed, train on support,
/// score on query.
inline TaskResult run_task(const PreparedCampaign& p, const ExperimentConfig& cfg, const EpisodeSpec& spec,
                           std::size_t task_index) {
  const Episode ep = sample_episode(p.split, spec, task_index);
  HeadConfig hc;
  hc.kind = cfg.head;
  hc.hidden_units = cfg.hidden_units;
  hc.num_classes = static_cast<int>(ep.classes.size());
  hc.input_mode = cfg.fusion;
  hc.chunk_len = cfg.chunk_len;
  hc.seed = derive_seed(derive_seed(spec.campaign_seed, "head"), task_index);
  hc.shape_for(p.layout);
  HeadTrainConfig tc = cfg.train;
  tc.seed = derive_seed(derive_seed(spec.campaign_seed ^ cfg.train.seed, "train"), task_index);

  auto labeled = [&](const std::vector<LabeledSample>& list) {
    std::vector<LabeledFeature> out;
    out.reserve(list.size());
    for (const auto& s : list) out.push_back({p.features.at(sample_key(s.sample)), s.label});
    return out;
  };
  const TrainedHead head = train_head(init_head(hc), labeled(ep.support), tc);
  return evaluate_task(head, labeled(ep.query));
}

inline EpisodeSpec resolve_episode(const EpisodeSpec& spec, const MetaSplit& split) {
  EpisodeSpec s = spec;
  if (s.n_ways == 0) s.n_ways = split.meta_test_classes.size();
  return s;
}

inline json campaign_fingerprint(const Workspace& ws, const PreparedCampaign& p, const EpisodeSpec& spec) {
  json weights = json::object();
  for (const auto& [id, hash] : p.generation) weights[std::string(to_string(id))] = hash;
  json manifests = json::object();
  for (const auto& m : ws.manifests()) {
    json j = m.to_json();
    j.erase("created_at");
    manifests[m.dataset_id()] = to_hex(fnv1a64(j.dump()));
  }
  return {{"weights", weights},
          {"weights_state", std::string(to_string(p.state))},
          {"split_seed", p.split.split_seed},
          {"campaign_seed", spec.campaign_seed},
          {"manifests", manifests},
          {"meta_test_classes", p.split.meta_test_classes},
          {"support_pool_size", p.split.support_pool_size()},
          {"query_pool_size", p.split.query_pool_size()},
          {"scale", {{"width_divisor", ws.scale().width_divisor}, {"input_size", ws.scale().input_size}}},
          {"fused_dim", p.layout.total_dim()}};
}

/// Runs every task of a campaign. Failed tasks are recorded; more than 10%
/// failures abort with CampaignFailed.
inline AggregateResult run_campaign(Workspace& ws, const ExperimentConfig& cfg,
                                    const std::function<void(const std::string&)>& progress = {}) {
  const auto started = std::chrono::steady_clock::now();
  const PreparedCampaign p = prepare_campaign(ws, cfg, progress);
  const EpisodeSpec spec = resolve_episode(cfg.episode, p.split);
  if (spec.task_count == 0) throw ConfigError("task_count must be positive");
  const std::size_t allowed = spec.task_count / 10;

  AggregateResult result;
  result.config = cfg.to_json();
  result.config["episode"] = spec.to_json();
  result.fingerprint = campaign_fingerprint(ws, p, spec);
  std::size_t failures = 0;
  for (std::size_t i = 0; i < spec.task_count; ++i) {
    TaskRecord rec{i, std::nullopt, {}};
    try {
      rec.accuracy = run_task(p, cfg, spec, i).accuracy;
    } catch (const Error& e) {
      rec.error = e.what();
      if (++failures > allowed) {
        throw CampaignFailed(std::to_string(failures) + " of " + std::to_string(spec.task_count) +
                             " tasks failed; last: " + rec.error);
      }
    }
    result.tasks.push_back(std::move(rec));
  }
  const auto acc = result.per_task_accuracies();
  const Summary s = aggregate(acc);
  result.mean = s.mean;
  result.dispersion = s.dispersion;
  result.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace dexnet

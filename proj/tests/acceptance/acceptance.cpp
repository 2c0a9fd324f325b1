// Acceptance run: one PASS/FAIL line per criterion. Criteria 1-7 run at desk
// scale on synthetic data and toy critics; 8-10 need the real datasets and
// full-scale critics and only run when DEXNET_FULL_WORKSPACE points at a
// prepared workspace.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <thread>

#include "dexnet/grid.hpp"

using namespace dexnet;

namespace {

struct Outcome {
  enum Status { pass, fail, skip } status = fail;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

void log(const std::string& s) { std::fprintf(stderr, "  .. %s\n", s.c_str()); }

fs::path scratch_root() {
  if (const char* d = std::getenv("DEXNET_ACCEPTANCE_DIR")) return d;
  return fs::temp_directory_path() / ("dexnet_acceptance_" + std::to_string(::getpid()));
}

// ---------------------------------------------------------------- criterion 1

DatasetManifest manifest_of(const std::string& id, const std::map<std::string, std::size_t>& counts) {
  std::map<std::string, std::vector<ImageSample>> samples;
  for (const auto& [c, n] : counts) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::string sid = c + "/img" + std::to_string(i) + ".jpg";
      samples[c].push_back({sid, c, id, fnv1a64(id + "/" + sid)});
    }
  }
  return {id, std::move(samples)};
}

std::vector<DatasetManifest> protocol_universe() {
  std::map<std::string, std::size_t> pv;
  Rng rng(99);
  for (const auto& c : plantvillage_classes()) pv[c] = 150 + rng.below(200);
  // the tomato subset keeps its published per-class sizes
  const std::map<std::string, std::size_t> tomato = {
      {"Tomato___Bacterial_spot", 2127}, {"Tomato___Early_blight", 1000},
      {"Tomato___Late_blight", 1909},    {"Tomato___Leaf_Mold", 952},
      {"Tomato___Septoria_leaf_spot", 1771}, {"Tomato___Spider_mites Two-spotted_spider_mite", 1676},
      {"Tomato___Target_Spot", 1404},    {"Tomato___Tomato_Yellow_Leaf_Curl_Virus", 5357},
      {"Tomato___Tomato_mosaic_virus", 373}, {"Tomato___healthy", 1591}};
  for (const auto& [c, n] : tomato) pv[c] = n;
  std::map<std::string, std::size_t> plants, pests, potato, cotton, extra;
  for (int i = 0; i < 10; ++i) plants["plant_" + std::to_string(i)] = 300;
  for (int i = 0; i < 10; ++i) pests["pest_" + std::to_string(i)] = 300;
  for (int i = 0; i < 3; ++i) potato["potato_" + std::to_string(i)] = 120 + 40 * i;
  for (int i = 0; i < 4; ++i) cotton["cotton_" + std::to_string(i)] = 90 + 10 * i;
  for (int i = 0; i < 6; ++i) extra["custom_" + std::to_string(i)] = 60 + 7 * i;
  return {manifest_of("plantvillage", pv),  manifest_of("pnp_plants", plants), manifest_of("pnp_pests", pests),
          manifest_of("potato_field", potato), manifest_of("cotton_field", cotton), manifest_of("extra", extra)};
}

Outcome criterion_episodes() {
  const auto manifests = protocol_universe();
  const std::vector<ProtocolId> protocols = {ProtocolId::pv_tomato10, ProtocolId::pv_argueso6, ProtocolId::pnp_mixed,
                                             ProtocolId::pnp_cross1,  ProtocolId::pnp_cross2,  ProtocolId::potato_field,
                                             ProtocolId::cotton_field, ProtocolId::custom};
  const CustomProtocol custom{{"custom_0", "custom_1", "plant_0"}, {"custom_2", "custom_3", "custom_4", "custom_5"}};
  std::size_t episodes = 0, violations = 0;
  std::string first;
  auto violate = [&](const std::string& what) {
    if (violations++ == 0) first = what;
  };

  Rng spec_rng(2024);
  const std::size_t per_protocol = 10000 / protocols.size();
  for (ProtocolId pid : protocols) {
    MetaSplit split = build_meta_split(manifests, pid, 5, custom);
    split = partition_support_query(std::move(split), {}, 5);
    const auto& classes = split.meta_test_classes;
    for (const auto& c : classes) {
      for (const auto& s : split.support_pool.at(c)) {
        if (std::binary_search(split.query_pool.at(c).begin(), split.query_pool.at(c).end(), s)) {
          violate("pool overlap in " + c);
        }
      }
    }
    for (const auto& c : split.meta_train_classes) {
      if (std::find(classes.begin(), classes.end(), c) != classes.end()) violate("class on both sides: " + c);
    }

    for (std::size_t e = 0; e < per_protocol; ++e) {
      EpisodeSpec spec;
      spec.n_ways = 2 + spec_rng.below(classes.size() - 1);
      spec.k_shots = 1 + spec_rng.below(std::min<std::size_t>(split.min_support_pool(), 20));
      spec.queries_per_class = spec_rng.below(8) == 0 ? std::nullopt
                                                      : std::optional<std::size_t>(1 + spec_rng.below(split.min_query_pool()));
      spec.task_count = 1000;
      spec.campaign_seed = spec_rng.next_u64();
      const std::size_t task = spec_rng.below(spec.task_count);
      const Episode ep = sample_episode(split, spec, task);
      ++episodes;

      if (ep.classes.size() != spec.n_ways) violate("way count");
      if (std::set<std::string>(ep.classes.begin(), ep.classes.end()).size() != ep.classes.size()) violate("repeated class");
      for (const auto& c : ep.classes) {
        if (std::find(classes.begin(), classes.end(), c) == classes.end()) violate("class outside meta-test side");
      }
      std::vector<std::size_t> s_count(spec.n_ways, 0), q_count(spec.n_ways, 0);
      std::set<std::string> support_ids, query_ids;
      for (const auto& s : ep.support) {
        if (s.label >= spec.n_ways) {
          violate("support label out of range");
          continue;
        }
        ++s_count[s.label];
        if (s.sample.class_label != ep.classes[s.label]) violate("support label does not name its class");
        if (!support_ids.insert(s.sample.sample_id).second) violate("support sample drawn twice");
        const auto& pool = split.support_pool.at(ep.classes[s.label]);
        if (!std::binary_search(pool.begin(), pool.end(), s.sample)) violate("support sample outside support pool");
      }
      for (const auto& q : ep.query) {
        if (q.label >= spec.n_ways) {
          violate("query label out of range");
          continue;
        }
        ++q_count[q.label];
        if (q.sample.class_label != ep.classes[q.label]) violate("query label does not name its class");
        if (support_ids.contains(q.sample.sample_id)) violate("support/query overlap");
        if (!query_ids.insert(q.sample.sample_id).second) violate("query sample drawn twice");
      }
      for (std::size_t l = 0; l < spec.n_ways; ++l) {
        if (s_count[l] != spec.k_shots) violate("support count");
        const std::size_t want_q = spec.queries_per_class ? *spec.queries_per_class
                                                          : split.query_pool.at(ep.classes[l]).size();
        if (q_count[l] != want_q) violate("query count");
      }
      // byte-level determinism, with an unrelated draw in between
      (void)sample_episode(split, spec, (task + 1) % spec.task_count);
      if (sample_episode(split, spec, task).to_json().dump() != ep.to_json().dump()) violate("non-deterministic episode");
    }
  }
  const std::string detail = fmt("%zu episodes over %zu protocols, %zu violations", episodes, protocols.size(), violations);
  return {violations == 0 && episodes >= 10000 ? Outcome::pass : Outcome::fail,
          violations ? detail + " (first: " + first + ")" : detail};
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion_fusion() {
  // independent literal of the nine penultimate widths
  const std::size_t widths[9] = {512, 512, 2048, 2048, 2048, 1024, 2208, 1664, 1920};
  std::size_t violations = 0;
  std::size_t sum = 0;
  for (std::size_t w : widths) sum += w;
  const auto layout = FusionLayout::all(kFullScale);
  if (sum != 13984 || layout.total_dim() != 13984) ++violations;
  for (std::size_t i = 0; i < 9; ++i) {
    if (layout.dim(i) != widths[i]) ++violations;
  }

  Rng rng(7);
  std::size_t checks = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Embedding> es;
    for (std::size_t i = 0; i < 9; ++i) {
      std::vector<float> v(widths[i]);
      for (auto& x : v) x = static_cast<float>(rng.normal() * std::pow(10.0, rng.uniform(-20, 20)));
      es.push_back({layout.critics()[i], "g", WeightsState::domain_adapted, "s", std::move(v)});
    }
    const ObservationBundle bundle("s", es, layout);

    const auto flat = fuse_concatenated(bundle);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < 9; ++i) {
      if (std::memcmp(flat.values.data() + offset, es[i].vector.data(), widths[i] * sizeof(float)) != 0) ++violations;
      const auto slice = critic_slice(flat, layout, i);
      if (std::memcmp(slice.data(), es[i].vector.data(), widths[i] * sizeof(float)) != 0) ++violations;
      offset += widths[i];
      ++checks;
    }

    for (std::size_t len = 1; len <= 13984; ++len) {
      if (13984 % len) continue;
      const auto chunked = chunk_for_recurrence(flat, len);
      if (chunked.steps * len != 13984) ++violations;
      for (std::size_t t = 0; t < chunked.steps; ++t) {
        if (std::memcmp(chunked.step(t).data(), flat.values.data() + t * len, len * sizeof(float)) != 0) ++violations;
      }
      if (std::memcmp(flatten(chunked).values.data(), flat.values.data(), 13984 * sizeof(float)) != 0) ++violations;
      ++checks;
    }
    try {
      (void)chunk_for_recurrence(flat, 1000);
      ++violations;
    } catch (const ChunkError&) {
    }

    const auto par = fuse_parallel(bundle);
    if (par.steps != 9 || par.width != 2208) ++violations;
    for (std::size_t t = 0; t < 9; ++t) {
      const auto step = par.step(t);
      if (std::memcmp(step.data(), es[t].vector.data(), widths[t] * sizeof(float)) != 0) ++violations;
      for (std::size_t k = widths[t]; k < 2208; ++k) {
        // bit-level zero, not merely == 0.0f (which would accept -0.0)
        std::uint32_t bits;
        std::memcpy(&bits, &step[k], 4);
        if (bits != 0) ++violations;
      }
      ++checks;
    }
  }
  return {violations == 0 ? Outcome::pass : Outcome::fail,
          fmt("sum of dims %zu, %zu slice/chunk/padding checks, %zu violations", sum, checks, violations)};
}

// ---------------------------------------------------------------- criterion 3

Outcome criterion_cache(const fs::path& root) {
  const fs::path dir = root / "cache_check";
  fs::remove_all(dir);
  const CriticScale scale = kToyScale;
  struct Item {
    FeatureCacheKey key;
    std::vector<float> vector;
  };
  std::vector<Item> items;
  Rng rng(3);
  for (std::size_t i = 0; i < 1000; ++i) {
    const CriticId id = kCanonicalCritics[i % 9];
    std::vector<float> v(embedding_dim(id, scale));
    for (auto& x : v) x = static_cast<float>(rng.normal());
    items.push_back({{id, i % 2 ? "gen_a" : "gen_b", i % 3 ? "ds1" : "ds2", "cls/" + std::to_string(i) + ".png"}, std::move(v)});
  }

  FeatureCache cache(dir, scale);
  std::atomic<std::size_t> written{0};
  std::atomic<std::size_t> mismatches{0}, reads{0};
  std::atomic<bool> done{false};
  std::thread writer([&] {
    for (const auto& it : items) {
      cache.put(it.key, it.vector);
      written.store(written.load() + 1);
    }
    done = true;
  });
  std::vector<std::thread> readers;
  for (int r = 0; r < 8; ++r) {
    readers.emplace_back([&, r] {
      Rng local(100 + r);
      while (!done.load()) {
        const std::size_t visible = written.load();
        if (visible == 0) continue;
        // anything already acknowledged must read back exactly
        const auto& it = items[local.below(visible)];
        const auto got = cache.get(it.key);
        ++reads;
        if (!got || *got != it.vector) ++mismatches;
        // anything else is either absent or exact
        const auto& maybe = items[local.below(items.size())];
        if (const auto g = cache.get(maybe.key); g && std::memcmp(g->data(), maybe.vector.data(), g->size() * 4) != 0) {
          ++mismatches;
        }
      }
    });
  }
  writer.join();
  for (auto& t : readers) t.join();

  FeatureCache reopened(dir, scale);
  std::size_t exact = 0;
  for (const auto& it : items) {
    const auto got = reopened.get(it.key);
    if (got && got->size() == it.vector.size() &&
        std::memcmp(got->data(), it.vector.data(), it.vector.size() * sizeof(float)) == 0) {
      ++exact;
    }
  }

  // flip one byte inside the vector of the last record of one file
  const Item& victim = items.back();
  const fs::path file = reopened.path_for(victim.key);
  {
    std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(-12, std::ios::end);
    char b = 0;
    f.read(&b, 1);
    f.seekp(-12, std::ios::end);
    b = static_cast<char>(b ^ 0x10);
    f.write(&b, 1);
  }
  bool rejected = false;
  try {
    FeatureCache fresh(dir, scale);
    (void)fresh.get(victim.key);
  } catch (const CacheCorrupt&) {
    rejected = true;
  }
  fs::remove_all(dir);
  const bool ok = mismatches == 0 && exact == items.size() && rejected;
  return {ok ? Outcome::pass : Outcome::fail,
          fmt("1000 vectors, 8 readers x 1 writer (%zu concurrent reads, %zu mismatches), %zu/1000 exact after reopen, "
              "corrupt record %s",
              reads.load(), mismatches.load(), exact, rejected ? "rejected" : "NOT rejected")};
}

// ---------------------------------------------------------------- criterion 4

std::vector<LabeledFeature> blobs(std::size_t classes, std::size_t per_class, const FusionLayout& layout,
                                  FusionMode mode, double noise, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<float>> centres(classes, std::vector<float>(layout.total_dim()));
  for (auto& c : centres) {
    for (auto& x : c) x = static_cast<float>(rng.normal());
  }
  std::vector<LabeledFeature> out;
  for (std::size_t label = 0; label < classes; ++label) {
    for (std::size_t i = 0; i < per_class; ++i) {
      std::vector<Embedding> es;
      const std::string id = "x" + std::to_string(label) + "_" + std::to_string(i);
      for (std::size_t k = 0; k < layout.size(); ++k) {
        std::vector<float> v(layout.dim(k));
        for (std::size_t d = 0; d < v.size(); ++d) {
          v[d] = centres[label][layout.offset(k) + d] + static_cast<float>(noise * rng.normal());
        }
        es.push_back({layout.critics()[k], "h", WeightsState::generic_pretrained, id, std::move(v)});
      }
      out.push_back({fuse(ObservationBundle(id, std::move(es), layout), mode), label});
    }
  }
  return out;
}

Outcome criterion_head_numerics() {
  double worst_norm = 0.0, worst_grad = 0.0, worst_uniform = 0.0;
  std::size_t hash_mismatches = 0, grad_checks = 0;
  const auto toy = FusionLayout::all(kToyScale);
  // small layout for the finite-difference sweep
  const FusionLayout small({CriticId::resnet18, CriticId::resnet34, CriticId::resnet50}, CriticScale{128, 32});  // 4+4+16

  for (FusionMode mode : {FusionMode::concatenated, FusionMode::parallel}) {
    for (HeadKind kind : kAllHeads) {
      // softmax normalization on trained and untrained heads, extreme inputs included
      HeadConfig hc;
      hc.kind = kind;
      hc.hidden_units = 24;
      hc.num_classes = 7;
      hc.input_mode = mode;
      hc.seed = 11;
      hc.shape_for(toy);
      auto head = init_head(hc);
      auto data = blobs(7, 3, toy, mode, 1.0, 5);
      for (auto& d : data) {
        for (auto& v : d.feature.values) v *= 50.0f;
      }
      for (const auto& d : data) {
        const auto p = predict(head, d.feature);
        double s = 0.0;
        for (double v : p) s += v;
        worst_norm = std::max(worst_norm, std::abs(s - 1.0));
      }

      // zeroed output layer gives exactly 1/N
      auto& m = head.model();
      const std::string w = is_recurrent(kind) ? "fc.weight" : "fc2.weight";
      const std::string b = is_recurrent(kind) ? "fc.bias" : "fc2.bias";
      m.param(w).setZero();
      m.param(b).setZero();
      for (const auto& d : data) {
        for (double v : predict(head, d.feature)) worst_uniform = std::max(worst_uniform, std::abs(v - 1.0 / 7));
      }

      // hand-derived gradients against central differences, in double precision
      HeadConfig gc;
      gc.kind = kind;
      gc.hidden_units = 5;
      gc.num_classes = 3;
      gc.input_mode = mode;
      gc.chunk_len = 6;
      gc.shape_for(small);
      HeadModel<double> model(gc);
      Rng rng(31 + static_cast<int>(kind));
      model.init(rng);
      for (auto& p : model.params()) p += 0.2 * rng.normal();
      const auto gdata = blobs(3, 2, small, mode, 0.5, 8);
      std::vector<const FusedFeature*> rows;
      std::vector<std::size_t> labels;
      for (const auto& d : gdata) {
        rows.push_back(&d.feature);
        labels.push_back(d.label);
      }
      const auto xs = make_batch<double>(rows, gc);
      model.loss_and_grad(xs, labels);
      const std::vector<double> analytic = model.grads();
      for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double keep = model.params()[i];
        const double h = 1e-5;
        model.params()[i] = keep + h;
        const double up = model.loss_and_grad(xs, labels);
        model.params()[i] = keep - h;
        const double down = model.loss_and_grad(xs, labels);
        model.params()[i] = keep;
        const double numeric = (up - down) / (2 * h);
        const double scale = std::max(std::abs(numeric) + std::abs(analytic[i]), 1e-6);
        worst_grad = std::max(worst_grad, std::abs(numeric - analytic[i]) / scale);
        ++grad_checks;
      }

      // seeded training reproduces the parameter hash
      HeadTrainConfig tc;
      tc.epochs = 4;
      tc.seed = 77;
      const auto train = blobs(7, 2, toy, mode, 0.5, 9);
      auto fresh = hc;
      if (train_head(init_head(fresh), train, tc).parameter_hash() !=
          train_head(init_head(fresh), train, tc).parameter_hash()) {
        ++hash_mismatches;
      }
    }
  }
  // seed and hash functions themselves
  if (derive_seed(1, "a") != derive_seed(1, "a") || derive_seed(1, "a") == derive_seed(2, "a")) ++hash_mismatches;

  const bool ok = worst_norm <= 1e-6 && worst_uniform <= 1e-12 && worst_grad <= 1e-4 && hash_mismatches == 0;
  return {ok ? Outcome::pass : Outcome::fail,
          fmt("max |sum p - 1| %.1e, max |p - 1/N| %.1e on zero logits, max grad rel err %.1e over %zu params, "
              "%zu hash mismatches",
              worst_norm, worst_uniform, worst_grad, grad_checks, hash_mismatches)};
}

// ---------------------------------------------------------------- criterion 5

Outcome criterion_overfit() {
  const auto layout = FusionLayout::all(kToyScale);
  std::string detail;
  bool ok = true;
  for (HeadKind kind : kAllHeads) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto data = blobs(3, 15, layout, FusionMode::concatenated, 0.5, 41);
    HeadConfig hc;  // default hidden units, fusion and chunking
    hc.kind = kind;
    hc.num_classes = 3;
    hc.seed = 3;
    hc.shape_for(layout);
    const auto head = train_head(init_head(hc), data, HeadTrainConfig{});
    std::size_t hits = 0;
    for (const auto& d : data) hits += argmax(predict(head, d.feature)) == d.label;
    const double acc = static_cast<double>(hits) / static_cast<double>(data.size());
    ok = ok && acc == 1.0;
    detail += fmt("%s%s %.3f", detail.empty() ? "" : ", ", std::string(to_string(kind)).c_str(), acc);
    log(fmt("overfit %s: train acc %.3f in %.1fs", std::string(to_string(kind)).c_str(), acc, seconds_since(t0)));
  }
  return {ok ? Outcome::pass : Outcome::fail, "training accuracy after the default budget: " + detail};
}

// ---------------------------------------------------------------- criterion 6

// brute force: one long-double pass per moment, summed in index order
std::pair<long double, long double> brute_force(const std::vector<double>& xs) {
  long double s = 0;
  for (double x : xs) s += x;
  const long double mean = s / static_cast<long double>(xs.size());
  long double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<long double>(xs.size()))};
}

Outcome criterion_aggregation(const std::vector<fs::path>& stored) {
  double worst = 0.0;
  std::size_t lists = 0;
  auto check = [&](const std::vector<double>& xs, double mean, double disp) {
    const auto [m, d] = brute_force(xs);
    worst = std::max({worst, static_cast<double>(std::abs(m - mean)), static_cast<double>(std::abs(d - disp))});
    ++lists;
  };
  for (const auto& path : stored) {
    const auto r = AggregateResult::from_json(json::parse(read_text_file(path)));
    check(r.per_task_accuracies(), r.mean, r.dispersion);
  }
  Rng rng(6);
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> xs(1 + rng.below(300));
    const std::size_t denom = 1 + rng.below(4000);
    for (auto& x : xs) x = static_cast<double>(rng.below(denom + 1)) / static_cast<double>(denom);
    const auto s = aggregate(xs);
    check(xs, s.mean, s.dispersion);
  }
  const std::vector<double> hand = {0.9, 0.94, 0.86};
  const auto h = aggregate(hand);
  const bool hand_ok = std::abs(h.mean - 0.9) < 1e-12 && std::abs(h.dispersion - 0.0326598632) < 1e-9;
  return {worst <= 1e-12 && hand_ok && !stored.empty() ? Outcome::pass : Outcome::fail,
          fmt("%zu lists (%zu stored campaign results), max deviation %.1e", lists, stored.size(), worst)};
}

// ---------------------------------------------------------------- criterion 7

struct DeskSetup {
  DatasetManifest manifest;
  CustomProtocol protocol;
};

ExperimentConfig desk_config(const DeskSetup& desk, HeadKind head) {
  ExperimentConfig c;
  c.protocol = ProtocolId::custom;
  c.custom = desk.protocol;
  c.fusion = FusionMode::concatenated;
  c.head = head;
  c.hidden_units = 64;
  c.episode.n_ways = 0;  // all five meta-test classes
  c.episode.queries_per_class = 20;
  c.episode.task_count = 20;
  c.adaptation.epochs = 6;
  c.adaptation.learning_rate = 1e-3;
  return c;
}

struct TrendTable {
  std::vector<std::size_t> ks;
  std::map<std::string, std::vector<double>> means;  // config -> mean per k
};

Outcome criterion_trends(const fs::path& root, std::vector<fs::path>& stored) {
  const std::size_t seeds = 5;
  const std::vector<std::size_t> ks = {1, 5, 15};
  const auto t0 = std::chrono::steady_clock::now();
  const auto bench = make_desk_benchmark(root / "desk_data");
  const DeskSetup desk{bench.manifest, bench.protocol};
  log(fmt("desk benchmark: %zu images, %zu meta-train / %zu meta-test classes", desk.manifest.sample_count(),
          desk.protocol.meta_train.size(), desk.protocol.meta_test.size()));

  auto keep = [&](const AggregateResult& r, const std::string& tag) {
    const fs::path p = root / "results" / (tag + ".json");
    emit_report(r, ReportFormat::json, p);
    stored.push_back(p);
    return r.mean;
  };

  // (a) ensemble vs single critics: generic critics, dense head, concatenated.
  // Seed s is an independent toy-critic draw plus its own campaign seed.
  TrendTable ensemble{ks, {}};
  std::vector<std::pair<std::string, std::vector<CriticId>>> sets;
  for (CriticId id : kCanonicalCritics) sets.push_back({std::string(to_string(id)), {id}});
  sets.push_back({"all", all_critics()});
  for (const auto& [name, _] : sets) ensemble.means[name].assign(ks.size(), 0.0);
  for (std::size_t s = 0; s < seeds; ++s) {
    Workspace ws(root / ("draw" + std::to_string(s)), kToyScale, 100 + s);
    ws.add_manifest(desk.manifest);
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      for (const auto& [name, critics] : sets) {
        auto c = desk_config(desk, HeadKind::dense);
        c.critics = critics;
        c.episode.k_shots = ks[ki];
        c.episode.campaign_seed = s;
        ensemble.means[name][ki] +=
            keep(run_campaign(ws, c), fmt("ensemble_s%zu_k%zu_%s", s, ks[ki], name.c_str())) / static_cast<double>(seeds);
      }
    }
    log(fmt("critic draw %zu done (%.0fs)", s, seconds_since(t0)));
  }

  // (b) adapted vs generic: all nine critics, BiLSTM head, concatenated
  TrendTable adaptation{ks, {}};
  adaptation.means["generic"].assign(ks.size(), 0.0);
  adaptation.means["adapted"].assign(ks.size(), 0.0);
  {
    Workspace ws(root / "adapt", kToyScale, 1);
    ws.add_manifest(desk.manifest);
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      for (bool adapted : {false, true}) {
        for (std::size_t s = 0; s < seeds; ++s) {
          auto c = desk_config(desk, HeadKind::bilstm);
          c.adapted = adapted;
          c.episode.k_shots = ks[ki];
          c.episode.campaign_seed = s;
          const std::string tag = adapted ? "adapted" : "generic";
          adaptation.means[tag][ki] +=
              keep(run_campaign(ws, c, [](const std::string& m) { log(m); }), fmt("adapt_%s_s%zu_k%zu", tag.c_str(), s, ks[ki])) /
              static_cast<double>(seeds);
        }
      }
      log(fmt("adaptation k=%zu done (%.0fs)", ks[ki], seconds_since(t0)));
    }
  }

  // trend checks on seed-averaged means
  std::vector<std::string> failures;
  std::string detail;
  const auto& all = ensemble.means.at("all");
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    double best = 0.0;
    std::string best_name;
    for (const auto& [name, m] : ensemble.means) {
      if (name != "all" && m[ki] > best) {
        best = m[ki];
        best_name = name;
      }
    }
    detail += fmt("k=%zu ensemble %.3f vs best single %.3f (%s); ", ks[ki], all[ki], best, best_name.c_str());
    if (all[ki] < best) failures.push_back(fmt("ensemble below %s at k=%zu", best_name.c_str(), ks[ki]));
  }
  for (std::size_t ki = 0; ki < 2; ++ki) {  // k = 1 and 5
    const double a = adaptation.means.at("adapted")[ki], g = adaptation.means.at("generic")[ki];
    detail += fmt("k=%zu adapted %.3f vs generic %.3f; ", ks[ki], a, g);
    if (a < g) failures.push_back(fmt("adapted below generic at k=%zu", ks[ki]));
  }
  std::size_t mono = 0;
  for (const auto* table : {&ensemble, &adaptation}) {
    for (const auto& [name, m] : table->means) {
      ++mono;
      for (std::size_t ki = 1; ki < m.size(); ++ki) {
        if (m[ki] < m[ki - 1]) failures.push_back(fmt("%s not monotone at k=%zu", name.c_str(), ks[ki]));
      }
    }
  }
  detail += fmt("k15>=k5>=k1 checked on %zu configs; %zu seeds; %.0fs", mono, seeds, seconds_since(t0));
  for (const auto& f : failures) detail += "; FAILED: " + f;
  return {failures.empty() ? Outcome::pass : Outcome::fail, detail};
}

// ------------------------------------------------------------ criteria 8-10

struct FullScaleCheck {
  int table;
  std::vector<std::pair<std::string, std::string>> cells;  // row, column
};

Outcome criterion_full_scale(const FullScaleCheck& check) {
  const char* ws_dir = std::getenv("DEXNET_FULL_WORKSPACE");
  if (!ws_dir) {
    return {Outcome::skip,
            "optional full-scale check; set DEXNET_FULL_WORKSPACE to a workspace holding the real datasets "
            "(or run `dexnet grid --table " + std::to_string(check.table) + "`)"};
  }
  Workspace ws(ws_dir, kFullScale, 0);
  const auto published = PublishedResults::load();
  const auto grid = table_grid(check.table);
  GridSpec subset{grid.table, grid.title, {}, {}, {}};
  for (const auto& [row, col] : check.cells) {
    for (const auto& cell : grid.cells) {
      if (cell.row == row && cell.column == col) subset.cells.push_back(cell);
    }
    subset.rows.push_back(row);
    subset.columns.push_back(col);
  }
  const auto report = run_grid(ws, subset, published, [](const std::string& m) { log(m); });
  emit_report(report, ReportFormat::md, fs::path(ws_dir) / ("acceptance_table" + std::to_string(check.table) + ".md"));
  bool ok = true;
  std::string detail;
  for (const auto& c : report.cells) {
    const auto d = c.delta();
    ok = ok && d && std::abs(*d) <= 2.0;
    detail += c.row + "/" + c.column + (d ? fmt(" delta %+.2f; ", *d) : " no result; ");
  }
  return {ok ? Outcome::pass : Outcome::fail, detail};
}

}  // namespace

int main() {
  const fs::path root = scratch_root();
  fs::create_directories(root);
  std::vector<fs::path> stored;

  struct Row {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  // criterion 6 audits the campaign results stored by criterion 7, so 7 runs first
  std::map<int, Outcome> outcomes;
  const std::vector<Row> rows = {
      {1, "episode protocol suite", [] { return criterion_episodes(); }},
      {2, "fusion identity suite", [] { return criterion_fusion(); }},
      {3, "cache round-trip", [&] { return criterion_cache(root); }},
      {4, "head numerical suite", [] { return criterion_head_numerics(); }},
      {5, "overfit sanity", [] { return criterion_overfit(); }},
      {7, "qualitative trends", [&] { return criterion_trends(root, stored); }},
      {6, "aggregation oracle", [&] { return criterion_aggregation(stored); }},
      {8, "table 1 all-nine k=15 (full scale)", [] { return criterion_full_scale({1, {{"all", "k=15"}}}); }},
      {9, "table 4 adapted k=5/15/80 (full scale)",
       [] { return criterion_full_scale({4, {{"k=5", "adapted"}, {"k=15", "adapted"}, {"k=80", "adapted"}}}); }},
      {10, "table 6 cross-domain-2 k=5 (full scale)", [] { return criterion_full_scale({6, {{"k=5", "pnp_cross2"}}}); }},
  };
  std::map<int, std::string> names;
  for (const auto& row : rows) {
    names[row.id] = row.name;
    const auto t0 = std::chrono::steady_clock::now();
    std::fprintf(stderr, "running criterion %d: %s\n", row.id, row.name);
    try {
      outcomes[row.id] = row.run();
    } catch (const std::exception& e) {
      outcomes[row.id] = {Outcome::fail, std::string("threw ") + e.what()};
    }
    std::fprintf(stderr, "  .. %.1fs\n", seconds_since(t0));
  }

  bool required_ok = true;
  for (const auto& [id, o] : outcomes) {
    const char* tag = o.status == Outcome::pass ? "PASS" : o.status == Outcome::skip ? "SKIP" : "FAIL";
    std::printf("[%s] criterion %d %s: %s\n", tag, id, names[id].c_str(), o.detail.c_str());
    if (id <= 7 && o.status != Outcome::pass) required_ok = false;
    if (id > 7 && o.status == Outcome::fail) required_ok = false;
  }
  std::fflush(stdout);
  if (!std::getenv("DEXNET_ACCEPTANCE_DIR")) fs::remove_all(root);
  return required_ok ? 0 : 1;
}

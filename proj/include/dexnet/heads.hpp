#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "dexnet/fusion.hpp"
#include "dexnet/manifest.hpp"
#include "dexnet/optim.hpp"
#include "dexnet/random.hpp"

namespace dexnet {

enum class HeadKind { dense, lstm, gru, bigru, bilstm };

inline constexpr std::array<HeadKind, 5> kAllHeads = {HeadKind::dense, HeadKind::lstm, HeadKind::gru, HeadKind::bigru,
                                                      HeadKind::bilstm};

inline std::string_view to_string(HeadKind k) {
  switch (k) {
    case HeadKind::dense: return "dense";
    case HeadKind::lstm: return "lstm";
    case HeadKind::gru: return "gru";
    case HeadKind::bigru: return "bigru";
    case HeadKind::bilstm: return "bilstm";
  }
  return "?";
}

inline HeadKind head_from_string(std::string_view s) {
  for (HeadKind k : kAllHeads) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown head kind '" + std::string(s) + "'");
}

inline bool is_recurrent(HeadKind k) { return k != HeadKind::dense; }
inline bool is_bidirectional(HeadKind k) { return k == HeadKind::bigru || k == HeadKind::bilstm; }
inline bool is_lstm(HeadKind k) { return k == HeadKind::lstm || k == HeadKind::bilstm; }

struct HeadConfig {
  HeadKind kind = HeadKind::bilstm;
  int hidden_units = 1024;
  int num_classes = 10;
  FusionMode input_mode = FusionMode::concatenated;
  std::size_t chunk_len = 0;  // concatenated input to a recurrent head; 0 picks default_chunk_len
  // Input shape the head consumes, filled by shape_for(). Dense heads see one flat step.
  std::size_t input_steps = 0;
  std::size_t input_width = 0;
  std::uint64_t seed = 0;

  /// Derives the input shape from a fusion layout; ChunkError if chunk_len does not divide.
  HeadConfig& shape_for(const FusionLayout& layout) {
    if (input_mode == FusionMode::parallel) {
      input_steps = layout.size();
      input_width = layout.max_dim();
    } else {
      const std::size_t total = layout.total_dim();
      const std::size_t len = chunk_len ? chunk_len : default_chunk_len(total);
      if (total % len != 0) {
        throw ChunkError("chunk length " + std::to_string(len) + " does not divide " + std::to_string(total));
      }
      chunk_len = len;
      input_steps = total / len;
      input_width = len;
    }
    if (!is_recurrent(kind)) {
      input_width *= input_steps;
      input_steps = 1;
    }
    return *this;
  }

  json to_json() const {
    return {{"kind", std::string(to_string(kind))}, {"hidden_units", hidden_units},
            {"num_classes", num_classes},           {"input_mode", std::string(to_string(input_mode))},
            {"chunk_len", chunk_len},               {"input_steps", input_steps},
            {"input_width", input_width},           {"seed", seed}};
  }

  static HeadConfig from_json(const json& j) {
    HeadConfig c;
    c.kind = head_from_string(j.value("kind", std::string(to_string(c.kind))));
    c.hidden_units = j.value("hidden_units", c.hidden_units);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.input_mode = fusion_from_string(j.value("input_mode", std::string(to_string(c.input_mode))));
    c.chunk_len = j.value("chunk_len", c.chunk_len);
    c.input_steps = j.value("input_steps", c.input_steps);
    c.input_width = j.value("input_width", c.input_width);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

inline void validate_head_config(const HeadConfig& c) {
  if (c.hidden_units <= 0) throw ConfigError("hidden_units must be positive");
  if (c.num_classes <= 1) throw ConfigError("a head needs at least two classes");
  if (c.input_steps == 0 || c.input_width == 0) throw ConfigError("head input shape is unset; call shape_for()");
  if (!is_recurrent(c.kind) && c.input_steps != 1) throw ConfigError("dense heads take a single flat step");
}

struct HeadSegment {
  std::string name;
  std::size_t rows = 0, cols = 0, offset = 0;
  std::size_t size() const { return rows * cols; }
};

/// Parameter tensors of a head in blob order. Names follow the usual
/// recurrent-layer conventions; LSTM carries a single bias per direction.
inline std::vector<HeadSegment> head_segments(const HeadConfig& c) {
  validate_head_config(c);
  const auto H = static_cast<std::size_t>(c.hidden_units);
  const auto N = static_cast<std::size_t>(c.num_classes);
  const std::size_t D = c.input_width;
  std::vector<HeadSegment> segs;
  auto add = [&](std::string name, std::size_t r, std::size_t k) { segs.push_back({std::move(name), r, k, 0}); };
  if (!is_recurrent(c.kind)) {
    add("fc1.weight", H, D);
    add("fc1.bias", 1, H);
    add("fc2.weight", N, H);
    add("fc2.bias", 1, N);
  } else {
    const std::size_t gates = is_lstm(c.kind) ? 4 : 3;
    const std::size_t dirs = is_bidirectional(c.kind) ? 2 : 1;
    for (std::size_t d = 0; d < dirs; ++d) {
      const std::string sfx = d ? "_reverse" : "";
      add("rnn.weight_ih_l0" + sfx, gates * H, D);
      add("rnn.weight_hh_l0" + sfx, gates * H, H);
      if (is_lstm(c.kind)) {
        add("rnn.bias_l0" + sfx, 1, gates * H);
      } else {
        add("rnn.bias_ih_l0" + sfx, 1, gates * H);
        add("rnn.bias_hh_l0" + sfx, 1, gates * H);
      }
    }
    add("fc.weight", N, dirs * H);
    add("fc.bias", 1, N);
  }
  std::size_t offset = 0;
  for (auto& s : segs) {
    s.offset = offset;
    offset += s.size();
  }
  return segs;
}

inline std::size_t parameter_count(const HeadConfig& c) {
  std::size_t n = 0;
  for (const auto& s : head_segments(c)) n += s.size();
  return n;
}

/// Numerical core of a head: parameters in one flat blob, batched forward
/// pass and hand-derived backward pass (BPTT for the recurrent kinds).
template <typename T>
class HeadModel {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;
  /// One (batch x width) matrix per time step.
  using Sequence = std::vector<Mat>;

  explicit HeadModel(const HeadConfig& config) : config_(config), segments_(head_segments(config)) {
    std::size_t n = 0;
    for (const auto& s : segments_) n += s.size();
    params_.assign(n, T(0));
    grads_.assign(n, T(0));
  }

  const HeadConfig& config() const { return config_; }
  const std::vector<HeadSegment>& segments() const { return segments_; }
  std::vector<T>& params() { return params_; }
  const std::vector<T>& params() const { return params_; }
  const std::vector<T>& grads() const { return grads_; }

  /// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1.
  void init(Rng& rng) {
    for (const auto& s : segments_) {
      Map m(params_.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
      if (s.name.find("weight") != std::string::npos) {
        const double limit = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-limit, limit));
      } else {
        m.setZero();
        if (s.name.starts_with("rnn.bias_l0")) {
          const auto H = static_cast<Eigen::Index>(config_.hidden_units);
          m.middleCols(H, H).setConstant(T(1));
        }
      }
    }
  }

  CMap param(const std::string& name) const {
    const auto& s = segment(name);
    return CMap(params_.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
  }
  Map param(const std::string& name) {
    const auto& s = segment(name);
    return Map(params_.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
  }

  Mat logits(const Sequence& xs) const { return forward(xs, nullptr); }

  /// Mean softmax cross-entropy over the batch; overwrites grads().
  double loss_and_grad(const Sequence& xs, std::span<const std::size_t> labels, std::size_t* correct = nullptr) {
    std::fill(grads_.begin(), grads_.end(), T(0));
    Cache cache;
    const Mat z = forward(xs, &cache);
    const Eigen::Index B = z.rows(), N = z.cols();
    Mat dz(B, N);
    double loss = 0.0;
    std::size_t hits = 0;
    for (Eigen::Index b = 0; b < B; ++b) {
      Eigen::Index arg = 0;
      for (Eigen::Index k = 1; k < N; ++k) {
        if (z(b, k) > z(b, arg)) arg = k;
      }
      const double mx = static_cast<double>(z(b, arg));
      double sum = 0.0;
      for (Eigen::Index k = 0; k < N; ++k) sum += std::exp(static_cast<double>(z(b, k)) - mx);
      const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(b)]);
      loss += std::log(sum) - (static_cast<double>(z(b, y)) - mx);
      for (Eigen::Index k = 0; k < N; ++k) {
        const double p = std::exp(static_cast<double>(z(b, k)) - mx) / sum;
        dz(b, k) = static_cast<T>((p - (k == y ? 1.0 : 0.0)) / static_cast<double>(B));
      }
      if (arg == y) ++hits;
    }
    backward(xs, cache, dz);
    if (correct) *correct = hits;
    return loss / static_cast<double>(B);
  }

 private:
  struct Step {
    std::size_t t = 0;
    Mat h_prev, c_prev, i, f, g, o, c;  // LSTM
    Mat r, z, n, hn;                    // GRU (h_prev shared)
  };
  struct Cache {
    Mat hidden;   // dense
    Mat feature;  // recurrent readout
    std::array<std::vector<Step>, 2> dirs;
  };

  const HeadSegment& segment(const std::string& name) const {
    for (const auto& s : segments_) {
      if (s.name == name) return s;
    }
    throw ConfigError("head has no parameter '" + name + "'");
  }
  Map grad(const std::string& name) {
    const auto& s = segment(name);
    return Map(grads_.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
  }

  static Mat sigmoid(const Mat& a) { return (T(1) / (T(1) + (-a.array()).exp())).matrix(); }
  static Mat tanh(const Mat& a) { return a.array().tanh().matrix(); }

  void check(const Sequence& xs) const {
    if (xs.size() != config_.input_steps) {
      throw DimensionError("head expects " + std::to_string(config_.input_steps) + " steps, got " +
                           std::to_string(xs.size()));
    }
    for (const auto& x : xs) {
      if (static_cast<std::size_t>(x.cols()) != config_.input_width || x.rows() != xs.front().rows()) {
        throw DimensionError("head expects width " + std::to_string(config_.input_width) + ", got " +
                             std::to_string(x.cols()));
      }
    }
  }

  Mat forward(const Sequence& xs, Cache* cache) const {
    check(xs);
    const Eigen::Index B = xs.front().rows();
    if (!is_recurrent(config_.kind)) {
      Mat h = xs.front() * param("fc1.weight").transpose();
      h.rowwise() += param("fc1.bias").row(0);
      h = h.cwiseMax(T(0));
      Mat z = h * param("fc2.weight").transpose();
      z.rowwise() += param("fc2.bias").row(0);
      if (cache) cache->hidden = std::move(h);
      return z;
    }
    const auto H = static_cast<Eigen::Index>(config_.hidden_units);
    const std::size_t dirs = is_bidirectional(config_.kind) ? 2 : 1;
    Mat feature(B, static_cast<Eigen::Index>(dirs) * H);
    for (std::size_t d = 0; d < dirs; ++d) {
      auto* steps = cache ? &cache->dirs[d] : nullptr;
      feature.middleCols(static_cast<Eigen::Index>(d) * H, H) = is_lstm(config_.kind) ? run_lstm(d, xs, steps)
                                                                                       : run_gru(d, xs, steps);
    }
    Mat z = feature * param("fc.weight").transpose();
    z.rowwise() += param("fc.bias").row(0);
    if (cache) cache->feature = std::move(feature);
    return z;
  }

  Mat run_lstm(std::size_t d, const Sequence& xs, std::vector<Step>* steps) const {
    const std::string sfx = d ? "_reverse" : "";
    const auto Wih = param("rnn.weight_ih_l0" + sfx);
    const auto Whh = param("rnn.weight_hh_l0" + sfx);
    const auto b = param("rnn.bias_l0" + sfx);
    const auto H = static_cast<Eigen::Index>(config_.hidden_units);
    const Eigen::Index B = xs.front().rows();
    Mat h = Mat::Zero(B, H), c = Mat::Zero(B, H);
    for (std::size_t s = 0; s < xs.size(); ++s) {
      const std::size_t t = d ? xs.size() - 1 - s : s;
      Mat a = xs[t] * Wih.transpose();
      a.noalias() += h * Whh.transpose();
      a.rowwise() += b.row(0);
      Mat i = sigmoid(a.middleCols(0, H));
      Mat f = sigmoid(a.middleCols(H, H));
      Mat g = tanh(a.middleCols(2 * H, H));
      Mat o = sigmoid(a.middleCols(3 * H, H));
      Mat c_new = (f.array() * c.array() + i.array() * g.array()).matrix();
      Mat h_new = (o.array() * c_new.array().tanh()).matrix();
      if (steps) steps->push_back({t, h, c, std::move(i), std::move(f), std::move(g), std::move(o), c_new, {}, {}, {}, {}});
      h = std::move(h_new);
      c = std::move(c_new);
    }
    return h;
  }

  Mat run_gru(std::size_t d, const Sequence& xs, std::vector<Step>* steps) const {
    const std::string sfx = d ? "_reverse" : "";
    const auto Wih = param("rnn.weight_ih_l0" + sfx);
    const auto Whh = param("rnn.weight_hh_l0" + sfx);
    const auto bih = param("rnn.bias_ih_l0" + sfx);
    const auto bhh = param("rnn.bias_hh_l0" + sfx);
    const auto H = static_cast<Eigen::Index>(config_.hidden_units);
    const Eigen::Index B = xs.front().rows();
    Mat h = Mat::Zero(B, H);
    for (std::size_t s = 0; s < xs.size(); ++s) {
      const std::size_t t = d ? xs.size() - 1 - s : s;
      Mat gi = xs[t] * Wih.transpose();
      gi.rowwise() += bih.row(0);
      Mat gh = h * Whh.transpose();
      gh.rowwise() += bhh.row(0);
      Mat r = sigmoid(gi.middleCols(0, H) + gh.middleCols(0, H));
      Mat z = sigmoid(gi.middleCols(H, H) + gh.middleCols(H, H));
      Mat hn = gh.middleCols(2 * H, H);
      Mat n = tanh((gi.middleCols(2 * H, H).array() + r.array() * hn.array()).matrix());
      Mat h_new = ((T(1) - z.array()) * n.array() + z.array() * h.array()).matrix();
      if (steps) {
        Step st;
        st.t = t;
        st.h_prev = h;
        st.r = std::move(r);
        st.z = std::move(z);
        st.n = std::move(n);
        st.hn = std::move(hn);
        steps->push_back(std::move(st));
      }
      h = std::move(h_new);
    }
    return h;
  }

  void backward(const Sequence& xs, const Cache& cache, const Mat& dz) {
    if (!is_recurrent(config_.kind)) {
      const Mat& h = cache.hidden;
      grad("fc2.weight").noalias() += dz.transpose() * h;
      grad("fc2.bias").row(0) += dz.colwise().sum();
      Mat dh = dz * param("fc2.weight");
      dh = (dh.array() * (h.array() > T(0)).template cast<T>()).matrix();
      grad("fc1.weight").noalias() += dh.transpose() * xs.front();
      grad("fc1.bias").row(0) += dh.colwise().sum();
      return;
    }
    grad("fc.weight").noalias() += dz.transpose() * cache.feature;
    grad("fc.bias").row(0) += dz.colwise().sum();
    const Mat df = dz * param("fc.weight");
    const auto H = static_cast<Eigen::Index>(config_.hidden_units);
    const std::size_t dirs = is_bidirectional(config_.kind) ? 2 : 1;
    for (std::size_t d = 0; d < dirs; ++d) {
      Mat dh = df.middleCols(static_cast<Eigen::Index>(d) * H, H);
      if (is_lstm(config_.kind)) {
        back_lstm(d, xs, cache.dirs[d], std::move(dh));
      } else {
        back_gru(d, xs, cache.dirs[d], std::move(dh));
      }
    }
  }

  void back_lstm(std::size_t d, const Sequence& xs, const std::vector<Step>& steps, Mat dh) {
    const std::string sfx = d ? "_reverse" : "";
    auto gWih = grad("rnn.weight_ih_l0" + sfx);
    auto gWhh = grad("rnn.weight_hh_l0" + sfx);
    auto gb = grad("rnn.bias_l0" + sfx);
    const Mat Whh = param("rnn.weight_hh_l0" + sfx);
    const auto H = static_cast<Eigen::Index>(config_.hidden_units);
    Mat dc = Mat::Zero(dh.rows(), H);
    Mat da(dh.rows(), 4 * H);
    for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
      const Step& s = *it;
      const auto tc = s.c.array().tanh().eval();
      dc.array() += dh.array() * s.o.array() * (T(1) - tc * tc);
      da.middleCols(0, H) = (dc.array() * s.g.array() * s.i.array() * (T(1) - s.i.array())).matrix();
      da.middleCols(H, H) = (dc.array() * s.c_prev.array() * s.f.array() * (T(1) - s.f.array())).matrix();
      da.middleCols(2 * H, H) = (dc.array() * s.i.array() * (T(1) - s.g.array() * s.g.array())).matrix();
      da.middleCols(3 * H, H) = (dh.array() * tc * s.o.array() * (T(1) - s.o.array())).matrix();
      gWih.noalias() += da.transpose() * xs[s.t];
      gWhh.noalias() += da.transpose() * s.h_prev;
      gb.row(0) += da.colwise().sum();
      dh.noalias() = da * Whh;
      dc = (dc.array() * s.f.array()).matrix();
    }
  }

  void back_gru(std::size_t d, const Sequence& xs, const std::vector<Step>& steps, Mat dh) {
    const std::string sfx = d ? "_reverse" : "";
    auto gWih = grad("rnn.weight_ih_l0" + sfx);
    auto gWhh = grad("rnn.weight_hh_l0" + sfx);
    auto gbih = grad("rnn.bias_ih_l0" + sfx);
    auto gbhh = grad("rnn.bias_hh_l0" + sfx);
    const Mat Whh = param("rnn.weight_hh_l0" + sfx);
    const auto H = static_cast<Eigen::Index>(config_.hidden_units);
    Mat gi(dh.rows(), 3 * H), gh(dh.rows(), 3 * H);
    for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
      const Step& s = *it;
      const auto dn = (dh.array() * (T(1) - s.z.array())).eval();
      const auto dzg = (dh.array() * (s.h_prev.array() - s.n.array())).eval();
      const auto dan = (dn * (T(1) - s.n.array() * s.n.array())).eval();
      const auto dr = (dan * s.hn.array()).eval();
      gi.middleCols(0, H) = (dr * s.r.array() * (T(1) - s.r.array())).matrix();
      gi.middleCols(H, H) = (dzg * s.z.array() * (T(1) - s.z.array())).matrix();
      gi.middleCols(2 * H, H) = dan.matrix();
      gh.leftCols(2 * H) = gi.leftCols(2 * H);
      gh.middleCols(2 * H, H) = (dan * s.r.array()).matrix();
      gWih.noalias() += gi.transpose() * xs[s.t];
      gbih.row(0) += gi.colwise().sum();
      gWhh.noalias() += gh.transpose() * s.h_prev;
      gbhh.row(0) += gh.colwise().sum();
      Mat next = (dh.array() * s.z.array()).matrix();
      next.noalias() += gh * Whh;
      dh = std::move(next);
    }
  }

  HeadConfig config_;
  std::vector<HeadSegment> segments_;
  std::vector<T> params_;
  std::vector<T> grads_;
};

struct HeadTrainConfig {
  std::size_t epochs = 50;
  double learning_rate = 1e-3;
  std::size_t batch_size = 0;  // 0: min(32, support size)
  std::string optimizer_id = "adam";
  std::uint64_t seed = 0;

  json to_json() const {
    return {{"epochs", epochs}, {"learning_rate", learning_rate}, {"batch_size", batch_size},
            {"optimizer_id", optimizer_id}, {"seed", seed}};
  }
  static HeadTrainConfig from_json(const json& j) {
    HeadTrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.optimizer_id = j.value("optimizer_id", c.optimizer_id);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

struct CurvePoint {
  std::size_t epoch = 0;
  double loss = 0;
  double accuracy = 0;
};

struct LabeledFeature {
  FusedFeature feature;
  std::size_t label = 0;
};

class TrainedHead {
 public:
  explicit TrainedHead(const HeadConfig& config) : model_(config) {}

  const HeadConfig& config() const { return model_.config(); }
  HeadModel<float>& model() { return model_; }
  const HeadModel<float>& model() const { return model_; }
  const std::vector<CurvePoint>& curve() const { return curve_; }
  std::vector<CurvePoint>& curve() { return curve_; }

  std::string parameter_hash() const {
    const auto& p = model_.params();
    return to_hex(fnv1a64(std::as_bytes(std::span(p.data(), p.size()))));
  }

  json sidecar() const {
    json segs = json::array();
    for (const auto& s : model_.segments()) segs.push_back({{"name", s.name}, {"shape", {s.rows, s.cols}}});
    json curve = json::array();
    for (const auto& c : curve_) curve.push_back({{"epoch", c.epoch}, {"loss", c.loss}, {"accuracy", c.accuracy}});
    return {{"config", config().to_json()},
            {"parameter_hash", parameter_hash()},
            {"parameter_count", model_.params().size()},
            {"segments", segs},
            {"curve", curve}};
  }

  /// Writes `<stem>.bin` (raw little-endian floats after a small header) and `<stem>.json`.
  void save(const fs::path& stem) const {
    fs::path bin = stem;
    bin += ".bin";
    fs::path side = stem;
    side += ".json";
    if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
    std::ofstream out(bin, std::ios::binary | std::ios::trunc);
    const auto& p = model_.params();
    const std::uint64_t n = p.size();
    out.write("DEXH", 4);
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!out) throw IoError("cannot write " + bin.string());
    write_text_file(side, sidecar().dump(2) + "\n");
  }

  static TrainedHead load(const fs::path& stem) {
    fs::path bin = stem;
    bin += ".bin";
    fs::path side = stem;
    side += ".json";
    const json meta = json::parse(read_text_file(side));
    TrainedHead head(HeadConfig::from_json(meta.at("config")));
    const auto bytes = read_file_bytes(bin);
    auto& p = head.model_.params();
    const std::size_t want = 4 + sizeof(std::uint64_t) + p.size() * sizeof(float);
    if (bytes.size() != want || std::memcmp(bytes.data(), "DEXH", 4) != 0) {
      throw CacheCorrupt(bin.string() + " does not match its sidecar");
    }
    std::memcpy(p.data(), bytes.data() + 4 + sizeof(std::uint64_t), p.size() * sizeof(float));
    if (head.parameter_hash() != meta.at("parameter_hash").get<std::string>()) {
      throw CacheCorrupt(bin.string() + " parameter hash mismatch");
    }
    for (const auto& c : meta.at("curve")) {
      head.curve_.push_back({c.at("epoch").get<std::size_t>(), c.at("loss").get<double>(), c.at("accuracy").get<double>()});
    }
    return head;
  }

 private:
  HeadModel<float> model_;
  std::vector<CurvePoint> curve_;
};

/// Reshapes a fused feature to the (steps x width) layout the head reads.
inline FusedFeature prepare_input(const FusedFeature& f, const HeadConfig& c) {
  if (f.mode != c.input_mode) {
    throw DimensionError("head reads " + std::string(to_string(c.input_mode)) + " features, got " +
                         std::string(to_string(f.mode)));
  }
  if (f.values.size() != c.input_steps * c.input_width) {
    throw DimensionError("head expects " + std::to_string(c.input_steps * c.input_width) + " values, got " +
                         std::to_string(f.values.size()));
  }
  FusedFeature out = f;
  out.steps = c.input_steps;
  out.width = c.input_width;
  return out;
}

template <typename T = float>
typename HeadModel<T>::Sequence make_batch(const std::vector<const FusedFeature*>& rows, const HeadConfig& c) {
  typename HeadModel<T>::Sequence xs(c.input_steps);
  for (auto& x : xs) x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(c.input_width));
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const FusedFeature f = prepare_input(*rows[b], c);
    for (std::size_t t = 0; t < c.input_steps; ++t) {
      const auto step = f.step(t);
      for (std::size_t k = 0; k < c.input_width; ++k) {
        xs[t](static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k)) = static_cast<T>(step[k]);
      }
    }
  }
  return xs;
}

inline TrainedHead init_head(const HeadConfig& config) {
  validate_head_config(config);
  TrainedHead head(config);
  Rng rng(config.seed);
  head.model().init(rng);
  return head;
}

/// Mini-batch training on a task's support set; batch order is reshuffled
/// every epoch from (seed, epoch).
inline TrainedHead train_head(TrainedHead head, const std::vector<LabeledFeature>& support,
                              const HeadTrainConfig& cfg) {
  const auto& hc = head.config();
  const auto N = static_cast<std::size_t>(hc.num_classes);
  if (support.empty()) throw ConfigError("empty support set");
  std::vector<std::size_t> per_class(N, 0);
  for (const auto& s : support) {
    if (s.label >= N) throw LabelError("label " + std::to_string(s.label) + " outside [0," + std::to_string(N) + ")");
    ++per_class[s.label];
  }
  for (std::size_t k = 0; k < N; ++k) {
    if (per_class[k] == 0) throw LabelError("class " + std::to_string(k) + " has no support sample");
  }
  const std::size_t batch = cfg.batch_size ? cfg.batch_size : std::min<std::size_t>(32, support.size());
  if (batch > support.size()) throw ConfigError("batch size exceeds the support set");

  auto& model = head.model();
  nn::Optimizer<float> optimizer(nn::optimizer_from_string(cfg.optimizer_id), cfg.learning_rate);
  const std::vector<nn::Optimizer<float>::Slot> slots = {{std::span(model.params()), std::span(model.grads())}};

  std::vector<std::size_t> order(support.size());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, e));
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t hits_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<const FusedFeature*> rows;
      std::vector<std::size_t> labels;
      for (std::size_t i = start; i < end; ++i) {
        rows.push_back(&support[order[i]].feature);
        labels.push_back(support[order[i]].label);
      }
      std::size_t hits = 0;
      const double loss = model.loss_and_grad(make_batch(rows, hc), labels, &hits);
      if (!std::isfinite(loss)) throw TrainingDiverged("head loss became non-finite at epoch " + std::to_string(e));
      optimizer.step(slots);
      loss_sum += loss * static_cast<double>(labels.size());
      hits_sum += hits;
    }
    const auto n = static_cast<double>(support.size());
    head.curve().push_back({e, loss_sum / n, static_cast<double>(hits_sum) / n});
  }
  return head;
}

inline std::vector<double> softmax(std::span<const float> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) sum += p[k] = std::exp(static_cast<double>(z[k]) - mx);
  for (auto& v : p) v /= sum;
  return p;
}

/// Index of the largest value; ties go to the lowest index.
template <typename V>
std::size_t argmax(const V& v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k) {
    if (v[k] > v[best]) best = k;
  }
  return best;
}

inline std::vector<std::vector<double>> predict_batch(const TrainedHead& head, const std::vector<const FusedFeature*>& rows) {
  std::vector<std::vector<double>> out;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < rows.size(); start += kChunk) {
    const std::vector<const FusedFeature*> part(rows.begin() + static_cast<std::ptrdiff_t>(start),
                                                rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), start + kChunk)));
    const auto z = head.model().logits(make_batch(part, head.config()));
    for (Eigen::Index b = 0; b < z.rows(); ++b) out.push_back(softmax(std::span(z.row(b).data(), static_cast<std::size_t>(z.cols()))));
  }
  return out;
}

inline std::vector<double> predict(const TrainedHead& head, const FusedFeature& feature) {
  return predict_batch(head, {&feature}).front();
}

struct TaskResult {
  double accuracy = 0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

inline TaskResult evaluate_task(const TrainedHead& head, const std::vector<LabeledFeature>& query) {
  if (query.empty()) throw EmptyQuery("query set is empty");
  const auto N = static_cast<std::size_t>(head.config().num_classes);
  std::vector<const FusedFeature*> rows;
  for (const auto& q : query) {
    if (q.label >= N) throw LabelError("query label " + std::to_string(q.label) + " out of range");
    rows.push_back(&q.feature);
  }
  const auto probs = predict_batch(head, rows);
  TaskResult r;
  r.total = query.size();
  r.confusion.assign(N, std::vector<std::size_t>(N, 0));
  for (std::size_t i = 0; i < query.size(); ++i) {
    const std::size_t pred = argmax(probs[i]);
    ++r.confusion[query[i].label][pred];
    if (pred == query[i].label) ++r.correct;
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

}  // namespace dexnet

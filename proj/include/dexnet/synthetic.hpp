#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "dexnet/image.hpp"
#include "dexnet/manifest.hpp"
#include "dexnet/protocol.hpp"
#include "dexnet/random.hpp"

namespace dexnet {

/// Generative factors of a synthetic diseased leaf.
struct LeafFactors {
  int spot_color = 0;  // index into kSpotColors
  int pattern = 0;     // 0 dots, 1 streaks, 2 rings, 3 blotches
};

inline constexpr std::array<std::array<int, 3>, 6> kSpotColors = {{
    {40, 70, 130},   // brown
    {40, 190, 215},  // yellow
    {35, 35, 45},    // near black
    {205, 215, 215}, // pale
    {30, 120, 230},  // orange
    {50, 45, 165},   // rust
}};
inline constexpr std::array<std::string_view, 4> kPatternNames = {"dots", "streaks", "rings", "blotch"};
inline constexpr std::array<std::string_view, 6> kColorNames = {"brown", "yellow", "black", "pale", "orange", "rust"};

inline std::string leaf_class_name(const LeafFactors& f) {
  return std::string(kColorNames[static_cast<std::size_t>(f.spot_color)]) + "_" +
         std::string(kPatternNames[static_cast<std::size_t>(f.pattern)]);
}

/// One leaf on a plain backdrop, photographed lab-style. Leaf pose, tint,
/// lighting and sensor noise are nuisance; only spot colour and spot
/// pattern carry the class.
inline cv::Mat render_leaf(const LeafFactors& f, Rng& rng, int size = 64) {
  const double s = size / 64.0;
  cv::Mat img(size, size, CV_8UC3);
  const double grey = rng.uniform(120, 135);
  img.setTo(cv::Scalar(grey, grey, grey));

  const cv::Point2f center(static_cast<float>(size / 2.0 + rng.uniform(-3, 3) * s),
                           static_cast<float>(size / 2.0 + rng.uniform(-3, 3) * s));
  const cv::Size axes(static_cast<int>(rng.uniform(27, 31) * s), static_cast<int>(rng.uniform(19, 24) * s));
  const double angle = rng.uniform(0, 180);
  const cv::Scalar leaf(rng.uniform(45, 60), rng.uniform(145, 165), rng.uniform(60, 80));
  cv::Mat mask = cv::Mat::zeros(size, size, CV_8UC1);
  cv::ellipse(mask, center, axes, angle, 0, 360, cv::Scalar(255), cv::FILLED, cv::LINE_AA);
  img.setTo(leaf, mask);
  cv::ellipse(img, center, cv::Size(axes.width, 1), angle, 0, 360, leaf * 0.7, std::max(1, static_cast<int>(s)),
              cv::LINE_AA);

  cv::Mat spots(size, size, CV_8UC3, cv::Scalar(0, 0, 0));
  cv::Mat spot_mask = cv::Mat::zeros(size, size, CV_8UC1);
  const auto& c = kSpotColors[static_cast<std::size_t>(f.spot_color)];
  auto jitter = [&](int v) { return std::clamp(v + static_cast<int>(rng.uniform(-18, 18)), 0, 255); };
  auto inside = [&]() {
    const double r = std::sqrt(rng.uniform01()) * 0.75;
    const double t = rng.uniform(0, 2 * M_PI);
    const double a = angle * M_PI / 180.0;
    const double x = r * axes.width * std::cos(t), y = r * axes.height * std::sin(t);
    return cv::Point(static_cast<int>(center.x + x * std::cos(a) - y * std::sin(a)),
                     static_cast<int>(center.y + x * std::sin(a) + y * std::cos(a)));
  };
  const int count = static_cast<int>(rng.uniform(9, 13));
  const int thick = std::max(1, static_cast<int>(2.5 * s));
  for (int i = 0; i < count; ++i) {
    const cv::Scalar col(jitter(c[0]), jitter(c[1]), jitter(c[2]));
    const cv::Point p = inside();
    switch (f.pattern) {
      case 0: {
        const int r = std::max(1, static_cast<int>(rng.uniform(2.5, 3.5) * s));
        cv::circle(spots, p, r, col, cv::FILLED, cv::LINE_AA);
        cv::circle(spot_mask, p, r, 255, cv::FILLED, cv::LINE_AA);
        break;
      }
      case 1: {
        if (i >= 6) break;
        const double a = rng.uniform(0, M_PI);
        const double len = rng.uniform(9, 14) * s;
        const cv::Point d(static_cast<int>(len * std::cos(a)), static_cast<int>(len * std::sin(a)));
        cv::line(spots, p - d, p + d, col, thick, cv::LINE_AA);
        cv::line(spot_mask, p - d, p + d, 255, thick, cv::LINE_AA);
        break;
      }
      case 2: {
        if (i >= 5) break;
        const int r = static_cast<int>(rng.uniform(6, 8) * s);
        cv::circle(spots, p, r, col, thick, cv::LINE_AA);
        cv::circle(spot_mask, p, r, 255, thick, cv::LINE_AA);
        break;
      }
      default: {
        if (i >= 2) break;  // a couple of large patches
        const cv::Size ax(static_cast<int>(rng.uniform(10, 14) * s), static_cast<int>(rng.uniform(7, 10) * s));
        const double a = rng.uniform(0, 180);
        cv::ellipse(spots, p, ax, a, 0, 360, col, cv::FILLED, cv::LINE_AA);
        cv::ellipse(spot_mask, p, ax, a, 0, 360, 255, cv::FILLED, cv::LINE_AA);
        break;
      }
    }
  }
  cv::bitwise_and(spot_mask, mask, spot_mask);
  spots.copyTo(img, spot_mask);

  cv::Mat f32;
  img.convertTo(f32, CV_32FC3, rng.uniform(0.95, 1.05), rng.uniform(-5, 5));
  cv::Mat noise(size, size, CV_32FC3);
  for (int y = 0; y < size; ++y) {
    auto* row = noise.ptr<cv::Vec3f>(y);
    for (int x = 0; x < size; ++x) {
      for (int k = 0; k < 3; ++k) row[x][k] = static_cast<float>(rng.normal() * 4.0);
    }
  }
  f32 += noise;
  cv::Mat out;
  f32.convertTo(out, CV_8UC3);
  return out;
}

struct SyntheticClass {
  LeafFactors factors;
  std::size_t images = 0;
};

/// Renders PNG files under `<root>/<class>/` and scans the result.
inline DatasetManifest write_synthetic_dataset(const fs::path& root, const std::string& dataset_id,
                                               const std::vector<SyntheticClass>& classes, std::uint64_t seed,
                                               int image_size = 64) {
  for (const auto& cls : classes) {
    const std::string name = leaf_class_name(cls.factors);
    Rng rng(derive_seed(seed, name));
    fs::create_directories(root / name);
    for (std::size_t i = 0; i < cls.images; ++i) {
      const auto png = encode_png(render_leaf(cls.factors, rng, image_size));
      char file[32];
      std::snprintf(file, sizeof(file), "%04zu.png", i);
      std::ofstream out(root / name / file, std::ios::binary | std::ios::trunc);
      out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
      if (!out) throw IoError("cannot write " + (root / name / file).string());
    }
  }
  return scan_dataset(root, dataset_id).manifest;
}

struct SyntheticBenchmark {
  DatasetManifest manifest;
  CustomProtocol protocol;
};

/// Desk-scale benchmark: 24 colour x pattern classes. The five meta-test
/// classes share two similar spot colours, so telling them apart needs
/// pattern cues that the meta-train combinations also exercise.
inline SyntheticBenchmark make_desk_benchmark(const fs::path& root, std::uint64_t seed = 7,
                                              std::size_t train_images = 40, std::size_t test_images = 100,
                                              std::vector<LeafFactors> test = {}) {
  if (test.empty()) test = {{0, 0}, {0, 2}, {0, 3}, {5, 1}, {5, 2}};
  std::vector<SyntheticClass> classes;
  CustomProtocol protocol;
  for (int c = 0; c < static_cast<int>(kSpotColors.size()); ++c) {
    for (int p = 0; p < static_cast<int>(kPatternNames.size()); ++p) {
      const LeafFactors f{c, p};
      const bool is_test = std::any_of(test.begin(), test.end(),
                                       [&](const LeafFactors& t) { return t.spot_color == c && t.pattern == p; });
      classes.push_back({f, is_test ? test_images : train_images});
      (is_test ? protocol.meta_test : protocol.meta_train).push_back(leaf_class_name(f));
    }
  }
  auto manifest = write_synthetic_dataset(root, "synthetic_leaves", classes, seed);
  return {std::move(manifest), std::move(protocol)};
}

/// Generic, non-leaf images (random shapes on random backgrounds) used to
/// calibrate batch-norm statistics of freshly initialized backbones.
inline std::vector<nn::Tensor<float>> generic_calibration_batches(std::size_t batches, std::size_t batch_size,
                                                                   std::size_t input_size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<nn::Tensor<float>> out;
  const int size = static_cast<int>(std::max<std::size_t>(input_size, 32));
  for (std::size_t b = 0; b < batches; ++b) {
    nn::Tensor<float> batch(batch_size, 3, input_size, input_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      cv::Mat img(size, size, CV_8UC3, cv::Scalar(rng.uniform(0, 255), rng.uniform(0, 255), rng.uniform(0, 255)));
      for (int k = 0; k < 5; ++k) {
        const cv::Scalar col(rng.uniform(0, 255), rng.uniform(0, 255), rng.uniform(0, 255));
        const cv::Point p(static_cast<int>(rng.below(static_cast<std::uint64_t>(size))),
                          static_cast<int>(rng.below(static_cast<std::uint64_t>(size))));
        if (rng.uniform01() < 0.5) {
          cv::circle(img, p, static_cast<int>(rng.uniform(2, size / 3.0)), col, cv::FILLED);
        } else {
          cv::rectangle(img, p, p + cv::Point(static_cast<int>(rng.uniform(2, size / 2.0)),
                                              static_cast<int>(rng.uniform(2, size / 2.0))),
                        col, cv::FILLED);
        }
      }
      const auto t = preprocess_mat(img, input_size);
      std::copy_n(t.data(), t.size(), batch.sample(i));
    }
    out.push_back(std::move(batch));
  }
  return out;
}

}  // namespace dexnet

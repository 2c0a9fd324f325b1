#pragma once

#include <array>
#include <cstring>
#include <span>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "dexnet/error.hpp"
#include "dexnet/tensor.hpp"

namespace dexnet {

inline constexpr std::array<float, 3> kChannelMean = {0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kChannelStd = {0.229f, 0.224f, 0.225f};

/// RGB float tensor (1, 3, size, size): bilinear resize, scale to [0,1],
/// then per-channel standardization. No randomness.
inline nn::Tensor<float> preprocess_mat(const cv::Mat& bgr, std::size_t size = 224) {
  if (bgr.empty() || bgr.channels() != 3 || bgr.depth() != CV_8U) throw DecodeError("expected 8-bit 3-channel image");
  cv::Mat resized;
  const int s = static_cast<int>(size);
  if (bgr.rows == s && bgr.cols == s) {
    resized = bgr;
  } else {
    cv::resize(bgr, resized, cv::Size(s, s), 0, 0, cv::INTER_LINEAR);
  }
  nn::Tensor<float> out(1, 3, size, size);
  for (int y = 0; y < s; ++y) {
    const auto* row = resized.ptr<cv::Vec3b>(y);
    for (int x = 0; x < s; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = static_cast<float>(row[x][2 - c]) / 255.0f;
        out(0, static_cast<std::size_t>(c), static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            (v - kChannelMean[static_cast<std::size_t>(c)]) / kChannelStd[static_cast<std::size_t>(c)];
      }
    }
  }
  return out;
}

inline cv::Mat decode_image(std::span<const std::byte> bytes) {
  if (bytes.empty()) throw DecodeError("empty image buffer");
  const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::byte*>(bytes.data()));
  cv::Mat img;
  try {
    img = cv::imdecode(buf, cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw DecodeError(e.what());
  }
  if (img.empty()) throw DecodeError("undecodable image bytes");
  return img;
}

inline nn::Tensor<float> preprocess(std::span<const std::byte> bytes, std::size_t size = 224) {
  return preprocess_mat(decode_image(bytes), size);
}

inline std::vector<std::byte> encode_png(const cv::Mat& bgr) {
  std::vector<uchar> buf;
  if (!cv::imencode(".png", bgr, buf)) throw IoError("png encoding failed");
  std::vector<std::byte> out(buf.size());
  std::memcpy(out.data(), buf.data(), buf.size());
  return out;
}

}  // namespace dexnet

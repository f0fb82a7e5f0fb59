#include "image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace kfwc {

std::vector<uint8_t> encode_png(const ImageU8& img) {
  if (img.c != 1 && img.c != 3) throw ContractError("encode_png: channels must be 1 or 3");
  cv::Mat m(img.h, img.w, img.c == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < img.h; ++y) {
    uint8_t* row = m.ptr<uint8_t>(y);
    for (int x = 0; x < img.w; ++x) {
      if (img.c == 1) {
        row[x] = img.at(y, x, 0);
      } else {
        // OpenCV stores BGR
        row[x * 3 + 0] = img.at(y, x, 2);
        row[x * 3 + 1] = img.at(y, x, 1);
        row[x * 3 + 2] = img.at(y, x, 0);
      }
    }
  }
  std::vector<uint8_t> out;
  if (!cv::imencode(".png", m, out, {cv::IMWRITE_PNG_COMPRESSION, 6}))
    throw ArtifactError("PNG encoding failed");
  return out;
}

ImageU8 decode_image(const std::vector<uint8_t>& bytes) {
  cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<uint8_t*>(bytes.data()));
  cv::Mat m = cv::imdecode(raw, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw ArtifactError("undecodable image data");
  if (m.depth() != CV_8U) m.convertTo(m, CV_8U);
  ImageU8 img;
  img.h = m.rows;
  img.w = m.cols;
  img.c = m.channels() >= 3 ? 3 : 1;
  img.bytes.resize(static_cast<size_t>(img.h) * img.w * img.c);
  for (int y = 0; y < img.h; ++y) {
    const uint8_t* row = m.ptr<uint8_t>(y);
    for (int x = 0; x < img.w; ++x) {
      if (img.c == 1) {
        img.at(y, x, 0) = row[x * m.channels()];
      } else {
        img.at(y, x, 0) = row[x * m.channels() + 2];  // R
        img.at(y, x, 1) = row[x * m.channels() + 1];  // G
        img.at(y, x, 2) = row[x * m.channels() + 0];  // B
      }
    }
  }
  return img;
}

ImageU8 read_image_file(const std::string& path) {
  return decode_image(read_file(path));
}

void write_file(const std::string& path, const void* data, size_t n) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ArtifactError("cannot open for writing: " + path);
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!f) throw ArtifactError("write failed: " + path);
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArtifactError("cannot open file: " + path);
  f.seekg(0, std::ios::end);
  auto n = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<uint8_t> out(static_cast<size_t>(n));
  f.read(reinterpret_cast<char*>(out.data()), n);
  if (!f) throw ArtifactError("read failed: " + path);
  return out;
}

Tensor3 resize_bilinear(const Tensor3& in, int out_h, int out_w) {
  if (in.h == out_h && in.w == out_w) return in;
  Tensor3 out(in.c, out_h, out_w);
  for (int ch = 0; ch < in.c; ++ch) {
    cv::Mat src(in.h, in.w, CV_32FC1,
                const_cast<float*>(in.v.data() + static_cast<size_t>(ch) * in.h * in.w));
    cv::Mat dst(out_h, out_w, CV_32FC1, out.v.data() + static_cast<size_t>(ch) * out_h * out_w);
    cv::resize(src, dst, cv::Size(out_w, out_h), 0, 0, cv::INTER_LINEAR);
  }
  return out;
}

}  // namespace kfwc

#include "mmreg/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <set>

#include "mmreg/csv.hpp"
#include "mmreg/error.hpp"

namespace mmreg {

namespace {

cv::Mat decode_file(const std::string& path, int flags) {
  if (!std::filesystem::exists(path)) throw DataError("image file not found: " + path);
  cv::Mat m = cv::imread(path, flags);
  if (m.empty()) throw DataError("cannot decode image file: " + path);
  return m;
}

}  // namespace

GridImage load_image(const std::string& path, Modality modality) {
  cv::Mat m = decode_file(path, cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
  if (m.channels() == 4) {
    // RGBA: drop alpha
    cv::Mat bgr(m.rows, m.cols, CV_MAKETYPE(m.depth(), 3));
    const int from_to[] = {0, 0, 1, 1, 2, 2};
    cv::mixChannels(&m, 1, &bgr, 1, from_to, 3);
    m = bgr;
  }
  if (m.channels() != 1 && m.channels() != 3) {
    throw DataError("image file " + path + ": unsupported channel count " +
                    std::to_string(m.channels()));
  }
  cv::Mat f;
  m.convertTo(f, CV_32F);

  GridImage img(m.rows, m.cols, m.channels());
  img.modality = modality;
  float lo = std::numeric_limits<float>::max();
  float hi = std::numeric_limits<float>::lowest();
  for (int y = 0; y < m.rows; ++y) {
    const float* row = f.ptr<float>(y);
    for (int x = 0; x < m.cols * m.channels(); ++x) {
      lo = std::min(lo, row[x]);
      hi = std::max(hi, row[x]);
    }
  }
  const float range = hi - lo;
  for (int y = 0; y < m.rows; ++y) {
    const float* row = f.ptr<float>(y);
    for (int x = 0; x < m.cols; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        // OpenCV decodes color as BGR; store RGB.
        const int src_c = img.channels == 3 ? 2 - c : c;
        const float v = row[x * img.channels + src_c];
        img.at(y, x, c) = range > 0.0f ? (v - lo) / range : 0.0f;
      }
    }
  }
  return img;
}

void save_image_png(const std::string& path, const GridImage& img) {
  if (img.empty()) throw DataError("save_image_png: empty image");
  cv::Mat m(img.height, img.width, img.channels == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < img.height; ++y) {
    std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        const int dst_c = img.channels == 3 ? 2 - c : c;  // RGB -> BGR
        const float v = std::clamp(img.at(y, x, c), 0.0f, 1.0f);
        row[x * img.channels + dst_c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  if (!cv::imwrite(path, m)) throw DataError("cannot write PNG file: " + path);
}

BinaryMask load_mask(const std::string& path) {
  cv::Mat m = decode_file(path, cv::IMREAD_ANYDEPTH | cv::IMREAD_GRAYSCALE);
  cv::Mat f;
  m.convertTo(f, CV_32F);
  BinaryMask mask(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const float* row = f.ptr<float>(y);
    for (int x = 0; x < m.cols; ++x) mask.at(y, x) = row[x] != 0.0f ? 1 : 0;
  }
  return mask;
}

void save_mask_png(const std::string& path, const BinaryMask& mask) {
  if (mask.empty()) throw DataError("save_mask_png: empty mask");
  cv::Mat m(mask.height, mask.width, CV_8UC1);
  for (int y = 0; y < mask.height; ++y) {
    std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.width; ++x) row[x] = mask.at(y, x) ? 255 : 0;
  }
  if (!cv::imwrite(path, m)) throw DataError("cannot write PNG file: " + path);
}

LandmarkSet read_landmarks(const std::string& path, int image_height, int image_width) {
  csv::Table t = csv::read_file(path);
  if (t.header.size() < 3 || t.header[0] != "id" || t.header[1] != "x" || t.header[2] != "y") {
    throw DataError("landmark file " + path + ": expected header 'id,x,y'");
  }
  LandmarkSet lms;
  std::set<std::string> seen;
  for (const auto& row : t.rows) {
    if (row.size() < 3) throw DataError("landmark file " + path + ": short row");
    const std::string& id = row[0];
    if (!seen.insert(id).second) {
      throw DataError("landmark file " + path + ": duplicate id '" + id + "'");
    }
    double x = 0.0, y = 0.0;
    try {
      x = std::stod(row[1]);
      y = std::stod(row[2]);
    } catch (const std::exception&) {
      throw DataError("landmark file " + path + ": non-numeric coordinate for id '" + id + "'");
    }
    if (!(x >= 0.0 && x <= image_width - 1 && y >= 0.0 && y <= image_height - 1)) {
      throw OutOfBoundsLandmark("landmark '" + id + "' in " + path +
                                " lies outside the image bounds");
    }
    lms.ids.push_back(id);
    lms.points.push_back({x, y});
  }
  return lms;
}

void write_landmarks(const std::string& path, const LandmarkSet& lms) {
  csv::Table t;
  t.header = {"id", "x", "y"};
  char buf[64];
  for (std::size_t i = 0; i < lms.size(); ++i) {
    std::vector<std::string> row(3);
    row[0] = lms.ids[i];
    std::snprintf(buf, sizeof(buf), "%.17g", lms.points[i].x);
    row[1] = buf;
    std::snprintf(buf, sizeof(buf), "%.17g", lms.points[i].y);
    row[2] = buf;
    t.rows.push_back(std::move(row));
  }
  csv::write_file(path, t);
}

}  // namespace mmreg

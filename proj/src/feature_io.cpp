#include "progkit/feature_io.hpp"

#include <png.h>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "progkit/error.hpp"

namespace progkit {

namespace {

static_assert(std::endian::native == std::endian::little, "feature files assume a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw Error(ErrorCode::IoError, path.string() + ": truncated feature file");
  }
  return value;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

FeatureMatrix read_feature_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    throw Error(ErrorCode::IoError, path.string() + ": bad feature-file magic");
  }
  FeatureMatrix f;
  f.num_frames = get<std::uint64_t>(in, path);
  f.dim = get<std::uint64_t>(in, path);
  if (f.num_frames < 1 || f.dim < 1) throw Error(ErrorCode::DimensionMismatch, path.string() + ": empty feature matrix");
  f.values.resize(f.num_frames * f.dim);
  for (auto& v : f.values) v = get<float>(in, path);
  return f;
}

void write_feature_matrix(const std::filesystem::path& path, const FeatureMatrix& f) {
  if (f.values.size() != f.num_frames * f.dim) {
    throw Error(ErrorCode::DimensionMismatch, "feature matrix size does not match its shape");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(kFeatureMagic, 4);
  put<std::uint64_t>(out, f.num_frames);
  put<std::uint64_t>(out, f.dim);
  for (double v : f.values) put<float>(out, static_cast<float>(v));
}

std::vector<double> read_diffs_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::vector<double> diffs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto cell = trim(line.substr(0, line.find(',')));
    if (cell.empty()) continue;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) {
      if (lineno == 1) continue;  // header
      throw Error(ErrorCode::IoError, path.string() + " line " + std::to_string(lineno) + ": not a number");
    }
    if (!std::isfinite(v) || v < 0.0) {
      throw Error(ErrorCode::IoError, path.string() + " line " + std::to_string(lineno) + ": diffs must be finite and >= 0");
    }
    diffs.push_back(v);
  }
  return diffs;
}

void write_diffs_csv(const std::filesystem::path& path, const std::vector<double>& diffs) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "diff\n";
  char buf[32];
  for (double d : diffs) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, d);
    out.write(buf, ptr - buf);
    out << '\n';
  }
}

GrayImage read_png_gray(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&image, path.string().c_str()) == 0) {
    throw Error(ErrorCode::IoError, path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  GrayImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr) == 0) {
    std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::IoError, path.string() + ": " + msg);
  }
  return out;
}

void write_png_gray(const std::filesystem::path& path, const GrayImage& img) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_GRAY;
  if (png_image_write_to_file(&image, path.string().c_str(), 0, img.pixels.data(), 0, nullptr) == 0) {
    throw Error(ErrorCode::IoError, path.string() + ": " + image.message);
  }
}

std::vector<double> grayscale_features(const GrayImage& image, int grid) {
  if (image.width < 1 || image.height < 1 || grid < 1) {
    throw Error(ErrorCode::DimensionMismatch, "empty image or grid");
  }
  std::vector<double> sums(static_cast<std::size_t>(grid) * grid, 0.0);
  std::vector<int> counts(sums.size(), 0);
  for (int y = 0; y < image.height; ++y) {
    const int gy = y * grid / image.height;
    for (int x = 0; x < image.width; ++x) {
      const int gx = x * grid / image.width;
      sums[gy * grid + gx] += image.pixels[static_cast<std::size_t>(y) * image.width + x] / 255.0;
      ++counts[gy * grid + gx];
    }
  }
  // images smaller than the grid leave cells empty; they stay at 0
  for (std::size_t i = 0; i < sums.size(); ++i) {
    if (counts[i] > 0) sums[i] /= counts[i];
  }
  return sums;
}

}  // namespace progkit

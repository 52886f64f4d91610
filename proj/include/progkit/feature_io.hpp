#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "progkit/progress.hpp"

namespace progkit {

/// Binary feature matrix: 4-byte magic "PKFT", little-endian uint64 T,
/// little-endian uint64 d, then T*d little-endian float32 values row-major.
inline constexpr char kFeatureMagic[4] = {'P', 'K', 'F', 'T'};

FeatureMatrix read_feature_matrix(const std::filesystem::path& path);
void write_feature_matrix(const std::filesystem::path& path, const FeatureMatrix& features);

/// One magnitude per line; a non-numeric first line is treated as a header.
std::vector<double> read_diffs_csv(const std::filesystem::path& path);
void write_diffs_csv(const std::filesystem::path& path, const std::vector<double>& diffs);

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, one byte per pixel
};

GrayImage read_png_gray(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const GrayImage& image);

/// Default pixel feature: the image box-downscaled to grid x grid mean
/// intensities in [0,1].
std::vector<double> grayscale_features(const GrayImage& image, int grid = 16);

}  // namespace progkit

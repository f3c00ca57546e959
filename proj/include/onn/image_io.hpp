#pragma once

// Grayscale image files. Raw images hold pixel intensities (0..255) as doubles.

#include <filesystem>
#include <string>

#include "onn/feature_map.hpp"

namespace onn {

// Binary PGM (P5), maxval <= 255. Throws ErrorKind::data on malformed input.
FeatureMap read_pgm(const std::filesystem::path& path);
// Values are rounded and clamped to 0..255.
void write_pgm(const std::filesystem::path& path, const FeatureMap& image);

// PNG of any colour type, converted to 8-bit gray.
FeatureMap read_png_gray(const std::filesystem::path& path);

// Dispatches on the file extension (.pgm / .png).
FeatureMap read_image(const std::filesystem::path& path);

// Centre crop to a square, then bilinear resize to size x size.
FeatureMap center_crop_resize(const FeatureMap& image, int size);

}  // namespace onn

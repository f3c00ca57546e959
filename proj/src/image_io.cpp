#include "onn/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <vector>

#include "onn/error.hpp"

namespace onn {

namespace {

// Next whitespace-separated header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

int parse_positive(const std::string& tok, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    fail_data("malformed PGM header in " + path.string());
  }
}

}  // namespace

FeatureMap read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open " + path.string());
  if (header_token(in) != "P5") fail_data(path.string() + " is not a binary PGM (P5)");
  const int w = parse_positive(header_token(in), path);
  const int h = parse_positive(header_token(in), path);
  const int maxval = parse_positive(header_token(in), path);
  if (maxval > 255) fail_data(path.string() + ": only 8-bit PGM is supported");
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    fail_data(path.string() + ": truncated pixel data");
  }
  FeatureMap img(h, w);
  const double scale = 255.0 / maxval;
  for (std::size_t p = 0; p < bytes.size(); ++p) img.values[p] = bytes[p] * scale;
  return img;
}

void write_pgm(const std::filesystem::path& path, const FeatureMap& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_data("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.size());
  for (std::size_t p = 0; p < image.size(); ++p) {
    bytes[p] = static_cast<unsigned char>(std::clamp(std::lround(image.values[p]), 0L, 255L));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail_data("write failed for " + path.string());
}

FeatureMap read_png_gray(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    fail_data("cannot decode PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    fail_data("cannot decode PNG " + path.string() + ": " + image.message);
  }
  FeatureMap img(static_cast<int>(image.height), static_cast<int>(image.width));
  for (std::size_t p = 0; p < img.size(); ++p) img.values[p] = buf[p];
  return img;
}

FeatureMap read_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".pgm") return read_pgm(path);
  if (ext == ".png") return read_png_gray(path);
  fail_data("unsupported image type: " + path.string());
}

FeatureMap center_crop_resize(const FeatureMap& image, int size) {
  if (size <= 0) fail_usage("target size must be positive");
  if (image.height <= 0 || image.width <= 0) fail_data("empty image");
  const int side = std::min(image.height, image.width);
  const int r0 = (image.height - side) / 2;
  const int c0 = (image.width - side) / 2;
  FeatureMap out(size, size);
  const double scale = static_cast<double>(side) / size;
  for (int r = 0; r < size; ++r) {
    const double sy = std::clamp((r + 0.5) * scale - 0.5, 0.0, side - 1.0);
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, side - 1);
    const double fy = sy - y0;
    for (int c = 0; c < size; ++c) {
      const double sx = std::clamp((c + 0.5) * scale - 0.5, 0.0, side - 1.0);
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, side - 1);
      const double fx = sx - x0;
      const double top = (1 - fx) * image.at(r0 + y0, c0 + x0) + fx * image.at(r0 + y0, c0 + x1);
      const double bot = (1 - fx) * image.at(r0 + y1, c0 + x0) + fx * image.at(r0 + y1, c0 + x1);
      out.at(r, c) = (1 - fy) * top + fy * bot;
    }
  }
  return out;
}

}  // namespace onn

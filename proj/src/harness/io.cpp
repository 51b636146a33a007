#include "ppa/harness/io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <stdexcept>

#include <openssl/evp.h>
#include <png.h>

namespace ppa::harness {

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * length);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text_file(path)); }

std::uint8_t to_byte(double x) {
  const double v = std::round((x + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

double from_byte(std::uint8_t b) { return static_cast<double>(b) / 127.5 - 1.0; }

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return f;
}

void png_warn(png_structp, png_const_charp) {}
[[noreturn]] void png_fail(png_structp png, png_const_charp) { png_longjmp(png, 1); }

// libpng reports errors by longjmp; these helpers keep only trivially
// destructible locals between setjmp and the libpng calls.
bool encode_rows(png_structp png, png_infop info, std::FILE* f, const png_byte* pixels,
                 png_uint_32 width, png_uint_32 height, int color, std::size_t stride) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, f);
  png_set_IHDR(png, info, width, height, 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 i = 0; i < height; ++i) png_write_row(png, pixels + i * stride);
  png_write_end(png, nullptr);
  return true;
}

struct PngHeader {
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int color = 0;
  int depth = 0;
};

bool decode_header(png_structp png, png_infop info, std::FILE* f, PngHeader* header) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, f);
  png_read_info(png, info);
  header->width = png_get_image_width(png, info);
  header->height = png_get_image_height(png, info);
  header->color = png_get_color_type(png, info);
  header->depth = png_get_bit_depth(png, info);
  return true;
}

bool decode_rows(png_structp png, png_byte* pixels, png_uint_32 height, std::size_t stride) {
  if (setjmp(png_jmpbuf(png))) return false;
  for (png_uint_32 i = 0; i < height; ++i) png_read_row(png, pixels + i * stride, nullptr);
  return true;
}

}  // namespace

void write_png(const std::filesystem::path& path, const ImageTensor& image) {
  const Shape s = image.shape();
  require(s.channels == 1 || s.channels == 3, "write_png: need 1 or 3 channels, got " +
                                                  std::to_string(s.channels));
  std::vector<png_byte> pixels(s.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = to_byte(image.values()[i]);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  File f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  const bool ok = info != nullptr &&
                  encode_rows(png, info, f.get(), pixels.data(),
                              static_cast<png_uint_32>(s.width), static_cast<png_uint_32>(s.height),
                              s.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                              s.width * s.channels);
  png_destroy_write_struct(&png, &info);
  if (!ok) throw std::runtime_error("libpng: failed to encode " + path.string());
}

ImageTensor read_png(const std::filesystem::path& path) {
  File f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  PngHeader header;
  if (info == nullptr || !decode_header(png, info, f.get(), &header)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng: cannot read header of " + path.string());
  }
  if (header.depth != 8 || (header.color != PNG_COLOR_TYPE_RGB && header.color != PNG_COLOR_TYPE_GRAY)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ContractViolation("read_png: only 8-bit RGB or gray images are supported");
  }
  const std::size_t channels = header.color == PNG_COLOR_TYPE_RGB ? 3 : 1;
  std::vector<png_byte> pixels(static_cast<std::size_t>(header.width) * header.height * channels);
  const bool ok = decode_rows(png, pixels.data(), header.height, header.width * channels);
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw std::runtime_error("libpng: cannot decode " + path.string());
  ImageTensor image({header.height, header.width, channels});
  for (std::size_t i = 0; i < pixels.size(); ++i) image.values()[i] = from_byte(pixels[i]);
  return image;
}

ImageTensor make_grid(std::span<const ImageTensor> images, std::size_t columns,
                      std::size_t padding, double fill) {
  require(!images.empty(), "make_grid: no images");
  require(columns > 0, "make_grid: columns must be positive");
  const Shape s = images.front().shape();
  for (const auto& im : images) require(im.shape() == s, "make_grid: images differ in shape");
  const std::size_t cols = std::min(columns, images.size());
  const std::size_t rows = (images.size() + cols - 1) / cols;
  ImageTensor grid({rows * s.height + (rows + 1) * padding, cols * s.width + (cols + 1) * padding,
                    s.channels},
                   fill);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const std::size_t top = padding + (n / cols) * (s.height + padding);
    const std::size_t left = padding + (n % cols) * (s.width + padding);
    for (std::size_t i = 0; i < s.height; ++i) {
      for (std::size_t j = 0; j < s.width; ++j) {
        for (std::size_t ch = 0; ch < s.channels; ++ch) {
          grid.at(top + i, left + j, ch) = images[n].at(i, j, ch);
        }
      }
    }
  }
  return grid;
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace ppa::harness

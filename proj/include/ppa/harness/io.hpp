#pragma once

// Output plumbing: content hashes, 8-bit PNG images and image grids.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ppa/tensor.hpp"

namespace ppa::harness {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// [-1, 1] -> [0, 255] via round((x + 1) * 127.5), clamped.
std::uint8_t to_byte(double x);
double from_byte(std::uint8_t b);

/// RGB (3 channels) or gray (1 channel) 8-bit PNG.
void write_png(const std::filesystem::path& path, const ImageTensor& image);
ImageTensor read_png(const std::filesystem::path& path);

/// Tiles equally shaped images row-major into `columns` columns separated
/// by `padding` pixels of value `fill`.
ImageTensor make_grid(std::span<const ImageTensor> images, std::size_t columns,
                      std::size_t padding = 1, double fill = 1.0);

/// Writes `content` and creates parent directories.
void write_text_file(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace ppa::harness

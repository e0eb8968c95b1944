#pragma once

#include "reptrfd/model.hpp"
#include "reptrfd/objectives.hpp"
#include "reptrfd/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace reptrfd {

namespace fs = std::filesystem;

/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(fs::path const &path, std::string_view bytes);
std::string read_file(fs::path const &path);

// ---- RTEN raw tensor container ----

inline constexpr std::uint32_t kRtenVersion = 1;

struct RtenHeader {
  std::uint32_t version = kRtenVersion;
  Shape dims;
};

std::string encode_rten(DenseTensor const &x);
DenseTensor decode_rten(std::string_view bytes);
RtenHeader decode_rten_header(std::string_view bytes);
void save_rten(DenseTensor const &x, fs::path const &path);
DenseTensor load_rten(fs::path const &path);

// ---- RTRF model checkpoint ----

inline constexpr std::uint32_t kRtrfVersion = 1;

std::string encode_checkpoint(FactorModel const &model);
FactorModel decode_checkpoint(std::string_view bytes);
void save_checkpoint(FactorModel const &model, fs::path const &path);
FactorModel load_checkpoint(fs::path const &path);

// ---- PNG, 8-bit grayscale (H, W) or RGB (H, W, 3) ----

DenseTensor load_png(fs::path const &path);
/// Clamps to [0, 1] and rounds half up to 8 bits. Accepts (H, W), (H, W, 1)
/// and (H, W, 3).
void save_png(DenseTensor const &x, fs::path const &path);

struct PngInfo {
  Index width = 0;
  Index height = 0;
  Index channels = 0;
  Index bit_depth = 0;
};
PngInfo probe_png(fs::path const &path);

/// Loads .png through load_png and anything else as RTEN.
DenseTensor load_tensor(fs::path const &path);

// ---- point clouds: one "x y z c s" record per line ----

/// Parses records separated by whitespace or commas; blank lines and lines
/// starting with '#' are skipped. Coordinates are min-max normalized per
/// column to [-1, 1]; constant columns map to 0.
PointSet parse_pointcloud(std::string_view text);
PointSet load_pointcloud(fs::path const &path);
/// Normalizes raw (N, 4) coordinates with existing column ranges.
DenseTensor normalize_coords(DenseTensor const &raw, std::span<double const> col_min, std::span<double const> col_max);
/// Maps normalized coordinates back to the original ranges.
DenseTensor denormalize_coords(PointSet const &points);
/// Writes "x y z c s" with the original coordinates and the given values.
void save_pointcloud(PointSet const &points, DenseTensor const &values, fs::path const &path);

// ---- synthetic degradations ----

/// x + sd * N(0, 1) per entry, no clipping.
DenseTensor add_noise(DenseTensor const &x, double sd, std::uint64_t seed);
/// i.i.d. Bernoulli(sampling_ratio) 0/1 mask.
DenseTensor bernoulli_mask(Shape const &shape, double sampling_ratio, std::uint64_t seed);

} // namespace reptrfd

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusseg/types.hpp"

namespace fusseg::io {

// ---------------------------------------------------------------------------
// Tensor container: one line of JSON {"dtype":"f32le","shape":[...],"meta":{...}}
// followed by '\n' and the raw little-endian float payload in row-major order.
// Little-endian is enforced regardless of host byte order.
// ---------------------------------------------------------------------------

struct TensorFile {
  std::vector<int64_t> shape;
  std::vector<float> data;
  nlohmann::json meta;
};

void write_tensor(const std::filesystem::path& path, std::span<const int64_t> shape,
                  std::span<const float> data, const nlohmann::json& meta = nlohmann::json::object());
TensorFile read_tensor(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Label maps: binary PGM (P5), maxval 2, one byte per pixel, row-major.
// Binary masks use the same container with maxval 1.
// ---------------------------------------------------------------------------

void write_label_map(const std::filesystem::path& path, const TernaryLabelMap& labels);
TernaryLabelMap read_label_map(const std::filesystem::path& path);

void write_binary_mask(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask read_binary_mask(const std::filesystem::path& path);

// Grayscale PGM with maxval 255, for inspection images (error maps).
void write_gray_image(const std::filesystem::path& path, int h, int w, std::span<const uint8_t> pixels);

// ---------------------------------------------------------------------------
// CSV: comma separator, '.' decimal point, one header row. Locale-independent.
// ---------------------------------------------------------------------------

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);
std::vector<std::vector<double>> read_csv(const std::filesystem::path& path,
                                          std::vector<std::string>* header = nullptr);
// Reads one named column (default: "value").
std::vector<double> read_csv_column(const std::filesystem::path& path, const std::string& column = "value");

std::string format_double(double v); // shortest round-trip, '.' decimal

// ---------------------------------------------------------------------------
// Domain-type convenience wrappers around the tensor container.
// ---------------------------------------------------------------------------

void write_stack(const std::filesystem::path& path, const FusStack& stack);
FusStack read_stack(const std::filesystem::path& path);

void write_velocity_map(const std::filesystem::path& path, const UlmVelocityMap& map);
UlmVelocityMap read_velocity_map(const std::filesystem::path& path);

// Soft segmentations are stored as f32; values are quantized on write.
void write_soft_seg(const std::filesystem::path& path, const SoftSegmentation& seg);
SoftSegmentation read_soft_seg(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

// RunConfig <-> JSON
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

} // namespace fusseg::io

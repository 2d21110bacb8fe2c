#pragma once

// On-disk formats: PNG images, dataset directories and detector checkpoints.

#include "bforge/dataset.hpp"
#include "bforge/detector.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace bforge::io {

namespace fs = std::filesystem;

/// 8-bit RGB PNG. Values are rounded from [0,1].
void write_png(const fs::path& path, const Image& img);
Image read_png(const fs::path& path);

/// Writes images/NNNN.png, annotations.json and manifest.json under `dir`.
void save_dataset(const fs::path& dir, const Dataset& data, const nlohmann::json& manifest);
Dataset load_dataset(const fs::path& dir);
nlohmann::json load_manifest(const fs::path& dir);

/// Single file: magic, little-endian u64 header length, JSON header, float32 parameter arrays.
void save_checkpoint(const fs::path& path, const DetectorParams<float>& params, const nlohmann::json& meta = {});
DetectorParams<float> load_checkpoint(const fs::path& path, nlohmann::json* meta = nullptr);

void write_text(const fs::path& path, const std::string& text);

}  // namespace bforge::io

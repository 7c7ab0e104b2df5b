#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "palsyfuse/datamodel.hpp"

namespace palsyfuse::io {

namespace fs = std::filesystem;

// Writes to a sibling temporary file and renames it into place, so readers
// never observe a truncated file. Creates missing parent directories.
void write_file_atomic(const fs::path& path, std::string_view bytes);
std::string read_file(const fs::path& path);

// Numbers are written with 9 significant digits.
std::string format_number(double x);

// frames.jsonl: one frame object per line.
std::string serialize_frame(const LandmarkFrame& frame);
LandmarkFrame parse_frame(std::string_view line, std::size_t line_number = 0);
std::vector<LandmarkFrame> parse_frames(std::string_view text);
std::vector<LandmarkFrame> read_frames(const fs::path& path);
void write_frames(std::span<const LandmarkFrame> frames, const fs::path& path);

// features.csv: subject_id,frame_id,<feature names>. All vectors must share
// one kind.
std::string serialize_features_csv(std::span<const FeatureVector> vectors);
std::vector<FeatureVector> parse_features_csv(std::string_view text);
void write_features_csv(std::span<const FeatureVector> vectors, const fs::path& path);
std::vector<FeatureVector> read_features_csv(const fs::path& path);

// Binary netpbm: P5 for one channel, P6 for three, maxval 255.
std::string encode_pnm(const ImageBuffer& img);
ImageBuffer decode_pnm(std::string_view bytes);
void write_image(const ImageBuffer& img, const fs::path& path);
ImageBuffer read_image(const fs::path& path);

std::string serialize_manifest(const DatasetManifest& m);
DatasetManifest parse_manifest(std::string_view text);

}  // namespace palsyfuse::io

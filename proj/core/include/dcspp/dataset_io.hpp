#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dcspp/loss.hpp"

namespace dcspp {

/// Parses "class_id cx cy w h" lines (normalized coordinates). Blank lines
/// are skipped. Errors carry "file:line".
std::vector<TruthBox> parse_label_file(const std::filesystem::path& path);
std::vector<TruthBox> parse_labels(const std::string& text, const std::string& source);

void write_label_file(const std::filesystem::path& path, const std::vector<TruthBox>& truths);
std::string format_labels(const std::vector<TruthBox>& truths);

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path label;
};

/// Image/label pairs plus the class names they index into.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;
};

/// One "image_path<TAB>label_path" per line. Relative paths are resolved
/// against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// One class name per line.
std::vector<std::string> read_class_names(const std::filesystem::path& path);
void write_class_names(const std::filesystem::path& path, const std::vector<std::string>& names);

/// Reads a manifest and, when present, the class list next to it.
DatasetManifest load_dataset(const std::filesystem::path& manifest,
                             const std::filesystem::path& class_list = {});

}  // namespace dcspp

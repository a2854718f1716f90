#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dcspp/dataset_io.hpp"
#include "dcspp/errors.hpp"

namespace dcspp {

namespace {

std::string slurp(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(std::string("cannot open ") + what + " " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& path, const std::string& text, const char* what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(std::string("cannot write ") + what + " " + path.string());
  out << text;
  if (!out) throw FormatError(std::string("failed writing ") + what + " " + path.string());
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t") == std::string::npos; }

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

std::vector<TruthBox> parse_labels(const std::string& text, const std::string& source) {
  std::vector<TruthBox> out;
  const auto lines = split_lines(text);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::string& line = lines[n];
    if (blank(line)) continue;
    const std::string where = source + ":" + std::to_string(n + 1);
    std::istringstream ls(line);
    long long cls = -1;
    TruthBox t;
    std::string extra;
    if (!(ls >> cls >> t.x >> t.y >> t.w >> t.h) || (ls >> extra)) {
      throw FormatError(where + ": expected \"class_id cx cy w h\", got \"" + line + "\"");
    }
    if (cls < 0) throw FormatError(where + ": class id must be a non-negative integer");
    constexpr double kTol = 1e-6;
    const bool ok = t.x >= 0 && t.x <= 1 && t.y >= 0 && t.y <= 1 && t.w > 0 && t.w <= 1 &&
                    t.h > 0 && t.h <= 1 && t.x - t.w / 2 >= -kTol && t.x + t.w / 2 <= 1 + kTol &&
                    t.y - t.h / 2 >= -kTol && t.y + t.h / 2 <= 1 + kTol;
    if (!ok) throw FormatError(where + ": box coordinates out of range: \"" + line + "\"");
    t.class_id = static_cast<int>(cls);
    out.push_back(t);
  }
  return out;
}

std::vector<TruthBox> parse_label_file(const std::filesystem::path& path) {
  return parse_labels(slurp(path, "label file"), path.string());
}

std::string format_labels(const std::vector<TruthBox>& truths) {
  std::string out;
  char line[160];
  for (const TruthBox& t : truths) {
    std::snprintf(line, sizeof(line), "%d %.6f %.6f %.6f %.6f\n", t.class_id, t.x, t.y, t.w, t.h);
    out += line;
  }
  return out;
}

void write_label_file(const std::filesystem::path& path, const std::vector<TruthBox>& truths) {
  spit(path, format_labels(truths), "label file");
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  const auto base = path.parent_path();
  std::vector<ManifestEntry> out;
  const auto lines = split_lines(slurp(path, "manifest"));
  for (std::size_t n = 0; n < lines.size(); ++n) {
    if (blank(lines[n])) continue;
    const auto tab = lines[n].find('\t');
    if (tab == std::string::npos || lines[n].find('\t', tab + 1) != std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(n + 1) +
                        ": expected \"image_path<TAB>label_path\"");
    }
    out.push_back({resolve(base, lines[n].substr(0, tab)), resolve(base, lines[n].substr(tab + 1))});
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::string text;
  for (const auto& e : entries) text += e.image.string() + "\t" + e.label.string() + "\n";
  spit(path, text, "manifest");
}

std::vector<std::string> read_class_names(const std::filesystem::path& path) {
  std::vector<std::string> names;
  for (auto& line : split_lines(slurp(path, "class list"))) {
    if (!blank(line)) names.push_back(line);
  }
  return names;
}

void write_class_names(const std::filesystem::path& path, const std::vector<std::string>& names) {
  std::string text;
  for (const auto& n : names) text += n + "\n";
  spit(path, text, "class list");
}

DatasetManifest load_dataset(const std::filesystem::path& manifest,
                             const std::filesystem::path& class_list) {
  DatasetManifest d;
  d.entries = read_manifest(manifest);
  std::filesystem::path names = class_list;
  if (names.empty()) names = manifest.parent_path() / "classes.txt";
  if (std::filesystem::exists(names)) d.class_names = read_class_names(names);
  return d;
}

}  // namespace dcspp

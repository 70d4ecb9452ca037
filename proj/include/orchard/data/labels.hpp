#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "orchard/errors.hpp"

namespace orchard::data {

// Fixed class vocabulary; ids are frozen so splits, checkpoints and reports
// stay comparable across runs.
inline const std::array<std::string, 4>& class_names() {
  static const std::array<std::string, 4> names{"healthy", "multiple_diseases", "rust", "scab"};
  return names;
}

constexpr std::size_t kNumClasses = 4;

struct SampleRecord {
  std::string image_id;
  std::string image_path;  // filled by resolve_image_paths
  std::size_t class_id = 0;

  const std::string& class_name() const { return class_names()[class_id]; }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace detail

// Parses the one-hot label CSV (header: image_id,healthy,multiple_diseases,rust,scab).
// Every row must be exactly one-hot; duplicates and malformed rows are
// rejected with the offending line number.
inline std::vector<SampleRecord> parse_labels(std::istream& in, const std::string& source_name) {
  std::string line;
  if (!std::getline(in, line)) throw format_error("labels: empty file: " + source_name);
  const std::vector<std::string> header = detail::split_csv_line(line);
  const std::vector<std::string> expected{"image_id", "healthy", "multiple_diseases", "rust", "scab"};
  if (header.size() != expected.size()) {
    throw format_error("labels: header must have 5 columns, got " + std::to_string(header.size()) +
                       " in " + source_name);
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (header[i] != expected[i]) {
      throw format_error("labels: header column " + std::to_string(i + 1) + " is '" + header[i] +
                         "', expected '" + expected[i] + "' in " + source_name);
    }
  }

  std::vector<SampleRecord> records;
  std::unordered_set<std::string> seen_ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = detail::split_csv_line(line);
    if (fields.size() != 5) {
      throw format_error("labels: line " + std::to_string(line_no) + " has " +
                         std::to_string(fields.size()) + " fields, expected 5");
    }
    if (fields[0].empty()) {
      throw format_error("labels: line " + std::to_string(line_no) + " has an empty image_id");
    }
    if (!seen_ids.insert(fields[0]).second) {
      throw format_error("labels: duplicate image_id '" + fields[0] + "' at line " +
                         std::to_string(line_no));
    }
    std::size_t ones = 0;
    std::size_t class_id = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const std::string& f = fields[c + 1];
      if (f == "1") {
        ++ones;
        class_id = c;
      } else if (f != "0") {
        throw label_error("labels: line " + std::to_string(line_no) + " column '" +
                          class_names()[c] + "' is '" + f + "', expected 0 or 1");
      }
    }
    if (ones != 1) {
      throw label_error("labels: line " + std::to_string(line_no) + " has " + std::to_string(ones) +
                        " ones, rows must be exactly one-hot");
    }
    records.push_back({fields[0], "", class_id});
  }
  return records;
}

inline std::vector<SampleRecord> parse_labels(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw data_error("labels: cannot open " + csv_path);
  return parse_labels(in, csv_path);
}

// Fills image_path by probing <images_dir>/<image_id>.<ext> for the known
// raster extensions; every record must resolve.
inline void resolve_image_paths(std::vector<SampleRecord>& records, const std::string& images_dir) {
  namespace fs = std::filesystem;
  static const std::array<const char*, 5> exts{".ppm", ".jpg", ".jpeg", ".png", ".pnm"};
  for (SampleRecord& r : records) {
    bool found = false;
    for (const char* ext : exts) {
      const fs::path candidate = fs::path(images_dir) / (r.image_id + ext);
      if (fs::exists(candidate)) {
        r.image_path = candidate.string();
        found = true;
        break;
      }
    }
    if (!found) {
      throw data_error("labels: no image file for id '" + r.image_id + "' under " + images_dir);
    }
  }
}

}  // namespace orchard::data

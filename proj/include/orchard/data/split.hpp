#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "orchard/data/labels.hpp"
#include "orchard/errors.hpp"
#include "orchard/rng.hpp"

namespace orchard::data {

struct SplitManifest {
  std::uint64_t seed = 0;
  double fraction = 0.2;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::array<std::size_t, kNumClasses> train_per_class{};
  std::array<std::size_t, kNumClasses> test_per_class{};
};

// Deterministic stratified split. Per-class test counts come from
// largest-remainder apportionment of the overall target round(fraction * N)
// (remainder ties broken by alphabetical class name); the within-class order
// is a seeded shuffle, so the manifest is a pure function of (records,
// fraction, seed).
inline SplitManifest stratified_split(const std::vector<SampleRecord>& records,
                                      double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw contract_error("split: test_fraction must be in (0,1), got " +
                         std::to_string(test_fraction));
  }

  std::array<std::vector<std::string>, kNumClasses> by_class;
  for (const SampleRecord& r : records) by_class[r.class_id].push_back(r.image_id);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (!by_class[c].empty() && by_class[c].size() < 2) {
      throw stratify_error("split: class '" + class_names()[c] +
                           "' has fewer than 2 records, cannot stratify");
    }
  }
  if (records.empty()) throw contract_error("split: no records");

  // Largest-remainder apportionment of the test seats.
  const std::size_t target =
      static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(records.size())));
  std::array<std::size_t, kNumClasses> test_counts{};
  std::array<double, kNumClasses> remainders{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double ideal = test_fraction * static_cast<double>(by_class[c].size());
    test_counts[c] = static_cast<std::size_t>(std::floor(ideal));
    remainders[c] = ideal - std::floor(ideal);
    assigned += test_counts[c];
  }
  std::vector<std::size_t> order;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (!by_class[c].empty()) order.push_back(c);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (remainders[a] != remainders[b]) return remainders[a] > remainders[b];
    return class_names()[a] < class_names()[b];
  });
  for (std::size_t i = 0; assigned < target && i < order.size(); ++i) {
    if (test_counts[order[i]] < by_class[order[i]].size()) {
      ++test_counts[order[i]];
      ++assigned;
    }
  }

  SplitManifest manifest;
  manifest.seed = seed;
  manifest.fraction = test_fraction;
  Rng rng(seed);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    rng.shuffle(by_class[c]);
    const std::size_t k = test_counts[c];
    for (std::size_t i = 0; i < by_class[c].size(); ++i) {
      if (i < k) {
        manifest.test_ids.push_back(by_class[c][i]);
        ++manifest.test_per_class[c];
      } else {
        manifest.train_ids.push_back(by_class[c][i]);
        ++manifest.train_per_class[c];
      }
    }
  }
  return manifest;
}

namespace detail {

// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[40];
  for (int prec : {1, 3, 6, 9, 12, 15, 17}) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

}  // namespace detail

inline std::string manifest_to_text(const SplitManifest& m) {
  std::ostringstream os;
  os << "# orchard split manifest v1 seed=" << m.seed
     << " fraction=" << detail::format_double(m.fraction) << " train=" << m.train_ids.size()
     << " test=" << m.test_ids.size() << "\n";
  for (const std::string& id : m.train_ids) os << "train " << id << "\n";
  for (const std::string& id : m.test_ids) os << "test " << id << "\n";
  return os.str();
}

inline void write_manifest(const SplitManifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("manifest: cannot write " + path);
  out << manifest_to_text(m);
}

// Reads a manifest back; per-class counts are reconstructed by the caller if
// needed (the file carries ids only).
inline SplitManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("manifest: cannot open " + path);
  SplitManifest m;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# orchard split manifest v1", 0) != 0) {
    throw format_error("manifest: missing header line in " + path);
  }
  std::istringstream hs(line);
  std::string tok;
  while (hs >> tok) {
    if (tok.rfind("seed=", 0) == 0) m.seed = std::strtoull(tok.c_str() + 5, nullptr, 10);
    if (tok.rfind("fraction=", 0) == 0) m.fraction = std::strtod(tok.c_str() + 9, nullptr);
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind, id;
    ls >> kind >> id;
    if (kind == "train" && !id.empty()) {
      m.train_ids.push_back(id);
    } else if (kind == "test" && !id.empty()) {
      m.test_ids.push_back(id);
    } else {
      throw format_error("manifest: bad line " + std::to_string(line_no) + " in " + path);
    }
  }
  return m;
}

}  // namespace orchard::data

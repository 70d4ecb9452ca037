#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "orchard/errors.hpp"
#include "orchard/nn/layers.hpp"
#include "orchard/tensor.hpp"

namespace orchard::checkpoint {

// Container layout (all integers little-endian):
//
//   offset 0   8 bytes   magic "ORCHCKPT"
//   offset 8   u32       format version (1)
//   offset 12  u64       entry count
//   entries    repeated  u32 name length, name bytes (UTF-8),
//                        u8 dtype tag (0 = float32),
//                        u32 rank, u64 per extent,
//                        f32 per value
//   trailer    u64       FNV-1a checksum over every preceding byte
//
// The same container doubles as the flat named-tensor dump format used for
// pretrained-weight import.

inline constexpr char kMagic[8] = {'O', 'R', 'C', 'H', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

namespace detail {

inline std::uint64_t fnv1a64(const char* data, std::size_t n) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n) const {
    if (bytes.size() - pos < n) throw corruption_error("checkpoint: truncated file " + path);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<unsigned char>(bytes[pos++]);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(u32()); }
};

inline void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("checkpoint: cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw data_error("checkpoint: write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw data_error("checkpoint: cannot move " + tmp + " to " + path);
}

}  // namespace detail

struct Entry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

inline std::string serialize_entries(const std::vector<Entry>& entries) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  detail::put_u32(out, kVersion);
  detail::put_u64(out, entries.size());
  for (const Entry& e : entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    out += static_cast<char>(kDtypeF32);
    detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) detail::put_u64(out, d);
    for (float v : e.values) detail::put_f32(out, v);
  }
  detail::put_u64(out, detail::fnv1a64(out.data(), out.size()));
  return out;
}

inline std::vector<Entry> parse_entries(const std::string& bytes, const std::string& path) {
  if (bytes.size() < sizeof(kMagic) + 4 + 8 + 8) {
    throw corruption_error("checkpoint: file too small: " + path);
  }
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw corruption_error("checkpoint: bad magic in " + path);
  }
  const std::uint64_t stored = [&] {
    detail::Reader r{bytes, bytes.size() - 8, path};
    return r.u64();
  }();
  if (detail::fnv1a64(bytes.data(), bytes.size() - 8) != stored) {
    throw corruption_error("checkpoint: checksum mismatch in " + path);
  }

  detail::Reader r{bytes, sizeof(kMagic), path};
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw schema_error("checkpoint: unsupported version " + std::to_string(version) + " in " + path);
  }
  const std::uint64_t count = r.u64();
  std::vector<Entry> entries;
  entries.reserve(count);
  const std::size_t payload_end = bytes.size() - 8;
  for (std::uint64_t i = 0; i < count; ++i) {
    Entry e;
    const std::uint32_t name_len = r.u32();
    e.name = r.str(name_len);
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeF32) {
      throw schema_error("checkpoint: unsupported dtype tag " + std::to_string(dtype) + " for '" +
                         e.name + "' in " + path);
    }
    const std::uint32_t rank = r.u32();
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      e.shape.push_back(static_cast<std::size_t>(r.u64()));
      numel *= e.shape.back();
    }
    e.values.resize(numel);
    for (std::size_t v = 0; v < numel; ++v) e.values[v] = r.f32();
    entries.push_back(std::move(e));
  }
  if (r.pos != payload_end) {
    throw corruption_error("checkpoint: trailing bytes after entries in " + path);
  }
  return entries;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("checkpoint: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Serializes every parameter and running statistic, in traversal order.
inline void save(nn::Module<float>& model, const std::string& path) {
  std::vector<Entry> entries;
  for (auto& item : model.named_state()) {
    entries.push_back({item.name, item.tensor.shape(),
                       std::vector<float>(item.tensor.data().begin(), item.tensor.data().end())});
  }
  detail::write_file_atomic(path, serialize_entries(entries));
}

// Restores a save()d file bit-exactly. All-or-nothing: every entry is
// validated against the model before any tensor is touched.
inline void load(nn::Module<float>& model, const std::string& path) {
  const std::vector<Entry> entries = parse_entries(read_file(path), path);

  auto state = model.named_state();
  std::map<std::string, const Entry*> by_name;
  for (const Entry& e : entries) {
    if (!by_name.emplace(e.name, &e).second) {
      throw schema_error("checkpoint: duplicate entry '" + e.name + "' in " + path);
    }
  }

  std::vector<std::string> missing, unknown;
  std::set<std::string> model_names;
  for (auto& item : state) {
    model_names.insert(item.name);
    if (!by_name.count(item.name)) missing.push_back(item.name);
  }
  for (const Entry& e : entries) {
    if (!model_names.count(e.name)) unknown.push_back(e.name);
  }
  if (!missing.empty() || !unknown.empty()) {
    std::string msg = "checkpoint: schema mismatch in " + path;
    for (const auto& n : missing) msg += " [missing " + n + "]";
    for (const auto& n : unknown) msg += " [unknown " + n + "]";
    throw schema_error(msg);
  }
  for (auto& item : state) {
    const Entry& e = *by_name.at(item.name);
    if (e.shape != item.tensor.shape()) {
      throw shape_error("checkpoint: shape mismatch for '" + item.name + "': file " +
                        shape_to_string(e.shape) + " vs model " +
                        shape_to_string(item.tensor.shape()));
    }
  }
  for (auto& item : state) {
    const Entry& e = *by_name.at(item.name);
    std::copy(e.values.begin(), e.values.end(), item.tensor.mutable_data());
  }
}

// --- pretrained import ------------------------------------------------------

enum class HeadPolicy { skip, import };

// Maps external dump names onto internal parameter names. Text form: one
// "external internal" pair per line, '#' comments allowed.
struct NameMap {
  std::vector<std::pair<std::string, std::string>> pairs;
  HeadPolicy head_policy = HeadPolicy::skip;
};

inline NameMap parse_name_map(std::istream& in, const std::string& source) {
  NameMap map;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string external, internal, extra;
    if (!(ls >> external)) continue;  // blank line
    if (!(ls >> internal) || (ls >> extra)) {
      throw format_error("namemap: line " + std::to_string(line_no) + " in " + source +
                         " must be 'external internal'");
    }
    map.pairs.emplace_back(external, internal);
  }
  return map;
}

inline NameMap load_name_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("namemap: cannot open " + path);
  return parse_name_map(in, path);
}

// Maps every state entry to itself; pairs with dumps made by save().
inline NameMap identity_name_map(nn::Module<float>& model) {
  NameMap map;
  for (auto& item : model.named_state()) map.pairs.emplace_back(item.name, item.name);
  return map;
}

struct ImportSummary {
  std::vector<std::string> imported;        // internal names overwritten
  std::vector<std::string> skipped;         // head entries under HeadPolicy::skip
  std::vector<std::string> unmatched_model; // backbone state the map/dump did not cover
  std::vector<std::string> unmatched_dump;  // dump entries never consumed
};

inline bool is_head_name(const std::string& name) { return name.rfind("head.", 0) == 0; }

// Overwrites backbone weights from a flat named-tensor dump. Strict mode
// demands every backbone state entry be covered exactly once and fails
// without touching the model; relaxed mode records the gaps in the summary.
inline ImportSummary import_pretrained(const std::string& dump_path, nn::Module<float>& model,
                                       const NameMap& map, bool strict = true) {
  const std::vector<Entry> entries = parse_entries(read_file(dump_path), dump_path);
  std::map<std::string, const Entry*> dump_by_name;
  for (const Entry& e : entries) {
    if (!dump_by_name.emplace(e.name, &e).second) {
      throw schema_error("import: duplicate entry '" + e.name + "' in " + dump_path);
    }
  }

  auto state = model.named_state();
  std::map<std::string, nn::NamedTensor<float>*> model_by_name;
  for (auto& item : state) model_by_name.emplace(item.name, &item);

  ImportSummary summary;
  std::set<std::string> covered;
  std::set<std::string> dump_used;
  std::vector<std::pair<nn::NamedTensor<float>*, const Entry*>> staged;

  for (const auto& [external, internal] : map.pairs) {
    if (map.head_policy == HeadPolicy::skip && is_head_name(internal)) {
      summary.skipped.push_back(internal);
      continue;
    }
    auto model_it = model_by_name.find(internal);
    if (model_it == model_by_name.end()) {
      throw schema_error("import: map target '" + internal + "' is not a model parameter");
    }
    if (!covered.insert(internal).second) {
      throw import_error("import: map covers '" + internal + "' more than once");
    }
    auto dump_it = dump_by_name.find(external);
    if (dump_it == dump_by_name.end()) {
      if (strict) {
        throw import_error("import: dump " + dump_path + " is missing entry '" + external +
                           "' (wanted for " + internal + ")");
      }
      summary.unmatched_model.push_back(internal);
      continue;
    }
    const Entry& e = *dump_it->second;
    dump_used.insert(external);
    if (e.shape != model_it->second->tensor.shape()) {
      throw shape_error("import: shape mismatch for '" + internal + "': dump " +
                        shape_to_string(e.shape) + " vs model " +
                        shape_to_string(model_it->second->tensor.shape()));
    }
    staged.emplace_back(model_it->second, &e);
  }

  for (auto& item : state) {
    if (is_head_name(item.name)) continue;
    if (!covered.count(item.name)) {
      if (strict) {
        throw import_error("import: backbone state '" + item.name + "' is not covered by the map");
      }
      summary.unmatched_model.push_back(item.name);
    }
  }
  for (const Entry& e : entries) {
    if (!dump_used.count(e.name)) summary.unmatched_dump.push_back(e.name);
  }

  for (auto& [target, entry] : staged) {
    std::copy(entry->values.begin(), entry->values.end(), target->tensor.mutable_data());
    summary.imported.push_back(target->name);
  }
  return summary;
}

}  // namespace orchard::checkpoint

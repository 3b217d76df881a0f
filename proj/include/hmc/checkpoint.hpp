#pragma once

// Checkpoint container. Text header followed by a binary payload:
//
//   HMC-CHECKPOINT 1\n
//   config <n>\n            n lines of key=value follow
//   <key>=<value>\n
//   tensors <m>\n           m lines follow
//   <name> <rank> <d0> ... <d_rank-1> <offset>\n
//   data <bytes>\n
//   <payload>
//
// Offsets are byte offsets into the payload. Every value is an IEEE-754
// binary64 stored little-endian. Names and keys contain no whitespace.

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hmc/tensor.hpp"

namespace hmc {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_le_double(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

inline double get_le_double(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path);
}

}  // namespace detail

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const std::string* config_value(const std::string& key) const {
    for (const auto& [k, v] : config) {
      if (k == key) return &v;
    }
    return nullptr;
  }

  const Tensor& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return t;
    }
    throw FormatError("checkpoint has no tensor named " + name);
  }
};

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream header;
  header << "HMC-CHECKPOINT 1\n";
  header << "config " << ckpt.config.size() << '\n';
  for (const auto& [k, v] : ckpt.config) header << k << '=' << v << '\n';
  header << "tensors " << ckpt.tensors.size() << '\n';
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    header << name << ' ' << t.rank();
    for (std::size_t e : t.shape()) header << ' ' << e;
    header << ' ' << offset << '\n';
    offset += t.size() * 8;
  }
  header << "data " << offset << '\n';
  std::string out = header.str();
  out.reserve(out.size() + offset);
  for (const auto& entry : ckpt.tensors) {
    for (double v : entry.second.data()) detail::put_le_double(out, v);
  }
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw FormatError("truncated checkpoint header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != "HMC-CHECKPOINT 1") throw FormatError("not a checkpoint (bad magic)");
  Checkpoint ckpt;
  std::size_t n = 0;
  {
    std::istringstream ls(next_line());
    std::string tag;
    if (!(ls >> tag >> n) || tag != "config") throw FormatError("expected config count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::string line = next_line();
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("bad config line: " + line);
    ckpt.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  {
    std::istringstream ls(next_line());
    std::string tag;
    if (!(ls >> tag >> n) || tag != "tensors") throw FormatError("expected tensor count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::istringstream ls(next_line());
    Entry e;
    std::size_t rank = 0;
    if (!(ls >> e.name >> rank)) throw FormatError("bad tensor line");
    e.shape.resize(rank);
    for (auto& d : e.shape) {
      if (!(ls >> d)) throw FormatError("bad tensor extent for " + e.name);
    }
    if (!(ls >> e.offset)) throw FormatError("bad tensor offset for " + e.name);
    entries.push_back(std::move(e));
  }
  std::size_t data_bytes = 0;
  {
    std::istringstream ls(next_line());
    std::string tag;
    if (!(ls >> tag >> data_bytes) || tag != "data") throw FormatError("expected data size");
  }
  if (bytes.size() - pos != data_bytes) throw FormatError("checkpoint payload size mismatch");
  const auto* payload = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (auto& e : entries) {
    const std::size_t count = extent_product(e.shape);
    if (e.offset + count * 8 > data_bytes) throw FormatError("tensor " + e.name + " exceeds payload");
    std::vector<double> values(count);
    for (std::size_t j = 0; j < count; ++j) values[j] = detail::get_le_double(payload + e.offset + 8 * j);
    ckpt.tensors.emplace_back(e.name, Tensor(e.shape, std::move(values)));
  }
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  detail::write_file(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(detail::read_file(path)); }

}  // namespace hmc

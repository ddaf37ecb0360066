#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "ehrmamba/error.hpp"
#include "ehrmamba/model.hpp"

namespace ehrmamba {

// Binary layout, all integers little-endian:
//   "EHRM" | u32 version | u32 meta_len | meta (key=value lines)
//   | u32 n_tensors | n x (u32 name_len | name | u32 ndim | u64 dims[ndim] | f32 payload)
//   | u64 total file length (including this field)
inline constexpr char kCheckpointMagic[4] = {'E', 'H', 'R', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using Metadata = std::map<std::string, std::string>;

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <class T>
  void le(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
  void f32(float f) { le(std::bit_cast<std::uint32_t>(f)); }
  void str(const std::string& s) {
    le(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<char>& b) : buf_(b) {}
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw FormatError("checkpoint: truncated file");
  }
  template <class T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<char>& buf_;
  std::size_t pos_ = 0;
};

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

inline Metadata model_config_metadata(const ModelConfig& c) {
  return {{"model.d", std::to_string(c.d)},
          {"model.n_blocks", std::to_string(c.n_blocks)},
          {"model.state_size", std::to_string(c.state_size)},
          {"model.conv_width", std::to_string(c.conv_width)},
          {"model.context_length", std::to_string(c.context_length)},
          {"model.vocab_size", std::to_string(c.vocab_size)},
          {"model.time_width", std::to_string(c.time_width)},
          {"model.expansion", std::to_string(c.expansion)},
          {"model.max_visit_order", std::to_string(c.max_visit_order)},
          {"model.dropout", detail::format_double(c.dropout)},
          {"model.use_position", c.use_position ? "true" : "false"},
          {"model.seed", std::to_string(c.seed)}};
}

inline ModelConfig model_config_from_metadata(const Metadata& md) {
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = md.find(k);
    if (it == md.end()) throw FormatError("checkpoint: metadata lacks '" + k + "'");
    return it->second;
  };
  ModelConfig c;
  try {
    c.d = std::stoull(get("model.d"));
    c.n_blocks = std::stoull(get("model.n_blocks"));
    c.state_size = std::stoull(get("model.state_size"));
    c.conv_width = std::stoull(get("model.conv_width"));
    c.context_length = std::stoull(get("model.context_length"));
    c.vocab_size = std::stoull(get("model.vocab_size"));
    c.time_width = std::stoull(get("model.time_width"));
    c.expansion = std::stoull(get("model.expansion"));
    c.max_visit_order = std::stoi(get("model.max_visit_order"));
    c.dropout = std::stod(get("model.dropout"));
    c.use_position = get("model.use_position") == "true";
    c.seed = std::stoull(get("model.seed"));
  } catch (const std::logic_error&) {
    throw FormatError("checkpoint: malformed model metadata");
  }
  return c;
}

inline std::vector<char> serialize_checkpoint(const Model& m, const Metadata& extra = {}) {
  Metadata md = extra;
  for (auto& [k, v] : model_config_metadata(m.config)) md[k] = v;
  std::string meta;
  for (const auto& [k, v] : md) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos || v.find('\n') != std::string::npos) {
      throw FormatError("checkpoint: metadata entries must be single-line key=value");
    }
    meta += k + "=" + v + "\n";
  }
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.le(kCheckpointVersion);
  w.str(meta);
  std::uint32_t count = 0;
  for_each_parameter(m, [&](const std::string&, const Matrix&) { ++count; });
  w.le(count);
  for_each_parameter(m, [&](const std::string& name, const Matrix& x) {
    w.str(name);
    w.le(std::uint32_t{2});
    w.le(static_cast<std::uint64_t>(x.rows()));
    w.le(static_cast<std::uint64_t>(x.cols()));
    for (double v : x.values()) w.f32(static_cast<float>(v));
  });
  w.le(static_cast<std::uint64_t>(w.buffer().size() + 8));
  return std::move(w.buffer());
}

struct Checkpoint {
  Metadata metadata;
  Model model;
};

// Parses a checkpoint. With `expected`, tensors must match that config's
// shapes exactly; otherwise the config stored in the metadata is used.
inline Checkpoint deserialize_checkpoint(const std::vector<char>& bytes, const ModelConfig* expected = nullptr) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  if (bytes.size() < 16) throw FormatError("checkpoint: truncated file");
  {
    std::uint64_t declared = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      declared |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[bytes.size() - 8 + i])) << (8 * i);
    }
    if (declared != bytes.size()) throw FormatError("checkpoint: length check failed (truncated or partial file)");
  }
  detail::ByteReader r(bytes);
  r.str(4);
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const std::string meta = r.str(r.le<std::uint32_t>());
  Checkpoint ck;
  std::istringstream ms(meta);
  std::string line;
  while (std::getline(ms, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint: malformed metadata line");
    ck.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const ModelConfig cfg = expected ? *expected : model_config_from_metadata(ck.metadata);
  ck.model = init_model(cfg);
  std::map<std::string, Matrix*> slots;
  for_each_parameter(ck.model, [&](const std::string& name, Matrix& x) { slots[name] = &x; });
  const auto count = r.le<std::uint32_t>();
  std::map<std::string, bool> seen;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = r.str(r.le<std::uint32_t>());
    const auto ndim = r.le<std::uint32_t>();
    std::vector<std::uint64_t> dims(ndim);
    for (auto& d : dims) d = r.le<std::uint64_t>();
    auto it = slots.find(name);
    if (it == slots.end()) throw FormatError("checkpoint: unknown tensor '" + name + "' for this model config");
    if (seen[name]) throw FormatError("checkpoint: duplicate tensor '" + name + "'");
    seen[name] = true;
    Matrix& dst = *it->second;
    if (ndim != 2 || dims[0] != dst.rows() || dims[1] != dst.cols()) {
      std::string got;
      for (std::size_t i = 0; i < dims.size(); ++i) got += (i ? "x" : "") + std::to_string(dims[i]);
      throw ShapeError("checkpoint: shape mismatch for tensor '" + name + "': stored " + got + ", model expects " +
                       dst.shape_string());
    }
    for (auto& v : dst.values()) v = static_cast<double>(r.f32());
  }
  if (seen.size() != slots.size()) {
    for (const auto& [name, _] : slots) {
      if (!seen.count(name)) throw FormatError("checkpoint: missing tensor '" + name + "'");
    }
  }
  if (r.pos() + 8 != bytes.size()) throw FormatError("checkpoint: trailing bytes before length field");
  return ck;
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Writes to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

inline void save_checkpoint(const Model& m, const std::filesystem::path& path, const Metadata& extra = {}) {
  const auto bytes = serialize_checkpoint(m, extra);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr) {
  return deserialize_checkpoint(read_file_bytes(path), expected);
}

}  // namespace ehrmamba

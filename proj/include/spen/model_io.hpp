#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "spen/autodiff.hpp"
#include "spen/error.hpp"

namespace spen {

inline constexpr const char* kModelMagic = "spen-model";
inline constexpr uint32_t kModelVersion = 1;

// On-disk model container: a UTF-8 manifest block (key = value lines plus
// optional [vocab] and [tags] sections), then length-prefixed named tensor
// records of little-endian 64-bit floats, each closed by a CRC32.
struct ModelFile {
  std::map<std::string, std::string> manifest;
  std::vector<std::string> vocab;
  std::vector<std::string> tags;
  std::vector<std::pair<std::string, ad::Tensor>> tensors;

  void set(const std::string& key, const std::string& value) { manifest[key] = value; }
  void set(const std::string& key, double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    manifest[key] = buf;
  }
  void set(const std::string& key, size_t value) { manifest[key] = std::to_string(value); }

  const std::string& get(const std::string& key) const {
    auto it = manifest.find(key);
    check_config(it != manifest.end(), msg_cat("model: missing manifest key '", key, "'"));
    return it->second;
  }
  bool has(const std::string& key) const { return manifest.count(key) > 0; }
  size_t get_size(const std::string& key) const { return std::stoull(get(key)); }
  double get_double(const std::string& key) const { return std::stod(get(key)); }

  void add_tensor(const std::string& name, const ad::Tensor& t) {
    for (const auto& [n, _] : tensors) {
      check_config(n != name, msg_cat("model: duplicate tensor '", name, "'"));
    }
    tensors.emplace_back(name, t);
  }

  const ad::Tensor& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return t;
    }
    throw ConfigError(msg_cat("model: no tensor named '", name, "'"));
  }
};

namespace detail {

inline uint32_t crc32(const unsigned char* data, size_t len, uint32_t crc = 0) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return ~crc;
}

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  std::string context;

  void need(size_t n) {
    check_config(pos + n <= buf.size(), msg_cat("model: truncated file in ", context));
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string out = buf.substr(pos, n);
    pos += n;
    return out;
  }
};

}  // namespace detail

inline void save_model(const std::string& path, const ModelFile& model) {
  std::ofstream out(path, std::ios::binary);
  check_config(out.good(), msg_cat("save_model: cannot open ", path));
  out << kModelMagic << " v" << kModelVersion << "\n";
  for (const auto& [k, v] : model.manifest) out << k << " = " << v << "\n";
  if (!model.vocab.empty()) {
    out << "[vocab " << model.vocab.size() << "]\n";
    for (const auto& tok : model.vocab) out << tok << "\n";
  }
  if (!model.tags.empty()) {
    out << "[tags " << model.tags.size() << "]\n";
    for (const auto& tag : model.tags) out << tag << "\n";
  }
  out << "[tensors " << model.tensors.size() << "]\n";
  for (const auto& [name, t] : model.tensors) {
    std::string payload;
    detail::put_u32(payload, static_cast<uint32_t>(name.size()));
    payload += name;
    detail::put_u32(payload, static_cast<uint32_t>(t.shape.size()));
    for (size_t d : t.shape) detail::put_u64(payload, d);
    detail::put_u64(payload, t.data.size());
    for (double v : t.data) detail::put_f64(payload, v);
    uint32_t crc = detail::crc32(reinterpret_cast<const unsigned char*>(payload.data()),
                                 payload.size());
    std::string rec;
    detail::put_u64(rec, payload.size());
    rec += payload;
    detail::put_u32(rec, crc);
    out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
  check_config(out.good(), msg_cat("save_model: write failed for ", path));
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_config(in.good(), msg_cat("load_model: cannot open ", path));
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  ModelFile model;
  size_t pos = 0;
  auto next_line = [&]() -> std::string {
    auto nl = buf.find('\n', pos);
    check_config(nl != std::string::npos, "load_model: truncated manifest");
    std::string line = buf.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };

  std::string header = next_line();
  std::string expected = msg_cat(kModelMagic, " v", kModelVersion);
  if (header != expected) {
    throw ConfigError(msg_cat("load_model: format '", header, "' but this build reads '",
                              expected, "'"));
  }
  size_t n_tensors = 0;
  bool saw_tensors = false;
  while (pos < buf.size()) {
    std::string line = next_line();
    if (line.rfind("[vocab ", 0) == 0) {
      size_t n = std::stoull(line.substr(7));
      for (size_t i = 0; i < n; ++i) model.vocab.push_back(next_line());
    } else if (line.rfind("[tags ", 0) == 0) {
      size_t n = std::stoull(line.substr(6));
      for (size_t i = 0; i < n; ++i) model.tags.push_back(next_line());
    } else if (line.rfind("[tensors ", 0) == 0) {
      n_tensors = std::stoull(line.substr(9));
      saw_tensors = true;
      break;
    } else {
      auto eq = line.find(" = ");
      check_config(eq != std::string::npos,
                   msg_cat("load_model: bad manifest line '", line, "'"));
      model.manifest[line.substr(0, eq)] = line.substr(eq + 3);
    }
  }
  check_config(saw_tensors, "load_model: missing [tensors] section");

  detail::Reader r{buf, pos, "tensor records"};
  for (size_t i = 0; i < n_tensors; ++i) {
    uint64_t payload_len = r.u64();
    size_t payload_start = r.pos;
    std::string payload = r.bytes(payload_len);
    uint32_t stored_crc = r.u32();

    detail::Reader p{payload, 0, "tensor payload"};
    uint32_t name_len = p.u32();
    std::string name = p.bytes(name_len);
    r.context = msg_cat("tensor '", name, "'");
    uint32_t actual_crc = detail::crc32(
        reinterpret_cast<const unsigned char*>(buf.data() + payload_start), payload_len);
    if (actual_crc != stored_crc) {
      throw ConfigError(msg_cat("load_model: checksum mismatch in tensor record '", name,
                                "'"));
    }
    uint32_t ndim = p.u32();
    ad::Shape shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = p.u64();
    uint64_t count = p.u64();
    check_config(count == ad::numel(shape),
                 msg_cat("load_model: tensor '", name, "' count ", count,
                         " does not match shape ", ad::shape_str(shape)));
    std::vector<double> data(count);
    for (uint64_t k = 0; k < count; ++k) data[k] = p.f64();
    ad::Tensor t(std::move(shape), std::move(data));
    t.name = name;
    model.add_tensor(name, t);
  }
  return model;
}

// ---- helpers shared by the model packers ----

inline void pack_params(ModelFile& model, std::span<const ad::TensorPtr> params) {
  for (const auto& p : params) model.add_tensor(p->name, *p);
}

// Restores values into live parameters by name, enforcing shape equality.
inline void unpack_params(const ModelFile& model, std::span<const ad::TensorPtr> params) {
  for (const auto& p : params) {
    const ad::Tensor& t = model.tensor(p->name);
    check_config(t.shape == p->shape, msg_cat("load_model: tensor '", p->name, "' shape ",
                                              ad::shape_str(t.shape), " expected ",
                                              ad::shape_str(p->shape)));
    p->data = t.data;
  }
}

}  // namespace spen

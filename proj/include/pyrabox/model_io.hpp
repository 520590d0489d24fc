#ifndef PYRABOX_MODEL_IO_HPP_
#define PYRABOX_MODEL_IO_HPP_

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "pyrabox/network.hpp"

namespace pyrabox {

// Model file layout (little-endian):
//   magic "PYBX", u32 version = 1, u32 tensor count;
//   per tensor: u16 name length, UTF-8 name, u8 dtype (0 = f32), u8 rank,
//   u32 dims[rank], raw f32 values.

namespace detail {

template <class U>
void write_le(std::ostream& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.write(buf, sizeof(U));
}

template <class U>
U read_le(std::istream& in, const std::string& origin, const char* what) {
  char buf[sizeof(U)];
  in.read(buf, sizeof(U));
  if (in.gcount() != sizeof(U)) throw parse_error(origin + ": truncated while reading " + std::string(what));
  U v;
  std::memcpy(&v, buf, sizeof(U));
  return v;
}

}  // namespace detail

inline void save_model(const ParamStore<float>& params, std::ostream& out) {
  out.write("PYBX", 4);
  detail::write_le<std::uint32_t>(out, 1);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_le<std::uint8_t>(out, 0);
    detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim(d)));
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
}

inline void save_model(const ParamStore<float>& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw parse_error(path + ": cannot open for writing");
  save_model(params, f);
}

inline ParamStore<float> load_model(std::istream& in, const std::string& origin = "<stream>") {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "PYBX", 4) != 0)
    throw parse_error(origin + ": bad magic at offset 0 (expected PYBX)");
  std::uint32_t version = detail::read_le<std::uint32_t>(in, origin, "version");
  if (version != 1) throw parse_error(origin + ": unsupported version " + std::to_string(version));
  std::uint32_t count = detail::read_le<std::uint32_t>(in, origin, "tensor count");
  ParamStore<float> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t nlen = detail::read_le<std::uint16_t>(in, origin, "name length");
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    if (in.gcount() != nlen) throw parse_error(origin + ": truncated tensor name");
    std::uint8_t dtype = detail::read_le<std::uint8_t>(in, origin, "dtype");
    if (dtype != 0) throw parse_error(origin + ": tensor '" + name + "' has unsupported dtype " + std::to_string(dtype));
    std::uint8_t rank = detail::read_le<std::uint8_t>(in, origin, "rank");
    std::vector<int> shape;
    int64_t n = 1;
    for (int d = 0; d < rank; ++d) {
      std::uint32_t e = detail::read_le<std::uint32_t>(in, origin, "dim");
      shape.push_back(static_cast<int>(e));
      n *= e;
    }
    std::vector<float> values(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(n * sizeof(float)))
      throw parse_error(origin + ": truncated values for tensor '" + name + "'");
    if (params.count(name)) throw parse_error(origin + ": duplicate tensor name '" + name + "'");
    params[name] = Tensor<float>::from(shape, std::move(values), true);
  }
  return params;
}

inline ParamStore<float> load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw parse_error(path + ": cannot open");
  return load_model(f, path);
}

// Replaces a model's parameters with loaded ones; name sets must match
// exactly.
inline void adopt_params(Model<float>& model, const ParamStore<float>& loaded,
                         const std::string& origin = "<model file>") {
  for (const auto& [name, t] : loaded) {
    if (!model.params().count(name)) throw parse_error(origin + ": unknown extra tensor '" + name + "'");
    if (model.param(name).shape() != t.shape())
      throw parse_error(origin + ": tensor '" + name + "' has shape " + shape_str(t.shape()) +
                        ", expected " + shape_str(model.param(name).shape()));
  }
  for (const auto& [name, t] : model.params())
    if (!loaded.count(name)) throw parse_error(origin + ": missing tensor '" + name + "'");
  for (auto& [name, t] : model.params()) {
    t.values() = loaded.at(name).values();
  }
}

}  // namespace pyrabox

#endif  // PYRABOX_MODEL_IO_HPP_

#include "rtsdoa/params.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace rtsdoa::core {

namespace {

constexpr char kMagic[4] = {'R', 'T', 'S', 'D'};
constexpr uint32_t kVersion = 1;

template <class T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

template <class S>
constexpr uint8_t dtype_tag() {
  return sizeof(S) == 4 ? 0 : 1;
}

}  // namespace

template <class S>
void save_checkpoint(const std::string& path, const ParameterStore<S>& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<uint64_t>(store.size()));
  for (const auto& name : store.names()) {
    const Tensor<S>& t = store.at(name);
    write_pod(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape) write_pod(os, static_cast<uint64_t>(d));
    write_pod(os, dtype_tag<S>());
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(S)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

template <class S>
void load_checkpoint(const std::string& path, ParameterStore<S>& store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const auto version = read_pod<uint32_t>(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  const auto count = read_pod<uint64_t>(is);
  for (uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rank = read_pod<uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_pod<uint64_t>(is));
    const auto tag = read_pod<uint8_t>(is);
    if (tag != dtype_tag<S>())
      throw std::runtime_error("checkpoint: dtype tag mismatch for tensor " + name);
    Tensor<S>& t = store.has(name) ? store.at(name) : store.create(name, shape);
    if (t.shape != shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file " +
                               shape_str(shape) + " vs store " + shape_str(t.shape));
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(S)));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor " + name);
  }
}

template void save_checkpoint<float>(const std::string&, const ParameterStore<float>&);
template void save_checkpoint<double>(const std::string&, const ParameterStore<double>&);
template void load_checkpoint<float>(const std::string&, ParameterStore<float>&);
template void load_checkpoint<double>(const std::string&, ParameterStore<double>&);

}  // namespace rtsdoa::core

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "epd/binary_io.hpp"
#include "epd/error.hpp"
#include "epd/nn.hpp"

// Checkpoint layout (all integers little-endian):
//   "EPD1"
//   u32 entry count
//   per entry: u32 name length, name bytes, u32 rank, u32 dims[rank], u64 blob offset
//   float32 blobs, offsets relative to the first blob byte
// Entries cover parameters followed by running statistics.

namespace epd::nn {

inline constexpr char kCheckpointMagic[4] = {'E', 'P', 'D', '1'};

template <class T>
void write_checkpoint(std::ostream& os, const Model<T>& model) {
  std::vector<const NamedTensor<T>*> entries;
  for (const auto& p : model.parameters()) entries.push_back(&p);
  for (const auto& b : model.buffers()) entries.push_back(&b);

  os.write(kCheckpointMagic, 4);
  binary::put_le(os, static_cast<std::uint32_t>(entries.size()));
  std::uint64_t offset = 0;
  for (const auto* e : entries) {
    binary::put_le(os, static_cast<std::uint32_t>(e->name.size()));
    os.write(e->name.data(), static_cast<std::streamsize>(e->name.size()));
    binary::put_le(os, static_cast<std::uint32_t>(e->tensor.rank()));
    for (auto d : e->tensor.shape()) binary::put_le(os, static_cast<std::uint32_t>(d));
    binary::put_le(os, offset);
    offset += e->tensor.numel() * sizeof(float);
  }
  for (const auto* e : entries) {
    std::vector<float> values(e->tensor.data().begin(), e->tensor.data().end());
    binary::put_f32s(os, values);
  }
}

template <class T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  write_checkpoint(os, model);
  if (!os.flush()) throw IoError("failed writing checkpoint: " + path.string());
}

/// Loads values by name; every model tensor must be present with a matching shape.
template <class T>
void read_checkpoint(std::istream& is, Model<T>& model) {
  binary::Reader in(is, "checkpoint");
  char magic[4];
  in.read(magic, 4);
  if (std::string(magic, 4) != std::string(kCheckpointMagic, 4)) throw FormatError("checkpoint: bad magic", 0);

  struct Entry {
    Shape shape;
    std::uint64_t offset;
  };
  std::unordered_map<std::string, Entry> manifest;
  const auto count = in.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = in.le<std::uint32_t>();
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rank = in.le<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = in.le<std::uint32_t>();
    const auto offset = in.le<std::uint64_t>();
    manifest[name] = {std::move(shape), offset};
  }
  const auto blob_start = in.offset();

  auto load = [&](const NamedTensor<T>& t) {
    const auto it = manifest.find(t.name);
    if (it == manifest.end()) throw FormatError("checkpoint: missing tensor '" + t.name + "'");
    if (it->second.shape != t.tensor.shape()) {
      throw FormatError("checkpoint: tensor '" + t.name + "' has shape " + epd::to_string(it->second.shape) +
                        ", model expects " + epd::to_string(t.tensor.shape()));
    }
    in.seek(blob_start + it->second.offset);
    std::vector<float> values(t.tensor.numel());
    in.f32s(values);
    Tensor<T> handle = t.tensor;
    auto dst = handle.data();
    for (std::size_t i = 0; i < values.size(); ++i) dst[i] = static_cast<T>(values[i]);
  };
  for (const auto& p : model.parameters()) load(p);
  for (const auto& b : model.buffers()) load(b);
}

template <class T>
void load_checkpoint(Model<T>& model, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  read_checkpoint(is, model);
}

}  // namespace epd::nn

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "epd/binary_io.hpp"
#include "epd/csv.hpp"
#include "epd/data/record.hpp"
#include "epd/error.hpp"

// Packed waveform store:
//   "SW6K", u32 trace count, then per trace:
//   32-byte zero-padded trace_id, u32 p sample, u32 s sample, 3 x 6000 float32
// All integers and floats little-endian. A sidecar "<store>.index.csv" maps
// trace_id to the byte offset of its record.

namespace epd::data {

inline constexpr char kStoreMagic[4] = {'S', 'W', '6', 'K'};
inline constexpr std::size_t kTraceIdBytes = 32;
inline constexpr std::uint64_t kStoreHeaderBytes = 8;
inline constexpr std::uint64_t kStoreRecordBytes = kTraceIdBytes + 8 + kWaveChannels * kSamples * sizeof(float);

struct StoredTrace {
  std::string trace_id;
  std::uint32_t p_arrival_sample = 0;
  std::uint32_t s_arrival_sample = 0;
  std::vector<float> waveform;
};

inline std::filesystem::path index_path(const std::filesystem::path& store) {
  return store.string() + ".index.csv";
}

inline void pack_store(const std::vector<TraceRecord>& records, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open store for writing: " + path.string());
  std::ofstream idx(index_path(path), std::ios::trunc);
  if (!idx) throw IoError("cannot open store index for writing: " + index_path(path).string());

  os.write(kStoreMagic, 4);
  binary::put_le(os, static_cast<std::uint32_t>(records.size()));
  idx << "trace_id,byte_offset\n";
  std::uint64_t offset = kStoreHeaderBytes;
  for (const auto& r : records) {
    if (r.meta.trace_id.empty() || r.meta.trace_id.size() > kTraceIdBytes) {
      throw std::invalid_argument("trace_id must be 1..32 bytes: '" + r.meta.trace_id + "'");
    }
    if (r.waveform.size() != kWaveChannels * kSamples) {
      throw std::invalid_argument("trace " + r.meta.trace_id + " does not hold 3 x 6000 samples");
    }
    char id[kTraceIdBytes] = {};
    std::copy(r.meta.trace_id.begin(), r.meta.trace_id.end(), id);
    os.write(id, kTraceIdBytes);
    binary::put_le(os, static_cast<std::uint32_t>(r.meta.p_arrival_sample));
    binary::put_le(os, static_cast<std::uint32_t>(r.meta.s_arrival_sample));
    binary::put_f32s(os, r.waveform);
    idx << csv::escape(r.meta.trace_id) << ',' << offset << '\n';
    offset += kStoreRecordBytes;
  }
  if (!os.flush() || !idx.flush()) throw IoError("failed writing store: " + path.string());
}

namespace detail {

inline StoredTrace read_record(binary::Reader& in) {
  StoredTrace t;
  char id[kTraceIdBytes];
  in.read(id, kTraceIdBytes);
  std::size_t len = 0;
  while (len < kTraceIdBytes && id[len] != '\0') ++len;
  t.trace_id.assign(id, len);
  t.p_arrival_sample = in.le<std::uint32_t>();
  t.s_arrival_sample = in.le<std::uint32_t>();
  t.waveform.resize(kWaveChannels * kSamples);
  in.f32s(t.waveform);
  return t;
}

inline std::uint32_t read_header(binary::Reader& in) {
  char magic[4];
  in.read(magic, 4);
  if (std::string(magic, 4) != std::string(kStoreMagic, 4)) throw FormatError("store: bad magic", 0);
  return in.le<std::uint32_t>();
}

}  // namespace detail

/// Reads every record in file order.
inline std::vector<StoredTrace> read_store(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open store: " + path.string());
  binary::Reader in(is, "store " + path.filename().string());
  const auto count = detail::read_header(in);
  std::vector<StoredTrace> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) out.push_back(detail::read_record(in));
  return out;
}

inline std::unordered_map<std::string, std::uint64_t> read_store_index(const std::filesystem::path& store) {
  std::ifstream is(index_path(store));
  if (!is) throw IoError("cannot open store index: " + index_path(store).string());
  std::string line;
  std::getline(is, line);
  if (csv::trim(line) != "trace_id,byte_offset") throw FormatError("store index: unexpected header '" + line + "'");
  std::unordered_map<std::string, std::uint64_t> index;
  while (std::getline(is, line)) {
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split_line(line);
    const auto off = f.size() == 2 ? csv::parse_int(f[1]) : std::nullopt;
    if (!off || *off < 0) throw FormatError("store index: bad line '" + line + "'");
    index[f[0]] = static_cast<std::uint64_t>(*off);
  }
  return index;
}

/// Random-access lookup through the sidecar index, in the order of `ids`.
inline std::vector<StoredTrace> unpack_store(const std::filesystem::path& path, const std::vector<std::string>& ids) {
  const auto index = read_store_index(path);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open store: " + path.string());
  binary::Reader in(is, "store " + path.filename().string());
  detail::read_header(in);
  std::vector<StoredTrace> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = index.find(id);
    if (it == index.end()) throw NotFoundError("trace '" + id + "' is not in " + path.string());
    in.seek(it->second);
    auto rec = detail::read_record(in);
    if (rec.trace_id != id) {
      throw FormatError("store index points at '" + rec.trace_id + "' for '" + id + "'", it->second);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace epd::data

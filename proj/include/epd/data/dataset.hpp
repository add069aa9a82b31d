#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "epd/data/manifest.hpp"
#include "epd/data/record.hpp"
#include "epd/data/store.hpp"
#include "epd/error.hpp"
#include "epd/log.hpp"

// A data directory holds manifest.csv, waveforms.sw6k and its index sidecar.

namespace epd::data {

inline std::filesystem::path manifest_path(const std::filesystem::path& dir) { return dir / "manifest.csv"; }
inline std::filesystem::path store_path(const std::filesystem::path& dir) { return dir / "waveforms.sw6k"; }

inline void write_dataset(const std::filesystem::path& dir, const std::vector<TraceRecord>& records) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<TraceMeta> meta;
  meta.reserve(records.size());
  for (const auto& r : records) meta.push_back(r.meta);
  save_manifest(manifest_path(dir), meta);
  pack_store(records, store_path(dir));
}

/// Joins manifest rows with stored waveforms. Manifest rejects are logged;
/// a row whose arrivals disagree with the store is a FormatError.
inline std::vector<TraceRecord> load_dataset(const std::filesystem::path& dir, const ManifestOptions& opts = {}) {
  auto manifest = load_manifest(manifest_path(dir), opts);
  for (const auto& r : manifest.rejects) {
    log::warn("manifest line " + std::to_string(r.line) + " (" + r.trace_id + ") rejected: " + r.reason);
  }
  auto stored = read_store(store_path(dir));
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < stored.size(); ++i) by_id[stored[i].trace_id] = i;

  std::vector<TraceRecord> out;
  out.reserve(manifest.rows.size());
  for (auto& row : manifest.rows) {
    const auto it = by_id.find(row.trace_id);
    if (it == by_id.end()) throw NotFoundError("trace '" + row.trace_id + "' missing from " + store_path(dir).string());
    auto& s = stored[it->second];
    if (s.p_arrival_sample != row.p_arrival_sample || s.s_arrival_sample != row.s_arrival_sample) {
      throw FormatError("trace '" + row.trace_id + "': arrivals in manifest and store disagree");
    }
    out.push_back(TraceRecord{std::move(row), std::move(s.waveform)});
  }
  return out;
}

}  // namespace epd::data

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "epd/csv.hpp"
#include "epd/data/record.hpp"
#include "epd/error.hpp"
#include "epd/geo.hpp"

namespace epd::data {

inline const std::vector<std::string>& required_columns() {
  static const std::vector<std::string> cols{
      "trace_name",      "receiver_latitude", "receiver_longitude", "source_latitude",   "source_longitude",
      "p_arrival_sample", "s_arrival_sample", "snr_db",             "source_distance_km"};
  return cols;
}

struct Reject {
  std::size_t line = 0;  // 1-based, header is line 1
  std::string trace_id;
  std::string reason;
};

struct Manifest {
  std::vector<TraceMeta> rows;
  std::vector<Reject> rejects;
  bool has_orientation_column = false;
};

struct ManifestOptions {
  /// Allowed gap between the stored distance and the haversine distance:
  /// the larger of an absolute floor and a fraction of the distance. Stored
  /// distances are often ellipsoidal, which differs from the sphere by up to
  /// about 0.5%.
  double distance_tolerance_km = 0.5;
  double distance_tolerance_rel = 0.01;
};

namespace detail {

inline std::optional<std::array<double, 3>> parse_snr(std::string_view s) {
  std::array<double, 3> out{};
  std::size_t n = 0;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find(';', start);
    const auto piece = s.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    if (n == 3) return std::nullopt;
    const auto v = csv::parse_double(piece);
    if (!v) return std::nullopt;
    out[n++] = *v;
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  if (n != 3) return std::nullopt;
  return out;
}

// Normalizes -180 to 180 so every meridian has one representation.
inline double wrap_lon(double lon) { return lon == -180.0 ? 180.0 : lon; }

}  // namespace detail

/// Parses a manifest CSV. Rows that fail validation are collected in
/// Manifest::rejects with a reason; a missing required column is a FormatError.
inline Manifest read_manifest(std::istream& is, const ManifestOptions& opts = {}) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("manifest: empty file");
  const auto header = csv::split_line(line);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[std::string(csv::trim(header[i]))] = i;
  for (const auto& name : required_columns()) {
    if (!col.count(name)) throw FormatError("manifest: missing required column '" + name + "'");
  }
  const auto orient = col.find("orientation_ok");

  Manifest m;
  m.has_orientation_column = orient != col.end();
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (csv::trim(line).empty() || line == "\r") continue;
    const auto f = csv::split_line(line);
    auto field = [&](const std::string& name) -> std::string_view {
      const auto i = col.at(name);
      return i < f.size() ? std::string_view(f[i]) : std::string_view{};
    };
    Reject reject{lineno, std::string(csv::trim(field("trace_name"))), {}};
    auto fail = [&](std::string reason) {
      reject.reason = std::move(reason);
      m.rejects.push_back(reject);
    };
    if (reject.trace_id.empty()) {
      fail("missing trace_name");
      continue;
    }

    const auto rlat = csv::parse_double(field("receiver_latitude"));
    const auto rlon = csv::parse_double(field("receiver_longitude"));
    const auto slat = csv::parse_double(field("source_latitude"));
    const auto slon = csv::parse_double(field("source_longitude"));
    if (!rlat || !rlon || !slat || !slon || !std::isfinite(*rlat + *rlon + *slat + *slon)) {
      fail("unparseable coordinate");
      continue;
    }
    if (std::abs(*rlat) > 90 || std::abs(*slat) > 90) {
      fail("latitude range");
      continue;
    }
    if (std::abs(*rlon) > 180 || std::abs(*slon) > 180) {
      fail("longitude range");
      continue;
    }

    TraceMeta row;
    row.trace_id = reject.trace_id;
    row.station = geo::GeoPoint(*rlat, detail::wrap_lon(*rlon));
    row.source = geo::GeoPoint(*slat, detail::wrap_lon(*slon));

    const auto p = csv::parse_int(field("p_arrival_sample"));
    const auto s = csv::parse_int(field("s_arrival_sample"));
    if (!p || !s) {
      fail("unparseable arrival sample");
      continue;
    }
    if (*p < 0 || *s < 0 || *p >= static_cast<std::int64_t>(kSamples) || *s >= static_cast<std::int64_t>(kSamples)) {
      fail("arrival range");
      continue;
    }
    if (*p >= *s) {
      fail("arrival order");
      continue;
    }
    row.p_arrival_sample = *p;
    row.s_arrival_sample = *s;

    const auto snr = detail::parse_snr(csv::trim(field("snr_db")));
    if (!snr) {
      fail("snr_db must hold three ';'-separated values");
      continue;
    }
    row.snr_db = *snr;

    const double hav = geo::haversine_km(row.station, row.source);
    const auto dist_field = csv::trim(field("source_distance_km"));
    if (dist_field.empty()) {
      row.epicentral_km = hav;
    } else {
      const auto d = csv::parse_double(dist_field);
      if (!d || *d < 0) {
        fail("unparseable distance");
        continue;
      }
      if (std::abs(*d - hav) > std::max(opts.distance_tolerance_km, opts.distance_tolerance_rel * hav)) {
        fail("distance mismatch");
        continue;
      }
      row.epicentral_km = *d;
    }

    if (m.has_orientation_column && orient->second < f.size()) {
      const auto o = csv::trim(f[orient->second]);
      if (o == "1" || o == "true") {
        row.orientation_ok = true;
      } else if (o == "0" || o == "false") {
        row.orientation_ok = false;
      } else if (!o.empty()) {
        fail("orientation_ok must be 0 or 1");
        continue;
      }
    }
    m.rows.push_back(std::move(row));
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path, const ManifestOptions& opts = {}) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path.string());
  return read_manifest(is, opts);
}

inline void write_manifest(std::ostream& os, const std::vector<TraceMeta>& rows) {
  bool orientation = false;
  for (const auto& r : rows) orientation = orientation || r.orientation_ok.has_value();
  for (std::size_t i = 0; i < required_columns().size(); ++i) os << (i ? "," : "") << required_columns()[i];
  if (orientation) os << ",orientation_ok";
  os << '\n';
  for (const auto& r : rows) {
    os << csv::escape(r.trace_id) << ',' << csv::format_double(r.station.lat()) << ','
       << csv::format_double(r.station.lon()) << ',' << csv::format_double(r.source.lat()) << ','
       << csv::format_double(r.source.lon()) << ',' << r.p_arrival_sample << ',' << r.s_arrival_sample << ','
       << csv::format_double(r.snr_db[0]) << ';' << csv::format_double(r.snr_db[1]) << ';'
       << csv::format_double(r.snr_db[2]) << ',' << csv::format_double(r.epicentral_km);
    if (orientation) os << ',' << (r.orientation_ok ? (*r.orientation_ok ? "1" : "0") : "");
    os << '\n';
  }
}

inline void save_manifest(const std::filesystem::path& path, const std::vector<TraceMeta>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open manifest for writing: " + path.string());
  write_manifest(os, rows);
  if (!os.flush()) throw IoError("failed writing manifest: " + path.string());
}

}  // namespace epd::data
